#pragma once

// Independent reference implementations used by the tests. Nothing here
// calls into the library under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numbers>
#include <random>
#include <vector>

namespace oracle {

// Direct 7-loop cross-correlation. x [B,C,D,H,W], k [F,C,kd,kh,kw].
inline std::vector<double> conv3d_direct(const std::vector<double>& x, const int xs[5], const std::vector<double>& k,
                                         const int ks[5], const std::vector<double>& bias, int stride, int pad,
                                         int out[3]) {
  const int B = xs[0], C = xs[1], D = xs[2], H = xs[3], W = xs[4];
  const int F = ks[0], kd = ks[2], kh = ks[3], kw = ks[4];
  out[0] = (D + 2 * pad - kd) / stride + 1;
  out[1] = (H + 2 * pad - kh) / stride + 1;
  out[2] = (W + 2 * pad - kw) / stride + 1;
  std::vector<double> y(std::size_t(B) * F * out[0] * out[1] * out[2], 0.0);
  std::size_t o = 0;
  for (int b = 0; b < B; ++b)
    for (int f = 0; f < F; ++f)
      for (int od = 0; od < out[0]; ++od)
        for (int oh = 0; oh < out[1]; ++oh)
          for (int ow = 0; ow < out[2]; ++ow, ++o) {
            double acc = bias.empty() ? 0.0 : bias[f];
            for (int c = 0; c < C; ++c)
              for (int a = 0; a < kd; ++a)
                for (int e = 0; e < kh; ++e)
                  for (int g = 0; g < kw; ++g) {
                    const int z = od * stride - pad + a, yy = oh * stride - pad + e, xx = ow * stride - pad + g;
                    if (z < 0 || z >= D || yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                    acc += x[(((std::size_t(b) * C + c) * D + z) * H + yy) * W + xx] *
                           k[(((std::size_t(f) * C + c) * kd + a) * kh + e) * kw + g];
                  }
            y[o] = acc;
          }
  return y;
}

struct Moments {
  double mean = 0, std = 0;
  std::int64_t n = 0;
};

// Two-pass voxel loop in long double.
template <class Label>
Moments roi_moments(const std::vector<double>& vol, const std::vector<Label>& labels, Label id) {
  long double s = 0;
  std::int64_t n = 0;
  for (std::size_t i = 0; i < vol.size(); ++i)
    if (labels[i] == id) {
      s += vol[i];
      ++n;
    }
  if (n == 0) return {};
  const long double m = s / n;
  long double ss = 0;
  for (std::size_t i = 0; i < vol.size(); ++i)
    if (labels[i] == id) ss += (vol[i] - m) * (vol[i] - m);
  return {double(m), double(std::sqrt(ss / n)), n};
}

inline double t_density(double x, double df) {
  const double logc = std::lgamma((df + 1) / 2) - std::lgamma(df / 2) - 0.5 * std::log(df * std::numbers::pi);
  return std::exp(logc - (df + 1) / 2 * std::log1p(x * x / df));
}

// Two-sided tail by composite Simpson on [0, |t|].
inline double t_two_sided_p_quadrature(double t, double df, int panels = 20000) {
  const double a = 0, b = std::abs(t), h = (b - a) / panels;
  double s = t_density(a, df) + t_density(b, df);
  for (int i = 1; i < panels; ++i) s += (i % 2 ? 4 : 2) * t_density(a + i * h, df);
  return 1.0 - 2.0 * (s * h / 3.0);
}

struct LineFit {
  double slope = 0, intercept = 0, slope_se = 0;
};

inline LineFit ols_line(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = double(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= n, my /= n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) sxx += (x[i] - mx) * (x[i] - mx), sxy += (x[i] - mx) * (y[i] - my);
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double rss = 0;
  for (std::size_t i = 0; i < x.size(); ++i) rss += std::pow(y[i] - f.intercept - f.slope * x[i], 2);
  f.slope_se = std::sqrt(rss / (n - 2) / sxx);
  return f;
}

// NIfTI-1 header laid out by byte offset.
struct RawHeader {
  std::vector<std::uint8_t> bytes = std::vector<std::uint8_t>(352, 0);

  template <class T>
  void put(std::size_t off, T v) { std::memcpy(bytes.data() + off, &v, sizeof v); }

  RawHeader(std::int16_t datatype, std::int16_t bitpix, int nx, int ny, int nz) {
    put<std::int32_t>(0, 348);
    put<std::int16_t>(40, 3);
    put<std::int16_t>(42, std::int16_t(nx));
    put<std::int16_t>(44, std::int16_t(ny));
    put<std::int16_t>(46, std::int16_t(nz));
    for (int i = 4; i < 8; ++i) put<std::int16_t>(40 + 2 * i, 1);
    put<std::int16_t>(70, datatype);
    put<std::int16_t>(72, bitpix);
    for (int i = 0; i < 8; ++i) put<float>(76 + 4 * i, 1.0f);
    put<float>(108, 352.0f);
    std::memcpy(bytes.data() + 344, "n+1\0", 4);
  }

  template <class T>
  std::vector<std::uint8_t> with_data(const std::vector<T>& values) const {
    auto out = bytes;
    const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
    out.insert(out.end(), p, p + values.size() * sizeof(T));
    return out;
  }
};

// Center-based linear sample along one axis with edge clamping.
inline double sample_1d(const std::vector<double>& src, double s) {
  const double n = double(src.size());
  s = std::clamp(s, 0.0, n - 1);
  const int i0 = int(std::floor(s));
  const int i1 = std::min(i0 + 1, int(n) - 1);
  const double w = s - i0;
  return src[i0] * (1 - w) + src[i1] * w;
}

inline double trapezoid(const std::vector<double>& x, const std::vector<double>& y) {
  double s = 0;
  for (std::size_t i = 1; i < x.size(); ++i) s += 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1]);
  return s;
}

inline double gaussian_kde_at(const std::vector<double>& values, double h, double x) {
  double s = 0;
  for (double v : values) s += std::exp(-0.5 * std::pow((x - v) / h, 2));
  return s / (values.size() * h * std::sqrt(2 * std::numbers::pi));
}

}  // namespace oracle

#include "wmage/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "wmage/error.hpp"

namespace wmage::stats {

double mean(std::span<const double> x) {
  if (x.empty()) throw Error(Errc::EmptyInput, "mean of an empty sequence");
  double s = 0;
  for (double v : x) s += v;
  return s / double(x.size());
}

double sample_std(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = mean(x);
  double ss = 0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / double(x.size() - 1));
}

double quantile(std::vector<double> x, double q) {
  if (x.empty()) throw Error(Errc::EmptyInput, "quantile of an empty sequence");
  std::sort(x.begin(), x.end());
  const double pos = q * double(x.size() - 1);
  const auto lo = std::size_t(std::floor(pos));
  const auto hi = std::min(lo + 1, x.size() - 1);
  return x[lo] + (pos - double(lo)) * (x[hi] - x[lo]);
}

namespace {

// Lentz's method for the continued fraction of I_x(a, b).
double beta_cf(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-15;
  const double qab = a + b, qap = a + 1, qam = a - 1;
  double c = 1, d = 1 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1) < eps) break;
  }
  return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0) || !(b > 0)) throw Error(Errc::InvalidSpec, "incomplete beta needs a, b > 0");
  if (x <= 0) return 0.0;
  if (x >= 1) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1) / (a + b + 2)) return front * beta_cf(a, b, x) / a;
  return 1 - front * beta_cf(b, a, 1 - x) / b;
}

double student_t_two_sided_p(double t, double df) {
  if (!(df > 0)) throw Error(Errc::InvalidSpec, "degrees of freedom must be positive");
  if (std::isinf(t)) return 0.0;
  return incomplete_beta(df / 2, 0.5, df / (df + t * t));
}

double student_t_cdf(double t, double df) {
  const double tail = 0.5 * student_t_two_sided_p(t, df);
  return t >= 0 ? 1 - tail : tail;
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw Error(Errc::LengthMismatch,
                "paired samples differ in length (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  if (a.size() < 2) throw Error(Errc::EmptyInput, "paired t-test needs at least two pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = a[i] - b[i];
  const double sd = sample_std(d);
  if (sd == 0) throw Error(Errc::ZeroVariance, "all paired differences are equal");
  TTestResult r;
  const double n = double(d.size());
  r.df = n - 1;
  r.t = mean(d) / (sd / std::sqrt(n));
  r.p = student_t_two_sided_p(r.t, r.df);
  return r;
}

double silverman_bandwidth(std::span<const double> values) {
  if (values.empty()) throw Error(Errc::EmptyInput, "bandwidth of an empty sample");
  const double sigma = sample_std(values);
  std::vector<double> v(values.begin(), values.end());
  const double iqr = (quantile(v, 0.75) - quantile(v, 0.25)) / 1.34;
  double spread = std::min(sigma, iqr);
  if (spread <= 0) spread = std::max(sigma, iqr);
  if (spread <= 0) return 1.0;
  return 0.9 * spread * std::pow(double(values.size()), -0.2);
}

std::vector<DensityPoint> kde(std::span<const double> values, int grid_points) {
  if (values.empty()) throw Error(Errc::EmptyInput, "kernel density of an empty sample");
  return kde(values, grid_points, silverman_bandwidth(values));
}

std::vector<DensityPoint> kde(std::span<const double> values, int grid_points, double h) {
  if (values.empty()) throw Error(Errc::EmptyInput, "kernel density of an empty sample");
  if (grid_points < 2) throw Error(Errc::InvalidSpec, "kde needs at least 2 grid points");
  if (!(h > 0)) throw Error(Errc::InvalidSpec, "kde bandwidth must be positive");
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it - 4 * h, hi = *hi_it + 4 * h;
  const double norm = 1.0 / (double(values.size()) * h * std::sqrt(2 * std::numbers::pi));
  std::vector<DensityPoint> out(static_cast<std::size_t>(grid_points));
  for (int i = 0; i < grid_points; ++i) {
    const double x = lo + (hi - lo) * double(i) / double(grid_points - 1);
    double s = 0;
    for (double v : values) {
      const double z = (x - v) / h;
      s += std::exp(-0.5 * z * z);
    }
    out[std::size_t(i)] = {x, s * norm};
  }
  return out;
}

double trapezoid(std::span<const DensityPoint> curve) {
  double area = 0;
  for (std::size_t i = 1; i < curve.size(); ++i)
    area += 0.5 * (curve[i].density + curve[i - 1].density) * (curve[i].x - curve[i - 1].x);
  return area;
}

}  // namespace wmage::stats

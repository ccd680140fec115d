#include "wmage/nn/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>

#include "wmage/error.hpp"

namespace wmage::nn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require(bool cond, const std::string& what) {
  if (!cond) throw Error(Errc::ShapeMismatch, what);
}

double sign0(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

struct ConvGeometry {
  long B, C, D, H, W;
  long F, kd, kh, kw;
  long OD, OH, OW;
  long stride, pad;

  long in_spatial() const { return D * H * W; }
  long out_spatial() const { return OD * OH * OW; }
  long patch() const { return C * kd * kh * kw; }
};

// col[r, p] with r = ((c*kd + a)*kh + b)*kw + e and p the output position.
void im2col(const ConvGeometry& g, const double* x, double* col) {
  const long P = g.out_spatial();
  long r = 0;
  for (long c = 0; c < g.C; ++c)
    for (long a = 0; a < g.kd; ++a)
      for (long b = 0; b < g.kh; ++b)
        for (long e = 0; e < g.kw; ++e, ++r) {
          double* row = col + r * P;
          const double* xc = x + c * g.in_spatial();
          long p = 0;
          for (long oz = 0; oz < g.OD; ++oz) {
            const long iz = oz * g.stride - g.pad + a;
            const bool zin = iz >= 0 && iz < g.D;
            for (long oy = 0; oy < g.OH; ++oy) {
              const long iy = oy * g.stride - g.pad + b;
              const bool yin = zin && iy >= 0 && iy < g.H;
              const double* xrow = yin ? xc + (iz * g.H + iy) * g.W : nullptr;
              for (long ox = 0; ox < g.OW; ++ox, ++p) {
                const long ix = ox * g.stride - g.pad + e;
                row[p] = (yin && ix >= 0 && ix < g.W) ? xrow[ix] : 0.0;
              }
            }
          }
        }
}

void col2im_add(const ConvGeometry& g, const double* col, double* dx) {
  const long P = g.out_spatial();
  long r = 0;
  for (long c = 0; c < g.C; ++c)
    for (long a = 0; a < g.kd; ++a)
      for (long b = 0; b < g.kh; ++b)
        for (long e = 0; e < g.kw; ++e, ++r) {
          const double* row = col + r * P;
          double* dxc = dx + c * g.in_spatial();
          long p = 0;
          for (long oz = 0; oz < g.OD; ++oz) {
            const long iz = oz * g.stride - g.pad + a;
            const bool zin = iz >= 0 && iz < g.D;
            for (long oy = 0; oy < g.OH; ++oy) {
              const long iy = oy * g.stride - g.pad + b;
              const bool yin = zin && iy >= 0 && iy < g.H;
              double* dxrow = yin ? dxc + (iz * g.H + iy) * g.W : nullptr;
              for (long ox = 0; ox < g.OW; ++ox, ++p) {
                const long ix = ox * g.stride - g.pad + e;
                if (yin && ix >= 0 && ix < g.W) dxrow[ix] += row[p];
              }
            }
          }
        }
}

// Channels and per-channel element count for a [B,C,...] tensor.
struct ChannelLayout {
  std::size_t B, C, S;
};

ChannelLayout channel_layout(const Tensor& x, const char* op) {
  require(x.rank() >= 2, std::string(op) + " needs a tensor of rank >= 2, got " + shape_str(x.shape()));
  std::size_t S = 1;
  for (std::size_t i = 2; i < x.rank(); ++i) S *= x.dim(i);
  return {x.dim(0), x.dim(1), S};
}

}  // namespace

Tensor dense(const Tensor& x, const Tensor& W, const Tensor& b) {
  require(x.rank() == 2 && W.rank() == 2 && b.rank() == 1,
          "dense expects x [B,I], W [I,O], b [O]; got " + shape_str(x.shape()) + ", " + shape_str(W.shape()) +
              ", " + shape_str(b.shape()));
  const std::size_t B = x.dim(0), I = x.dim(1), O = W.dim(1);
  require(W.dim(0) == I && b.dim(0) == O, "dense shapes do not conform: x " + shape_str(x.shape()) + ", W " +
                                              shape_str(W.shape()) + ", b " + shape_str(b.shape()));
  std::vector<double> y(B * O);
  const auto xd = x.data(), wd = W.data(), bd = b.data();
  for (std::size_t r = 0; r < B; ++r) {
    double* yr = y.data() + r * O;
    for (std::size_t o = 0; o < O; ++o) yr[o] = bd[o];
    for (std::size_t i = 0; i < I; ++i) {
      const double xi = xd[r * I + i];
      const double* wi = wd.data() + i * O;
      for (std::size_t o = 0; o < O; ++o) yr[o] += xi * wi[o];
    }
  }
  auto xi = x.impl(), wi = W.impl(), bi = b.impl();
  return make_result({B, O}, std::move(y), {x, W, b}, [xi, wi, bi, B, I, O](const detail::TensorImpl& out) {
    const double* dy = out.grad.data();
    if (xi->requires_grad) {
      auto& dx = xi->grad_buffer();
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t i = 0; i < I; ++i) {
          double acc = 0;
          const double* wrow = wi->data.data() + i * O;
          for (std::size_t o = 0; o < O; ++o) acc += dy[r * O + o] * wrow[o];
          dx[r * I + i] += acc;
        }
    }
    if (wi->requires_grad) {
      auto& dW = wi->grad_buffer();
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t i = 0; i < I; ++i) {
          const double xv = xi->data[r * I + i];
          double* dwrow = dW.data() + i * O;
          for (std::size_t o = 0; o < O; ++o) dwrow[o] += xv * dy[r * O + o];
        }
    }
    if (bi->requires_grad) {
      auto& db = bi->grad_buffer();
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t o = 0; o < O; ++o) db[o] += dy[r * O + o];
    }
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> y(x.data().begin(), x.data().end());
  for (auto& v : y) v = v > 0 ? v : 0.0;
  auto xi = x.impl();
  return make_result(x.shape(), std::move(y), {x}, [xi](const detail::TensorImpl& out) {
    if (!xi->requires_grad) return;
    auto& dx = xi->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (xi->data[i] > 0) dx[i] += out.grad[i];
  });
}

Tensor conv3d(const Tensor& x, const Tensor& k, const Tensor& bias, int stride, int pad) {
  require(x.rank() == 5, "conv3d input must be [B,C,D,H,W], got " + shape_str(x.shape()));
  require(k.rank() == 5, "conv3d kernel must be [F,C,kd,kh,kw], got " + shape_str(k.shape()));
  require(k.dim(1) == x.dim(1), "conv3d channel mismatch: input " + shape_str(x.shape()) + ", kernel " +
                                    shape_str(k.shape()));
  require(stride >= 1 && pad >= 0, "conv3d needs stride >= 1 and pad >= 0");
  if (bias.defined()) require(bias.rank() == 1 && bias.dim(0) == k.dim(0), "conv3d bias must be [F]");

  ConvGeometry g{};
  g.B = long(x.dim(0));
  g.C = long(x.dim(1));
  g.D = long(x.dim(2));
  g.H = long(x.dim(3));
  g.W = long(x.dim(4));
  g.F = long(k.dim(0));
  g.kd = long(k.dim(2));
  g.kh = long(k.dim(3));
  g.kw = long(k.dim(4));
  g.stride = stride;
  g.pad = pad;
  g.OD = conv_out_extent(g.D, g.kd, stride, pad);
  g.OH = conv_out_extent(g.H, g.kh, stride, pad);
  g.OW = conv_out_extent(g.W, g.kw, stride, pad);
  if (g.OD < 1 || g.OH < 1 || g.OW < 1)
    throw Error(Errc::EmptyOutput, "conv3d output would be empty for input " + shape_str(x.shape()) +
                                       " and kernel " + shape_str(k.shape()));

  const long P = g.out_spatial(), CK = g.patch();
  std::vector<double> y(std::size_t(g.B * g.F * P));
  std::vector<double> col(std::size_t(CK * P));
  ConstMapMat K(k.data().data(), g.F, CK);
  // Samples are convolved one at a time so a sample's output does not depend
  // on the rest of the batch.
  for (long bIdx = 0; bIdx < g.B; ++bIdx) {
    im2col(g, x.data().data() + bIdx * g.C * g.in_spatial(), col.data());
    MapMat Y(y.data() + bIdx * g.F * P, g.F, P);
    Y.noalias() = K * ConstMapMat(col.data(), CK, P);
    if (bias.defined())
      for (long f = 0; f < g.F; ++f) Y.row(f).array() += bias.data()[std::size_t(f)];
  }

  auto xi = x.impl(), ki = k.impl();
  auto bi = bias.defined() ? bias.impl() : nullptr;
  return make_result(
      {std::size_t(g.B), std::size_t(g.F), std::size_t(g.OD), std::size_t(g.OH), std::size_t(g.OW)}, std::move(y),
      {x, k, bias}, [g, xi, ki, bi](const detail::TensorImpl& out) {
        const long P = g.out_spatial(), CK = g.patch();
        std::vector<double> col(std::size_t(CK * P));
        std::vector<double> dcol;
        ConstMapMat K(ki->data.data(), g.F, CK);
        for (long bIdx = 0; bIdx < g.B; ++bIdx) {
          ConstMapMat dY(out.grad.data() + bIdx * g.F * P, g.F, P);
          if (ki->requires_grad) {
            im2col(g, xi->data.data() + bIdx * g.C * g.in_spatial(), col.data());
            MapMat dK(ki->grad_buffer().data(), g.F, CK);
            dK.noalias() += dY * ConstMapMat(col.data(), CK, P).transpose();
          }
          if (bi && bi->requires_grad) {
            auto& db = bi->grad_buffer();
            for (long f = 0; f < g.F; ++f) db[std::size_t(f)] += dY.row(f).sum();
          }
          if (xi->requires_grad) {
            dcol.resize(std::size_t(CK * P));
            MapMat dC(dcol.data(), CK, P);
            dC.noalias() = K.transpose() * dY;
            col2im_add(g, dcol.data(), xi->grad_buffer().data() + bIdx * g.C * g.in_spatial());
          }
        }
      });
}

Tensor batchnorm3d(const Tensor& x, const Tensor& gamma, const Tensor& beta, Mode mode, BatchNormStats& stats) {
  const auto [B, C, S] = channel_layout(x, "batchnorm3d");
  require(gamma.numel() == C && beta.numel() == C, "batchnorm3d gamma/beta must have one entry per channel");
  require(stats.running_mean.size() == C && stats.running_var.size() == C,
          "batchnorm3d running statistics have the wrong channel count");
  const std::size_t N = B * S;
  if (mode == Mode::Train && N < 2)
    throw Error(Errc::DegenerateBatch, "train-mode batch norm over a single element per channel");

  const auto xd = x.data();
  std::vector<double> mean(C), inv_std(C);
  if (mode == Mode::Train) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0;
      for (std::size_t b = 0; b < B; ++b) {
        const double* p = xd.data() + (b * C + c) * S;
        for (std::size_t i = 0; i < S; ++i) s += p[i];
      }
      const double mu = s / double(N);
      double v = 0;
      for (std::size_t b = 0; b < B; ++b) {
        const double* p = xd.data() + (b * C + c) * S;
        for (std::size_t i = 0; i < S; ++i) v += (p[i] - mu) * (p[i] - mu);
      }
      const double var = v / double(N);
      mean[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + stats.eps);
      stats.running_mean[c] = (1 - stats.momentum) * stats.running_mean[c] + stats.momentum * mu;
      // Running variance tracks the unbiased estimate.
      stats.running_var[c] =
          (1 - stats.momentum) * stats.running_var[c] + stats.momentum * var * double(N) / double(N - 1);
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = stats.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(stats.running_var[c] + stats.eps);
    }
  }

  std::vector<double> xhat(x.numel()), y(x.numel());
  const auto gd = gamma.data(), bd = beta.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t off = (b * C + c) * S;
      for (std::size_t i = 0; i < S; ++i) {
        xhat[off + i] = (xd[off + i] - mean[c]) * inv_std[c];
        y[off + i] = gd[c] * xhat[off + i] + bd[c];
      }
    }

  auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
  const bool train = mode == Mode::Train;
  return make_result(x.shape(), std::move(y), {x, gamma, beta},
                     [xi, gi, bi, xhat = std::move(xhat), inv_std, B, C, S, N, train](const detail::TensorImpl& out) {
                       const double* dy = out.grad.data();
                       std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
                       for (std::size_t b = 0; b < B; ++b)
                         for (std::size_t c = 0; c < C; ++c) {
                           const std::size_t off = (b * C + c) * S;
                           for (std::size_t i = 0; i < S; ++i) {
                             sum_dy[c] += dy[off + i];
                             sum_dy_xhat[c] += dy[off + i] * xhat[off + i];
                           }
                         }
                       if (gi->requires_grad) {
                         auto& dg = gi->grad_buffer();
                         for (std::size_t c = 0; c < C; ++c) dg[c] += sum_dy_xhat[c];
                       }
                       if (bi->requires_grad) {
                         auto& db = bi->grad_buffer();
                         for (std::size_t c = 0; c < C; ++c) db[c] += sum_dy[c];
                       }
                       if (!xi->requires_grad) return;
                       auto& dx = xi->grad_buffer();
                       for (std::size_t b = 0; b < B; ++b)
                         for (std::size_t c = 0; c < C; ++c) {
                           const std::size_t off = (b * C + c) * S;
                           const double scale = gi->data[c] * inv_std[c];
                           if (train) {
                             const double m1 = sum_dy[c] / double(N), m2 = sum_dy_xhat[c] / double(N);
                             for (std::size_t i = 0; i < S; ++i)
                               dx[off + i] += scale * (dy[off + i] - m1 - xhat[off + i] * m2);
                           } else {
                             for (std::size_t i = 0; i < S; ++i) dx[off + i] += scale * dy[off + i];
                           }
                         }
                     });
}

Tensor max_pool3d(const Tensor& x, int kernel, int stride, int pad) {
  require(x.rank() == 5, "max_pool3d input must be [B,C,D,H,W], got " + shape_str(x.shape()));
  require(kernel >= 1 && stride >= 1 && pad >= 0 && pad < kernel, "max_pool3d: invalid window");
  const long B = long(x.dim(0)), C = long(x.dim(1)), D = long(x.dim(2)), H = long(x.dim(3)), W = long(x.dim(4));
  const long OD = conv_out_extent(D, kernel, stride, pad), OH = conv_out_extent(H, kernel, stride, pad),
             OW = conv_out_extent(W, kernel, stride, pad);
  if (OD < 1 || OH < 1 || OW < 1)
    throw Error(Errc::EmptyOutput, "max_pool3d output would be empty for input " + shape_str(x.shape()));

  const long in_sp = D * H * W, out_sp = OD * OH * OW;
  std::vector<double> y(std::size_t(B * C * out_sp));
  std::vector<std::size_t> argmax(y.size());
  const auto xd = x.data();
  for (long bc = 0; bc < B * C; ++bc) {
    const double* xc = xd.data() + bc * in_sp;
    std::size_t o = std::size_t(bc * out_sp);
    for (long oz = 0; oz < OD; ++oz)
      for (long oy = 0; oy < OH; ++oy)
        for (long ox = 0; ox < OW; ++ox, ++o) {
          double best = -std::numeric_limits<double>::infinity();
          long best_idx = -1;
          for (long a = 0; a < kernel; ++a) {
            const long iz = oz * stride - pad + a;
            if (iz < 0 || iz >= D) continue;
            for (long b = 0; b < kernel; ++b) {
              const long iy = oy * stride - pad + b;
              if (iy < 0 || iy >= H) continue;
              for (long e = 0; e < kernel; ++e) {
                const long ix = ox * stride - pad + e;
                if (ix < 0 || ix >= W) continue;
                const long idx = (iz * H + iy) * W + ix;
                if (best_idx < 0 || xc[idx] > best) {
                  best = xc[idx];
                  best_idx = idx;
                }
              }
            }
          }
          y[o] = best;
          argmax[o] = std::size_t(bc * in_sp + best_idx);
        }
  }
  auto xi = x.impl();
  return make_result({std::size_t(B), std::size_t(C), std::size_t(OD), std::size_t(OH), std::size_t(OW)},
                     std::move(y), {x}, [xi, argmax = std::move(argmax)](const detail::TensorImpl& out) {
                       if (!xi->requires_grad) return;
                       auto& dx = xi->grad_buffer();
                       for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += out.grad[o];
                     });
}

Tensor global_avg_pool(const Tensor& x) {
  const auto [B, C, S] = channel_layout(x, "global_avg_pool");
  std::vector<double> y(B * C);
  const auto xd = x.data();
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    double s = 0;
    for (std::size_t i = 0; i < S; ++i) s += xd[bc * S + i];
    y[bc] = s / double(S);
  }
  auto xi = x.impl();
  return make_result({B, C}, std::move(y), {x}, [xi, B = B, C = C, S = S](const detail::TensorImpl& out) {
    if (!xi->requires_grad) return;
    auto& dx = xi->grad_buffer();
    for (std::size_t bc = 0; bc < B * C; ++bc) {
      const double g = out.grad[bc] / double(S);
      for (std::size_t i = 0; i < S; ++i) dx[bc * S + i] += g;
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "add shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + b.data()[i];
  auto ai = a.impl(), bi = b.impl();
  return make_result(a.shape(), std::move(y), {a, b}, [ai, bi](const detail::TensorImpl& out) {
    for (auto* t : {ai.get(), bi.get()}) {
      if (!t->requires_grad) continue;
      auto& g = t->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "mul shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
  auto ai = a.impl(), bi = b.impl();
  return make_result(a.shape(), std::move(y), {a, b}, [ai, bi](const detail::TensorImpl& out) {
    if (ai->requires_grad) {
      auto& g = ai->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * bi->data[i];
    }
    if (bi->requires_grad) {
      auto& g = bi->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * ai->data[i];
    }
  });
}

Tensor sum(const Tensor& x) {
  double s = 0;
  for (double v : x.data()) s += v;
  auto xi = x.impl();
  return make_result({1}, {s}, {x}, [xi](const detail::TensorImpl& out) {
    if (!xi->requires_grad) return;
    auto& g = xi->grad_buffer();
    for (auto& v : g) v += out.grad[0];
  });
}

Tensor concat_columns(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(0) == b.dim(0),
          "concat_columns expects [B,I] and [B,J], got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t B = a.dim(0), I = a.dim(1), J = b.dim(1);
  std::vector<double> y(B * (I + J));
  for (std::size_t r = 0; r < B; ++r) {
    std::copy_n(a.data().data() + r * I, I, y.data() + r * (I + J));
    std::copy_n(b.data().data() + r * J, J, y.data() + r * (I + J) + I);
  }
  auto ai = a.impl(), bi = b.impl();
  return make_result({B, I + J}, std::move(y), {a, b}, [ai, bi, B, I, J](const detail::TensorImpl& out) {
    if (ai->requires_grad) {
      auto& g = ai->grad_buffer();
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t i = 0; i < I; ++i) g[r * I + i] += out.grad[r * (I + J) + i];
    }
    if (bi->requires_grad) {
      auto& g = bi->grad_buffer();
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t j = 0; j < J; ++j) g[r * J + j] += out.grad[r * (I + J) + I + j];
    }
  });
}

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  require(pred.shape() == target.shape(),
          "l1_loss shapes differ: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  const std::size_t n = pred.numel();
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += std::abs(pred.data()[i] - target.data()[i]);
  auto pi = pred.impl(), ti = target.impl();
  return make_result({1}, {s / double(n)}, {pred, target}, [pi, ti, n](const detail::TensorImpl& out) {
    const double g = out.grad[0] / double(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double s = sign0(pi->data[i] - ti->data[i]);
      if (pi->requires_grad) pi->grad_buffer()[i] += g * s;
      if (ti->requires_grad) ti->grad_buffer()[i] -= g * s;
    }
  });
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  require(pred.shape() == target.shape(),
          "mse_loss shapes differ: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  const std::size_t n = pred.numel();
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pred.data()[i] - target.data()[i];
    s += d * d;
  }
  auto pi = pred.impl(), ti = target.impl();
  return make_result({1}, {s / double(n)}, {pred, target}, [pi, ti, n](const detail::TensorImpl& out) {
    const double g = 2.0 * out.grad[0] / double(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double d = pi->data[i] - ti->data[i];
      if (pi->requires_grad) pi->grad_buffer()[i] += g * d;
      if (ti->requires_grad) ti->grad_buffer()[i] -= g * d;
    }
  });
}

}  // namespace wmage::nn

#pragma once

#include <vector>

#include "wmage/nn/tensor.hpp"

namespace wmage::nn {

enum class Mode { Train, Eval };

/// Running statistics owned by one batch-norm layer.
struct BatchNormStats {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormStats(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

/// y = x W + b for x [B,I], W [I,O], b [O].
Tensor dense(const Tensor& x, const Tensor& W, const Tensor& b);

/// max(0, x); subgradient 0 at exactly 0.
Tensor relu(const Tensor& x);

/// Cross-correlation of x [B,C,D,H,W] with k [F,C,kd,kh,kw], zero padding.
/// `bias` may be undefined (no bias term).
Tensor conv3d(const Tensor& x, const Tensor& k, const Tensor& bias, int stride, int pad);

/// Per-channel normalization of x [B,C,...]. Train mode uses batch
/// statistics and updates `stats`; eval mode uses the running values.
Tensor batchnorm3d(const Tensor& x, const Tensor& gamma, const Tensor& beta, Mode mode, BatchNormStats& stats);

/// Max pooling over cubic windows; padded positions never win.
Tensor max_pool3d(const Tensor& x, int kernel, int stride, int pad);

/// Mean over all spatial positions: [B,C,...] -> [B,C].
Tensor global_avg_pool(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor sum(const Tensor& x);

/// Column concatenation of [B,I] and [B,J] into [B,I+J].
Tensor concat_columns(const Tensor& a, const Tensor& b);

/// mean |pred - target|; subgradient 0 at ties.
Tensor l1_loss(const Tensor& pred, const Tensor& target);
Tensor mse_loss(const Tensor& pred, const Tensor& target);

/// Output extent of a strided window along one axis.
inline long conv_out_extent(long in, long kernel, long stride, long pad) {
  const long span = in + 2 * pad - kernel;
  return span < 0 ? 0 : span / stride + 1;
}

}  // namespace wmage::nn

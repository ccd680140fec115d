#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "wmage/nn/tensor.hpp"

namespace wmage::nn {

struct Parameter {
  std::string name;
  Tensor tensor;
};

struct OptimizerState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0;  // decoupled: w *= 1 - lr * weight_decay before each step
  std::int64_t t = 0;
  std::vector<std::vector<double>> m;  // first moments, one per parameter
  std::vector<std::vector<double>> v;  // second moments

  explicit OptimizerState(double learning_rate = 1e-3) : lr(learning_rate) {}
};

/// One bias-corrected Adam update over `params`, in order. Moment buffers are
/// created on the first call and must keep matching the parameter list.
void adam_step(std::span<const Parameter> params, OptimizerState& state);

void zero_grads(std::span<const Parameter> params);

}  // namespace wmage::nn

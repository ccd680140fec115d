#include "wmage/nn/adam.hpp"

#include <cmath>

#include "wmage/error.hpp"

namespace wmage::nn {

void adam_step(std::span<const Parameter> params, OptimizerState& state) {
  for (const auto& p : params)
    if (!p.tensor.has_grad()) throw Error(Errc::MissingGrad, "parameter '" + p.name + "' has no gradient");

  if (state.m.empty() && state.v.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.numel(), 0.0);
      state.v.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw Error(Errc::ShapeMismatch, "optimizer state does not match the parameter list");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (state.m[i].size() != params[i].tensor.numel() || state.v[i].size() != params[i].tensor.numel())
      throw Error(Errc::ShapeMismatch, "optimizer moments do not match parameter '" + params[i].name + "'");

  ++state.t;
  const double bc1 = 1.0 - std::pow(state.beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, double(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor w = params[i].tensor;
    auto data = w.data();
    auto grad = w.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const double shrink = 1.0 - state.lr * state.weight_decay;
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = grad[j];
      m[j] = state.beta1 * m[j] + (1 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1 - state.beta2) * g * g;
      const double mhat = m[j] / bc1, vhat = v[j] / bc2;
      data[j] *= shrink;
      data[j] -= state.lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

void zero_grads(std::span<const Parameter> params) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

}  // namespace wmage::nn

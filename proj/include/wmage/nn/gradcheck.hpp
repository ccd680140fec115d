#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "wmage/nn/tensor.hpp"

namespace wmage::nn {

struct GradCheckReport {
  double max_rel_error = 0;
  std::size_t coordinates = 0;
  // Where the worst disagreement occurred.
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0;
  double worst_numeric = 0;
  // Coordinates re-measured with a smaller step after straddling a kink.
  std::size_t refined = 0;
};

/// Relative error with denominator max(|a|, |b|, 1e-8).
double relative_error(double analytic, double numeric);

/// Central-difference check of backward() for a scalar-valued f(x):
/// every coordinate of x is perturbed by +-h.
double finite_diff_gradcheck(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h = 1e-6);

/// Checks the gradient of the scalar `loss()` with respect to every tensor in
/// `wrt`. When `max_coords_per_tensor` is non-zero, that many coordinates are
/// drawn per tensor (uniformly, reproducibly from `seed`) instead of all.
/// With `kink_refinements` > 0, a coordinate whose forward and backward
/// one-sided slopes differ by more than 1e-4 relative (a relu or max-pool switch inside
/// the +-h window; curvature alone stays far below that) is re-measured at h/10, up to that many times.
GradCheckReport gradcheck(const std::function<Tensor()>& loss, const std::vector<Tensor>& wrt, double h,
                          std::size_t max_coords_per_tensor = 0, std::uint64_t seed = 0, int kink_refinements = 0);

}  // namespace wmage::nn

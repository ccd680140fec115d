#include "wmage/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "wmage/error.hpp"

namespace wmage::nn {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

double finite_diff_gradcheck(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h) {
  x.set_requires_grad(true);
  return gradcheck([&] { return f(x); }, {x}, h).max_rel_error;
}

GradCheckReport gradcheck(const std::function<Tensor()>& loss, const std::vector<Tensor>& wrt, double h,
                          std::size_t max_coords_per_tensor, std::uint64_t seed, int kink_refinements) {
  if (!(h > 0)) throw Error(Errc::InvalidSpec, "gradcheck step must be positive");
  for (auto t : wrt) {
    t.zero_grad();
    t.grad_mut();  // materialize zeros so unused inputs read as 0
  }
  const Tensor base = loss();
  backward(base);
  const double f0 = base.item();
  std::vector<std::vector<double>> analytic;
  for (const auto& t : wrt) analytic.emplace_back(t.grad().begin(), t.grad().end());

  std::mt19937_64 rng(seed);
  GradCheckReport report;
  NoGradGuard no_grad;
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    Tensor t = wrt[ti];
    std::vector<std::size_t> coords(t.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (max_coords_per_tensor != 0 && coords.size() > max_coords_per_tensor) {
      std::vector<std::size_t> picked;
      std::uniform_int_distribution<std::size_t> pick(0, coords.size() - 1);
      for (std::size_t k = 0; k < max_coords_per_tensor; ++k) picked.push_back(pick(rng));
      coords = std::move(picked);
    }
    auto data = t.data();
    for (auto i : coords) {
      const double saved = data[i];
      double step = h, numeric = 0;
      for (int attempt = 0;; ++attempt) {
        data[i] = saved + step;
        const double fp = loss().item();
        data[i] = saved - step;
        const double fm = loss().item();
        data[i] = saved;
        numeric = (fp - fm) / (2 * step);
        const bool kink = relative_error((fp - f0) / step, (f0 - fm) / step) > 1e-4;
        if (!kink || attempt == kink_refinements) break;
        if (attempt == 0) ++report.refined;
        step /= 10;
      }
      const double err = relative_error(analytic[ti][i], numeric);
      ++report.coordinates;
      if (err >= report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_tensor = ti;
        report.worst_index = i;
        report.worst_analytic = analytic[ti][i];
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace wmage::nn

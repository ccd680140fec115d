#pragma once

#include <span>
#include <vector>

namespace wmage::stats {

double mean(std::span<const double> x);
/// Divisor n - 1; 0 for a single value.
double sample_std(std::span<const double> x);
/// Linear-interpolation quantile (the usual "type 7" definition), q in [0,1].
double quantile(std::vector<double> x, double q);

/// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
double incomplete_beta(double a, double b, double x);
/// P(T <= t) for Student's t with `df` degrees of freedom.
double student_t_cdf(double t, double df);
/// P(|T| >= |t|).
double student_t_two_sided_p(double t, double df);

struct TTestResult {
  double t = 0;
  double p = 1;
  double df = 0;
};

/// Paired test on d = a - b.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

/// 0.9 * min(sigma, IQR / 1.34) * n^(-1/5). When the smaller dispersion term
/// is 0 the larger one is used; when both are 0 the result is 1.
double silverman_bandwidth(std::span<const double> values);

struct DensityPoint {
  double x;
  double density;
};

/// Gaussian KDE on `grid_points` uniform points over [min - 4h, max + 4h].
std::vector<DensityPoint> kde(std::span<const double> values, int grid_points);
std::vector<DensityPoint> kde(std::span<const double> values, int grid_points, double bandwidth);

double trapezoid(std::span<const DensityPoint> curve);

}  // namespace wmage::stats

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace embedloc {

/// Natural cubic spline through samples at unit-spaced knots 0..n-1.
///
/// The tridiagonal system for the knot second derivatives depends only on n,
/// so its forward-elimination factors are computed once and reused for every
/// row that is resampled.
class NaturalSpline {
 public:
  explicit NaturalSpline(std::size_t knots);

  std::size_t knots() const { return knots_; }

  /// Knot second derivatives of `y` (size n) into `curvature` (size n);
  /// zero at both ends.
  void fit(std::span<const double> y, std::span<double> curvature) const;

  /// Interpolated value at `t`. Positions outside [0, n-1] clamp to the
  /// boundary value. Exact at the knots.
  static double eval(std::span<const double> y,
                     std::span<const double> curvature, double t);

  /// Fits `y` and evaluates at each of `positions`.
  void resample(std::span<const double> y, std::span<const double> positions,
                std::span<double> out) const;

 private:
  std::size_t knots_;
  std::vector<double> inv_pivot_;  // 1 / modified diagonal
};

}  // namespace embedloc

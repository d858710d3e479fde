#include "embedloc/spline.hpp"

#include <algorithm>
#include <cmath>

#include "embedloc/error.hpp"

namespace embedloc {

NaturalSpline::NaturalSpline(std::size_t knots) : knots_(knots) {
  if (knots == 0) throw ConfigError("spline needs at least one knot");
  // Interior equations: c[i-1] + 4 c[i] + c[i+1] = 6 (y[i-1] - 2 y[i] + y[i+1]).
  const std::size_t interior = knots >= 2 ? knots - 2 : 0;
  inv_pivot_.resize(interior);
  double prev = 0.0;
  for (std::size_t i = 0; i < interior; ++i) {
    const double pivot = 4.0 - (i == 0 ? 0.0 : prev);
    inv_pivot_[i] = 1.0 / pivot;
    prev = inv_pivot_[i];
  }
}

void NaturalSpline::fit(std::span<const double> y,
                        std::span<double> curvature) const {
  if (y.size() != knots_ || curvature.size() != knots_) {
    throw DataError("spline fit: size mismatch");
  }
  std::fill(curvature.begin(), curvature.end(), 0.0);
  const std::size_t interior = inv_pivot_.size();
  if (interior == 0) return;
  // Forward sweep into curvature[1..n-2], then back substitution.
  double carry = 0.0;
  for (std::size_t i = 0; i < interior; ++i) {
    const std::size_t j = i + 1;
    const double rhs = 6.0 * (y[j - 1] - 2.0 * y[j] + y[j + 1]);
    carry = (rhs - carry) * inv_pivot_[i];
    curvature[j] = carry;
  }
  for (std::size_t i = interior - 1; i-- > 0;) {
    curvature[i + 1] -= inv_pivot_[i] * curvature[i + 2];
  }
}

double NaturalSpline::eval(std::span<const double> y,
                           std::span<const double> curvature, double t) {
  const std::size_t n = y.size();
  if (n == 1) return y[0];
  const double last = static_cast<double>(n - 1);
  if (!(t > 0.0)) return y[0];  // also maps NaN to the boundary
  if (t >= last) return y[n - 1];
  const auto i = std::min(static_cast<std::size_t>(t), n - 2);
  const double b = t - static_cast<double>(i);
  const double a = 1.0 - b;
  return a * y[i] + b * y[i + 1] +
         ((a * a * a - a) * curvature[i] + (b * b * b - b) * curvature[i + 1]) /
             6.0;
}

void NaturalSpline::resample(std::span<const double> y,
                             std::span<const double> positions,
                             std::span<double> out) const {
  std::vector<double> curvature(knots_);
  fit(y, curvature);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    out[i] = eval(y, curvature, positions[i]);
  }
}

}  // namespace embedloc

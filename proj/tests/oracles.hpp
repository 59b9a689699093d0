#pragma once

// Test-only reference computations, independent of the library code paths
// they are used to check.

#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace zclf::testing {

/// Central difference of a scalar function along coordinate i.
inline double central_difference(const std::function<double(std::span<const double>)>& fn,
                                 std::vector<double> x, std::size_t i, double h = 1e-6) {
  const double x0 = x[i];
  x[i] = x0 + h;
  const double fp = fn(x);
  x[i] = x0 - h;
  const double fm = fn(x);
  return (fp - fm) / (2.0 * h);
}

/// Composite Gauss-Legendre (5-point) quadrature of fn on [a, b] split into m panels.
inline double gauss_legendre(const std::function<double(double)>& fn, double a, double b, int m) {
  static constexpr double nodes[5] = {0.0, -0.5384693101056831, 0.5384693101056831, -0.9061798459386640,
                                      0.9061798459386640};
  static constexpr double weights[5] = {0.5688888888888889, 0.4786286704993665, 0.4786286704993665,
                                        0.2369268850561891, 0.2369268850561891};
  const double h = (b - a) / m;
  double sum = 0.0;
  for (int p = 0; p < m; ++p) {
    const double c = a + (p + 0.5) * h;
    for (int q = 0; q < 5; ++q) sum += weights[q] * fn(c + 0.5 * h * nodes[q]);
  }
  return 0.5 * h * sum;
}

}  // namespace zclf::testing

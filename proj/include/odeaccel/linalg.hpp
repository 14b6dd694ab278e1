/**
 * @file linalg.hpp
 * @brief Eigen aliases, conditioning checks and trapezoidal quadrature.
 */
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace odeaccel {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Largest scaled condition number accepted before a solve is declared singular.
inline constexpr double kMaxCondition = 1e12;

/// 2-norm condition number after scaling every column to unit norm.
///
/// The parameters of chemical kinetics problems differ by many orders of
/// magnitude; unscaled condition numbers reflect units, not identifiability.
[[nodiscard]] inline double scaled_condition(const Matrix& m) {
  if (m.size() == 0) {
    return 1.0;
  }
  Matrix scaled = m;
  for (Eigen::Index j = 0; j < scaled.cols(); ++j) {
    const double norm = scaled.col(j).norm();
    if (norm == 0.0 || !std::isfinite(norm)) {
      return std::numeric_limits<double>::infinity();
    }
    scaled.col(j) /= norm;
  }
  Eigen::JacobiSVD<Matrix> svd(scaled);
  const auto& sv = svd.singularValues();
  const double smallest = sv(sv.size() - 1);
  if (!(smallest > 0.0)) {
    return std::numeric_limits<double>::infinity();
  }
  return sv(0) / smallest;
}

[[nodiscard]] inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// Trapezoidal weights for a strictly increasing grid.
[[nodiscard]] inline std::vector<double> trapezoid_weights(std::span<const double> grid) {
  std::vector<double> w(grid.size(), 0.0);
  for (std::size_t k = 1; k < grid.size(); ++k) {
    const double h = grid[k] - grid[k - 1];
    w[k - 1] += 0.5 * h;
    w[k] += 0.5 * h;
  }
  return w;
}

/// Equispaced grid with `points` nodes covering [a, b]; endpoints are exact.
[[nodiscard]] inline std::vector<double> linspace(double a, double b, std::size_t points) {
  std::vector<double> grid(points);
  if (points == 1) {
    grid[0] = a;
    return grid;
  }
  for (std::size_t k = 0; k < points; ++k) {
    grid[k] = a + (b - a) * static_cast<double>(k) / static_cast<double>(points - 1);
  }
  grid.back() = b;
  return grid;
}

}  // namespace odeaccel

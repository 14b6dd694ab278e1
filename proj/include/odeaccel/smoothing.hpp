/**
 * @file smoothing.hpp
 * @brief Local polynomial kernel regression for trajectories and derivatives.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <sstream>
#include <vector>

#include "odeaccel/dataset.hpp"
#include "odeaccel/errors.hpp"
#include "odeaccel/linalg.hpp"

namespace odeaccel {

struct Kernel {
  std::function<double(double)> eval;
  double support = 1.0;

  /// K(u) = 3/4 (1 - u^2) on |u| <= 1.
  [[nodiscard]] static Kernel epanechnikov() {
    return {[](double u) { return std::abs(u) <= 1.0 ? 0.75 * (1.0 - u * u) : 0.0; }, 1.0};
  }

  [[nodiscard]] double operator()(double u) const { return eval(u); }
};

struct SmootherConfig {
  int degree = 1;
  double bandwidth = 0.0;
  std::vector<double> eval_grid;
};

struct SmoothedCurve {
  std::vector<double> eval_grid;
  Matrix values;       // d x m
  Matrix derivatives;  // d x m
  double bandwidth = 0.0;
};

inline constexpr std::size_t kDefaultEvalPoints = 201;

[[nodiscard]] inline std::vector<double> default_eval_grid(double horizon,
                                                           std::size_t points = kDefaultEvalPoints) {
  return linspace(0.0, horizon, points);
}

/// Local polynomial estimate of order `degree` at every eval point.
///
/// At t the fit minimises sum_i |Y_i - nu U((t_i - t)/b)|^2 K((t_i - t)/b)
/// over nu in R^{d x (degree+1)} with U(u) = (1, u, u^2/2!, ...). The value
/// is the first column of nu and the derivative the second column over b.
[[nodiscard]] inline SmoothedCurve local_poly_fit(const Dataset& data, const SmootherConfig& config,
                                                  const Kernel& kernel = Kernel::epanechnikov()) {
  if (config.degree < 1) {
    throw Error(ErrorKind::InvalidArgument, "smoother degree must be at least 1");
  }
  if (!(config.bandwidth > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "bandwidth must be positive");
  }
  const auto cols = static_cast<Eigen::Index>(config.degree + 1);
  const auto d = static_cast<Eigen::Index>(data.dim());
  const auto m = config.eval_grid.size();
  const double b = config.bandwidth;

  SmoothedCurve out;
  out.eval_grid = config.eval_grid;
  out.bandwidth = b;
  out.values.resize(d, static_cast<Eigen::Index>(m));
  out.derivatives.resize(d, static_cast<Eigen::Index>(m));

  std::vector<Eigen::Index> local;
  std::vector<double> weights;
  for (std::size_t k = 0; k < m; ++k) {
    const double t = config.eval_grid[k];
    local.clear();
    weights.clear();
    for (std::size_t i = 0; i < data.times.size(); ++i) {
      const double w = kernel((data.times[i] - t) / b);
      if (w > 0.0) {
        local.push_back(static_cast<Eigen::Index>(i));
        weights.push_back(w);
      }
    }
    const auto n_local = static_cast<Eigen::Index>(local.size());
    if (n_local < cols) {
      std::ostringstream msg;
      msg << "only " << n_local << " weighted observations near t=" << t << " for bandwidth " << b;
      throw Error(ErrorKind::SingularLocalDesign, msg.str());
    }
    Matrix design(n_local, cols);
    Matrix rhs(n_local, d);
    for (Eigen::Index r = 0; r < n_local; ++r) {
      const double sw = std::sqrt(weights[static_cast<std::size_t>(r)]);
      const double u = (data.times[static_cast<std::size_t>(local[static_cast<std::size_t>(r)])] - t) / b;
      double basis = 1.0;
      for (Eigen::Index c = 0; c < cols; ++c) {
        design(r, c) = sw * basis;
        basis *= u / static_cast<double>(c + 1);
      }
      rhs.row(r) = sw * data.observations.col(local[static_cast<std::size_t>(r)]).transpose();
    }
    Eigen::JacobiSVD<Matrix> svd(design);
    const auto& sv = svd.singularValues();
    if (!(sv(cols - 1) > 0.0) || sv(0) / sv(cols - 1) > kMaxCondition) {
      std::ostringstream msg;
      msg << "local design is singular near t=" << t << " for bandwidth " << b;
      throw Error(ErrorKind::SingularLocalDesign, msg.str());
    }
    const Matrix nu = design.colPivHouseholderQr().solve(rhs);  // (degree+1) x d
    out.values.col(static_cast<Eigen::Index>(k)) = nu.row(0).transpose();
    out.derivatives.col(static_cast<Eigen::Index>(k)) = nu.row(1).transpose() / b;
  }
  return out;
}

/// Candidate bandwidths c_j * n^{-1/3}.
[[nodiscard]] inline std::vector<double> bandwidth_set(std::size_t n, std::span<const double> constants) {
  if (n < 2) {
    throw Error(ErrorKind::InvalidArgument, "bandwidth set needs at least two observations");
  }
  const double scale = std::cbrt(1.0 / static_cast<double>(n));
  std::vector<double> out;
  out.reserve(constants.size());
  for (std::size_t j = 0; j < constants.size(); ++j) {
    if (!(constants[j] > 0.0) || (j > 0 && !(constants[j] > constants[j - 1]))) {
      throw Error(ErrorKind::InvalidArgument, "bandwidth constants must be positive and increasing");
    }
    out.push_back(constants[j] * scale);
  }
  return out;
}

inline const std::vector<double>& default_bandwidth_constants() {
  static const std::vector<double> c{0.5, 0.75, 1.0, 1.5, 2.0, 3.0};
  return c;
}

/// Smallest bandwidth for which every eval point sees at least degree+1
/// distinct observation times strictly inside the kernel support.
[[nodiscard]] inline double minimum_bandwidth(std::span<const double> times, std::span<const double> eval_grid,
                                              int degree, double support = 1.0) {
  std::vector<double> distinct(times.begin(), times.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  const auto need = static_cast<std::size_t>(degree + 1);
  if (distinct.size() < need) {
    throw Error(ErrorKind::SingularLocalDesign, "fewer distinct observation times than polynomial coefficients");
  }
  double worst = 0.0;
  std::vector<double> dist(distinct.size());
  for (double t : eval_grid) {
    for (std::size_t i = 0; i < distinct.size(); ++i) {
      dist[i] = std::abs(distinct[i] - t);
    }
    std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(need - 1), dist.end());
    worst = std::max(worst, dist[need - 1]);
  }
  return worst / support;
}

/// Bandwidth set for a dataset: c_j n^{-1/3}, stretched by a common factor
/// when the smallest candidate would leave some eval point under-supported.
[[nodiscard]] inline std::vector<double> adapted_bandwidth_set(const Dataset& data,
                                                               std::span<const double> eval_grid,
                                                               std::span<const double> constants, int degree,
                                                               double support = 1.0) {
  std::vector<double> b = bandwidth_set(data.size(), constants);
  if (b.empty()) {
    return b;
  }
  const double floor = minimum_bandwidth(data.times, eval_grid, degree, support) * 1.01;
  if (b.front() < floor) {
    const double stretch = floor / b.front();
    for (double& v : b) {
      v *= stretch;
    }
  }
  return b;
}

}  // namespace odeaccel

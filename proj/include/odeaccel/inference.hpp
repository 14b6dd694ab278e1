/**
 * @file inference.hpp
 * @brief Residual variance, Fisher information and Wald confidence intervals.
 */
#pragma once

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <vector>

#include "odeaccel/dataset.hpp"
#include "odeaccel/errors.hpp"
#include "odeaccel/linalg.hpp"
#include "odeaccel/ode_core.hpp"
#include "odeaccel/sensitivity.hpp"

namespace odeaccel {

inline constexpr std::size_t kDefaultFisherPoints = 1001;

/// Which time average defines the information matrix.
enum class FisherDesign {
  Uniform,   // (1/T) times the integral over [0, T]
  Observed,  // average over the observation times
};

/// Pooled residual mean square with divisor d(n-1).
[[nodiscard]] inline double sigma2_from_residuals(const Matrix& residual) {
  const auto d = static_cast<double>(residual.rows());
  const auto n = static_cast<double>(residual.cols());
  if (residual.cols() < 2) {
    throw Error(ErrorKind::InvalidArgument, "variance estimate needs at least two observation times");
  }
  return residual.squaredNorm() / (d * (n - 1.0));
}

[[nodiscard]] inline double sigma2_hat(const OdeModel& model, const ParameterVector& eta, const Dataset& data,
                                       const ToleranceSpec& tol = {}) {
  if (data.dim() != model.dim_state) {
    throw Error(ErrorKind::DimensionMismatch, "dataset dimension differs from the model state dimension");
  }
  const Trajectory traj = integrate(model, eta, data.t_max(), tol);
  return sigma2_from_residuals(residuals(traj, data));
}

struct FisherMatrix {
  Matrix matrix;                     // q x q over the estimated components
  std::vector<std::size_t> indices;  // components of eta, in eta order
  double horizon = 0.0;
  double sigma2 = 0.0;
};

/// I(eta) = sigma^-2 sum_i T^-1 int_0^T (dx_i/deta)(dx_i/deta)^T dt for
/// observation times spread uniformly over [0, T].
///
/// The integral is the trapezoidal rule on `points` equispaced nodes of the
/// dense sensitivity solution.
[[nodiscard]] inline FisherMatrix fisher_info(const OdeModel& model, const ParameterVector& eta, double sigma2,
                                              double t_end, std::size_t points = kDefaultFisherPoints,
                                              const ToleranceSpec& tol = {}) {
  if (!(sigma2 > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "sigma^2 must be positive");
  }
  if (points < 2) {
    throw Error(ErrorKind::InvalidArgument, "Fisher quadrature needs at least two nodes");
  }
  const auto sol = solve_sensitivities(model, eta, t_end, SensitivityOrder::First, tol);
  const auto grid = linspace(0.0, t_end, points);
  const auto w = trapezoid_weights(grid);
  const auto q = static_cast<Eigen::Index>(model.dim_eta());
  Matrix full = Matrix::Zero(q, q);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const Matrix s = sol.at(grid[k]).s;
    full.noalias() += w[k] * (s.transpose() * s);
  }
  full /= sigma2 * t_end;

  FisherMatrix out;
  out.indices = eta.estimated_indices();
  out.horizon = t_end;
  out.sigma2 = sigma2;
  const auto u = static_cast<Eigen::Index>(out.indices.size());
  out.matrix.resize(u, u);
  for (Eigen::Index a = 0; a < u; ++a) {
    for (Eigen::Index b = 0; b < u; ++b) {
      out.matrix(a, b) = full(static_cast<Eigen::Index>(out.indices[static_cast<std::size_t>(a)]),
                              static_cast<Eigen::Index>(out.indices[static_cast<std::size_t>(b)]));
    }
  }
  return out;
}

/// Information at the actual design: sigma^-2 n^-1 sum_j s(t_j)^T s(t_j).
///
/// Under uniform sampling this tends to the integral form above as n grows;
/// for coarse grids it tracks the least-squares variance much more closely.
[[nodiscard]] inline FisherMatrix fisher_info_observed(const OdeModel& model, const ParameterVector& eta,
                                                       double sigma2, std::span<const double> times,
                                                       const ToleranceSpec& tol = {}) {
  if (!(sigma2 > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "sigma^2 must be positive");
  }
  if (times.empty()) {
    throw Error(ErrorKind::InvalidArgument, "design needs at least one time");
  }
  const double t_end = *std::max_element(times.begin(), times.end());
  if (!(t_end > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "design times must extend beyond t=0");
  }
  const auto sol = solve_sensitivities(model, eta, t_end, SensitivityOrder::First, tol);
  const auto q = static_cast<Eigen::Index>(model.dim_eta());
  Matrix full = Matrix::Zero(q, q);
  for (double t : times) {
    const Matrix s = sol.at(t).s;
    full.noalias() += s.transpose() * s;
  }
  full /= sigma2 * static_cast<double>(times.size());

  FisherMatrix out;
  out.indices = eta.estimated_indices();
  out.horizon = t_end;
  out.sigma2 = sigma2;
  const auto u = static_cast<Eigen::Index>(out.indices.size());
  out.matrix.resize(u, u);
  for (Eigen::Index a = 0; a < u; ++a) {
    for (Eigen::Index b = 0; b < u; ++b) {
      out.matrix(a, b) = full(static_cast<Eigen::Index>(out.indices[static_cast<std::size_t>(a)]),
                              static_cast<Eigen::Index>(out.indices[static_cast<std::size_t>(b)]));
    }
  }
  return out;
}

/// Two-sided standard normal quantile z_{1-(1-level)/2}.
[[nodiscard]] inline double normal_quantile_two_sided(double level) {
  if (!(level > 0.0 && level < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "confidence level must lie in (0, 1)");
  }
  const boost::math::normal_distribution<double> normal;
  return boost::math::quantile(normal, 1.0 - 0.5 * (1.0 - level));
}

struct ConfidenceInterval {
  std::size_t index = 0;  // component of eta
  double point = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double variance = 0.0;  // I^{-1}_jj / n
};

/// Inverse Fisher information; throws SingularFisher when not invertible.
[[nodiscard]] inline Matrix inverse_fisher(const FisherMatrix& fisher) {
  const double cond = scaled_condition(fisher.matrix);
  if (!(cond <= kMaxCondition)) {
    std::ostringstream msg;
    msg << "Fisher information is singular (scaled condition " << cond << ")";
    throw Error(ErrorKind::SingularFisher, msg.str());
  }
  const auto u = fisher.matrix.rows();
  return fisher.matrix.colPivHouseholderQr().solve(Matrix::Identity(u, u));
}

/// Wald intervals eta_j +- z sqrt(I^{-1}_jj / n) for the estimated components.
[[nodiscard]] inline std::vector<ConfidenceInterval> confidence_intervals(const ParameterVector& eta,
                                                                          const FisherMatrix& fisher, std::size_t n,
                                                                          double level = 0.95) {
  if (n == 0) {
    throw Error(ErrorKind::InvalidArgument, "sample size must be positive");
  }
  const double z = normal_quantile_two_sided(level);
  const Matrix inv = inverse_fisher(fisher);
  std::vector<ConfidenceInterval> out;
  for (std::size_t a = 0; a < fisher.indices.size(); ++a) {
    const auto ai = static_cast<Eigen::Index>(a);
    const double var = inv(ai, ai) / static_cast<double>(n);
    if (!(var >= 0.0) || !std::isfinite(var)) {
      throw Error(ErrorKind::SingularFisher, "inverse Fisher information has a negative diagonal");
    }
    ConfidenceInterval ci;
    ci.index = fisher.indices[a];
    ci.point = eta[ci.index];
    ci.variance = var;
    const double half = z * std::sqrt(var);
    ci.lower = ci.point - half;
    ci.upper = ci.point + half;
    out.push_back(ci);
  }
  return out;
}

}  // namespace odeaccel

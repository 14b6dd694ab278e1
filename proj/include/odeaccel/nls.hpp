/**
 * @file nls.hpp
 * @brief Nonlinear least-squares baseline via Levenberg-Marquardt.
 *
 * The residual Jacobian comes from the first-order sensitivity system; the
 * damping matrix is diag(J^T J) so the iteration is invariant to the very
 * different scales of rate constants.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "odeaccel/accel.hpp"
#include "odeaccel/dataset.hpp"
#include "odeaccel/errors.hpp"
#include "odeaccel/linalg.hpp"
#include "odeaccel/ode_core.hpp"
#include "odeaccel/sensitivity.hpp"

namespace odeaccel {

struct NlsConfig {
  std::optional<ParameterVector> initial;  // defaults to the SME at the largest bandwidth
  std::size_t max_iterations = 200;
  double gradient_tol = 1e-8;  // on |Psi_n|_inf
  double step_tol = 1e-10;     // relative step length
  double initial_damping = 1e-3;
  AccelConfig settings;  // smoother settings for the default start, tolerances and inference options
};

namespace detail {

struct GaussNewtonPoint {
  Vector residual;  // stacked (j, i) residuals
  Matrix jacobian;  // d(residual)/d(eta_estimated)
  double rss = std::numeric_limits<double>::infinity();
};

inline GaussNewtonPoint gauss_newton_point(const OdeModel& model, const ParameterVector& eta, const Dataset& data,
                                           const std::vector<std::size_t>& idx, const ToleranceSpec& tol) {
  const auto sol = solve_sensitivities(model, eta, data_horizon(data), SensitivityOrder::First, tol);
  const auto d = static_cast<Eigen::Index>(model.dim_state);
  const auto n = static_cast<Eigen::Index>(data.size());
  const auto u = static_cast<Eigen::Index>(idx.size());
  GaussNewtonPoint pt;
  pt.residual.resize(n * d);
  pt.jacobian.resize(n * d, u);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto p = sol.at(data.times[static_cast<std::size_t>(j)]);
    pt.residual.segment(j * d, d) = data.observations.col(j) - p.x;
    for (Eigen::Index a = 0; a < u; ++a) {
      pt.jacobian.block(j * d, a, d, 1) = -p.s.col(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(a)]));
    }
  }
  pt.rss = pt.residual.squaredNorm();
  return pt;
}

inline ParameterVector with_estimated(const ParameterVector& base, const std::vector<std::size_t>& idx,
                                      const Vector& values) {
  ParameterVector out = base;
  const auto d = static_cast<std::size_t>(base.xi.size());
  for (std::size_t a = 0; a < idx.size(); ++a) {
    const double v = values(static_cast<Eigen::Index>(a));
    if (idx[a] < d) {
      out.xi(static_cast<Eigen::Index>(idx[a])) = v;
    } else {
      out.theta(static_cast<Eigen::Index>(idx[a] - d)) = v;
    }
  }
  return out;
}

}  // namespace detail

/// Smooth-and-match start at the largest bandwidth that succeeds.
[[nodiscard]] inline PreliminaryEstimate nls_default_initial(const OdeModel& model, const Dataset& data,
                                                             const AccelConfig& settings) {
  detail::check_inputs(model, data);
  const auto grid = default_eval_grid(data.t_max(), settings.eval_points);
  auto bandwidths = detail::candidate_bandwidths(data, settings, grid);
  std::sort(bandwidths.begin(), bandwidths.end(), std::greater<>());
  std::string last_error = "no bandwidths";
  for (double b : bandwidths) {
    try {
      return preliminary_at_bandwidth(model, data, settings, b);
    } catch (const Error& e) {
      last_error = e.what();
    }
  }
  throw Error(ErrorKind::AllBandwidthsFailed, "no smooth-and-match start for NLS: " + last_error);
}

/// Local minimiser of R_n(eta) by Levenberg-Marquardt.
///
/// Hitting the iteration budget does not throw: the best iterate is returned
/// with `converged = false` and status "max_iterations_exceeded".
[[nodiscard]] inline EstimateReport nls_fit(const OdeModel& model, const Dataset& data, const NlsConfig& config) {
  detail::check_inputs(model, data);
  if (config.max_iterations < 1 || !(config.gradient_tol > 0.0) || !(config.step_tol > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "NLS tolerances must be positive and max_iterations >= 1");
  }
  const ToleranceSpec& tol = config.settings.tol;

  EstimateReport report;
  report.model_name = model.name;
  report.estimator = "nls";
  report.n = data.size();
  report.level = config.settings.level;
  report.finite_difference_derivatives = model.finite_difference_derivatives;

  ParameterVector current;
  if (config.initial) {
    current = *config.initial;
    check_dimensions(model, current);
    report.eta_prelim = current;
  } else {
    const PreliminaryEstimate start = nls_default_initial(model, data, config.settings);
    current = start.eta_hat;
    report.eta_prelim = start.eta_hat;
    report.prelim_method = start.method;
    report.selected_bandwidth = start.bandwidth;
  }
  if (!current.eta().allFinite()) {
    throw Error(ErrorKind::InvalidArgument, "NLS initial point is not finite");
  }
  const auto idx = current.estimated_indices();
  if (idx.empty()) {
    throw Error(ErrorKind::InvalidArgument, "no component of eta is marked for estimation");
  }
  const auto u = static_cast<Eigen::Index>(idx.size());
  auto values_of = [&](const ParameterVector& p) {
    Vector v(u);
    for (Eigen::Index a = 0; a < u; ++a) {
      v(a) = p[idx[static_cast<std::size_t>(a)]];
    }
    return v;
  };

  auto point = detail::gauss_newton_point(model, current, data, idx, tol);
  double mu = -1.0;
  double nu = 2.0;
  report.converged = false;
  report.status = "max_iterations_exceeded";
  std::size_t iter = 0;
  while (iter < config.max_iterations) {
    const Matrix a = point.jacobian.transpose() * point.jacobian;
    const Vector g = point.jacobian.transpose() * point.residual;  // = -Psi_n
    if (g.cwiseAbs().maxCoeff() < config.gradient_tol) {
      report.converged = true;
      report.status = "gradient_tolerance";
      break;
    }
    Vector diag = a.diagonal();
    for (Eigen::Index k = 0; k < u; ++k) {
      if (!(diag(k) > 0.0)) {
        diag(k) = 1.0;
      }
    }
    if (mu < 0.0) {
      mu = config.initial_damping;
    }
    ++iter;
    Matrix damped = a;
    damped.diagonal() += mu * diag;
    const double cond = scaled_condition(damped);
    if (!(cond <= kMaxCondition)) {
      throw Error(ErrorKind::SingularJacobian, "Gauss-Newton system is singular at an NLS iterate");
    }
    const Vector h = damped.ldlt().solve(-g);
    const Vector x = values_of(current);
    if (h.norm() <= config.step_tol * (x.norm() + config.step_tol)) {
      report.converged = true;
      report.status = "step_tolerance";
      break;
    }
    const ParameterVector candidate = detail::with_estimated(current, idx, x + h);
    detail::GaussNewtonPoint next;
    bool evaluated = true;
    try {
      next = detail::gauss_newton_point(model, candidate, data, idx, tol);
    } catch (const Error&) {
      evaluated = false;
    }
    const double predicted = h.dot(mu * diag.cwiseProduct(h) - g);  // 2 x (model decrease)
    const double actual = point.rss - next.rss;
    const double rho = (evaluated && predicted > 0.0) ? actual / predicted : -1.0;
    if (evaluated && rho > 0.0 && std::isfinite(next.rss)) {
      const bool tiny = actual <= 1e-15 * point.rss;
      current = candidate;
      point = std::move(next);
      mu *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * rho - 1.0, 3));
      nu = 2.0;
      if (tiny) {
        report.converged = true;
        report.status = "function_tolerance";
        break;
      }
    } else {
      mu *= nu;
      nu *= 2.0;
      if (!std::isfinite(mu) || mu > 1e30) {
        report.converged = true;
        report.status = "damping_limit";
        break;
      }
    }
  }
  report.iterations = iter;
  report.eta_accel = current;
  report.rss = point.rss;
  attach_inference(model, data, config.settings, report);
  return report;
}

}  // namespace odeaccel

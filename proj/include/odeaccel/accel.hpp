/**
 * @file accel.hpp
 * @brief One-step Newton-Raphson (ACCEL) estimator and the fit pipeline.
 *
 * For every candidate bandwidth b the pipeline smooths the data, computes a
 * smooth-and-match preliminary estimate, takes exactly one Newton step on
 * the least-squares estimating equations and scores the result by its
 * residual sum of squares. The bandwidth with the smallest refit RSS wins;
 * inference (sigma^2, Fisher information, Wald intervals) is then computed at
 * the selected estimate.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "odeaccel/dataset.hpp"
#include "odeaccel/errors.hpp"
#include "odeaccel/inference.hpp"
#include "odeaccel/linalg.hpp"
#include "odeaccel/ode_core.hpp"
#include "odeaccel/preliminary.hpp"
#include "odeaccel/sensitivity.hpp"
#include "odeaccel/smoothing.hpp"

namespace odeaccel {

struct AccelConfig {
  std::vector<double> bandwidth_constants = default_bandwidth_constants();
  std::vector<double> bandwidths;  // explicit B; overrides the constants when nonempty
  Kernel kernel = Kernel::epanechnikov();
  int degree = 1;
  /// Known components and their values. Estimated entries are ignored; an
  /// empty reference (xi of size 0) estimates every component.
  ParameterVector reference;
  ToleranceSpec tol;
  std::size_t eval_points = kDefaultEvalPoints;
  std::size_t fisher_points = kDefaultFisherPoints;
  FisherDesign fisher_design = FisherDesign::Observed;  // Uniform gives the integral form
  double level = 0.95;
  DerivativeSmeOptions derivative_options;
  /// Map t -> t / T before fitting and transform estimates back afterwards.
  /// Only valid for autonomous theta-linear models.
  bool rescale_time = false;
};

struct BandwidthDiagnostic {
  double bandwidth = 0.0;
  bool ok = false;
  double rss = std::numeric_limits<double>::infinity();
  double jacobian_condition = std::numeric_limits<double>::quiet_NaN();
  std::string error;
};

struct EstimateReport {
  std::string model_name;
  std::string estimator = "accel";
  ParameterVector eta_prelim;
  ParameterVector eta_accel;  // the reported estimate (NLS fills it with its minimiser)
  PreliminaryMethod prelim_method = PreliminaryMethod::IntegralSme;
  double selected_bandwidth = 0.0;
  double rss = 0.0;
  double sigma2_hat = 0.0;
  FisherMatrix fisher;
  std::vector<ConfidenceInterval> ci;
  double level = 0.95;
  std::size_t n = 0;
  double jacobian_condition = std::numeric_limits<double>::quiet_NaN();
  bool finite_difference_derivatives = false;
  std::vector<BandwidthDiagnostic> bandwidths;
  // NLS only.
  std::size_t iterations = 0;
  bool converged = true;
  std::string status = "ok";
};

struct OneStepResult {
  ParameterVector eta;
  EstimatingFunctionValue estimating;
  double jacobian_condition = 0.0;
};

/// eta_bar = eta_hat - (dPsi/deta(eta_hat))^{-1} Psi(eta_hat) on the
/// estimated components, from a single variational solve.
[[nodiscard]] inline OneStepResult one_step_detailed(const OdeModel& model, const ParameterVector& eta_hat,
                                                     const Dataset& data, const ToleranceSpec& tol = {}) {
  OneStepResult out;
  out.estimating = estimating_function(model, eta_hat, data, tol);
  const auto& ef = out.estimating;
  if (ef.indices.empty()) {
    throw Error(ErrorKind::InvalidArgument, "no component of eta is marked for estimation");
  }
  out.jacobian_condition = scaled_condition(ef.dpsi);
  if (!(out.jacobian_condition <= kMaxCondition)) {
    std::ostringstream msg;
    msg << "dPsi/deta is singular (scaled condition " << out.jacobian_condition << ")";
    throw Error(ErrorKind::SingularJacobian, msg.str());
  }
  const Vector step = ef.dpsi.colPivHouseholderQr().solve(ef.psi);
  Vector eta = eta_hat.eta();
  for (std::size_t a = 0; a < ef.indices.size(); ++a) {
    eta(static_cast<Eigen::Index>(ef.indices[a])) -= step(static_cast<Eigen::Index>(a));
  }
  if (!eta.allFinite()) {
    throw Error(ErrorKind::NonFiniteUpdate, "Newton step produced non-finite components");
  }
  out.eta = eta_hat;
  for (std::size_t k : ef.indices) {
    const auto kk = static_cast<Eigen::Index>(k);
    if (k < static_cast<std::size_t>(out.eta.xi.size())) {
      out.eta.xi(kk) = eta(kk);
    } else {
      out.eta.theta(kk - out.eta.xi.size()) = eta(kk);
    }
  }
  return out;
}

[[nodiscard]] inline ParameterVector one_step(const OdeModel& model, const ParameterVector& eta_hat,
                                              const Dataset& data, const ToleranceSpec& tol = {}) {
  return one_step_detailed(model, eta_hat, data, tol).eta;
}

namespace detail {

inline ParameterVector resolve_reference(const OdeModel& model, const AccelConfig& config) {
  if (config.reference.xi.size() == 0 && config.reference.theta.size() == 0) {
    return {Vector::Zero(static_cast<Eigen::Index>(model.dim_state)),
            Vector::Zero(static_cast<Eigen::Index>(model.dim_param))};
  }
  check_dimensions(model, config.reference);
  if (config.reference.estimated_indices().empty()) {
    throw Error(ErrorKind::InvalidArgument, "at least one component of eta must be estimated");
  }
  return config.reference;
}

inline void check_inputs(const OdeModel& model, const Dataset& data) {
  data.validate();
  if (data.dim() != model.dim_state) {
    std::ostringstream msg;
    msg << "data has " << data.dim() << " state columns but model " << model.name << " has " << model.dim_state;
    throw Error(ErrorKind::DimensionMismatch, msg.str());
  }
  if (data.size() < 2) {
    throw Error(ErrorKind::InvalidArgument, "need at least two observation times");
  }
}

inline std::vector<double> candidate_bandwidths(const Dataset& data, const AccelConfig& config,
                                                const std::vector<double>& grid) {
  if (!config.bandwidths.empty()) {
    for (double b : config.bandwidths) {
      if (!(b > 0.0)) {
        throw Error(ErrorKind::InvalidArgument, "bandwidths must be positive");
      }
    }
    return config.bandwidths;
  }
  if (config.bandwidth_constants.empty()) {
    throw Error(ErrorKind::InvalidArgument, "bandwidth set is empty");
  }
  return adapted_bandwidth_set(data, grid, config.bandwidth_constants, config.degree, config.kernel.support);
}

}  // namespace detail

/// Smoother plus preliminary estimator at a single bandwidth.
[[nodiscard]] inline PreliminaryEstimate preliminary_at_bandwidth(const OdeModel& model, const Dataset& data,
                                                                  const AccelConfig& config, double bandwidth) {
  const ParameterVector reference = detail::resolve_reference(model, config);
  SmootherConfig sc;
  sc.degree = config.degree;
  sc.bandwidth = bandwidth;
  sc.eval_grid = default_eval_grid(data.t_max(), config.eval_points);
  const SmoothedCurve curve = local_poly_fit(data, sc, config.kernel);
  return preliminary_estimate(curve, model, reference, config.derivative_options);
}

/// Runs smoother -> preliminary -> one step -> refit RSS for each bandwidth
/// and keeps the bandwidth with the smallest RSS. Bandwidths whose pipeline
/// raises are skipped and recorded in the diagnostics.
[[nodiscard]] inline EstimateReport select_bandwidth(const OdeModel& model, const Dataset& data,
                                                     const AccelConfig& config) {
  detail::check_inputs(model, data);
  const auto grid = default_eval_grid(data.t_max(), config.eval_points);
  const auto bandwidths = detail::candidate_bandwidths(data, config, grid);

  EstimateReport best;
  best.model_name = model.name;
  best.rss = std::numeric_limits<double>::infinity();
  best.n = data.size();
  best.level = config.level;
  best.finite_difference_derivatives = model.finite_difference_derivatives;
  bool found = false;
  std::vector<BandwidthDiagnostic> diagnostics;
  for (double b : bandwidths) {
    BandwidthDiagnostic diag;
    diag.bandwidth = b;
    try {
      const PreliminaryEstimate prelim = preliminary_at_bandwidth(model, data, config, b);
      const OneStepResult step = one_step_detailed(model, prelim.eta_hat, data, config.tol);
      diag.jacobian_condition = step.jacobian_condition;
      diag.rss = rss(model, step.eta, data, config.tol);
      if (!std::isfinite(diag.rss)) {
        throw Error(ErrorKind::NonFiniteUpdate, "refit RSS is not finite");
      }
      diag.ok = true;
      if (diag.rss < best.rss) {
        best.rss = diag.rss;
        best.eta_prelim = prelim.eta_hat;
        best.eta_accel = step.eta;
        best.prelim_method = prelim.method;
        best.selected_bandwidth = b;
        best.jacobian_condition = step.jacobian_condition;
        found = true;
      }
    } catch (const Error& e) {
      diag.error = e.what();
    }
    diagnostics.push_back(std::move(diag));
  }
  best.bandwidths = std::move(diagnostics);
  if (!found) {
    std::ostringstream msg;
    msg << "no bandwidth completed the pipeline";
    for (const auto& d : best.bandwidths) {
      msg << "; b=" << d.bandwidth << ": " << d.error;
    }
    throw Error(ErrorKind::AllBandwidthsFailed, msg.str());
  }
  return best;
}

/// Adds sigma^2, Fisher information and confidence intervals at the
/// reported estimate.
inline void attach_inference(const OdeModel& model, const Dataset& data, const AccelConfig& settings,
                             EstimateReport& report) {
  const ToleranceSpec& tol = settings.tol;
  const Trajectory traj = integrate(model, report.eta_accel, data.t_max(), tol);
  const Matrix r = residuals(traj, data);
  report.rss = r.squaredNorm();
  report.sigma2_hat = sigma2_from_residuals(r);
  if (!(report.sigma2_hat > 0.0)) {
    // Perfect fit: intervals collapse to the point estimate.
    report.fisher.indices = report.eta_accel.estimated_indices();
    report.fisher.horizon = data.t_max();
    report.fisher.sigma2 = 0.0;
    const auto u = static_cast<Eigen::Index>(report.fisher.indices.size());
    report.fisher.matrix = Matrix::Constant(u, u, std::numeric_limits<double>::infinity());
    report.ci.clear();
    for (std::size_t k : report.fisher.indices) {
      const double v = report.eta_accel[k];
      report.ci.push_back({k, v, v, v, 0.0});
    }
    return;
  }
  report.fisher = settings.fisher_design == FisherDesign::Uniform
                      ? fisher_info(model, report.eta_accel, report.sigma2_hat, data.t_max(), settings.fisher_points, tol)
                      : fisher_info_observed(model, report.eta_accel, report.sigma2_hat, data.times, tol);
  report.ci = confidence_intervals(report.eta_accel, report.fisher, data.size(), report.level);
}

namespace detail {

// eta~ = (xi, T theta) under t -> t/T for theta-linear autonomous models.
inline void rescale_back(EstimateReport& report, double horizon) {
  const auto d = static_cast<std::size_t>(report.eta_accel.xi.size());
  report.eta_accel.theta /= horizon;
  report.eta_prelim.theta /= horizon;
  report.selected_bandwidth *= horizon;
  for (auto& bd : report.bandwidths) {
    bd.bandwidth *= horizon;
  }
  for (auto& ci : report.ci) {
    if (ci.index >= d) {
      ci.point /= horizon;
      ci.lower /= horizon;
      ci.upper /= horizon;
      ci.variance /= horizon * horizon;
    }
  }
  // I_orig = J^T I_scaled J with J = diag(1 for xi, T for theta).
  for (std::size_t a = 0; a < report.fisher.indices.size(); ++a) {
    for (std::size_t b = 0; b < report.fisher.indices.size(); ++b) {
      const double fa = report.fisher.indices[a] >= d ? horizon : 1.0;
      const double fb = report.fisher.indices[b] >= d ? horizon : 1.0;
      report.fisher.matrix(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) *= fa * fb;
    }
  }
  report.fisher.horizon = horizon;
}

}  // namespace detail

/// Complete ACCEL fit: bandwidth selection followed by inference.
[[nodiscard]] inline EstimateReport fit(const OdeModel& model, const Dataset& data, const AccelConfig& config = {}) {
  detail::check_inputs(model, data);
  if (config.rescale_time) {
    if (!model.is_theta_linear() || model.time_dependent) {
      throw Error(ErrorKind::InvalidArgument, "time rescaling needs an autonomous theta-linear model");
    }
    const double horizon = data.t_max();
    Dataset scaled = data;
    for (double& t : scaled.times) {
      t /= horizon;
    }
    AccelConfig inner = config;
    inner.rescale_time = false;
    for (double& b : inner.bandwidths) {
      b /= horizon;
    }
    if (inner.reference.theta.size() > 0) {
      inner.reference.theta *= horizon;
    }
    EstimateReport report = fit(model, scaled, inner);
    detail::rescale_back(report, horizon);
    return report;
  }
  EstimateReport report = select_bandwidth(model, data, config);
  attach_inference(model, data, config, report);
  return report;
}

}  // namespace odeaccel

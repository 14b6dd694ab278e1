/**
 * @file preliminary.hpp
 * @brief Smooth-and-match preliminary estimators of (xi, theta).
 *
 * Both estimators work on a SmoothedCurve only; no ODE is integrated. Time
 * integrals use the trapezoidal rule on the curve's eval grid, which must
 * start at t = 0.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <utility>
#include <vector>

#include "odeaccel/errors.hpp"
#include "odeaccel/linalg.hpp"
#include "odeaccel/ode_core.hpp"
#include "odeaccel/smoothing.hpp"

namespace odeaccel {

enum class PreliminaryMethod { IntegralSme, DerivativeSme };

[[nodiscard]] inline const char* to_string(PreliminaryMethod m) {
  return m == PreliminaryMethod::IntegralSme ? "integral_sme" : "derivative_sme";
}

struct PreliminaryEstimate {
  ParameterVector eta_hat;
  PreliminaryMethod method = PreliminaryMethod::IntegralSme;
  double bandwidth = 0.0;
};

/// G(t) = int_0^t g(x(s)) ds on the eval grid, with A = int G and B = int G^T G.
struct IntegralOperators {
  std::vector<double> grid;
  std::vector<Matrix> G;  // d x p per grid node
  Matrix A;               // d x p
  Matrix B;               // p x p
  Vector x_integral;      // int x(t) dt
  Vector gtx_integral;    // int G(t)^T x(t) dt
  double horizon = 0.0;
};

namespace detail {

inline void check_curve(const SmoothedCurve& curve, const OdeModel& model) {
  if (curve.eval_grid.size() < 2) {
    throw Error(ErrorKind::InvalidArgument, "smoothed curve needs at least two grid points");
  }
  if (curve.eval_grid.front() != 0.0) {
    throw Error(ErrorKind::InvalidArgument, "smoothed curve grid must start at t=0");
  }
  if (static_cast<std::size_t>(curve.values.rows()) != model.dim_state) {
    throw Error(ErrorKind::DimensionMismatch, "smoothed curve dimension differs from the model");
  }
}

/// Solves m x = rhs, rejecting systems whose column-scaled condition exceeds the limit.
inline Matrix guarded_solve(const Matrix& m, const Matrix& rhs, ErrorKind kind, const char* what) {
  const double cond = scaled_condition(m);
  if (!(cond <= kMaxCondition)) {
    std::ostringstream msg;
    msg << what << " is numerically singular (scaled condition " << cond << ")";
    throw Error(kind, msg.str());
  }
  return m.colPivHouseholderQr().solve(rhs);
}

}  // namespace detail

[[nodiscard]] inline IntegralOperators integral_operators(const SmoothedCurve& curve, const OdeModel& model) {
  detail::check_curve(curve, model);
  if (!model.is_theta_linear()) {
    throw Error(ErrorKind::InvalidArgument, "integral smooth-and-match requires a theta-linear model");
  }
  const auto& grid = curve.eval_grid;
  const std::size_t m = grid.size();
  const auto w = trapezoid_weights(grid);
  const auto d = static_cast<Eigen::Index>(model.dim_state);
  const auto p = static_cast<Eigen::Index>(model.dim_param);

  IntegralOperators ops;
  ops.grid = grid;
  ops.horizon = grid.back() - grid.front();
  ops.G.reserve(m);
  Matrix g_prev = model.theta_linear(curve.values.col(0));
  ops.G.push_back(Matrix::Zero(d, p));
  for (std::size_t k = 1; k < m; ++k) {
    const Matrix g_cur = model.theta_linear(curve.values.col(static_cast<Eigen::Index>(k)));
    ops.G.push_back(ops.G.back() + 0.5 * (grid[k] - grid[k - 1]) * (g_prev + g_cur));
    g_prev = g_cur;
  }
  ops.A = Matrix::Zero(d, p);
  ops.B = Matrix::Zero(p, p);
  ops.x_integral = Vector::Zero(d);
  ops.gtx_integral = Vector::Zero(p);
  for (std::size_t k = 0; k < m; ++k) {
    const auto& gk = ops.G[k];
    const Vector xk = curve.values.col(static_cast<Eigen::Index>(k));
    ops.A += w[k] * gk;
    ops.B += w[k] * gk.transpose() * gk;
    ops.x_integral += w[k] * xk;
    ops.gtx_integral += w[k] * gk.transpose() * xk;
  }
  return ops;
}

/// Closed-form integral smooth-and-match estimator for theta-linear models.
///
/// Minimises int_0^T |x(t) - xi - G(t) theta|^2 dt. With xi unknown,
///   xi    = (T I - A B^{-1} A^T)^{-1} int (I - A B^{-1} G^T(t)) x(t) dt,
///   theta = B^{-1} int G^T(t) (x(t) - xi) dt;
/// with `known_xi` only the second line is used.
[[nodiscard]] inline PreliminaryEstimate integral_sme(const SmoothedCurve& curve, const OdeModel& model,
                                                      const std::optional<Vector>& known_xi = std::nullopt) {
  const IntegralOperators ops = integral_operators(curve, model);
  const auto d = static_cast<Eigen::Index>(model.dim_state);
  PreliminaryEstimate est;
  est.method = PreliminaryMethod::IntegralSme;
  est.bandwidth = curve.bandwidth;

  Vector xi;
  if (known_xi) {
    if (known_xi->size() != d) {
      throw Error(ErrorKind::DimensionMismatch, "known xi has the wrong dimension");
    }
    xi = *known_xi;
  } else {
    const Matrix binv_at = detail::guarded_solve(ops.B, ops.A.transpose(), ErrorKind::SingularNormalMatrix, "B");
    const Vector binv_gx = ops.B.colPivHouseholderQr().solve(ops.gtx_integral);
    const Matrix lhs = ops.horizon * Matrix::Identity(d, d) - ops.A * binv_at;
    const Vector rhs = ops.x_integral - ops.A * binv_gx;
    xi = detail::guarded_solve(lhs, rhs, ErrorKind::SingularNormalMatrix, "initial-value system");
  }
  const Vector rhs = ops.gtx_integral - ops.A.transpose() * xi;
  const Vector theta = detail::guarded_solve(ops.B, rhs, ErrorKind::SingularNormalMatrix, "B");

  std::vector<bool> mask(model.dim_eta(), true);
  if (known_xi) {
    std::fill(mask.begin(), mask.begin() + d, false);
  }
  est.eta_hat = ParameterVector(xi, theta, mask);
  if (!est.eta_hat.eta().allFinite()) {
    throw Error(ErrorKind::SingularNormalMatrix, "integral estimator produced non-finite values");
  }
  return est;
}

/// Integral estimator honouring an arbitrary known/estimated mask.
///
/// Known components are taken from `reference`. The two common masks (all
/// estimated, or xi known and theta estimated) use the closed forms above;
/// others solve the block normal equations [[T I, A], [A^T, B]] restricted
/// to the estimated components.
[[nodiscard]] inline PreliminaryEstimate integral_sme_masked(const SmoothedCurve& curve, const OdeModel& model,
                                                             const ParameterVector& reference) {
  check_dimensions(model, reference);
  const std::size_t d = model.dim_state;
  const auto& mask = reference.estimate_mask;
  const bool all = std::all_of(mask.begin(), mask.end(), [](bool b) { return b; });
  const bool theta_all = std::all_of(mask.begin() + static_cast<std::ptrdiff_t>(d), mask.end(), [](bool b) { return b; });
  if (all) {
    return integral_sme(curve, model);
  }
  if (reference.xi_known() && theta_all) {
    return integral_sme(curve, model, reference.xi);
  }

  const IntegralOperators ops = integral_operators(curve, model);
  const auto di = static_cast<Eigen::Index>(d);
  const auto q = static_cast<Eigen::Index>(model.dim_eta());
  Matrix normal(q, q);
  normal << ops.horizon * Matrix::Identity(di, di), ops.A, ops.A.transpose(), ops.B;
  Vector rhs(q);
  rhs << ops.x_integral, ops.gtx_integral;

  const auto est_idx = reference.estimated_indices();
  if (est_idx.empty()) {
    throw Error(ErrorKind::InvalidArgument, "no component of eta is marked for estimation");
  }
  const Vector ref = reference.eta();
  const auto u = static_cast<Eigen::Index>(est_idx.size());
  Matrix m_uu(u, u);
  Vector r_u(u);
  for (Eigen::Index a = 0; a < u; ++a) {
    const auto ia = static_cast<Eigen::Index>(est_idx[static_cast<std::size_t>(a)]);
    r_u(a) = rhs(ia);
    for (Eigen::Index k = 0; k < q; ++k) {
      if (!mask[static_cast<std::size_t>(k)]) {
        r_u(a) -= normal(ia, k) * ref(k);
      }
    }
    for (Eigen::Index b = 0; b < u; ++b) {
      m_uu(a, b) = normal(ia, static_cast<Eigen::Index>(est_idx[static_cast<std::size_t>(b)]));
    }
  }
  const Vector sol = detail::guarded_solve(m_uu, r_u, ErrorKind::SingularNormalMatrix, "normal matrix");
  Vector eta = ref;
  for (Eigen::Index a = 0; a < u; ++a) {
    eta(static_cast<Eigen::Index>(est_idx[static_cast<std::size_t>(a)])) = sol(a);
  }
  PreliminaryEstimate est;
  est.method = PreliminaryMethod::IntegralSme;
  est.bandwidth = curve.bandwidth;
  est.eta_hat = reference;
  est.eta_hat.set_eta(eta);
  return est;
}

/// xi minimising int_0^T |x(t) - xi - int_0^t F(x(s); theta) ds|^2 dt,
/// i.e. the time average of x(t) - int_0^t F.
[[nodiscard]] inline Vector recover_initial_values(const SmoothedCurve& curve, const OdeModel& model,
                                                   const Vector& theta_hat) {
  detail::check_curve(curve, model);
  if (!theta_hat.allFinite() || static_cast<std::size_t>(theta_hat.size()) != model.dim_param) {
    throw Error(ErrorKind::InvalidArgument, "theta estimate must be finite with p entries");
  }
  const auto& grid = curve.eval_grid;
  const auto w = trapezoid_weights(grid);
  const auto d = static_cast<Eigen::Index>(model.dim_state);
  Vector eta(model.dim_eta());
  eta << curve.values.col(0), theta_hat;

  Vector f_prev = model.rhs(curve.values.col(0), eta, grid[0]);
  Vector cum = Vector::Zero(d);
  Vector acc = w[0] * curve.values.col(0);
  for (std::size_t k = 1; k < grid.size(); ++k) {
    const Vector xk = curve.values.col(static_cast<Eigen::Index>(k));
    const Vector f_cur = model.rhs(xk, eta, grid[k]);
    cum += 0.5 * (grid[k] - grid[k - 1]) * (f_prev + f_cur);
    acc += w[k] * (xk - cum);
    f_prev = f_cur;
  }
  return acc / (grid.back() - grid.front());
}

struct DerivativeSmeOptions {
  std::function<double(double)> weight;  // w(t); empty means w = 1
  Vector lower;                          // search box for non-theta-linear models
  Vector upper;
  std::size_t restarts = 10;
  std::size_t max_iterations = 4000;
  std::uint64_t seed = 12345;
};

namespace detail {

struct NelderMeadResult {
  Vector x;
  double value = std::numeric_limits<double>::infinity();
  bool converged = false;
};

/// Nelder-Mead simplex search. The objective may return +inf to reject points.
inline NelderMeadResult nelder_mead(const std::function<double(const Vector&)>& f, const Vector& start,
                                    const Vector& scale, std::size_t max_iterations) {
  const Eigen::Index n = start.size();
  std::vector<Vector> simplex(static_cast<std::size_t>(n + 1), start);
  std::vector<double> values(static_cast<std::size_t>(n + 1));
  for (Eigen::Index i = 0; i < n; ++i) {
    simplex[static_cast<std::size_t>(i + 1)](i) += scale(i);
  }
  for (std::size_t i = 0; i < simplex.size(); ++i) {
    values[i] = f(simplex[i]);
  }
  NelderMeadResult res;
  std::vector<std::size_t> order(simplex.size());
  for (std::size_t it = 0; it < max_iterations; ++it) {
    for (std::size_t i = 0; i < order.size(); ++i) {
      order[i] = i;
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    const std::size_t best = order.front();
    const std::size_t worst = order.back();
    const std::size_t second = order[order.size() - 2];

    double size = 0.0;
    for (const auto& v : simplex) {
      size = std::max(size, (v - simplex[best]).cwiseAbs().maxCoeff());
    }
    const double spread = std::abs(values[worst] - values[best]);
    if (std::isfinite(values[best]) && size <= 1e-10 * std::max(1.0, simplex[best].cwiseAbs().maxCoeff()) &&
        spread <= 1e-14 * std::max(1.0, std::abs(values[best]))) {
      res.converged = true;
      break;
    }

    Vector centroid = Vector::Zero(n);
    for (std::size_t i = 0; i < simplex.size(); ++i) {
      if (i != worst) {
        centroid += simplex[i];
      }
    }
    centroid /= static_cast<double>(n);
    const Vector reflected = centroid + (centroid - simplex[worst]);
    const double fr = f(reflected);
    if (fr < values[best]) {
      const Vector expanded = centroid + 2.0 * (centroid - simplex[worst]);
      const double fe = f(expanded);
      if (fe < fr) {
        simplex[worst] = expanded;
        values[worst] = fe;
      } else {
        simplex[worst] = reflected;
        values[worst] = fr;
      }
      continue;
    }
    if (fr < values[second]) {
      simplex[worst] = reflected;
      values[worst] = fr;
      continue;
    }
    const bool outside = fr < values[worst];
    const Vector contracted = outside ? Vector(centroid + 0.5 * (reflected - centroid))
                                      : Vector(centroid + 0.5 * (simplex[worst] - centroid));
    const double fc = f(contracted);
    if (fc < std::min(fr, values[worst])) {
      simplex[worst] = contracted;
      values[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i < simplex.size(); ++i) {
      if (i != best) {
        simplex[i] = simplex[best] + 0.5 * (simplex[i] - simplex[best]);
        values[i] = f(simplex[i]);
      }
    }
  }
  const auto best_it = std::min_element(values.begin(), values.end());
  res.value = *best_it;
  res.x = simplex[static_cast<std::size_t>(std::distance(values.begin(), best_it))];
  return res;
}

}  // namespace detail

/// Gradient-matching estimator: theta minimising
/// int |x'(t) - F(x(t); theta)|^2 w(t) dt over the curve's eval grid.
///
/// Theta-linear models solve a weighted linear least-squares problem; other
/// models run Nelder-Mead from random starts inside [lower, upper]. Initial
/// values are then recovered from the integral criterion unless known.
[[nodiscard]] inline PreliminaryEstimate derivative_sme(const SmoothedCurve& curve, const OdeModel& model,
                                                        const ParameterVector& reference,
                                                        const DerivativeSmeOptions& options = {}) {
  detail::check_curve(curve, model);
  check_dimensions(model, reference);
  const auto& grid = curve.eval_grid;
  const auto qw = trapezoid_weights(grid);
  const std::size_t m = grid.size();
  const auto d = static_cast<Eigen::Index>(model.dim_state);
  const auto p = static_cast<Eigen::Index>(model.dim_param);
  std::vector<double> w(m);
  for (std::size_t k = 0; k < m; ++k) {
    const double wk = options.weight ? options.weight(grid[k]) : 1.0;
    if (!(wk >= 0.0)) {
      throw Error(ErrorKind::InvalidArgument, "derivative matching weight must be nonnegative");
    }
    w[k] = qw[k] * wk;
  }

  std::vector<Eigen::Index> free_theta;
  for (Eigen::Index k = 0; k < p; ++k) {
    if (reference.estimate_mask[static_cast<std::size_t>(d + k)]) {
      free_theta.push_back(k);
    }
  }
  Vector theta = reference.theta;

  if (!free_theta.empty() && model.is_theta_linear()) {
    const auto u = static_cast<Eigen::Index>(free_theta.size());
    Matrix design(static_cast<Eigen::Index>(m) * d, u);
    Vector target(static_cast<Eigen::Index>(m) * d);
    for (std::size_t k = 0; k < m; ++k) {
      const double sw = std::sqrt(w[k]);
      const Matrix g = model.theta_linear(curve.values.col(static_cast<Eigen::Index>(k)));
      Vector known_part = Vector::Zero(d);
      for (Eigen::Index j = 0; j < p; ++j) {
        if (!reference.estimate_mask[static_cast<std::size_t>(d + j)]) {
          known_part += g.col(j) * reference.theta(j);
        }
      }
      const auto row = static_cast<Eigen::Index>(k) * d;
      for (Eigen::Index a = 0; a < u; ++a) {
        design.block(row, a, d, 1) = sw * g.col(free_theta[static_cast<std::size_t>(a)]);
      }
      target.segment(row, d) = sw * (curve.derivatives.col(static_cast<Eigen::Index>(k)) - known_part);
    }
    const Matrix normal = design.transpose() * design;
    const Vector sol = detail::guarded_solve(normal, design.transpose() * target, ErrorKind::SingularNormalMatrix,
                                             "derivative matching normal matrix");
    for (Eigen::Index a = 0; a < u; ++a) {
      theta(free_theta[static_cast<std::size_t>(a)]) = sol(a);
    }
  } else if (!free_theta.empty()) {
    const auto u = static_cast<Eigen::Index>(free_theta.size());
    if (options.lower.size() != u || options.upper.size() != u) {
      throw Error(ErrorKind::InvalidArgument, "non-theta-linear derivative matching needs a search box per free rate");
    }
    Vector eta_work = reference.eta();
    auto objective = [&](const Vector& z) {
      for (Eigen::Index a = 0; a < u; ++a) {
        if (z(a) < options.lower(a) || z(a) > options.upper(a)) {
          return std::numeric_limits<double>::infinity();
        }
      }
      Vector e = eta_work;
      for (Eigen::Index a = 0; a < u; ++a) {
        e(d + free_theta[static_cast<std::size_t>(a)]) = z(a);
      }
      double acc = 0.0;
      for (std::size_t k = 0; k < m; ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        const Vector r = curve.derivatives.col(kk) - model.rhs(curve.values.col(kk), e, grid[k]);
        acc += w[k] * r.squaredNorm();
      }
      return std::isfinite(acc) ? acc : std::numeric_limits<double>::infinity();
    };
    std::mt19937_64 rng(options.seed);
    detail::NelderMeadResult best;
    bool any_converged = false;
    const Vector scale = 0.1 * (options.upper - options.lower);
    for (std::size_t r = 0; r < std::max<std::size_t>(options.restarts, 1); ++r) {
      Vector start(u);
      for (Eigen::Index a = 0; a < u; ++a) {
        std::uniform_real_distribution<double> pick(options.lower(a), options.upper(a));
        start(a) = pick(rng);
      }
      const auto res = detail::nelder_mead(objective, start, scale, options.max_iterations);
      any_converged = any_converged || res.converged;
      if (res.value < best.value) {
        best = res;
      }
    }
    if (!any_converged || !std::isfinite(best.value)) {
      throw Error(ErrorKind::OptimizerDiverged, "derivative matching search did not converge");
    }
    for (Eigen::Index a = 0; a < u; ++a) {
      theta(free_theta[static_cast<std::size_t>(a)]) = best.x(a);
    }
  }

  Vector xi = reference.xi;
  const Vector recovered = recover_initial_values(curve, model, theta);
  for (Eigen::Index i = 0; i < d; ++i) {
    if (reference.estimate_mask[static_cast<std::size_t>(i)]) {
      xi(i) = recovered(i);
    }
  }
  PreliminaryEstimate est;
  est.method = PreliminaryMethod::DerivativeSme;
  est.bandwidth = curve.bandwidth;
  est.eta_hat = ParameterVector(xi, theta, reference.estimate_mask);
  return est;
}

/// Integral estimator for theta-linear models, gradient matching otherwise.
[[nodiscard]] inline PreliminaryEstimate preliminary_estimate(const SmoothedCurve& curve, const OdeModel& model,
                                                              const ParameterVector& reference,
                                                              const DerivativeSmeOptions& options = {}) {
  if (model.is_theta_linear()) {
    return integral_sme_masked(curve, model, reference);
  }
  return derivative_sme(curve, model, reference, options);
}

}  // namespace odeaccel

/**
 * @file sensitivity.hpp
 * @brief First (sensitivity) and second (variational) derivatives of
 *        x(eta, t) with respect to eta, and the estimating function.
 *
 * x, s = dx/deta and z = d2x/deta2 are integrated together as one augmented
 * ODE so every coefficient is evaluated on the same adaptive steps:
 *
 *   s'   = F_x s + F_eta,                                     s(0) = [I | 0]
 *   z_i' = F_ee,i + F_ex,i s + s^T F_xe,i + s^T F_xx,i s
 *          + sum_k F_x(i,k) z_k,                              z(0) = 0
 */
#pragma once

#include <cstddef>
#include <vector>

#include "odeaccel/dataset.hpp"
#include "odeaccel/errors.hpp"
#include "odeaccel/integrator.hpp"
#include "odeaccel/linalg.hpp"
#include "odeaccel/ode_core.hpp"

namespace odeaccel {

enum class SensitivityOrder { First, Second };

/// Number of variational (second-order) solves started on the calling thread.
inline std::size_t& variational_solve_counter() {
  thread_local std::size_t count = 0;
  return count;
}

class SensitivitySolution {
 public:
  SensitivitySolution(DenseSolution sol, Eigen::Index d, Eigen::Index q, SensitivityOrder order)
      : sol_(std::move(sol)), d_(d), q_(q), order_(order) {}

  [[nodiscard]] const std::vector<double>& grid() const noexcept { return sol_.grid(); }
  [[nodiscard]] const IntegratorStats& stats() const noexcept { return sol_.stats(); }
  [[nodiscard]] SensitivityOrder order() const noexcept { return order_; }
  [[nodiscard]] Eigen::Index dim_state() const noexcept { return d_; }
  [[nodiscard]] Eigen::Index dim_eta() const noexcept { return q_; }

  struct Point {
    Vector x;               // d
    Matrix s;               // d x q
    std::vector<Matrix> z;  // d matrices of q x q; empty for first order
  };

  [[nodiscard]] Point at(double t) const { return unpack(sol_(t)); }

  [[nodiscard]] Vector state(double t) const { return sol_(t).head(d_); }

 private:
  [[nodiscard]] Point unpack(const Vector& y) const {
    Point p;
    p.x = y.head(d_);
    p.s = Eigen::Map<const Matrix>(y.data() + d_, d_, q_);
    if (order_ == SensitivityOrder::Second) {
      const double* base = y.data() + d_ + d_ * q_;
      p.z.reserve(static_cast<std::size_t>(d_));
      for (Eigen::Index i = 0; i < d_; ++i) {
        p.z.emplace_back(Eigen::Map<const Matrix>(base + i * q_ * q_, q_, q_));
      }
    }
    return p;
  }

  DenseSolution sol_;
  Eigen::Index d_;
  Eigen::Index q_;
  SensitivityOrder order_;
};

/// Integrates x together with its first (and optionally second) derivatives
/// with respect to every component of eta over [0, t_end].
[[nodiscard]] inline SensitivitySolution solve_sensitivities(const OdeModel& model, const ParameterVector& eta,
                                                             double t_end, SensitivityOrder order,
                                                             const ToleranceSpec& tol = {}) {
  check_dimensions(model, eta);
  if (!model.jac_state || !model.jac_eta || (order == SensitivityOrder::Second && !model.hess)) {
    throw Error(ErrorKind::InvalidArgument, "model lacks the derivative callbacks required for this order");
  }
  const auto d = static_cast<Eigen::Index>(model.dim_state);
  const auto q = static_cast<Eigen::Index>(model.dim_eta());
  const bool second = order == SensitivityOrder::Second;
  const Eigen::Index n = d + d * q + (second ? d * q * q : 0);
  if (second) {
    ++variational_solve_counter();
  }

  Vector y0 = Vector::Zero(n);
  y0.head(d) = eta.xi;
  Eigen::Map<Matrix>(y0.data() + d, d, q).leftCols(d).setIdentity();

  const Vector e = eta.eta();
  auto f = [&](double t, const Vector& y, Vector& dy) {
    dy.resize(n);
    const Vector x = y.head(d);
    const Eigen::Map<const Matrix> s(y.data() + d, d, q);
    const Matrix fx = model.jac_state(x, e, t);
    dy.head(d) = model.rhs(x, e, t);
    Eigen::Map<Matrix>(dy.data() + d, d, q) = fx * s + model.jac_eta(x, e, t);
    if (!second) {
      return;
    }
    const SecondDerivatives h = model.hess(x, e, t);
    const double* zbase = y.data() + d + d * q;
    double* dzbase = dy.data() + d + d * q;
    for (Eigen::Index i = 0; i < d; ++i) {
      const auto iu = static_cast<std::size_t>(i);
      Eigen::Map<Matrix> dz(dzbase + i * q * q, q, q);
      dz = h.ee[iu] + h.ex[iu] * s + s.transpose() * h.xe[iu] + s.transpose() * h.xx[iu] * s;
      for (Eigen::Index k = 0; k < d; ++k) {
        const double c = fx(i, k);
        if (c != 0.0) {
          dz += c * Eigen::Map<const Matrix>(zbase + k * q * q, q, q);
        }
      }
    }
  };
  return {integrate_dense(f, 0.0, y0, t_end, tol), d, q, order};
}

/// Psi_n(eta) = sum_j s(t_j)^T (Y_j - x(eta, t_j)) and its eta-Jacobian,
/// restricted to the estimated components of eta.
struct EstimatingFunctionValue {
  std::vector<std::size_t> indices;  // estimated components of eta
  Vector psi;                        // |indices|
  Matrix dpsi;                       // |indices| x |indices|
  double rss = 0.0;                  // R_n(eta) at the evaluation point
};

namespace detail {

inline double data_horizon(const Dataset& data) {
  const double t_end = data.t_max();
  if (!(t_end > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "observation times must extend beyond t=0");
  }
  return t_end;
}

}  // namespace detail

/// Evaluates Psi_n and dPsi_n/deta from a single variational solve.
///
/// dPsi includes the curvature term sum_j sum_i r_ij z_i(t_j), i.e. it is the
/// full Newton Jacobian rather than the Gauss-Newton approximation.
[[nodiscard]] inline EstimatingFunctionValue estimating_function(const OdeModel& model, const ParameterVector& eta,
                                                                 const Dataset& data, const ToleranceSpec& tol = {}) {
  if (data.dim() != model.dim_state) {
    throw Error(ErrorKind::DimensionMismatch, "dataset dimension differs from the model state dimension");
  }
  const auto sol = solve_sensitivities(model, eta, detail::data_horizon(data), SensitivityOrder::Second, tol);
  const auto q = static_cast<Eigen::Index>(model.dim_eta());
  const auto d = static_cast<Eigen::Index>(model.dim_state);
  Vector psi = Vector::Zero(q);
  Matrix dpsi = Matrix::Zero(q, q);
  double rss_value = 0.0;
  for (std::size_t j = 0; j < data.size(); ++j) {
    const auto pt = sol.at(data.times[j]);
    const Vector r = data.observations.col(static_cast<Eigen::Index>(j)) - pt.x;
    rss_value += r.squaredNorm();
    psi += pt.s.transpose() * r;
    dpsi -= pt.s.transpose() * pt.s;
    for (Eigen::Index i = 0; i < d; ++i) {
      dpsi += r(i) * pt.z[static_cast<std::size_t>(i)];
    }
  }
  EstimatingFunctionValue out;
  out.indices = eta.estimated_indices();
  const auto u = static_cast<Eigen::Index>(out.indices.size());
  out.psi.resize(u);
  out.dpsi.resize(u, u);
  for (Eigen::Index a = 0; a < u; ++a) {
    const auto ia = static_cast<Eigen::Index>(out.indices[static_cast<std::size_t>(a)]);
    out.psi(a) = psi(ia);
    for (Eigen::Index b = 0; b < u; ++b) {
      out.dpsi(a, b) = dpsi(ia, static_cast<Eigen::Index>(out.indices[static_cast<std::size_t>(b)]));
    }
  }
  out.rss = rss_value;
  return out;
}

}  // namespace odeaccel

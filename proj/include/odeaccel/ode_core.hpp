/**
 * @file ode_core.hpp
 * @brief ODE model abstraction, parameter vectors and dense trajectories.
 *
 * A model is x'(t) = F(x, eta, t) with eta = (xi, theta): the d initial
 * values followed by the p rate parameters. That concatenation order is used
 * for every vector and matrix indexed by eta in this library.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "odeaccel/errors.hpp"
#include "odeaccel/integrator.hpp"
#include "odeaccel/linalg.hpp"

namespace odeaccel {

/// Second derivatives of F, one matrix per output component i.
///
/// `ex[i]` is the transpose of `xe[i]` for smooth F; both are kept so
/// callers can contract on either side without transposing.
struct SecondDerivatives {
  std::vector<Matrix> xx;  // d x d
  std::vector<Matrix> xe;  // d x q
  std::vector<Matrix> ex;  // q x d
  std::vector<Matrix> ee;  // q x q
};

/// Explicit time partials of a non-autonomous right-hand side.
struct TimePartials {
  Vector ft;   // dF/dt, d
  Matrix ftx;  // d^2F_i / dt dx_l, d x d
  Matrix fte;  // d^2F_i / dt deta_k, d x q
  Vector ftt;  // d^2F/dt^2, d
};

struct OdeModel {
  using RhsFn = std::function<Vector(const Vector& x, const Vector& eta, double t)>;
  using MatrixFn = std::function<Matrix(const Vector& x, const Vector& eta, double t)>;
  using HessFn = std::function<SecondDerivatives(const Vector& x, const Vector& eta, double t)>;
  using ThetaLinearFn = std::function<Matrix(const Vector& x)>;
  using TimePartialsFn = std::function<TimePartials(const Vector& x, const Vector& eta, double t)>;

  std::string name;
  std::size_t dim_state = 0;
  std::size_t dim_param = 0;
  RhsFn rhs;
  MatrixFn jac_state;  // F'_x, d x d
  MatrixFn jac_eta;    // F'_eta, d x (d+p)
  HessFn hess;
  ThetaLinearFn theta_linear;  // g(x) with F = g(x) theta; empty when F is not linear in theta
  bool time_dependent = false;
  TimePartialsFn time_partials;
  bool finite_difference_derivatives = false;

  [[nodiscard]] std::size_t dim_eta() const noexcept { return dim_state + dim_param; }
  [[nodiscard]] bool is_theta_linear() const noexcept { return static_cast<bool>(theta_linear); }
};

struct ParameterVector {
  Vector xi;
  Vector theta;
  std::vector<bool> estimate_mask;  // size d+p, true where estimated

  ParameterVector() = default;
  ParameterVector(Vector xi_, Vector theta_)
      : xi(std::move(xi_)), theta(std::move(theta_)),
        estimate_mask(static_cast<std::size_t>(xi.size() + theta.size()), true) {}
  ParameterVector(Vector xi_, Vector theta_, std::vector<bool> mask)
      : xi(std::move(xi_)), theta(std::move(theta_)), estimate_mask(std::move(mask)) {
    if (estimate_mask.size() != static_cast<std::size_t>(xi.size() + theta.size())) {
      throw Error(ErrorKind::DimensionMismatch, "estimate mask must have d+p entries");
    }
  }

  [[nodiscard]] std::size_t size() const noexcept {
    return static_cast<std::size_t>(xi.size() + theta.size());
  }

  [[nodiscard]] Vector eta() const {
    Vector e(xi.size() + theta.size());
    e << xi, theta;
    return e;
  }

  void set_eta(const Vector& e) {
    if (static_cast<std::size_t>(e.size()) != size()) {
      throw Error(ErrorKind::DimensionMismatch, "eta has the wrong length");
    }
    xi = e.head(xi.size());
    theta = e.tail(theta.size());
  }

  [[nodiscard]] double operator[](std::size_t k) const {
    const auto d = static_cast<std::size_t>(xi.size());
    return k < d ? xi(static_cast<Eigen::Index>(k)) : theta(static_cast<Eigen::Index>(k - d));
  }

  [[nodiscard]] std::vector<std::size_t> estimated_indices() const {
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < estimate_mask.size(); ++k) {
      if (estimate_mask[k]) {
        idx.push_back(k);
      }
    }
    return idx;
  }

  [[nodiscard]] bool xi_known() const {
    return std::none_of(estimate_mask.begin(), estimate_mask.begin() + xi.size(),
                        [](bool b) { return b; });
  }
};

/// Human-readable label for component k of eta ("xi1", "theta2", ...).
[[nodiscard]] inline std::string eta_label(std::size_t k, std::size_t d) {
  return k < d ? "xi" + std::to_string(k + 1) : "theta" + std::to_string(k - d + 1);
}

inline void check_dimensions(const OdeModel& model, const ParameterVector& eta) {
  if (static_cast<std::size_t>(eta.xi.size()) != model.dim_state ||
      static_cast<std::size_t>(eta.theta.size()) != model.dim_param ||
      eta.estimate_mask.size() != model.dim_eta()) {
    std::ostringstream msg;
    msg << "model " << model.name << " expects d=" << model.dim_state << ", p=" << model.dim_param
        << " but got xi of size " << eta.xi.size() << " and theta of size " << eta.theta.size();
    throw Error(ErrorKind::DimensionMismatch, msg.str());
  }
}

/// Dense solution x(eta, .) on [0, T].
class Trajectory {
 public:
  Trajectory() = default;
  explicit Trajectory(DenseSolution sol) : sol_(std::move(sol)) {}

  [[nodiscard]] const std::vector<double>& grid() const noexcept { return sol_.grid(); }
  [[nodiscard]] std::size_t dim() const noexcept { return sol_.dim(); }
  [[nodiscard]] double horizon() const noexcept { return sol_.t_end(); }
  [[nodiscard]] const IntegratorStats& stats() const noexcept { return sol_.stats(); }

  /// State values at the grid nodes as a d x m matrix.
  [[nodiscard]] Matrix values() const {
    const auto& nodes = sol_.values();
    Matrix v(static_cast<Eigen::Index>(dim()), static_cast<Eigen::Index>(nodes.size()));
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      v.col(static_cast<Eigen::Index>(k)) = nodes[k];
    }
    return v;
  }

  [[nodiscard]] Vector operator()(double t) const { return sol_(t); }

  /// States at arbitrary times as a d x n matrix.
  [[nodiscard]] Matrix at(std::span<const double> times) const {
    Matrix out(static_cast<Eigen::Index>(dim()), static_cast<Eigen::Index>(times.size()));
    for (std::size_t j = 0; j < times.size(); ++j) {
      out.col(static_cast<Eigen::Index>(j)) = sol_(times[j]);
    }
    return out;
  }

 private:
  DenseSolution sol_;
};

/// Solves x' = F(x, eta, t), x(0) = xi on [0, t_end].
[[nodiscard]] inline Trajectory integrate(const OdeModel& model, const ParameterVector& eta,
                                          double t_end, const ToleranceSpec& tol = {}) {
  check_dimensions(model, eta);
  if (!(t_end > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "t_end must be positive");
  }
  const Vector e = eta.eta();
  auto f = [&](double t, const Vector& x, Vector& dx) { dx = model.rhs(x, e, t); };
  return Trajectory(integrate_dense(f, 0.0, eta.xi, t_end, tol));
}

namespace detail {

[[nodiscard]] inline double fd_step(double v) { return 1e-6 * (v != 0.0 ? std::abs(v) : 1.0); }

inline Matrix fd_jac_state(const OdeModel::RhsFn& rhs, const Vector& x, const Vector& e, double t) {
  const Vector f0 = rhs(x, e, t);
  Matrix j(f0.size(), x.size());
  for (Eigen::Index l = 0; l < x.size(); ++l) {
    const double h = fd_step(x(l));
    Vector xp = x, xm = x;
    xp(l) += h;
    xm(l) -= h;
    j.col(l) = (rhs(xp, e, t) - rhs(xm, e, t)) / (2.0 * h);
  }
  return j;
}

inline Matrix fd_jac_eta(const OdeModel::RhsFn& rhs, const Vector& x, const Vector& e, double t) {
  const Vector f0 = rhs(x, e, t);
  Matrix j(f0.size(), e.size());
  for (Eigen::Index k = 0; k < e.size(); ++k) {
    const double h = fd_step(e(k));
    Vector ep = e, em = e;
    ep(k) += h;
    em(k) -= h;
    j.col(k) = (rhs(x, ep, t) - rhs(x, em, t)) / (2.0 * h);
  }
  return j;
}

}  // namespace detail

/// Fills any missing derivative callbacks with central finite differences.
///
/// The returned model carries `finite_difference_derivatives = true` when at
/// least one callback was synthesised; reports surface that flag.
[[nodiscard]] inline OdeModel with_finite_difference_fallback(OdeModel model) {
  if (!model.rhs) {
    throw Error(ErrorKind::InvalidArgument, "model has no right-hand side");
  }
  const auto rhs = model.rhs;
  if (!model.jac_state) {
    model.jac_state = [rhs](const Vector& x, const Vector& e, double t) {
      return detail::fd_jac_state(rhs, x, e, t);
    };
    model.finite_difference_derivatives = true;
  }
  if (!model.jac_eta) {
    model.jac_eta = [rhs](const Vector& x, const Vector& e, double t) {
      return detail::fd_jac_eta(rhs, x, e, t);
    };
    model.finite_difference_derivatives = true;
  }
  if (!model.hess) {
    const auto jx = model.jac_state;
    const auto je = model.jac_eta;
    const std::size_t d = model.dim_state;
    model.hess = [jx, je, d](const Vector& x, const Vector& e, double t) {
      const auto q = e.size();
      SecondDerivatives h;
      const auto di = static_cast<Eigen::Index>(d);
      h.xx.assign(d, Matrix::Zero(di, di));
      h.xe.assign(d, Matrix::Zero(di, q));
      h.ex.assign(d, Matrix::Zero(q, di));
      h.ee.assign(d, Matrix::Zero(q, q));
      for (Eigen::Index l = 0; l < di; ++l) {
        const double step = detail::fd_step(x(l));
        Vector xp = x, xm = x;
        xp(l) += step;
        xm(l) -= step;
        const Matrix dx = (jx(xp, e, t) - jx(xm, e, t)) / (2.0 * step);
        const Matrix de = (je(xp, e, t) - je(xm, e, t)) / (2.0 * step);
        for (std::size_t i = 0; i < d; ++i) {
          const auto ii = static_cast<Eigen::Index>(i);
          h.xx[i].col(l) = dx.row(ii).transpose();
          h.ex[i].col(l) = de.row(ii).transpose();
        }
      }
      for (Eigen::Index k = 0; k < q; ++k) {
        const double step = detail::fd_step(e(k));
        Vector ep = e, em = e;
        ep(k) += step;
        em(k) -= step;
        const Matrix dx = (jx(x, ep, t) - jx(x, em, t)) / (2.0 * step);
        const Matrix de = (je(x, ep, t) - je(x, em, t)) / (2.0 * step);
        for (std::size_t i = 0; i < d; ++i) {
          const auto ii = static_cast<Eigen::Index>(i);
          h.xe[i].col(k) = dx.row(ii).transpose();
          h.ee[i].col(k) = de.row(ii).transpose();
        }
      }
      return h;
    };
    model.finite_difference_derivatives = true;
  }
  if (model.time_dependent && !model.time_partials) {
    const auto jx = model.jac_state;
    const auto je = model.jac_eta;
    model.time_partials = [rhs, jx, je](const Vector& x, const Vector& e, double t) {
      const double h = detail::fd_step(t) * 10.0;
      TimePartials tp;
      const Vector fp = rhs(x, e, t + h);
      const Vector fm = rhs(x, e, t - h);
      tp.ft = (fp - fm) / (2.0 * h);
      tp.ftt = (fp - 2.0 * rhs(x, e, t) + fm) / (h * h);
      tp.ftx = (jx(x, e, t + h) - jx(x, e, t - h)) / (2.0 * h);
      tp.fte = (je(x, e, t + h) - je(x, e, t - h)) / (2.0 * h);
      return tp;
    };
    model.finite_difference_derivatives = true;
  }
  return model;
}

namespace detail {

// Copies a d x q matrix into d' x q' with a zero column inserted at `at`.
inline Matrix insert_zero_col(const Matrix& m, Eigen::Index at) {
  Matrix out = Matrix::Zero(m.rows(), m.cols() + 1);
  out.leftCols(at) = m.leftCols(at);
  out.rightCols(m.cols() - at) = m.rightCols(m.cols() - at);
  return out;
}

inline Vector drop_index(const Vector& v, Eigen::Index at) {
  Vector out(v.size() - 1);
  out << v.head(at), v.tail(v.size() - at - 1);
  return out;
}

}  // namespace detail

/// Reduces a non-autonomous model to an autonomous one by appending the
/// state x_{d+1}(t) = t with initial value 0.
///
/// The new eta is (xi_1..xi_d, 0, theta); use `autonomize_parameters` to map
/// a ParameterVector. Missing time partials are taken by finite differences.
[[nodiscard]] inline OdeModel autonomize(const OdeModel& input) {
  const OdeModel m = with_finite_difference_fallback(input);
  const std::size_t d = m.dim_state;
  const auto di = static_cast<Eigen::Index>(d);
  OdeModel out;
  out.name = m.name + "_autonomous";
  out.dim_state = d + 1;
  out.dim_param = m.dim_param;
  out.finite_difference_derivatives = m.finite_difference_derivatives;
  const bool td = m.time_dependent;

  out.rhs = [m, di](const Vector& x, const Vector& e, double) {
    Vector f(di + 1);
    f.head(di) = m.rhs(x.head(di), detail::drop_index(e, di), x(di));
    f(di) = 1.0;
    return f;
  };
  out.jac_state = [m, di, td](const Vector& x, const Vector& e, double) {
    const Vector eo = detail::drop_index(e, di);
    Matrix j = Matrix::Zero(di + 1, di + 1);
    j.topLeftCorner(di, di) = m.jac_state(x.head(di), eo, x(di));
    if (td) {
      j.block(0, di, di, 1) = m.time_partials(x.head(di), eo, x(di)).ft;
    }
    return j;
  };
  out.jac_eta = [m, di](const Vector& x, const Vector& e, double) {
    const Vector eo = detail::drop_index(e, di);
    Matrix j = Matrix::Zero(di + 1, e.size());
    j.topRows(di) = detail::insert_zero_col(m.jac_eta(x.head(di), eo, x(di)), di);
    return j;
  };
  out.hess = [m, di, td](const Vector& x, const Vector& e, double) {
    const Vector eo = detail::drop_index(e, di);
    const SecondDerivatives h = m.hess(x.head(di), eo, x(di));
    TimePartials tp;
    if (td) {
      tp = m.time_partials(x.head(di), eo, x(di));
    }
    const auto q = e.size();
    SecondDerivatives r;
    for (Eigen::Index i = 0; i <= di; ++i) {
      Matrix xx = Matrix::Zero(di + 1, di + 1);
      Matrix xe = Matrix::Zero(di + 1, q);
      Matrix ee = Matrix::Zero(q, q);
      if (i < di) {
        const auto iu = static_cast<std::size_t>(i);
        xx.topLeftCorner(di, di) = h.xx[iu];
        xe.topRows(di) = detail::insert_zero_col(h.xe[iu], di);
        Matrix eo_ee = detail::insert_zero_col(h.ee[iu], di);
        Matrix tmp = detail::insert_zero_col(eo_ee.transpose(), di);
        ee = tmp.transpose();
        if (td) {
          xx.block(0, di, di, 1) = tp.ftx.row(i).transpose();
          xx.block(di, 0, 1, di) = tp.ftx.row(i);
          xx(di, di) = tp.ftt(i);
          xe.row(di) = detail::insert_zero_col(tp.fte.row(i), di);
        }
      }
      r.xx.push_back(xx);
      r.ex.push_back(xe.transpose());
      r.xe.push_back(std::move(xe));
      r.ee.push_back(std::move(ee));
    }
    return r;
  };
  return out;
}

/// Maps (xi, theta) to (xi, 0, theta) for an autonomized model.
[[nodiscard]] inline ParameterVector autonomize_parameters(const ParameterVector& eta) {
  Vector xi(eta.xi.size() + 1);
  xi << eta.xi, 0.0;
  std::vector<bool> mask(eta.estimate_mask.begin(), eta.estimate_mask.begin() + eta.xi.size());
  mask.push_back(false);
  mask.insert(mask.end(), eta.estimate_mask.begin() + eta.xi.size(), eta.estimate_mask.end());
  return {xi, eta.theta, mask};
}

struct DerivativeCheck {
  double jac_state = 0.0;
  double jac_eta = 0.0;
  double hess = 0.0;
  double theta_linear = 0.0;  // max |F - g theta| / scale; 0 when not theta-linear
};

namespace detail {

inline double rel_err(const Matrix& a, const Matrix& b, double floor = 0.0) {
  const double scale = std::max({b.cwiseAbs().maxCoeff(), a.cwiseAbs().maxCoeff(), floor});
  if (scale == 0.0) {
    return 0.0;
  }
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace detail

/// Compares analytic callbacks with central differences at random probes
/// drawn around (x0, eta0). Returns the worst norm-wise relative errors.
[[nodiscard]] inline DerivativeCheck check_derivatives(const OdeModel& model, const Vector& x0,
                                                       const Vector& eta0, std::size_t probes,
                                                       std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(0.8, 1.2);
  DerivativeCheck out;
  const OdeModel fd = [&] {
    OdeModel m = model;
    m.jac_state = nullptr;
    m.jac_eta = nullptr;
    m.hess = nullptr;
    return with_finite_difference_fallback(std::move(m));
  }();
  // Hessian reference built from the analytic first derivatives.
  const OdeModel fd_hess = [&] {
    OdeModel m = model;
    m.hess = nullptr;
    return with_finite_difference_fallback(std::move(m));
  }();
  for (std::size_t probe = 0; probe < probes; ++probe) {
    Vector x = x0;
    Vector e = eta0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      x(i) = x(i) == 0.0 ? jitter(rng) - 1.0 : x(i) * jitter(rng);
    }
    for (Eigen::Index k = 0; k < e.size(); ++k) {
      e(k) = e(k) == 0.0 ? jitter(rng) - 1.0 : e(k) * jitter(rng);
    }
    const double t = jitter(rng);
    out.jac_state = std::max(out.jac_state, detail::rel_err(model.jac_state(x, e, t), fd.jac_state(x, e, t)));
    out.jac_eta = std::max(out.jac_eta, detail::rel_err(model.jac_eta(x, e, t), fd.jac_eta(x, e, t)));
    const SecondDerivatives ha = model.hess(x, e, t);
    const SecondDerivatives hf = fd_hess.hess(x, e, t);
    // Blocks that vanish analytically pick up rounding noise from the
    // differences, so errors are measured against the largest entry overall.
    double floor = 0.0;
    for (std::size_t i = 0; i < model.dim_state; ++i) {
      floor = std::max({floor, ha.xx[i].cwiseAbs().maxCoeff(), ha.xe[i].cwiseAbs().maxCoeff(),
                        ha.ee[i].cwiseAbs().maxCoeff()});
    }
    floor *= 1e-6;
    for (std::size_t i = 0; i < model.dim_state; ++i) {
      out.hess = std::max({out.hess, detail::rel_err(ha.xx[i], hf.xx[i], floor),
                           detail::rel_err(ha.xe[i], hf.xe[i], floor), detail::rel_err(ha.ex[i], hf.ex[i], floor),
                           detail::rel_err(ha.ee[i], hf.ee[i], floor)});
    }
    if (model.is_theta_linear()) {
      const Vector theta = e.tail(static_cast<Eigen::Index>(model.dim_param));
      const Vector f = model.rhs(x, e, t);
      const Vector lin = model.theta_linear(x) * theta;
      const double scale = std::max(f.cwiseAbs().maxCoeff(), 1e-300);
      out.theta_linear = std::max(out.theta_linear, (f - lin).cwiseAbs().maxCoeff() / scale);
    }
  }
  return out;
}

}  // namespace odeaccel

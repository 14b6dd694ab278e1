/**
 * @file integrator.hpp
 * @brief Dormand-Prince 5(4) integrator with PI step control and dense output.
 */
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <sstream>
#include <utility>
#include <vector>

#include "odeaccel/errors.hpp"
#include "odeaccel/linalg.hpp"

namespace odeaccel {

struct ToleranceSpec {
  double rtol = 1e-8;
  double atol = 1e-10;
  std::size_t max_steps = 200000;
};

struct IntegratorStats {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t rhs_evals = 0;
};

namespace detail {

// Dormand-Prince tableau (Hairer, Norsett, Wanner), with the order-4
// continuous extension coefficients.
inline constexpr double c2 = 0.2, c3 = 0.3, c4 = 0.8, c5 = 8.0 / 9.0;
inline constexpr double a21 = 0.2;
inline constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
inline constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
inline constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0, a53 = 64448.0 / 6561.0,
                        a54 = -212.0 / 729.0;
inline constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0,
                        a64 = 49.0 / 176.0, a65 = -5103.0 / 18656.0;
inline constexpr double a71 = 35.0 / 384.0, a73 = 500.0 / 1113.0, a74 = 125.0 / 192.0,
                        a75 = -2187.0 / 6784.0, a76 = 11.0 / 84.0;
inline constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0,
                        e5 = -17253.0 / 339200.0, e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;
inline constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                        d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                        d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

inline constexpr double kSafety = 0.9;
inline constexpr double kFacMin = 0.2;   // step may shrink by at most 1/0.2
inline constexpr double kFacMax = 10.0;  // and grow by at most 10
inline constexpr double kBeta = 0.04;    // PI controller memory
inline constexpr double kExpo1 = 0.2 - kBeta * 0.75;

[[nodiscard]] inline double error_norm(const Vector& err, const Vector& y0, const Vector& y1,
                                       const ToleranceSpec& tol) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < err.size(); ++i) {
    const double sc = tol.atol + tol.rtol * std::max(std::abs(y0(i)), std::abs(y1(i)));
    const double r = err(i) / sc;
    acc += r * r;
  }
  return std::sqrt(acc / static_cast<double>(std::max<Eigen::Index>(err.size(), 1)));
}

}  // namespace detail

/// Piecewise quartic continuous extension of an accepted Dormand-Prince run.
///
/// Node values are stored exactly; evaluation at a node returns the stored
/// value bit-for-bit.
class DenseSolution {
 public:
  DenseSolution() = default;

  [[nodiscard]] const std::vector<double>& grid() const noexcept { return t_; }
  [[nodiscard]] const std::vector<Vector>& values() const noexcept { return y_; }
  [[nodiscard]] const IntegratorStats& stats() const noexcept { return stats_; }
  [[nodiscard]] std::size_t dim() const noexcept { return y_.empty() ? 0 : y_.front().size(); }
  [[nodiscard]] double t_begin() const noexcept { return t_.front(); }
  [[nodiscard]] double t_end() const noexcept { return t_.back(); }

  [[nodiscard]] Vector operator()(double t) const {
    if (t_.empty()) {
      throw Error(ErrorKind::InvalidArgument, "evaluating an empty dense solution");
    }
    const double span = t_.back() - t_.front();
    const double slack = 1e-12 * std::max(1.0, std::abs(span));
    if (t < t_.front() - slack || t > t_.back() + slack) {
      std::ostringstream msg;
      msg << "t=" << t << " outside [" << t_.front() << ", " << t_.back() << "]";
      throw Error(ErrorKind::InvalidArgument, msg.str());
    }
    if (t >= t_.back()) {
      return y_.back();
    }
    if (t <= t_.front()) {
      return y_.front();
    }
    const auto it = std::upper_bound(t_.begin(), t_.end(), t);
    const auto k = static_cast<std::size_t>(std::distance(t_.begin(), it)) - 1;
    const double h = t_[k + 1] - t_[k];
    const double s = (t - t_[k]) / h;
    const double s1 = 1.0 - s;
    const auto& c = coef_[k];
    if (s == 0.0) {
      return y_[k];
    }
    return y_[k] + s * (c[0] + s1 * (c[1] + s * (c[2] + s1 * c[3])));
  }

 private:
  template <class Rhs>
  friend DenseSolution integrate_dense(Rhs&& f, double t0, const Vector& y0, double t1,
                                       const ToleranceSpec& tol);

  std::vector<double> t_;
  std::vector<Vector> y_;
  std::vector<std::array<Vector, 4>> coef_;
  IntegratorStats stats_;
};

/// Integrates y' = f(t, y) from t0 to t1 (t1 > t0) with adaptive steps.
///
/// `f` must be callable as `void(double t, const Vector& y, Vector& dy)`.
/// Throws StepSizeUnderflow when the tolerance cannot be met and
/// NonFiniteState when the solution overflows.
template <class Rhs>
DenseSolution integrate_dense(Rhs&& f, double t0, const Vector& y0, double t1,
                              const ToleranceSpec& tol) {
  using namespace detail;
  if (!(t1 > t0)) {
    throw Error(ErrorKind::InvalidArgument, "integration horizon must satisfy t_end > t_start");
  }
  if (!(tol.rtol > 0.0) || !(tol.atol > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "tolerances must be positive");
  }
  if (!y0.allFinite()) {
    throw Error(ErrorKind::NonFiniteState, "initial state is not finite");
  }

  const Eigen::Index n = y0.size();
  DenseSolution sol;
  sol.t_.push_back(t0);
  sol.y_.push_back(y0);

  Vector y = y0;
  Vector k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), ytmp(n), ynew(n), err(n);
  f(t0, y, k1);
  ++sol.stats_.rhs_evals;
  if (!k1.allFinite()) {
    throw Error(ErrorKind::NonFiniteState, "right-hand side is not finite at the initial state");
  }

  // Initial step guess (Hairer's hinit, simplified to one explicit Euler probe).
  const double span = t1 - t0;
  double h = 0.0;
  {
    Vector sc(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      sc(i) = tol.atol + tol.rtol * std::abs(y(i));
    }
    const double dnf = n ? std::sqrt((k1.cwiseQuotient(sc)).squaredNorm() / n) : 0.0;
    const double dny = n ? std::sqrt((y.cwiseQuotient(sc)).squaredNorm() / n) : 0.0;
    h = (dnf <= 1e-10 || dny <= 1e-10) ? 1e-6 * span : 0.01 * dny / dnf;
    h = std::min(h, span);
    ytmp = y + h * k1;
    f(t0 + h, ytmp, k2);
    ++sol.stats_.rhs_evals;
    double der2 = 0.0;
    if (n) {
      der2 = std::sqrt(((k2 - k1).cwiseQuotient(sc)).squaredNorm() / n) / h;
    }
    const double der12 = std::max(std::abs(der2), dnf);
    const double h1 = der12 <= 1e-15 ? std::max(1e-6, std::abs(h) * 1e-3)
                                     : std::pow(0.01 / der12, 0.2);
    h = std::min({100.0 * h, h1, span});
    if (!(h > 0.0) || !std::isfinite(h)) {
      h = 1e-6 * span;
    }
  }

  double t = t0;
  double facold = 1e-4;
  bool last_rejected = false;

  while (t < t1) {
    if (sol.stats_.accepted + sol.stats_.rejected >= tol.max_steps) {
      throw Error(ErrorKind::StepSizeUnderflow, "maximum number of integration steps exceeded");
    }
    bool final_step = false;
    if (t + 1.01 * h >= t1) {
      h = t1 - t;
      final_step = true;
    }
    if (!(h > 0.0) || (!final_step && h <= 16.0 * std::numeric_limits<double>::epsilon() * std::abs(t))) {
      if (!y.allFinite()) {
        throw Error(ErrorKind::NonFiniteState, "solution left the representable range");
      }
      std::ostringstream msg;
      msg << "step size underflow at t=" << t;
      throw Error(ErrorKind::StepSizeUnderflow, msg.str());
    }

    ytmp = y + h * a21 * k1;
    f(t + c2 * h, ytmp, k2);
    ytmp = y + h * (a31 * k1 + a32 * k2);
    f(t + c3 * h, ytmp, k3);
    ytmp = y + h * (a41 * k1 + a42 * k2 + a43 * k3);
    f(t + c4 * h, ytmp, k4);
    ytmp = y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
    f(t + c5 * h, ytmp, k5);
    ytmp = y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
    const double t_next = final_step ? t1 : t + h;
    f(t_next, ytmp, k6);
    ynew = y + h * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
    f(t_next, ynew, k7);
    sol.stats_.rhs_evals += 6;

    err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    const double en = error_norm(err, y, ynew, tol);

    if (!std::isfinite(en) || !ynew.allFinite()) {
      ++sol.stats_.rejected;
      last_rejected = true;
      h *= kFacMin;
      if (!(h > 0.0) || (!final_step && h <= 16.0 * std::numeric_limits<double>::epsilon() * std::abs(t))) {
        throw Error(ErrorKind::NonFiniteState, "solution left the representable range");
      }
      continue;
    }

    const double fac11 = std::pow(en, kExpo1);
    if (en <= 1.0) {
      double fac = fac11 / std::pow(facold, kBeta);
      fac = std::clamp(fac / kSafety, 1.0 / kFacMax, 1.0 / kFacMin);
      double hnew = h / fac;
      facold = std::max(en, 1e-4);

      std::array<Vector, 4> c;
      const Vector ydiff = ynew - y;
      const Vector bspl = h * k1 - ydiff;
      c[0] = ydiff;
      c[1] = bspl;
      c[2] = ydiff - h * k7 - bspl;
      c[3] = h * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
      sol.coef_.push_back(std::move(c));

      t = t_next;
      y = ynew;
      k1 = k7;
      sol.t_.push_back(t);
      sol.y_.push_back(y);
      ++sol.stats_.accepted;

      if (last_rejected) {
        hnew = std::min(hnew, h);
      }
      last_rejected = false;
      h = hnew;
    } else {
      ++sol.stats_.rejected;
      last_rejected = true;
      h /= std::min(1.0 / kFacMin, fac11 / kSafety);
    }
  }
  return sol;
}

}  // namespace odeaccel

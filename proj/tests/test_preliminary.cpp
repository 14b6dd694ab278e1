/**
 * @file test_preliminary.cpp
 * @brief Integral and derivative smooth-and-match estimators and initial
 *        value recovery.
 */
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "odeaccel/models.hpp"
#include "odeaccel/preliminary.hpp"

namespace {

using namespace odeaccel;
using detail::vec;

/// Curve carrying the exact solution xi e^{theta t} and its derivative.
SmoothedCurve exponential_curve(double xi, double theta, double horizon, std::size_t points) {
  SmoothedCurve c;
  c.eval_grid = linspace(0.0, horizon, points);
  c.values.resize(1, static_cast<Eigen::Index>(points));
  c.derivatives.resize(1, static_cast<Eigen::Index>(points));
  for (std::size_t k = 0; k < points; ++k) {
    const double x = xi * std::exp(theta * c.eval_grid[k]);
    c.values(0, static_cast<Eigen::Index>(k)) = x;
    c.derivatives(0, static_cast<Eigen::Index>(k)) = theta * x;
  }
  c.bandwidth = 0.1;
  return c;
}

/// Curve carrying an integrated trajectory of a catalog model.
SmoothedCurve trajectory_curve(const OdeModel& model, const ParameterVector& eta, double horizon,
                               std::size_t points) {
  const auto traj = integrate(model, eta, horizon, {1e-12, 1e-14, 1000000});
  SmoothedCurve c;
  c.eval_grid = linspace(0.0, horizon, points);
  c.values = traj.at(c.eval_grid);
  c.derivatives.resize(c.values.rows(), c.values.cols());
  for (Eigen::Index k = 0; k < c.values.cols(); ++k) {
    c.derivatives.col(k) = model.rhs(c.values.col(k), eta.eta(), c.eval_grid[static_cast<std::size_t>(k)]);
  }
  c.bandwidth = 0.1;
  return c;
}

/// x' = theta with g(x) = 1.
OdeModel constant_drift() {
  ThetaLinearParts parts;
  parts.dim_state = 1;
  parts.dim_param = 1;
  parts.g = [](const Vector&) { return Matrix::Ones(1, 1); };
  parts.dg = [](const Vector&) { return std::vector<Matrix>{Matrix::Zero(1, 1)}; };
  parts.d2g = [](const Vector&) { return std::vector<Matrix>{Matrix::Zero(1, 1)}; };
  return make_theta_linear_model("drift", std::move(parts));
}

TEST(IntegralSme, ExactLinearSolutionRecoversTruth) {
  const auto curve = exponential_curve(1.0, -1.0, 1.0, 2001);
  const auto est = integral_sme(curve, models::linear());
  EXPECT_NEAR(est.eta_hat.xi(0), 1.0, 1e-4);
  EXPECT_NEAR(est.eta_hat.theta(0), -1.0, 1e-4);
  EXPECT_EQ(est.method, PreliminaryMethod::IntegralSme);
  EXPECT_TRUE(est.eta_hat.estimate_mask[0] && est.eta_hat.estimate_mask[1]);
}

TEST(IntegralSme, KnownInitialValueBranch) {
  const auto curve = exponential_curve(1.0, -1.0, 1.0, 2001);
  const auto est = integral_sme(curve, models::linear(), vec({1.0}));
  EXPECT_EQ(est.eta_hat.xi(0), 1.0);
  EXPECT_NEAR(est.eta_hat.theta(0), -1.0, 1e-4);
  EXPECT_FALSE(est.eta_hat.estimate_mask[0]);
  EXPECT_TRUE(est.eta_hat.estimate_mask[1]);
}

TEST(IntegralSme, PolynomialToyMatchesClosedFormSolve) {
  // g = 1: G(t) = t, A = T^2/2, B = T^3/3; for x(t) = a + b t the two
  // displays reduce to a 2x2 system solved here with exact integrals.
  const double a = 0.7, b = -1.3, T = 2.0;
  SmoothedCurve curve;
  curve.eval_grid = linspace(0.0, T, 401);
  curve.values.resize(1, 401);
  curve.derivatives = Matrix::Constant(1, 401, b);
  for (Eigen::Index k = 0; k < 401; ++k) {
    curve.values(0, k) = a + b * curve.eval_grid[static_cast<std::size_t>(k)];
  }
  const double A = T * T / 2.0, B = T * T * T / 3.0;
  const double int_x = a * T + b * T * T / 2.0;
  const double int_gx = a * T * T / 2.0 + b * T * T * T / 3.0;
  const double xi_oracle = (int_x - A / B * int_gx) / (T - A * A / B);
  const double theta_oracle = (int_gx - A * xi_oracle) / B;
  const auto est = integral_sme(curve, constant_drift());
  EXPECT_NEAR(est.eta_hat.xi(0), xi_oracle, 1e-9);
  EXPECT_NEAR(est.eta_hat.theta(0), theta_oracle, 1e-9);
  EXPECT_NEAR(xi_oracle, a, 1e-12);
  EXPECT_NEAR(theta_oracle, b, 1e-12);
}

TEST(IntegralSme, OperatorsHaveDocumentedStructure) {
  const auto entry = catalog_get("lotka_volterra");
  const auto curve = trajectory_curve(entry.model, entry.default_eta, 10.0, 201);
  const auto ops = integral_operators(curve, entry.model);
  EXPECT_EQ(ops.G.front().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_LT((ops.B - ops.B.transpose()).cwiseAbs().maxCoeff(), 1e-12 * ops.B.cwiseAbs().maxCoeff());
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(ops.B);
  EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-10 * ops.B.trace());
}

TEST(IntegralSme, ErrorShrinksAsQuadratureGridRefines) {
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t m : {51U, 101U, 201U, 401U}) {
    const auto est = integral_sme(exponential_curve(1.0, -1.0, 1.0, m), models::linear());
    const double err = std::abs(est.eta_hat.theta(0) + 1.0) + std::abs(est.eta_hat.xi(0) - 1.0);
    EXPECT_LT(err, prev / 2.0) << m;
    prev = err;
  }
}

TEST(IntegralSme, DegenerateCurveIsSingular) {
  SmoothedCurve curve = exponential_curve(1.0, -1.0, 1.0, 11);
  curve.values.setZero();
  try {
    (void)integral_sme(curve, models::linear());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SingularNormalMatrix);
  }
}

TEST(IntegralSme, MaskedVariantAgreesWithClosedForms) {
  const auto entry = catalog_get("lotka_volterra");
  const auto curve = trajectory_curve(entry.model, entry.default_eta, 10.0, 401);
  const auto full = integral_sme(curve, entry.model);
  const auto masked_full = integral_sme_masked(curve, entry.model, entry.default_eta);
  EXPECT_LT((full.eta_hat.eta() - masked_full.eta_hat.eta()).cwiseAbs().maxCoeff(), 1e-12);

  // Only theta1 estimated: everything else fixed at truth.
  ParameterVector ref = entry.default_eta;
  ref.estimate_mask = {false, false, true, false, false, false};
  const auto one = integral_sme_masked(curve, entry.model, ref);
  EXPECT_NEAR(one.eta_hat.theta(0), 0.5, 1e-3);
  for (std::size_t k : {0U, 1U, 3U, 4U, 5U}) {
    EXPECT_EQ(one.eta_hat[k], entry.default_eta[k]);
  }
}

TEST(IntegralSme, InvariantToStatePermutation) {
  const auto entry = catalog_get("lotka_volterra");
  const auto g = entry.model.theta_linear;
  auto swap = [](const Vector& x) { return vec({x(1), x(0)}); };
  ThetaLinearParts parts;
  parts.dim_state = 2;
  parts.dim_param = 4;
  parts.g = [g, swap](const Vector& x) {
    const Matrix m = g(swap(x));
    Matrix out(2, 4);
    out.row(0) = m.row(1);
    out.row(1) = m.row(0);
    return out;
  };
  parts.dg = [](const Vector&) { return std::vector<Matrix>(2, Matrix::Zero(2, 4)); };
  parts.d2g = [](const Vector&) { return std::vector<Matrix>(4, Matrix::Zero(2, 4)); };
  const OdeModel permuted = make_theta_linear_model("lv_swapped", std::move(parts));

  const auto curve = trajectory_curve(entry.model, entry.default_eta, 10.0, 201);
  SmoothedCurve swapped = curve;
  swapped.values.row(0) = curve.values.row(1);
  swapped.values.row(1) = curve.values.row(0);
  const auto a = integral_sme(curve, entry.model);
  const auto b = integral_sme(swapped, permuted);
  EXPECT_NEAR(a.eta_hat.xi(0), b.eta_hat.xi(1), 1e-10);
  EXPECT_NEAR(a.eta_hat.xi(1), b.eta_hat.xi(0), 1e-10);
  EXPECT_LT((a.eta_hat.theta - b.eta_hat.theta).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(DerivativeSme, ExactGradientMatchingRecoversTruth) {
  const auto entry = catalog_get("lotka_volterra");
  const auto curve = trajectory_curve(entry.model, entry.default_eta, 10.0, 401);
  const auto est = derivative_sme(curve, entry.model, entry.default_eta);
  EXPECT_EQ(est.method, PreliminaryMethod::DerivativeSme);
  EXPECT_LT((est.eta_hat.theta - entry.default_eta.theta).cwiseAbs().maxCoeff(), 1e-4);
  EXPECT_LT((est.eta_hat.xi - entry.default_eta.xi).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(DerivativeSme, ZeroWeightExcludesSubinterval) {
  const auto curve = exponential_curve(1.0, -1.0, 2.0, 401);
  DerivativeSmeOptions opt;
  opt.weight = [](double t) { return (t > 0.8 && t < 1.2) ? 0.0 : 1.0; };
  const ParameterVector ref{vec({0.0}), vec({0.0})};
  const auto base = derivative_sme(curve, models::linear(), ref, opt);
  SmoothedCurve disturbed = curve;
  for (std::size_t k = 0; k < curve.eval_grid.size(); ++k) {
    const double t = curve.eval_grid[k];
    if (t > 0.85 && t < 1.15) {
      disturbed.values(0, static_cast<Eigen::Index>(k)) += 0.3;
      disturbed.derivatives(0, static_cast<Eigen::Index>(k)) -= 2.0;
    }
  }
  const auto moved = derivative_sme(disturbed, models::linear(), ref, opt);
  EXPECT_NEAR(moved.eta_hat.theta(0), base.eta_hat.theta(0), 1e-12);
  EXPECT_NEAR(base.eta_hat.theta(0), -1.0, 1e-4);
}

TEST(DerivativeSme, NonlinearInThetaUsesBoxedSearch) {
  // F(x; theta) = theta^2 x on exact data with theta0 = 2: minimisers are +-2.
  OdeModel m;
  m.name = "quadratic_rate";
  m.dim_state = 1;
  m.dim_param = 1;
  m.rhs = [](const Vector& x, const Vector& e, double) -> Vector { return e(1) * e(1) * x; };
  const auto curve = exponential_curve(1.0, 4.0, 0.5, 201);
  const ParameterVector ref{vec({1.0}), vec({0.0}), {false, true}};

  // Grid-search oracle over [-5, 5] on the same discretised objective.
  const auto w = trapezoid_weights(curve.eval_grid);
  auto objective = [&](double th) {
    double acc = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      const double r = curve.derivatives(0, kk) - th * th * curve.values(0, kk);
      acc += w[k] * r * r;
    }
    return acc;
  };
  double best = 0.0, best_val = std::numeric_limits<double>::infinity();
  for (double th = -5.0; th <= 5.0; th += 1e-4) {
    if (objective(th) < best_val) {
      best_val = objective(th);
      best = th;
    }
  }
  EXPECT_NEAR(std::abs(best), 2.0, 1e-3);

  DerivativeSmeOptions free;
  free.lower = vec({-5.0});
  free.upper = vec({5.0});
  const auto any = derivative_sme(curve, m, ref, free);
  EXPECT_NEAR(std::abs(any.eta_hat.theta(0)), 2.0, 1e-4);

  DerivativeSmeOptions positive = free;
  positive.lower = vec({0.0});
  const auto pos = derivative_sme(curve, m, ref, positive);
  EXPECT_NEAR(pos.eta_hat.theta(0), 2.0, 1e-4);
}

TEST(DerivativeSme, AgreesWithIntegralSmeOnExactCurves) {
  for (const char* name : {"linear", "lotka_volterra", "barnes"}) {
    const auto entry = catalog_get(name);
    const auto curve = trajectory_curve(entry.model, entry.default_eta, entry.default_horizon, 801);
    const auto a = integral_sme(curve, entry.model);
    const auto b = derivative_sme(curve, entry.model, entry.default_eta);
    EXPECT_LT((a.eta_hat.eta() - b.eta_hat.eta()).cwiseAbs().maxCoeff(), 1e-3) << name;
  }
}

TEST(DerivativeSme, RejectsNegativeWeights) {
  const auto curve = exponential_curve(1.0, -1.0, 1.0, 11);
  DerivativeSmeOptions opt;
  opt.weight = [](double) { return -1.0; };
  EXPECT_THROW((void)derivative_sme(curve, models::linear(), ParameterVector{vec({0.0}), vec({0.0})}, opt), Error);
}

TEST(RecoverInitialValues, ExactCurveAndTrueRate) {
  const auto curve = exponential_curve(1.5, -0.7, 3.0, 2001);
  EXPECT_NEAR(recover_initial_values(curve, models::linear(), vec({-0.7}))(0), 1.5, 1e-6);
}

TEST(RecoverInitialValues, ZeroFieldGivesTimeAverage) {
  const auto curve = exponential_curve(2.0, -1.0, 1.0, 2001);
  const double average = 2.0 * (1.0 - std::exp(-1.0));
  EXPECT_NEAR(recover_initial_values(curve, models::linear(), vec({0.0}))(0), average, 1e-6);
}

TEST(RecoverInitialValues, PerturbedRateMatchesDiscretisedLeastSquares) {
  const double theta_hat = -0.9;
  const auto curve = exponential_curve(1.0, -1.0, 1.0, 2001);
  // Oracle: least squares of r(t_k) = x(t_k) - theta_hat (1 - e^{-t_k}) on a
  // constant, weighted by the trapezoid rule on the uniform 2001-point grid.
  const double h = 1.0 / 2000.0;
  Matrix design(2001, 1);
  Vector r(2001);
  for (Eigen::Index k = 0; k < 2001; ++k) {
    const double t = curve.eval_grid[static_cast<std::size_t>(k)];
    const double w = std::sqrt((k == 0 || k == 2000) ? 0.5 * h : h);
    design(k, 0) = w;
    r(k) = w * (std::exp(-t) - theta_hat * (1.0 - std::exp(-t)));
  }
  const double oracle = design.colPivHouseholderQr().solve(r)(0);
  EXPECT_NEAR(recover_initial_values(curve, models::linear(), vec({theta_hat}))(0), oracle, 1e-6);
}

TEST(PreliminaryEstimate, DispatchesOnThetaLinearity) {
  const auto curve = exponential_curve(1.0, -1.0, 1.0, 201);
  const ParameterVector ref{vec({0.0}), vec({0.0})};
  EXPECT_EQ(preliminary_estimate(curve, models::linear(), ref).method, PreliminaryMethod::IntegralSme);
  OdeModel plain = models::linear();
  plain.theta_linear = nullptr;
  DerivativeSmeOptions opt;
  opt.lower = vec({-3.0});
  opt.upper = vec({3.0});
  const auto est = preliminary_estimate(curve, plain, ref, opt);
  EXPECT_EQ(est.method, PreliminaryMethod::DerivativeSme);
  EXPECT_NEAR(est.eta_hat.theta(0), -1.0, 1e-4);
}

}  // namespace

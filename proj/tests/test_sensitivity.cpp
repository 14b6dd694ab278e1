/**
 * @file test_sensitivity.cpp
 * @brief Sensitivity and variational systems and the estimating function.
 */
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "odeaccel/models.hpp"
#include "odeaccel/sensitivity.hpp"
#include "test_support.hpp"

namespace {

using namespace odeaccel;
using namespace odeaccel::testing;
using detail::vec;

std::vector<double> random_times(double horizon, std::size_t count, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.05 * horizon, horizon);
  std::vector<double> t(count);
  for (auto& v : t) {
    v = u(rng);
  }
  return t;
}

TEST(Sensitivity, LinearModelClosedForm) {
  const ParameterVector eta{vec({1.0}), vec({-1.0})};
  const auto sol = solve_sensitivities(models::linear(), eta, 1.0, SensitivityOrder::Second);
  const auto p = sol.at(1.0);
  const double e1 = std::exp(-1.0);
  EXPECT_NEAR(p.x(0), e1, 1e-8);
  EXPECT_NEAR(p.s(0, 0), e1, 1e-7);
  EXPECT_NEAR(p.s(0, 1), e1, 1e-7);
  ASSERT_EQ(p.z.size(), 1U);
  EXPECT_NEAR(p.z[0](0, 0), 0.0, 1e-10);
  EXPECT_NEAR(p.z[0](0, 1), e1, 1e-7);
  EXPECT_NEAR(p.z[0](1, 0), e1, 1e-7);
  EXPECT_NEAR(p.z[0](1, 1), e1, 1e-7);  // xi t^2 e^{theta t} at t = 1
}

TEST(Sensitivity, LinearModelClosedFormAlongTrajectory) {
  const double xi = 0.5, th = 0.7;
  const ParameterVector eta{vec({xi}), vec({th})};
  const auto sol = solve_sensitivities(models::linear(), eta, 3.0, SensitivityOrder::Second);
  for (double t : linspace(0.0, 3.0, 13)) {
    const auto p = sol.at(t);
    const double e = std::exp(th * t);
    EXPECT_NEAR(p.s(0, 0), e, 1e-7 * e);
    EXPECT_NEAR(p.s(0, 1), xi * t * e, 1e-7 * e);
    EXPECT_NEAR(p.z[0](0, 1), t * e, 1e-7 * e);
    EXPECT_NEAR(p.z[0](1, 1), xi * t * t * e, 1e-7 * e * std::max(1.0, t * t));
  }
}

TEST(Sensitivity, InitialConditionsAreIdentityAndZero) {
  for (const auto& name : catalog_names()) {
    const auto entry = catalog_get(name);
    const auto sol = solve_sensitivities(entry.model, entry.default_eta, entry.default_horizon,
                                         SensitivityOrder::Second);
    const auto p = sol.at(0.0);
    const auto d = static_cast<Eigen::Index>(entry.model.dim_state);
    const auto q = static_cast<Eigen::Index>(entry.model.dim_eta());
    Matrix expected = Matrix::Zero(d, q);
    expected.leftCols(d).setIdentity();
    EXPECT_EQ(p.s, expected) << name;
    for (const auto& z : p.z) {
      EXPECT_EQ(z.cwiseAbs().maxCoeff(), 0.0) << name;
    }
  }
}

TEST(Sensitivity, UnusedRateHasZeroColumn) {
  ThetaLinearParts parts;
  parts.dim_state = 1;
  parts.dim_param = 2;
  parts.g = [](const Vector& x) {
    Matrix g(1, 2);
    g << x(0), 0.0;
    return g;
  };
  parts.dg = [](const Vector&) {
    Matrix d(1, 2);
    d << 1.0, 0.0;
    return std::vector<Matrix>{d};
  };
  parts.d2g = [](const Vector&) { return std::vector<Matrix>{Matrix::Zero(1, 2)}; };
  const OdeModel m = make_theta_linear_model("unused", std::move(parts));
  const auto sol = solve_sensitivities(m, ParameterVector{vec({1.0}), vec({-0.5, 3.0})}, 2.0,
                                       SensitivityOrder::Second);
  for (double t : linspace(0.0, 2.0, 9)) {
    const auto p = sol.at(t);
    EXPECT_EQ(p.s(0, 2), 0.0);
    EXPECT_EQ(p.z[0].col(2).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(p.z[0].row(2).cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(Sensitivity, VariationalTensorIsSymmetric) {
  for (const auto& name : catalog_names()) {
    const auto entry = catalog_get(name);
    const auto sol = solve_sensitivities(entry.model, entry.default_eta, entry.default_horizon,
                                         SensitivityOrder::Second);
    for (double t : sol.grid()) {
      for (const auto& z : sol.at(t).z) {
        const double scale = std::max(1.0, z.cwiseAbs().maxCoeff());
        EXPECT_LE((z - z.transpose()).cwiseAbs().maxCoeff() / scale, 1e-6) << name << " t=" << t;
      }
    }
  }
}

TEST(Sensitivity, FirstOrderMatchesFiniteDifferencesForEveryCatalogModel) {
  for (const auto& name : catalog_names()) {
    const auto entry = catalog_get(name);
    const double T = entry.default_horizon;
    const auto sol = solve_sensitivities(entry.model, entry.default_eta, T, SensitivityOrder::First,
                                         tight_tolerance());
    for (double t : random_times(T, 10, 7)) {
      const Matrix s = sol.at(t).s;
      Matrix fd(s.rows(), s.cols());
      for (std::size_t k = 0; k < entry.model.dim_eta(); ++k) {
        fd.col(static_cast<Eigen::Index>(k)) = fd_sensitivity(entry.model, entry.default_eta, k, t, T);
      }
      for (Eigen::Index k = 0; k < s.cols(); ++k) {
        EXPECT_LT(relative_error(s.col(k), fd.col(k), 1e-8 * fd.cwiseAbs().maxCoeff()), 1e-4)
            << name << " t=" << t << " column " << k;
      }
    }
  }
}

TEST(Sensitivity, SecondOrderMatchesFiniteDifferencesForEveryCatalogModel) {
  for (const auto& name : catalog_names()) {
    const auto entry = catalog_get(name);
    const double T = entry.default_horizon;
    const auto sol = solve_sensitivities(entry.model, entry.default_eta, T, SensitivityOrder::Second,
                                         tight_tolerance());
    const auto q = entry.model.dim_eta();
    for (double t : random_times(T, 3, 8)) {
      const auto p = sol.at(t);
      for (std::size_t i = 0; i < entry.model.dim_state; ++i) {
        Matrix fd(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(q));
        for (std::size_t k = 0; k < q; ++k) {
          for (std::size_t l = k; l < q; ++l) {
            const double v = fd_second(entry.model, entry.default_eta, k, l, t, T)(static_cast<Eigen::Index>(i));
            fd(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l)) = v;
            fd(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(k)) = v;
          }
        }
        EXPECT_LT(relative_error(p.z[i], fd), 1e-3) << name << " state " << i << " t=" << t;
      }
    }
  }
}

TEST(Sensitivity, JointIntegrationMatchesTwoStageScheme) {
  // Two stages: solve x alone, then s' = F_x(x(t)) s + F_eta(x(t)) with the
  // dense state as a known time function.
  const auto entry = catalog_get("lotka_volterra");
  const auto& m = entry.model;
  const Vector e = entry.default_eta.eta();
  const auto traj = integrate(m, entry.default_eta, 10.0, tight_tolerance());
  const Eigen::Index d = 2, q = 6;
  auto f = [&](double t, const Vector& y, Vector& dy) {
    const Vector x = traj(t);
    const Eigen::Map<const Matrix> s(y.data(), d, q);
    dy.resize(d * q);
    Eigen::Map<Matrix>(dy.data(), d, q) = m.jac_state(x, e, t) * s + m.jac_eta(x, e, t);
  };
  Vector s0 = Vector::Zero(d * q);
  Eigen::Map<Matrix>(s0.data(), d, q).leftCols(d).setIdentity();
  const auto two_stage = integrate_dense(f, 0.0, s0, 10.0, tight_tolerance());
  const auto joint = solve_sensitivities(m, entry.default_eta, 10.0, SensitivityOrder::First, tight_tolerance());
  for (double t : linspace(0.0, 10.0, 21)) {
    const Matrix a = joint.at(t).s;
    const Matrix b = Eigen::Map<const Matrix>(two_stage(t).data(), d, q);
    EXPECT_LT(relative_error(a, b, 1.0), 1e-7) << "t=" << t;
  }
}

TEST(Sensitivity, CountsVariationalSolves) {
  const auto before = variational_solve_counter();
  const ParameterVector eta{vec({1.0}), vec({-1.0})};
  (void)solve_sensitivities(models::linear(), eta, 1.0, SensitivityOrder::First);
  EXPECT_EQ(variational_solve_counter(), before);
  (void)solve_sensitivities(models::linear(), eta, 1.0, SensitivityOrder::Second);
  EXPECT_EQ(variational_solve_counter(), before + 1);
}

TEST(Sensitivity, MissingCallbacksAreRejected) {
  OdeModel m = models::linear();
  m.hess = nullptr;
  const ParameterVector eta{vec({1.0}), vec({-1.0})};
  EXPECT_NO_THROW((void)solve_sensitivities(m, eta, 1.0, SensitivityOrder::First));
  EXPECT_THROW((void)solve_sensitivities(m, eta, 1.0, SensitivityOrder::Second), Error);
}

double rss_of(const OdeModel& m, const ParameterVector& eta, const Dataset& data) {
  return rss(m, eta, data, tight_tolerance());
}

TEST(EstimatingFunction, VanishesAtTruthOnNoiselessData) {
  const auto entry = catalog_get("lotka_volterra");
  const Dataset data = noiseless_data(entry.model, entry.default_eta, linspace(0.0, 10.0, 21));
  const auto ef = estimating_function(entry.model, entry.default_eta, data, tight_tolerance());
  EXPECT_LT(ef.psi.cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT(ef.rss, 1e-20);
}

void check_against_rss_differences(const OdeModel& m, const ParameterVector& eta, const Dataset& data) {
  const auto ef = estimating_function(m, eta, data, tight_tolerance());
  const auto q = eta.size();
  Vector grad(static_cast<Eigen::Index>(q));
  Matrix jac(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(q));
  for (std::size_t k = 0; k < q; ++k) {
    const double h = fd_step_for(eta, k, 1e-5);
    grad(static_cast<Eigen::Index>(k)) =
        (rss_of(m, shifted(eta, k, h), data) - rss_of(m, shifted(eta, k, -h), data)) / (2.0 * h);
    const auto up = estimating_function(m, shifted(eta, k, h), data, tight_tolerance());
    const auto dn = estimating_function(m, shifted(eta, k, -h), data, tight_tolerance());
    jac.col(static_cast<Eigen::Index>(k)) = (up.psi - dn.psi) / (2.0 * h);
  }
  EXPECT_LT(relative_error(ef.psi, -0.5 * grad), 1e-4) << m.name;
  EXPECT_LT(relative_error(ef.dpsi, jac), 1e-3) << m.name;
}

TEST(EstimatingFunction, MatchesFiniteDifferencesOfCriterion) {
  {
    const ParameterVector truth{vec({0.5}), vec({-1.0})};
    const Dataset data = noisy_data(models::linear(), truth, linspace(0.0, 10.0, 21), 0.05, 1);
    check_against_rss_differences(models::linear(), ParameterVector{vec({0.52}), vec({-0.95})}, data);
  }
  {
    const auto entry = catalog_get("lotka_volterra");
    const Dataset data = noisy_data(entry.model, entry.default_eta, linspace(0.0, 10.0, 15), 0.05, 2);
    ParameterVector eta = entry.default_eta;
    eta.theta = vec({0.52, 0.48, 0.51, 0.49});
    check_against_rss_differences(entry.model, eta, data);
  }
}

TEST(EstimatingFunction, AdditiveOverDisjointSubsets) {
  const auto entry = catalog_get("barnes");
  const Dataset all = noisy_data(entry.model, entry.default_eta, linspace(0.0, 5.0, 20), 0.05, 3);
  std::vector<double> t1, t2;
  std::vector<Eigen::Index> c1, c2;
  for (std::size_t j = 0; j < all.size(); ++j) {
    (j % 2 == 0 ? t1 : t2).push_back(all.times[j]);
    (j % 2 == 0 ? c1 : c2).push_back(static_cast<Eigen::Index>(j));
  }
  const Dataset a{t1, all.observations(Eigen::all, c1)};
  const Dataset b{t2, all.observations(Eigen::all, c2)};
  const ParameterVector eta = shifted(entry.default_eta, 3, 0.05);
  const auto fa = estimating_function(entry.model, eta, a, tight_tolerance());
  const auto fb = estimating_function(entry.model, eta, b, tight_tolerance());
  const auto fall = estimating_function(entry.model, eta, all, tight_tolerance());
  EXPECT_LT(relative_error(fa.psi + fb.psi, fall.psi), 1e-8);
  EXPECT_LT(relative_error(fa.dpsi + fb.dpsi, fall.dpsi), 1e-8);
}

TEST(EstimatingFunction, MaskRestrictsRowsAndColumns) {
  const auto entry = catalog_get("lotka_volterra");
  const Dataset data = noisy_data(entry.model, entry.default_eta, linspace(0.0, 10.0, 21), 0.05, 4);
  const auto full = estimating_function(entry.model, entry.default_eta, data);
  ParameterVector masked = entry.default_eta;
  masked.estimate_mask = {false, false, true, false, true, true};
  const auto part = estimating_function(entry.model, masked, data);
  ASSERT_EQ(part.indices, (std::vector<std::size_t>{2, 4, 5}));
  for (Eigen::Index a = 0; a < 3; ++a) {
    const auto ia = static_cast<Eigen::Index>(part.indices[static_cast<std::size_t>(a)]);
    EXPECT_DOUBLE_EQ(part.psi(a), full.psi(ia));
    for (Eigen::Index b = 0; b < 3; ++b) {
      EXPECT_DOUBLE_EQ(part.dpsi(a, b), full.dpsi(ia, static_cast<Eigen::Index>(part.indices[static_cast<std::size_t>(b)])));
    }
  }
}

TEST(EstimatingFunction, DimensionMismatchIsReported) {
  const auto entry = catalog_get("lotka_volterra");
  const Dataset scalar{linspace(0.0, 1.0, 5), Matrix::Ones(1, 5)};
  try {
    (void)estimating_function(entry.model, entry.default_eta, scalar);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DimensionMismatch);
  }
}

}  // namespace

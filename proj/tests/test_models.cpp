/**
 * @file test_models.cpp
 * @brief Built-in model catalog: reference values, theta-linear structure
 *        and derivative callbacks.
 */
#include <gtest/gtest.h>

#include <random>

#include "odeaccel/models.hpp"
#include "odeaccel/ode_core.hpp"

namespace {

using namespace odeaccel;
using detail::vec;

TEST(Catalog, NitrogenOxideDefaults) {
  const auto e = catalog_get("nitrogen_oxide");
  EXPECT_EQ(e.default_eta.xi(0), 0.0);
  EXPECT_DOUBLE_EQ(e.default_eta.theta(0), 4.577e-6);
  EXPECT_DOUBLE_EQ(e.default_eta.theta(1), 2.797e-4);
  EXPECT_EQ(e.default_horizon, 40.0);
}

TEST(Catalog, LotkaVolterraDefaults) {
  const auto e = catalog_get("lotka_volterra");
  EXPECT_EQ(e.default_eta.xi, vec({1.0, 0.5}));
  EXPECT_EQ(e.default_eta.theta, vec({0.5, 0.5, 0.5, 0.5}));
}

TEST(Catalog, AlphaPineneDefaults) {
  const auto e = catalog_get("alpha_pinene");
  EXPECT_EQ(e.default_eta.xi, vec({88.35, 7.3, 2.3, 0.4, 1.75}));
  EXPECT_EQ(e.default_eta.theta, vec({5.926e-5, 2.963e-5, 2.047e-5, 2.744e-4, 3.997e-5}));
}

TEST(Catalog, BarnesDefaults) {
  const auto e = catalog_get("barnes");
  EXPECT_EQ(e.default_eta.theta, vec({0.86, 2.079, 1.624}));
}

TEST(Catalog, UnknownNameIsAnError) {
  try {
    (void)catalog_get("fitzhugh");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UnknownModel);
  }
}

TEST(Catalog, EveryEntryIsThetaLinearWithConsistentDimensions) {
  for (const auto& name : catalog_names()) {
    const auto e = catalog_get(name);
    EXPECT_EQ(e.name, name);
    EXPECT_TRUE(e.model.is_theta_linear()) << name;
    EXPECT_EQ(static_cast<std::size_t>(e.default_eta.xi.size()), e.model.dim_state);
    EXPECT_EQ(static_cast<std::size_t>(e.default_eta.theta.size()), e.model.dim_param);
    EXPECT_NO_THROW(check_dimensions(e.model, e.default_eta));
  }
}

TEST(GOf, NitrogenOxideAtZero) {
  const Matrix g = g_of("nitrogen_oxide", vec({0.0}));
  ASSERT_EQ(g.rows(), 1);
  ASSERT_EQ(g.cols(), 2);
  EXPECT_DOUBLE_EQ(g(0, 0), 126.2 * 91.9 * 91.9);
  EXPECT_NEAR(g(0, 0), 1065835.982, 1e-3);
  EXPECT_EQ(g(0, 1), 0.0);
}

TEST(GOf, LotkaVolterraAtOnes) {
  Matrix expected(2, 4);
  expected << 1, -1, 0, 0, 0, 0, -1, 1;
  EXPECT_EQ(g_of("lotka_volterra", vec({1.0, 1.0})), expected);
}

TEST(GOf, WrongStateDimensionIsRejected) {
  EXPECT_THROW((void)g_of("barnes", vec({1.0})), Error);
}

TEST(GOf, ZeroRatesGiveZeroField) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.1, 3.0);
  for (const auto& name : catalog_names()) {
    const auto e = catalog_get(name);
    Vector x(static_cast<Eigen::Index>(e.model.dim_state));
    for (auto& v : x) {
      v = u(rng);
    }
    Vector eta = Vector::Zero(static_cast<Eigen::Index>(e.model.dim_eta()));
    eta.head(x.size()) = x;
    EXPECT_EQ(e.model.rhs(x, eta, 0.0).cwiseAbs().maxCoeff(), 0.0) << name;
  }
}

TEST(Models, RhsEqualsThetaLinearFormOnRandomProbes) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (const auto& name : catalog_names()) {
    const auto e = catalog_get(name);
    for (int probe = 0; probe < 20; ++probe) {
      Vector x(static_cast<Eigen::Index>(e.model.dim_state));
      Vector eta(static_cast<Eigen::Index>(e.model.dim_eta()));
      for (auto& v : x) {
        v = u(rng);
      }
      for (auto& v : eta) {
        v = u(rng);
      }
      const Vector f = e.model.rhs(x, eta, 0.0);
      const Vector lin = e.model.theta_linear(x) * eta.tail(static_cast<Eigen::Index>(e.model.dim_param));
      EXPECT_LE((f - lin).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, lin.cwiseAbs().maxCoeff())) << name;
    }
  }
}

TEST(Models, AnalyticDerivativesMatchFiniteDifferences) {
  for (const auto& name : catalog_names()) {
    const auto e = catalog_get(name);
    Vector x0 = e.model.dim_state == 1 ? vec({10.0}) : e.default_eta.xi;
    const auto chk = check_derivatives(e.model, x0, e.default_eta.eta(), 10, 99);
    EXPECT_LT(chk.jac_state, 1e-5) << name;
    EXPECT_LT(chk.jac_eta, 1e-5) << name;
    EXPECT_LT(chk.hess, 1e-4) << name;
    EXPECT_LT(chk.theta_linear, 1e-12) << name;
  }
}

TEST(Models, NitrogenOxidePressureFallIsMonotone) {
  const auto e = catalog_get("nitrogen_oxide");
  const auto traj = integrate(e.model, e.default_eta, 40.0);
  double prev = -1.0;
  for (double t : linspace(0.0, 40.0, 401)) {
    const double v = traj(t)(0);
    EXPECT_GE(v, prev);
    prev = v;
  }
  EXPECT_GT(traj(40.0)(0), 0.0);
}

TEST(Models, AlphaPineneConservesTotalMass) {
  // Every reaction converts one species into another, so sum_i x_i is constant.
  const auto e = catalog_get("alpha_pinene");
  const auto traj = integrate(e.model, e.default_eta, e.default_horizon);
  const double total = e.default_eta.xi.sum();
  for (double t : linspace(0.0, e.default_horizon, 50)) {
    EXPECT_NEAR(traj(t).sum(), total, 1e-6 * total);
  }
}

}  // namespace

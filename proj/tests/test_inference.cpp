/**
 * @file test_inference.cpp
 * @brief Residual variance, Fisher information and Wald intervals.
 */
#include <gtest/gtest.h>

#include <cmath>

#include "odeaccel/inference.hpp"
#include "odeaccel/models.hpp"
#include "test_support.hpp"

namespace {

using namespace odeaccel;
using detail::vec;

TEST(Sigma2, ZeroResidualsGiveZero) { EXPECT_EQ(sigma2_from_residuals(Matrix::Zero(2, 5)), 0.0); }

TEST(Sigma2, ScalarTwoObservations) {
  Matrix r(1, 2);
  r << 1.0, -1.0;
  EXPECT_DOUBLE_EQ(sigma2_from_residuals(r), 2.0);
}

TEST(Sigma2, TwoStatesThreeObservations) { EXPECT_DOUBLE_EQ(sigma2_from_residuals(Matrix::Ones(2, 3)), 1.5); }

TEST(Sigma2, NeedsTwoObservations) { EXPECT_THROW((void)sigma2_from_residuals(Matrix::Ones(1, 1)), Error); }

TEST(Sigma2, FromModelAndData) {
  const ParameterVector eta{vec({1.0}), vec({-1.0})};
  Dataset data = odeaccel::testing::noiseless_data(models::linear(), eta, {0.0, 0.5, 1.0});
  data.observations(0, 0) += 0.3;
  data.observations(0, 2) -= 0.3;
  EXPECT_NEAR(sigma2_hat(models::linear(), eta, data), 0.18 / 2.0, 1e-9);
}

TEST(Fisher, LinearInitialValueOnlyClosedForm) {
  const ParameterVector eta{vec({1.0}), vec({-1.0}), {true, false}};
  const auto f = fisher_info(models::linear(), eta, 1.0, 1.0);
  ASSERT_EQ(f.matrix.rows(), 1);
  EXPECT_NEAR(f.matrix(0, 0), (1.0 - std::exp(-2.0)) / 2.0, 1e-6);
  EXPECT_NEAR(f.matrix(0, 0), 0.4323, 1e-4);
  EXPECT_EQ(f.indices, (std::vector<std::size_t>{0}));
}

TEST(Fisher, DoublingVarianceHalvesInformation) {
  const auto entry = catalog_get("lotka_volterra");
  const auto a = fisher_info(entry.model, entry.default_eta, 0.01, 10.0);
  const auto b = fisher_info(entry.model, entry.default_eta, 0.02, 10.0);
  EXPECT_LT((a.matrix - 2.0 * b.matrix).cwiseAbs().maxCoeff(), 1e-12 * a.matrix.cwiseAbs().maxCoeff());
}

TEST(Fisher, InitialValueVarianceIndependentOfInitialValue) {
  // x = xi e^{theta t}: the xi-xi block scales with nothing that depends on xi
  // after inversion, so the asymptotic variance of xi is unchanged.
  auto var_xi = [](double xi) {
    const ParameterVector eta{vec({xi}), vec({-1.0})};
    const auto f = fisher_info(models::linear(), eta, 0.0025, 10.0);
    return inverse_fisher(f)(0, 0);
  };
  EXPECT_NEAR(var_xi(0.5), var_xi(1.0), 1e-6 * var_xi(1.0));
}

TEST(Fisher, SymmetricPositiveSemidefinite) {
  for (const auto& name : catalog_names()) {
    const auto entry = catalog_get(name);
    const auto f = fisher_info(entry.model, entry.default_eta, 1.0, entry.default_horizon);
    const double scale = f.matrix.cwiseAbs().maxCoeff();
    EXPECT_LE((f.matrix - f.matrix.transpose()).cwiseAbs().maxCoeff(), 1e-12 * scale) << name;
    const Eigen::SelfAdjointEigenSolver<Matrix> eig(f.matrix);
    EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-10 * f.matrix.trace()) << name;
  }
}

TEST(Fisher, MaskGivesPrincipalSubmatrix) {
  const auto entry = catalog_get("barnes");
  const auto full = fisher_info(entry.model, entry.default_eta, 0.5, 5.0);
  ParameterVector part = entry.default_eta;
  part.estimate_mask = {false, true, false, true, true};
  const auto sub = fisher_info(entry.model, part, 0.5, 5.0);
  const std::vector<Eigen::Index> keep{1, 3, 4};
  EXPECT_LT((sub.matrix - Matrix(full.matrix(keep, keep))).cwiseAbs().maxCoeff(), 1e-12 * full.matrix.norm());
}

TEST(Fisher, ObservedDesignMatchesHandSumAndApproachesIntegral) {
  const ParameterVector eta{vec({1.0}), vec({-1.0}), {true, false}};
  const std::vector<double> t{0.0, 0.5, 1.0};
  const auto f = fisher_info_observed(models::linear(), eta, 1.0, t);
  const double hand = (1.0 + std::exp(-1.0) + std::exp(-2.0)) / 3.0;
  EXPECT_NEAR(f.matrix(0, 0), hand, 1e-7);

  const auto dense = fisher_info_observed(models::linear(), eta, 1.0, linspace(0.0, 1.0, 4001));
  EXPECT_NEAR(dense.matrix(0, 0), (1.0 - std::exp(-2.0)) / 2.0, 1e-3);
}

TEST(Fisher, ObservedDesignIsInvariantToTimeOrder) {
  const auto entry = catalog_get("lotka_volterra");
  std::vector<double> t = linspace(0.0, 10.0, 11);
  const auto a = fisher_info_observed(entry.model, entry.default_eta, 0.01, t);
  std::reverse(t.begin(), t.end());
  const auto b = fisher_info_observed(entry.model, entry.default_eta, 0.01, t);
  EXPECT_LT((a.matrix - b.matrix).cwiseAbs().maxCoeff(), 1e-12 * a.matrix.cwiseAbs().maxCoeff());
}

TEST(Fisher, RejectsNonPositiveVariance) {
  const ParameterVector eta{vec({1.0}), vec({-1.0})};
  EXPECT_THROW((void)fisher_info(models::linear(), eta, 0.0, 1.0), Error);
  EXPECT_THROW((void)fisher_info_observed(models::linear(), eta, -1.0, std::vector<double>{1.0}), Error);
}

TEST(ConfidenceIntervals, WorkedExample) {
  // I^{-1}/n = 0.04 with n = 1 and I = 25.
  FisherMatrix f;
  f.matrix = Matrix::Constant(1, 1, 25.0);
  f.indices = {1};
  const ParameterVector eta{vec({0.0}), vec({1.0}), {false, true}};
  const auto ci = confidence_intervals(eta, f, 1, 0.95);
  ASSERT_EQ(ci.size(), 1U);
  EXPECT_EQ(ci[0].index, 1U);
  EXPECT_NEAR(ci[0].variance, 0.04, 1e-15);
  EXPECT_NEAR(ci[0].lower, 0.608, 1e-3);
  EXPECT_NEAR(ci[0].upper, 1.392, 1e-3);
  EXPECT_NEAR(normal_quantile_two_sided(0.95), 1.959964, 1e-6);
}

TEST(ConfidenceIntervals, HigherLevelStrictlyContainsLower) {
  FisherMatrix f;
  f.matrix = Matrix::Identity(2, 2) * 3.0;
  f.indices = {0, 1};
  const ParameterVector eta{vec({0.3}), vec({-2.0})};
  const auto a = confidence_intervals(eta, f, 20, 0.95);
  const auto b = confidence_intervals(eta, f, 20, 0.99);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_LT(b[k].lower, a[k].lower);
    EXPECT_GT(b[k].upper, a[k].upper);
    EXPECT_LE(a[k].lower, a[k].point);
    EXPECT_GE(a[k].upper, a[k].point);
  }
}

TEST(ConfidenceIntervals, SingularFisherIsReported) {
  FisherMatrix f;
  f.matrix = Matrix::Ones(2, 2);
  f.indices = {0, 1};
  const ParameterVector eta{vec({0.3}), vec({-2.0})};
  try {
    (void)confidence_intervals(eta, f, 10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SingularFisher);
  }
}

TEST(ConfidenceIntervals, RejectsInvalidLevel) {
  EXPECT_THROW((void)normal_quantile_two_sided(1.0), Error);
  EXPECT_THROW((void)normal_quantile_two_sided(0.0), Error);
}

}  // namespace

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <numbers>
#include <random>

#include "lapnet/calibration.hpp"
#include "lapnet/errors.hpp"
#include "lapnet/metrics.hpp"

using namespace lapnet;

TEST(GridSearch, UniqueMaximumOnGrid) {
  const auto r = grid_search([](double t) { return -std::pow(std::log10(t) - 1.0, 2); },
                             GridSpec{-5, 5, 41}, Direction::maximize);
  EXPECT_NEAR(r.best.prior_prec, 10.0, 1e-12);
  EXPECT_EQ(r.trace.size(), 41u);
}

TEST(GridSearch, ConstantObjectivePicksSmallestTau) {
  const auto r = grid_search([](double) { return 3.0; }, GridSpec{-2, 2, 5}, Direction::minimize);
  EXPECT_NEAR(r.best.prior_prec, 0.01, 1e-15);
}

TEST(GridSearch, SkipsNonFiniteAndFailsWhenAllAre) {
  const auto r = grid_search(
      [](double t) { return t > 1.0 ? std::nan("") : t; }, GridSpec{-1, 1, 3}, Direction::maximize);
  EXPECT_NEAR(r.best.prior_prec, 1.0, 1e-15);
  EXPECT_THROW(grid_search([](double) { return std::nan(""); }, GridSpec{}, Direction::maximize),
               CalibrationError);
  EXPECT_THROW((GridSpec{1, 0, 3}.validate()), DomainError);
}

TEST(Gradient, QuadraticBowlConverges) {
  const double a = std::log(3.0);
  const double b = std::log(0.2);
  const auto r = gradient_calibrate(
      [&](double lt, double ls) { return (lt - a) * (lt - a) + 2.0 * (ls - b) * (ls - b); },
      {1.0, 1.0}, Direction::minimize, GradientOptions{200, 0.1});
  EXPECT_NEAR(std::log(r.best.prior_prec), a, 1e-3);
  EXPECT_NEAR(std::log(r.best.obs_noise), b, 1e-3);
}

TEST(Gradient, ZeroGradientStartReturnsInit) {
  const auto r = gradient_calibrate([](double, double) { return 1.0; }, {2.0, 0.5},
                                    Direction::maximize, GradientOptions{20, 0.1});
  EXPECT_DOUBLE_EQ(r.best.prior_prec, 2.0);
  EXPECT_DOUBLE_EQ(r.best.obs_noise, 0.5);
}

TEST(Gradient, NonFiniteHaltsWithBestSoFar) {
  const auto r = gradient_calibrate(
      [](double lt, double) {
        return lt > 0.5 ? std::nan("") : lt;
      },
      {1.0, 1.0}, Direction::maximize, GradientOptions{50, 1.0, 1.0, false, false});
  EXPECT_TRUE(r.halted);
  EXPECT_TRUE(std::isfinite(r.best_objective));
  EXPECT_LE(std::log(r.best.prior_prec), 0.5);
}

TEST(Gradient, AnalyticGradientIsUsed) {
  const auto r = gradient_calibrate(
      [](double lt, double ls) { return -(lt * lt + ls * ls); }, {5.0, 5.0}, Direction::maximize,
      GradientOptions{300, 0.1}, LogGradient([](double lt, double ls) {
        return Vector{{-2.0 * lt, -2.0 * ls}};
      }));
  EXPECT_NEAR(r.best.prior_prec, 1.0, 1e-3);
}

TEST(GaussianNll, Values) {
  EXPECT_NEAR(gaussian_nll(0.3, 1.0, 0.3), 0.918939, 1e-6);
  EXPECT_NEAR(gaussian_nll(0.3, 1.0, 0.3), 0.5 * std::log(2 * std::numbers::pi), 1e-15);
  double prev = gaussian_nll(0.0, 1.0, 1.0);
  for (double v : {0.1, 0.01, 1e-4, 1e-8}) {
    const double cur = gaussian_nll(0.0, v, 1.0);
    EXPECT_GT(cur, prev);
    prev = cur;
  }
  EXPECT_GT(prev, 1e7);
}

TEST(GaussianNll, MatchesLogDensity) {
  const double mu = 0.4;
  const double var = 2.3;
  const double y = -1.1;
  const double density =
      std::exp(-0.5 * (y - mu) * (y - mu) / var) / std::sqrt(2 * std::numbers::pi * var);
  EXPECT_NEAR(gaussian_nll(mu, var, y), -std::log(density), 1e-6);
}

TEST(Ece, HandCases) {
  Matrix onehot(4, 2);
  onehot << 1, 0, 0, 1, 1, 0, 0, 1;
  EXPECT_DOUBLE_EQ(ece(onehot, Vector{{0, 1, 0, 1}}), 0.0);

  Matrix p(4, 2);
  p << 0.9, 0.1, 0.9, 0.1, 0.9, 0.1, 0.9, 0.1;
  EXPECT_NEAR(ece(p, Vector{{0, 0, 1, 1}}), 0.4, 1e-12);
  EXPECT_THROW(ece(Matrix(0, 2), Vector(0)), DomainError);
}

TEST(Ece, PermutationInvariant) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Index n = 50;
  Matrix p(n, 3);
  Vector labels(n);
  for (Index i = 0; i < n; ++i) {
    p.row(i) << u(rng), u(rng), u(rng);
    p.row(i) /= p.row(i).sum();
    labels(i) = static_cast<double>(i % 3);
  }
  std::vector<Index> perm(n);
  std::iota(perm.begin(), perm.end(), Index{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix q(n, 3);
  Vector l2(n);
  for (Index i = 0; i < n; ++i) {
    q.row(i) = p.row(perm[i]);
    l2(i) = labels(perm[i]);
  }
  EXPECT_NEAR(ece(p, labels), ece(q, l2), 1e-12);
}

TEST(Crps, ClosedFormAndLimits) {
  EXPECT_NEAR(crps_gaussian(0.2, 1.0, 0.2), 0.233695, 1e-6);
  EXPECT_NEAR(crps_gaussian(0.2, 1.0, 0.2), (std::sqrt(2.0) - 1.0) / std::sqrt(std::numbers::pi),
              1e-15);
  EXPECT_EQ(crps_gaussian(0.5, 0.0, 0.5), 0.0);
  EXPECT_NEAR(crps_gaussian(0.5, 1e-12, 0.5), 0.0, 1e-11);
}

TEST(Crps, MatchesMonteCarlo) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  const double mu = 0.3;
  const double sd = 1.4;
  const double y = 1.1;
  const int n = 1000000;
  double a = 0.0;
  double b = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = mu + sd * n01(rng);
    const double x2 = mu + sd * n01(rng);
    a += std::abs(x - y);
    b += std::abs(x - x2);
  }
  EXPECT_NEAR(crps_gaussian(mu, sd, y), a / n - 0.5 * b / n, 1e-3);
}

TEST(Classification, NllAndAccuracy) {
  Matrix p(2, 2);
  p << 0.8, 0.2, 0.4, 0.6;
  EXPECT_NEAR(categorical_nll(p, Vector{{0, 1}}), -0.5 * (std::log(0.8) + std::log(0.6)), 1e-15);
  EXPECT_DOUBLE_EQ(accuracy(p, Vector{{0, 0}}), 0.5);
  EXPECT_THROW(categorical_nll(p, Vector{{0, 2}}), DomainError);
}

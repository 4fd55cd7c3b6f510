#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "lapnet/calibration.hpp"
#include "lapnet/evidence.hpp"
#include "oracles.hpp"

using namespace lapnet;

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

struct Conjugate {
  Vector x{{0.5, -1.2, 2.0, 0.3, 1.1}};
  Vector y{{0.4, -1.0, 1.3, 0.5, 0.6}};
  ModelSpec model = oracle::linear_model(1, 1, false);
  Batch data() const { return {x, y}; }
  CurvEstimate curvature() const { return {FullCurvature{Matrix::Constant(1, 1, x.squaredNorm())}}; }
  double lml(double tau, double s2) const {
    const FlatVector theta{{oracle::conjugate_map(x, y, tau, s2)}};
    const double joint = joint_log_likelihood(model, theta, {data()}, {LossKind::mse}, {tau, s2});
    return log_marginal_likelihood(curvature(), {tau, s2}, joint).lml;
  }
};

}  // namespace

TEST(Joint, PriorOnlyNormalizer) {
  FitSummary fit;
  fit.dim = 3;
  const double tau = 2.5;
  EXPECT_NEAR(joint_log_likelihood(fit, {tau, 1.0}), 1.5 * std::log(tau / (2 * std::numbers::pi)),
              1e-14);
}

TEST(Joint, ExactFitAtZero) {
  const auto model = oracle::linear_model(1, 1, false);
  const Batch b{Matrix{{1.0}, {2.0}, {3.0}}, Matrix::Zero(3, 1)};
  const double tau = 0.7;
  const double j = joint_log_likelihood(model, FlatVector{{0.0}}, {b}, {LossKind::mse}, {tau, 1.0});
  EXPECT_NEAR(j, -1.5 * kLog2Pi + 0.5 * std::log(tau / (2 * std::numbers::pi)), 1e-13);
}

TEST(Joint, SingleDatumConjugate) {
  const auto model = oracle::linear_model(1, 1, false);
  const Batch b{Matrix{{2.0}}, Matrix{{1.0}}};
  const double theta = 0.3;
  const double tau = 1.5;
  const double s2 = 0.4;
  const double r = 1.0 - 2.0 * theta;
  const double expected = -0.5 * r * r / s2 - 0.5 * std::log(2 * std::numbers::pi * s2) -
                          0.5 * tau * theta * theta + 0.5 * std::log(tau / (2 * std::numbers::pi));
  EXPECT_NEAR(joint_log_likelihood(model, FlatVector{{theta}}, {b}, {LossKind::mse}, {tau, s2}),
              expected, 1e-13);
}

TEST(Lml, ZeroCurvatureIsPriorLogDet) {
  const CurvEstimate est{DiagonalCurvature{Vector::Zero(4)}};
  const double tau = 3.0;
  const auto r = log_marginal_likelihood(est, {tau, 1.0}, -2.0);
  EXPECT_NEAR(r.lml, -2.0 - 0.5 * (4 * std::log(tau) - 4 * kLog2Pi), 1e-13);
}

TEST(Lml, LowRankLogDetMatchesDenseCholesky) {
  const Index p = 20;
  const Matrix a = oracle::random_spd(p, 4);
  Eigen::SelfAdjointEigenSolver<Matrix> es(a);
  for (Index r = 1; r <= p; r += 3) {
    const Matrix u = es.eigenvectors().rightCols(r);
    const Vector s = es.eigenvalues().tail(r);
    const Hyperparams hp{0.3, 0.8};
    const Matrix h = u * s.asDiagonal() * u.transpose() / hp.obs_noise +
                     hp.prior_prec * Matrix::Identity(p, p);
    const Matrix l = Eigen::LLT<Matrix>(h).matrixL();
    const double dense = 2.0 * l.diagonal().array().log().sum();
    EXPECT_NEAR(log_det_precision({LowRankCurvature{u, s}}, hp), dense, 1e-8) << "rank " << r;
  }
}

TEST(Lml, ConjugateEvidenceOverTauGrid) {
  const Conjugate c;
  for (double tau : {1e-3, 0.1, 1.0, 7.0, 100.0}) {
    for (double s2 : {0.05, 0.5, 2.0}) {
      EXPECT_NEAR(c.lml(tau, s2), oracle::conjugate_evidence(c.x, c.y, tau, s2), 1e-8);
    }
  }
}

TEST(Lml, GridArgmaxMatchesAnalyticOptimum) {
  const Conjugate c;
  const double s2 = 0.05;
  const double tau_star = oracle::conjugate_optimal_tau(c.x, c.y, s2);
  const GridSpec grid{-5, 5, 401};
  const auto r = grid_search([&](double tau) { return c.lml(tau, s2); }, grid, Direction::maximize,
                             s2);
  const double step = (grid.log10_upper - grid.log10_lower) / static_cast<double>(grid.n - 1);
  EXPECT_LE(std::abs(std::log10(r.best.prior_prec) - std::log10(tau_star)), step);
}

TEST(Lml, ObjectiveFiniteAcrossRange) {
  const Conjugate c;
  const auto obj = lml_objective(c.curvature(), c.model, FlatVector{{0.6}}, {c.data()},
                                 {LossKind::mse}, ParamMask::all(1));
  for (double lt = std::log(1e-6); lt <= std::log(1e6); lt += 0.5) {
    EXPECT_TRUE(std::isfinite(obj(lt, 0.0)));
  }
}

TEST(Lml, FiniteDifferenceGradientMatchesAnalyticLowRank) {
  const Index p = 6;
  const Matrix a = oracle::random_spd(p, 2);
  Eigen::SelfAdjointEigenSolver<Matrix> es(a);
  const CurvEstimate est{LowRankCurvature{es.eigenvectors().rightCols(3), es.eigenvalues().tail(3)}};
  FitSummary fit;
  fit.loss_sum = 2.0;
  fit.sq_norm = 1.5;
  fit.n_outputs = 10;
  fit.dim = p;
  const auto obj = lml_objective(est, fit);
  const Vector s = es.eigenvalues().tail(3);
  const double lt = std::log(0.4);
  const double ls = std::log(0.7);
  const double tau = 0.4;
  const double s2 = 0.7;
  // d/dlog tau of: -tau/2 ||theta||^2 + P/2 log tau - 1/2 (P log tau + sum log1p(S/(s2 tau)))
  double d = -0.5 * tau * fit.sq_norm;
  for (Index i = 0; i < 3; ++i) d += 0.5 * s(i) / (s2 * tau + s(i));
  const Vector fd = finite_difference_gradient(obj, lt, ls);
  EXPECT_NEAR(fd(0), d, 1e-5);
}

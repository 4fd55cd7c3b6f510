#include <gtest/gtest.h>

#include <cmath>

#include "lapnet/errors.hpp"
#include "lapnet/net.hpp"
#include "lapnet/predictive.hpp"
#include "oracles.hpp"

using namespace lapnet;

namespace {

const PredictiveKind kAll[] = {PredictiveKind::mc_bridge, PredictiveKind::laplace_bridge,
                               PredictiveKind::mean_field_0, PredictiveKind::mean_field_1,
                               PredictiveKind::mean_field_2};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST(Predictive, SimplexOutputs) {
  const LogitGaussian lg{Vector{{0.3, -1.2, 2.0, 0.1}}, oracle::random_spd(4, 2, 0.1, 2.0)};
  for (auto k : kAll) {
    const Vector p = predictive(k, lg, {kDefaultMeanFieldScale, 2000, 3});
    EXPECT_NEAR(p.sum(), 1.0, 1e-12) << to_string(k);
    EXPECT_GE(p.minCoeff(), 0.0) << to_string(k);
  }
}

TEST(Predictive, ZeroCovarianceIsSoftmax) {
  const LogitGaussian lg{Vector{{0.3, -1.2, 2.0}}, Matrix::Zero(3, 3)};
  for (auto k : kAll) {
    EXPECT_LT((predictive(k, lg) - softmax(lg.mean)).cwiseAbs().maxCoeff(), 1e-12) << to_string(k);
  }
  EXPECT_LT((mc_bridge(lg, 50, 7) - softmax(lg.mean)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Predictive, NamesRoundTrip) {
  for (auto k : kAll) EXPECT_EQ(predictive_from_string(to_string(k)), k);
  EXPECT_THROW(predictive_from_string("probit"), ConfigError);
}

TEST(McBridge, SymmetricTwoClass) {
  const Vector p = mc_bridge({Vector::Zero(2), Matrix::Identity(2, 2)}, 1000000, 4);
  EXPECT_NEAR(p(0), 0.5, 0.002);
}

TEST(McBridge, MatchesQuadratureOracle) {
  const LogitGaussian lg{Vector{{0.8, -0.4}}, Matrix{{1.5, 0.3}, {0.3, 0.9}}};
  EXPECT_NEAR(mc_bridge(lg, 1000000, 5)(0), oracle::two_class_softmax_integral(lg.mean, lg.cov), 1e-3);
}

TEST(LaplaceBridge, UniformForSymmetricInput) {
  const Vector p = laplace_bridge({Vector::Zero(3), 2.0 * Matrix::Identity(3, 3)});
  EXPECT_EQ(p(0), p(1));
  EXPECT_EQ(p(1), p(2));
  EXPECT_NEAR(p(0), 1.0 / 3.0, 1e-15);
}

TEST(LaplaceBridge, TwoClassFormula) {
  // Independent evaluation of the Dirichlet moment match for C = 2,
  // mu = (1, 0), sigma^2 = (1, 1).
  const double c = 2.0;
  const double scale = std::sqrt(c / 2.0) / 2.0;
  const double m0 = std::sqrt(scale) * 1.0;
  const double m1 = 0.0;
  const double s2 = scale;
  const double sum_neg = std::exp(-m0) + std::exp(-m1);
  const double a0 = (1.0 - 2.0 / c + std::exp(m0) * sum_neg / (c * c)) / s2;
  const double a1 = (1.0 - 2.0 / c + std::exp(m1) * sum_neg / (c * c)) / s2;
  const Vector p = laplace_bridge({Vector{{1.0, 0.0}}, Matrix::Identity(2, 2)});
  EXPECT_NEAR(p(0), a0 / (a0 + a1), 1e-14);
  EXPECT_NEAR(p(0), sigmoid(std::sqrt(0.5)), 1e-14);
}

TEST(MeanField0, HandValues) {
  const Vector p = mean_field_0({Vector{{1.0, 0.0}}, Matrix::Zero(2, 2)});
  EXPECT_NEAR(p(0), 0.731059, 1e-6);
  EXPECT_NEAR(p(1), 0.268941, 1e-6);
  const Vector u = mean_field_0({Vector::Zero(4), Matrix::Identity(4, 4)});
  EXPECT_EQ(u.minCoeff(), u.maxCoeff());
}

TEST(MeanField0, MoreVarianceMovesTowardUniform) {
  double prev = 1.0;
  for (double s : {0.0, 0.5, 1.0, 2.0, 4.0, 8.0}) {
    const Vector p = mean_field_0({Vector{{1.5, -0.5}}, s * Matrix::Identity(2, 2)});
    const double dist = (p.array() - 0.5).abs().maxCoeff();
    EXPECT_LT(dist, prev);
    prev = dist;
  }
}

TEST(MeanField1, UniformAndTwoClassFormula) {
  const Vector u = mean_field_1({Vector::Zero(3), Matrix::Identity(3, 3)});
  EXPECT_EQ(u.minCoeff(), u.maxCoeff());
  // C = 2 with isotropic diagonal: p0 = sigmoid((m0 - m1) / sqrt(1 + lambda (s0 + s1))).
  const double lambda = kDefaultMeanFieldScale;
  const Vector p = mean_field_1({Vector{{0.9, -0.2}}, 0.7 * Matrix::Identity(2, 2)});
  EXPECT_NEAR(p(0), sigmoid(1.1 / std::sqrt(1.0 + lambda * 1.4)), 1e-14);
  // mean_field_0 scales each logit by its own variance instead of the pooled one.
  const Vector q = mean_field_0({Vector{{0.9, -0.2}}, 0.7 * Matrix::Identity(2, 2)});
  EXPECT_NEAR(q(0), sigmoid(1.1 / std::sqrt(1.0 + lambda * 0.7)), 1e-14);
}

TEST(MeanField2, PerfectCorrelationCancels) {
  const Vector mu{{0.4, -1.0, 1.3}};
  const Vector p = mean_field_2({mu, 2.5 * Matrix::Ones(3, 3)});
  EXPECT_LT((p - softmax(mu)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(MeanField2, DiagonalEqualsMeanField1) {
  const LogitGaussian lg{Vector{{0.4, -1.0, 1.3}}, Vector{{0.5, 1.0, 2.0}}.asDiagonal()};
  EXPECT_EQ(mean_field_2(lg), mean_field_1(lg));
}

TEST(MeanField2, MatchesQuadratureForModerateVariance) {
  for (double s : {0.25, 1.0, 2.0, 4.0}) {
    const LogitGaussian lg{Vector{{1.0, -0.5}}, Matrix{{s, 0.2 * s}, {0.2 * s, s}}};
    EXPECT_NEAR(mean_field_2(lg)(0), oracle::two_class_softmax_integral(lg.mean, lg.cov), 0.01)
        << "variance " << s;
  }
}

TEST(Predictive, RejectsBadShapes) {
  EXPECT_THROW(mean_field_0({Vector::Zero(2), Matrix::Zero(3, 3)}), DimensionError);
  EXPECT_THROW(mean_field_1({Vector::Zero(2), Matrix::Zero(2, 2)}, -1.0), DomainError);
}

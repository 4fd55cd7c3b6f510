#include <gtest/gtest.h>

#include <cmath>

#include "lapnet/errors.hpp"
#include "lapnet/fsp.hpp"
#include "oracles.hpp"

using namespace lapnet;

namespace {

Box interval(double lo, double hi) { return {Vector{{lo}}, Vector{{hi}}}; }

GPPrior matern(double variance, double lengthscale, double jitter) {
  GPPrior p;
  p.kernel = {KernelKind::matern52, variance, lengthscale, 1.0};
  p.jitter = jitter;
  return p;
}

Batch sine_batch(Index n, double lo, double hi) {
  Batch b{Matrix(n, 1), Matrix(n, 1)};
  for (Index i = 0; i < n; ++i) {
    const double x = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    b.inputs(i, 0) = x;
    b.targets(i, 0) = std::sin(2.0 * x);
  }
  return b;
}

}  // namespace

TEST(Kernels, MaternAtLengthscale) {
  const KernelSpec k{KernelKind::matern52, 1.0, 0.8, 1.0};
  const double r5 = std::sqrt(5.0);
  EXPECT_NEAR(k.at_distance(0.8), (1.0 + r5 + 5.0 / 3.0) * std::exp(-r5), 1e-14);
  EXPECT_NEAR(k.at_distance(0.8), 0.523994, 1e-6);
  EXPECT_DOUBLE_EQ(k.at_distance(0.0), 1.0);
}

TEST(Kernels, PeriodicRepeats) {
  const KernelSpec k{KernelKind::periodic, 2.0, 0.7, 1.3};
  const Vector a{{0.37}};
  const Vector b{{0.37 + 1.3}};
  EXPECT_NEAR(k(a, b), k(a, a), 1e-12);
  EXPECT_NEAR(k(a, a), 2.0, 1e-15);
  EXPECT_LT(k(a, Vector{{0.37 + 0.65}}), k(a, a));
}

TEST(Kernels, GramIsSymmetricPsd) {
  const KernelSpec k{KernelKind::matern52, 1.5, 0.4, 1.0};
  const Matrix x = oracle::random_matrix(15, 2, 3);
  const Matrix g = kernel_matrix(k, x);
  EXPECT_LT((g - g.transpose()).norm(), 1e-15);
  Eigen::SelfAdjointEigenSolver<Matrix> es(g);
  EXPECT_GT(es.eigenvalues().minCoeff(), -1e-10);
  EXPECT_THROW((KernelSpec{KernelKind::rbf, -1.0, 1.0, 1.0}.validate()), DomainError);
}

TEST(Halton, FirstPointsBaseTwo) {
  EXPECT_DOUBLE_EQ(radical_inverse(1, 2), 0.5);
  EXPECT_DOUBLE_EQ(radical_inverse(2, 2), 0.25);
  EXPECT_DOUBLE_EQ(radical_inverse(3, 2), 0.75);
  EXPECT_DOUBLE_EQ(radical_inverse(4, 2), 0.125);
  EXPECT_NEAR(radical_inverse(1, 3), 1.0 / 3.0, 1e-16);

  const auto c = sample_context(ContextSampler::halton, interval(-1.0, 3.0), 3, 0);
  EXPECT_DOUBLE_EQ(c.points(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(c.points(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(c.points(2, 0), 2.0);
  EXPECT_THROW(sample_context(ContextSampler::halton, interval(0, 1), 0, 0), DomainError);
}

TEST(Context, SamplersStayInBox) {
  const Box box{Vector{{-1.0, 2.0}}, Vector{{1.0, 5.0}}};
  for (auto s : {ContextSampler::uniform_box, ContextSampler::halton}) {
    const auto c = sample_context(s, box, 200, 4);
    ASSERT_EQ(c.points.rows(), 200);
    for (Index j = 0; j < 2; ++j) {
      EXPECT_GE(c.points.col(j).minCoeff(), box.lower(j));
      EXPECT_LE(c.points.col(j).maxCoeff(), box.upper(j));
    }
  }
  const Matrix batch = oracle::random_matrix(5, 2, 1);
  EXPECT_EQ(sample_context(ContextSampler::train_batch, box, 5, 0, batch).points, batch);
}

TEST(Regularizer, ZeroAtPriorMean) {
  const auto model = oracle::linear_model(1, 1, true);
  const auto c = sample_context(ContextSampler::halton, interval(-2, 2), 10, 0);
  EXPECT_EQ(fsp_regularizer(model, FlatVector::Zero(2), matern(1.0, 1.0, 1e-6), c), 0.0);
}

TEST(Regularizer, SinglePoint) {
  const auto model = oracle::linear_model(1, 1, true);
  const ContextSet c{Matrix{{0.5}}, ContextSampler::halton};
  const FlatVector theta{{2.0, -0.3}};  // f(0.5) = 0.7
  EXPECT_NEAR(fsp_regularizer(model, theta, matern(2.5, 1.0, 0.0), c), 0.5 * 0.49 / 2.5, 1e-14);
}

TEST(Regularizer, NonNegativeAndGradientMatchesDifferences) {
  const auto model = ModelSpec::mlp(1, {6}, 2, ActivationKind::tanh);
  const auto c = sample_context(ContextSampler::halton, interval(-2, 2), 12, 0);
  const auto prior = matern(1.0, 0.7, 1e-4);
  const auto ctx = prepare_context(prior, c.points, 2);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const FlatVector theta = flatten(init_params(model, seed));
    FlatVector grad;
    const double v = fsp_regularizer(model, theta, ctx, &grad);
    EXPECT_GE(v, 0.0);
    const FlatVector fd = oracle::central_difference(
        [&](const Vector& t) { return fsp_regularizer(model, t, ctx, nullptr); }, theta, 1e-6);
    EXPECT_LT(oracle::rel_err(grad, fd), 1e-5);
  }
}

TEST(FspTrain, Deterministic) {
  const auto model = ModelSpec::mlp(1, {8}, 1, ActivationKind::tanh);
  const FlatVector init = flatten(init_params(model, 2));
  FspTrainOptions opts;
  opts.steps = 50;
  opts.batch_size = 8;
  opts.n_context = 8;
  opts.domain = interval(-2, 2);
  const Batch data = sine_batch(20, -1, 1);
  const auto prior = matern(1.0, 1.0, 1e-4);
  const auto a = fsp_train(model, init, prior, data, {LossKind::mse}, opts, 5);
  const auto b = fsp_train(model, init, prior, data, {LossKind::mse}, opts, 5);
  EXPECT_EQ(a.theta, b.theta);
  EXPECT_EQ(a.objective_trace, b.objective_trace);
  ASSERT_EQ(a.objective_trace.size(), 50u);
  EXPECT_LT(a.objective_trace.back(), a.objective_trace.front());
}

TEST(FspPosterior, VarianceBoundAtContext) {
  const auto model = ModelSpec::mlp(1, {10}, 1, ActivationKind::tanh);
  const FlatVector theta = flatten(init_params(model, 3));
  const auto c = sample_context(ContextSampler::halton, interval(-3, 3), 40, 0);
  const auto prior = matern(0.8, 0.6, 1e-4);
  const auto post = fsp_posterior(model, prior, c, sine_batch(15, -1, 1), {LossKind::mse}, theta);
  EXPECT_FALSE(post.bound_unmet);
  EXPECT_LE(post.truncation, post.rank);
  EXPECT_LE(fsp_marginal_variance(model, post, c.points).maxCoeff(), 0.8);
  const auto again = fsp_posterior(model, prior, c, sine_batch(15, -1, 1), {LossKind::mse}, theta);
  EXPECT_EQ(post.factor, again.factor);
}

TEST(FspPosterior, LinearModelMatchesConjugateGaussian) {
  // For f(x) = w x + b the context prior induces the parameter precision
  // Phi_c^T K^-1 Phi_c, and the posterior is Gaussian-linear in closed form.
  const auto model = oracle::linear_model(1, 1, true);
  const FlatVector theta{{0.4, 0.1}};
  const auto c = sample_context(ContextSampler::halton, interval(-2, 2), 12, 0);
  const double jitter = 1e-3;
  const auto prior = matern(1.0, 1.0, jitter);
  const Batch data = sine_batch(6, -1, 1);
  FspPosteriorOptions opts;
  opts.obs_noise = 0.3;
  const auto post = fsp_posterior(model, prior, c, data, {LossKind::mse}, theta, opts);

  auto features = [](const Matrix& x) {
    Matrix phi(x.rows(), 2);
    phi.col(0) = x.col(0);
    phi.col(1).setOnes();
    return phi;
  };
  Matrix k = kernel_matrix(prior.kernel, c.points);
  k.diagonal().array() += jitter;
  const Matrix phic = features(c.points);
  const Matrix phid = features(data.inputs);
  const Matrix a = phic.transpose() * k.ldlt().solve(phic) + phid.transpose() * phid / opts.obs_noise;
  const Matrix cov = a.inverse();

  ASSERT_EQ(post.truncation, 0);
  const Matrix test = Vector::LinSpaced(9, -4.0, 4.0);
  const Vector got = fsp_marginal_variance(model, post, test);
  const Matrix phit = features(test);
  for (Index i = 0; i < test.rows(); ++i) {
    const double expected = phit.row(i) * cov * phit.row(i).transpose();
    EXPECT_NEAR(got(i), expected, 0.05 * expected) << "x = " << test(i, 0);
  }
}

#include "lapnet/predictive.hpp"

#include <cmath>
#include <random>

#include "lapnet/errors.hpp"
#include "lapnet/linalg.hpp"
#include "lapnet/net.hpp"

namespace lapnet {

namespace {

void check(const LogitGaussian& lg) {
  const Index c = lg.mean.size();
  if (c < 1) throw DimensionError("logit Gaussian has no classes");
  if (lg.cov.rows() != c || lg.cov.cols() != c) {
    throw DimensionError("logit covariance must be C x C");
  }
}

// Shared by both pairwise mean-field variants.
template <class PooledVar>
Vector pairwise(const LogitGaussian& lg, double lambda, PooledVar pooled) {
  check(lg);
  if (!(lambda > 0.0)) throw DomainError("mean-field scale must be positive");
  const Index c = lg.mean.size();
  Vector p(c);
  for (Index i = 0; i < c; ++i) {
    double denom = 1.0;
    for (Index k = 0; k < c; ++k) {
      if (k == i) continue;
      const double v = std::max(pooled(i, k), 0.0);
      denom += std::exp((lg.mean(k) - lg.mean(i)) / std::sqrt(1.0 + lambda * v));
    }
    p(i) = 1.0 / denom;
  }
  return p / p.sum();
}

}  // namespace

std::string to_string(PredictiveKind kind) {
  switch (kind) {
    case PredictiveKind::mc_bridge: return "mc_bridge";
    case PredictiveKind::laplace_bridge: return "laplace_bridge";
    case PredictiveKind::mean_field_0: return "mean_field_0";
    case PredictiveKind::mean_field_1: return "mean_field_1";
    case PredictiveKind::mean_field_2: return "mean_field_2";
  }
  return "unknown";
}

PredictiveKind predictive_from_string(const std::string& name) {
  for (auto k : {PredictiveKind::mc_bridge, PredictiveKind::laplace_bridge,
                 PredictiveKind::mean_field_0, PredictiveKind::mean_field_1,
                 PredictiveKind::mean_field_2}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown predictive: " + name);
}

Vector mc_bridge(const LogitGaussian& lg, Index n_samples, std::uint64_t seed) {
  check(lg);
  if (n_samples < 1) throw DomainError("mc_bridge needs at least one sample");
  const Index c = lg.mean.size();
  if (lg.cov.cwiseAbs().maxCoeff() == 0.0) return softmax(lg.mean);
  const Matrix lower = cholesky_with_jitter(0.5 * (lg.cov + lg.cov.transpose())).lower;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector acc = Vector::Zero(c);
  Vector eps(c);
  for (Index s = 0; s < n_samples; ++s) {
    for (Index i = 0; i < c; ++i) eps(i) = normal(rng);
    acc += softmax(lg.mean + lower * eps);
  }
  acc /= static_cast<double>(n_samples);
  return acc / acc.sum();
}

Vector laplace_bridge(const LogitGaussian& lg) {
  check(lg);
  const Index c = lg.mean.size();
  if (c == 1) return Vector::Ones(1);
  const Vector var = lg.cov.diagonal();
  const double total = var.sum();
  if (!(total > 0.0)) return softmax(lg.mean);
  if (var.minCoeff() <= 0.0) throw DomainError("laplace_bridge needs positive variances");
  const double cd = static_cast<double>(c);
  const double scale = std::sqrt(cd / 2.0) / total;
  const Vector mu = std::sqrt(scale) * lg.mean;
  const Vector s2 = scale * var;
  // Shift by max(mu) for range: e^{mu_i} sum_c e^{-mu_c} is shift invariant.
  const double shift = mu.maxCoeff();
  const double sum_neg = (-(mu.array() - shift)).exp().sum();
  const Vector alpha =
      ((1.0 - 2.0 / cd) + (mu.array() - shift).exp() * sum_neg / (cd * cd)) /
      s2.array();
  return alpha / alpha.sum();
}

Vector mean_field_0(const LogitGaussian& lg, double lambda) {
  check(lg);
  if (!(lambda > 0.0)) throw DomainError("mean-field scale must be positive");
  const Vector var = lg.cov.diagonal().cwiseMax(0.0);
  const Vector scaled =
      lg.mean.array() / (1.0 + lambda * var.array()).sqrt();
  return softmax(scaled);
}

Vector mean_field_1(const LogitGaussian& lg, double lambda) {
  return pairwise(lg, lambda, [&](Index i, Index k) {
    return lg.cov(k, k) + lg.cov(i, i);
  });
}

Vector mean_field_2(const LogitGaussian& lg, double lambda) {
  return pairwise(lg, lambda, [&](Index i, Index k) {
    return lg.cov(k, k) + lg.cov(i, i) - 2.0 * lg.cov(i, k);
  });
}

Vector predictive(PredictiveKind kind, const LogitGaussian& lg,
                  const PredictiveOptions& opts) {
  switch (kind) {
    case PredictiveKind::mc_bridge: return mc_bridge(lg, opts.n_samples, opts.seed);
    case PredictiveKind::laplace_bridge: return laplace_bridge(lg);
    case PredictiveKind::mean_field_0: return mean_field_0(lg, opts.lambda);
    case PredictiveKind::mean_field_1: return mean_field_1(lg, opts.lambda);
    case PredictiveKind::mean_field_2: return mean_field_2(lg, opts.lambda);
  }
  throw ConfigError("unknown predictive");
}

}  // namespace lapnet

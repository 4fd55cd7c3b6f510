#pragma once

// Approximations of E[softmax(z)] for z ~ N(mu, Sigma) over C classes.

#include <cstdint>
#include <numbers>
#include <string>

#include "lapnet/types.hpp"

namespace lapnet {

struct LogitGaussian {
  Vector mean;
  Matrix cov;
};

inline constexpr double kDefaultMeanFieldScale = std::numbers::pi / 8.0;

enum class PredictiveKind { mc_bridge, laplace_bridge, mean_field_0, mean_field_1, mean_field_2 };

std::string to_string(PredictiveKind kind);
PredictiveKind predictive_from_string(const std::string& name);

/// Average of softmax over `n_samples` seeded draws.
Vector mc_bridge(const LogitGaussian& lg, Index n_samples, std::uint64_t seed);

/// Dirichlet moment matching on the diagonal of Sigma. Falls back to
/// softmax(mu) when the total variance is zero.
Vector laplace_bridge(const LogitGaussian& lg);

/// softmax(mu_i / sqrt(1 + lambda Sigma_ii)).
Vector mean_field_0(const LogitGaussian& lg, double lambda = kDefaultMeanFieldScale);

/// p_i = 1 / (1 + sum_{k != i} exp((mu_k - mu_i) / sqrt(1 + lambda (Sigma_kk + Sigma_ii)))),
/// renormalized.
Vector mean_field_1(const LogitGaussian& lg, double lambda = kDefaultMeanFieldScale);

/// As mean_field_1 with the variance of mu_k - mu_i, clamped at zero.
Vector mean_field_2(const LogitGaussian& lg, double lambda = kDefaultMeanFieldScale);

struct PredictiveOptions {
  double lambda = kDefaultMeanFieldScale;
  Index n_samples = 1000;
  std::uint64_t seed = 0;
};

Vector predictive(PredictiveKind kind, const LogitGaussian& lg,
                  const PredictiveOptions& opts = {});

}  // namespace lapnet

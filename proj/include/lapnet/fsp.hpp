#pragma once

// Laplace with a Gaussian-process prior placed on network outputs at a set of
// context points: RKHS-regularized training and the low-rank posterior.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lapnet/kernels.hpp"
#include "lapnet/net.hpp"
#include "lapnet/optim.hpp"
#include "lapnet/pushforward.hpp"

namespace lapnet {

enum class ContextSampler { uniform_box, halton, train_batch };

std::string to_string(ContextSampler s);
ContextSampler context_sampler_from_string(const std::string& name);

struct Box {
  Vector lower;
  Vector upper;

  Index dim() const { return lower.size(); }
  void validate() const;
};

struct ContextSet {
  Matrix points;  // n_c x input_dim
  ContextSampler sampler = ContextSampler::halton;
};

/// Radical inverse of `index` in `base` (index 1 in base 2 gives 1/2).
double radical_inverse(std::uint64_t index, std::uint64_t base);

/// uniform_box: seeded uniforms in the box. halton: points seed+1 .. seed+n of
/// the Halton sequence with bases 2, 3, 5, ... mapped to the box.
/// train_batch: echoes `batch_inputs`.
ContextSet sample_context(ContextSampler sampler, const Box& box, Index n,
                          std::uint64_t seed, const Matrix& batch_inputs = Matrix());

/// Cholesky of the prior Gram matrix at the context points, reused by the
/// regularizer and its gradient.
struct ContextPrior {
  Matrix points;
  Matrix lower;  // jittered Cholesky factor of K(C, C)
  Matrix mean;   // n_c x outputs
};

ContextPrior prepare_context(const GPPrior& prior, const Matrix& points, Index outputs);

/// 1/2 sum over outputs of (f(C) - m(C))^T K(C, C)^-1 (f(C) - m(C)).
double fsp_regularizer(const ModelSpec& model, const FlatVector& theta,
                       const GPPrior& prior, const ContextSet& context);

/// Value and parameter gradient of the regularizer.
double fsp_regularizer(const ModelSpec& model, const FlatVector& theta,
                       const ContextPrior& ctx, FlatVector* gradient);

struct FspTrainOptions {
  Index steps = 2000;
  Index batch_size = 32;
  Index n_context = 32;
  ContextSampler sampler = ContextSampler::uniform_box;
  Box domain;
  /// Gaussian likelihood variance for mse; ignored for cross-entropy.
  double obs_noise = 0.01;
  AdamOptions adam{};
};

struct FspTrainResult {
  FlatVector theta;
  std::vector<double> objective_trace;  // per step
  bool diverged = false;
};

/// Minibatch Adam on (n / b) * NLL(batch) + regularizer(fresh context) per
/// step. Deterministic given the seed.
FspTrainResult fsp_train(const ModelSpec& model, const FlatVector& init,
                         const GPPrior& prior, const Batch& data, const LossSpec& loss,
                         const FspTrainOptions& opts, std::uint64_t seed);

struct FspPosteriorOptions {
  Index max_lanczos_rank = 500;
  double lanczos_tol = 1e-10;
  double eig_clip = 1e-10;
  double obs_noise = 0.01;
  std::uint64_t seed = 0;
};

struct FspPosterior {
  FlatVector theta;
  Matrix factor;         // P x (r - k), covariance = factor factor^T
  Index truncation = 0;  // k
  Index rank = 0;        // r
  Vector singular_values;  // D_M
  Vector eigenvalues;      // D_A, ascending
  Index lanczos_rank = 0;
  /// No k < r satisfied the variance bound.
  bool bound_unmet = false;
};

FspPosterior fsp_posterior(const ModelSpec& model, const GPPrior& prior,
                           const ContextSet& context, const Batch& data,
                           const LossSpec& loss, const FlatVector& theta,
                           const FspPosteriorOptions& opts = {});

/// Per-input output Gaussians under the linearized FSP posterior.
std::vector<OutputGaussian> fsp_predict(const ModelSpec& model, const FspPosterior& post,
                                        const Matrix& inputs);

/// Marginal output variances J S S^T J^T at every row of `inputs`, flattened as
/// row n * C + c.
Vector fsp_marginal_variance(const ModelSpec& model, const FspPosterior& post,
                             const Matrix& inputs);

}  // namespace lapnet

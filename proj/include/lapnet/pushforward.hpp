#pragma once

// Weight-space uncertainty mapped to the network outputs.

#include <cstdint>
#include <vector>

#include "lapnet/curvature.hpp"
#include "lapnet/net.hpp"
#include "lapnet/posterior.hpp"

namespace lapnet {

struct OutputGaussian {
  Vector mean;
  Matrix cov;
};

/// S x C matrix of sampled outputs.
struct Ensemble {
  Matrix samples;
  std::uint64_t seed = 0;
};

struct EnsembleStats {
  Vector mean;
  Vector std;
  Matrix cov;
};

/// mean f(x, theta*), covariance J H^-1 J^T with J the masked C x P Jacobian.
OutputGaussian linear_pushforward(const ModelSpec& model, const FlatVector& theta,
                                  const PosteriorState& posterior,
                                  const ParamMask& mask, const Vector& x);

/// One OutputGaussian per input row; a single covariance product serves all rows.
std::vector<OutputGaussian> linear_pushforward(const ModelSpec& model,
                                               const FlatVector& theta,
                                               const PosteriorState& posterior,
                                               const ParamMask& mask,
                                               const Matrix& inputs);

/// Row s is f(x, theta_s) for posterior samples theta_s.
Ensemble nonlinear_pushforward(const ModelSpec& model, const FlatVector& theta,
                               const PosteriorState& posterior, const ParamMask& mask,
                               const Vector& x, Index n_samples, std::uint64_t seed);

/// One ensemble per input row; every row uses the same weight samples.
std::vector<Ensemble> nonlinear_pushforward(const ModelSpec& model,
                                            const FlatVector& theta,
                                            const PosteriorState& posterior,
                                            const ParamMask& mask,
                                            const Matrix& inputs, Index n_samples,
                                            std::uint64_t seed);

/// Mean, standard deviation and unbiased (S - 1) covariance.
EnsembleStats ensemble_stats(const Ensemble& e);

}  // namespace lapnet

#pragma once

// Laplace evidence:
//   lml = joint(theta*) - 1/2 (log|H| - P log 2pi)
// The joint includes the Gaussian likelihood normalizer -(N C / 2) log(2 pi sigma^2)
// for mse and the prior normalizer (P / 2) log(tau / 2 pi). Both are needed for
// the objective to be meaningful as a function of (tau, sigma^2). mse is the
// halved squared error, so the data term is -(1 / sigma^2) * sum_n mse_n.

#include <functional>
#include <string>
#include <vector>

#include "lapnet/curvature.hpp"
#include "lapnet/net.hpp"
#include "lapnet/posterior.hpp"

namespace lapnet {

struct EvidenceReport {
  double joint = 0.0;
  double complexity = 0.0;  // -1/2 (log|H| - P log 2pi)
  double lml = 0.0;
  std::string structure;
};

/// Sufficient statistics of the data fit at theta*, independent of (tau, sigma^2).
struct FitSummary {
  double loss_sum = 0.0;  // sum of per-datum losses
  double sq_norm = 0.0;   // ||theta*||^2 over the masked coordinates
  Index n_outputs = 0;    // N * C, the number of scalar observations
  Index dim = 0;          // P of the (masked) posterior
  LossKind loss = LossKind::mse;
};

FitSummary summarize_fit(const ModelSpec& model, const FlatVector& theta,
                         const std::vector<Batch>& data, const LossSpec& loss,
                         const ParamMask& mask);

double joint_log_likelihood(const FitSummary& fit, const Hyperparams& hp);

/// All parameters are probabilistic.
double joint_log_likelihood(const ModelSpec& model, const FlatVector& theta,
                            const std::vector<Batch>& data, const LossSpec& loss,
                            const Hyperparams& hp);

/// log|Curv / sigma^2 + tau I| by structure: Cholesky for Full, sum of logs
/// for Diagonal, the determinant lemma for LowRank.
double log_det_precision(const CurvEstimate& estimate, const Hyperparams& hp);

EvidenceReport log_marginal_likelihood(const CurvEstimate& estimate,
                                       const Hyperparams& hp, double joint);

/// (log tau, log sigma^2) -> lml. For cross-entropy sigma^2 is pinned to 1 and
/// the second argument is ignored. The estimate is held fixed.
using HyperObjective = std::function<double(double, double)>;

HyperObjective lml_objective(const CurvEstimate& estimate, const ModelSpec& model,
                             const FlatVector& theta, const std::vector<Batch>& data,
                             const LossSpec& loss, const ParamMask& mask);

HyperObjective lml_objective(const CurvEstimate& estimate, const FitSummary& fit);

}  // namespace lapnet

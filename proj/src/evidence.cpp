#include "lapnet/evidence.hpp"

#include <cmath>

#include "lapnet/errors.hpp"
#include "lapnet/linalg.hpp"

namespace lapnet {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)

}  // namespace

FitSummary summarize_fit(const ModelSpec& model, const FlatVector& theta,
                         const std::vector<Batch>& data, const LossSpec& loss,
                         const ParamMask& mask) {
  if (mask.full_dim() != theta.size()) throw DimensionError("mask does not match theta");
  FitSummary fit;
  fit.loss = loss.kind;
  fit.dim = mask.dim();
  fit.sq_norm = mask.select(theta).squaredNorm();
  for (const auto& b : data) {
    fit.loss_sum += total_loss(model, theta, b, loss);
    fit.n_outputs += b.size() * model.output_dim;
  }
  return fit;
}

double joint_log_likelihood(const FitSummary& fit, const Hyperparams& hp) {
  hp.validate();
  const double tau = hp.prior_prec;
  const double prior = -0.5 * tau * fit.sq_norm +
                       0.5 * static_cast<double>(fit.dim) * (std::log(tau) - kLog2Pi);
  if (fit.loss == LossKind::cross_entropy) return -fit.loss_sum + prior;
  const double s2 = hp.obs_noise;
  return -fit.loss_sum / s2 -
         0.5 * static_cast<double>(fit.n_outputs) * (kLog2Pi + std::log(s2)) + prior;
}

double joint_log_likelihood(const ModelSpec& model, const FlatVector& theta,
                            const std::vector<Batch>& data, const LossSpec& loss,
                            const Hyperparams& hp) {
  return joint_log_likelihood(
      summarize_fit(model, theta, data, loss, ParamMask::all(theta.size())), hp);
}

double log_det_precision(const CurvEstimate& estimate, const Hyperparams& hp) {
  hp.validate();
  const double tau = hp.prior_prec;
  const double inv_noise = 1.0 / hp.obs_noise;
  double out = 0.0;
  if (const auto* f = std::get_if<FullCurvature>(&estimate.value)) {
    Matrix h = f->matrix * inv_noise;
    h.diagonal().array() += tau;
    out = log_det_from_cholesky(cholesky_with_jitter(h).lower);
  } else if (const auto* d = std::get_if<DiagonalCurvature>(&estimate.value)) {
    const Vector prec = (d->diagonal * inv_noise).array() + tau;
    if (prec.size() > 0 && !(prec.minCoeff() > 0.0)) {
      throw NumericalError("diagonal precision not positive");
    }
    out = prec.array().log().sum();
  } else {
    const auto& l = std::get<LowRankCurvature>(estimate.value);
    const double p = static_cast<double>(l.U.rows());
    out = p * std::log(tau) + (l.S.array() * inv_noise / tau).log1p().sum();
  }
  if (!std::isfinite(out)) throw NumericalError("log-determinant is not finite");
  return out;
}

EvidenceReport log_marginal_likelihood(const CurvEstimate& estimate,
                                       const Hyperparams& hp, double joint) {
  EvidenceReport r;
  r.structure = estimate.kind_name();
  r.joint = joint;
  const double p = static_cast<double>(estimate.dim());
  r.complexity = -0.5 * (log_det_precision(estimate, hp) - p * kLog2Pi);
  r.lml = r.joint + r.complexity;
  return r;
}

HyperObjective lml_objective(const CurvEstimate& estimate, const FitSummary& fit) {
  if (estimate.dim() != fit.dim) {
    throw DimensionError("estimate and fit summary have different dimensions");
  }
  const bool classification = fit.loss == LossKind::cross_entropy;
  return [estimate, fit, classification](double log_tau, double log_s2) {
    Hyperparams hp{std::exp(log_tau), classification ? 1.0 : std::exp(log_s2)};
    return log_marginal_likelihood(estimate, hp, joint_log_likelihood(fit, hp)).lml;
  };
}

HyperObjective lml_objective(const CurvEstimate& estimate, const ModelSpec& model,
                             const FlatVector& theta, const std::vector<Batch>& data,
                             const LossSpec& loss, const ParamMask& mask) {
  return lml_objective(estimate, summarize_fit(model, theta, data, loss, mask));
}

}  // namespace lapnet

#include "lapnet/pushforward.hpp"

#include "lapnet/errors.hpp"

namespace lapnet {

namespace {

void check_shapes(const ModelSpec& model, const FlatVector& theta,
                  const PosteriorState& posterior, const ParamMask& mask) {
  if (theta.size() != model.param_count() || mask.full_dim() != theta.size()) {
    throw DimensionError("pushforward: theta, model and mask sizes disagree");
  }
  if (mask.dim() != posterior.dim()) {
    throw DimensionError("pushforward: posterior dimension differs from mask");
  }
}

}  // namespace

std::vector<OutputGaussian> linear_pushforward(const ModelSpec& model,
                                               const FlatVector& theta,
                                               const PosteriorState& posterior,
                                               const ParamMask& mask,
                                               const Matrix& inputs) {
  check_shapes(model, theta, posterior, mask);
  const Index c = model.output_dim;
  const Index n = inputs.rows();
  const Matrix mean = forward(model, theta, inputs);
  std::vector<OutputGaussian> out(static_cast<std::size_t>(n));
  if (posterior.dim() == 0) {
    for (Index i = 0; i < n; ++i) {
      out[i] = {mean.row(i).transpose(), Matrix::Zero(c, c)};
    }
    return out;
  }
  const Matrix jac = mask.select_cols(jacobian(model, theta, inputs));
  const Matrix cj = cov_mp(posterior, jac.transpose());
  for (Index i = 0; i < n; ++i) {
    Matrix cov = jac.middleRows(i * c, c) * cj.middleCols(i * c, c);
    out[i] = {mean.row(i).transpose(), 0.5 * (cov + cov.transpose())};
  }
  return out;
}

OutputGaussian linear_pushforward(const ModelSpec& model, const FlatVector& theta,
                                  const PosteriorState& posterior,
                                  const ParamMask& mask, const Vector& x) {
  return linear_pushforward(model, theta, posterior, mask, Matrix(x.transpose()))
      .front();
}

std::vector<Ensemble> nonlinear_pushforward(const ModelSpec& model,
                                            const FlatVector& theta,
                                            const PosteriorState& posterior,
                                            const ParamMask& mask,
                                            const Matrix& inputs, Index n_samples,
                                            std::uint64_t seed) {
  check_shapes(model, theta, posterior, mask);
  if (n_samples < 1) throw DomainError("pushforward needs at least one sample");
  const Index c = model.output_dim;
  const Index n = inputs.rows();
  std::vector<Ensemble> out(static_cast<std::size_t>(n));
  for (auto& e : out) e = {Matrix(n_samples, c), seed};
  std::vector<FlatVector> thetas;
  if (posterior.dim() == 0) {
    thetas.assign(static_cast<std::size_t>(n_samples), theta);
  } else {
    thetas = sample_flat(posterior, theta, mask, seed, n_samples);
  }
  for (Index s = 0; s < n_samples; ++s) {
    const Matrix f = forward(model, thetas[s], inputs);
    for (Index i = 0; i < n; ++i) out[i].samples.row(s) = f.row(i);
  }
  return out;
}

Ensemble nonlinear_pushforward(const ModelSpec& model, const FlatVector& theta,
                               const PosteriorState& posterior, const ParamMask& mask,
                               const Vector& x, Index n_samples, std::uint64_t seed) {
  return nonlinear_pushforward(model, theta, posterior, mask, Matrix(x.transpose()),
                               n_samples, seed)
      .front();
}

EnsembleStats ensemble_stats(const Ensemble& e) {
  const Index s = e.samples.rows();
  if (s < 2) throw DomainError("ensemble statistics need at least two samples");
  EnsembleStats st;
  st.mean = e.samples.colwise().mean().transpose();
  const Matrix centered = e.samples.rowwise() - st.mean.transpose();
  st.cov = centered.transpose() * centered / static_cast<double>(s - 1);
  st.std = st.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  return st;
}

}  // namespace lapnet

#include "lapnet/fsp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "lapnet/eigensolvers.hpp"
#include "lapnet/errors.hpp"
#include "lapnet/linalg.hpp"

namespace lapnet {

std::string to_string(ContextSampler s) {
  switch (s) {
    case ContextSampler::uniform_box: return "uniform_box";
    case ContextSampler::halton: return "halton";
    case ContextSampler::train_batch: return "train_batch";
  }
  return "unknown";
}

ContextSampler context_sampler_from_string(const std::string& name) {
  if (name == "uniform_box") return ContextSampler::uniform_box;
  if (name == "halton") return ContextSampler::halton;
  if (name == "train_batch") return ContextSampler::train_batch;
  throw ConfigError("unknown context sampler: " + name);
}

void Box::validate() const {
  if (lower.size() != upper.size() || lower.size() == 0) {
    throw DimensionError("box bounds must be non-empty and of equal length");
  }
  if (!((upper - lower).array() > 0.0).all()) {
    throw DomainError("box upper bounds must exceed lower bounds");
  }
}

double radical_inverse(std::uint64_t index, std::uint64_t base) {
  double out = 0.0;
  double f = 1.0 / static_cast<double>(base);
  while (index > 0) {
    out += f * static_cast<double>(index % base);
    index /= base;
    f /= static_cast<double>(base);
  }
  return out;
}

namespace {

std::uint64_t nth_prime(Index n) {
  std::uint64_t candidate = 1;
  Index found = -1;
  while (found < n) {
    ++candidate;
    bool prime = true;
    for (std::uint64_t d = 2; d * d <= candidate; ++d) {
      if (candidate % d == 0) {
        prime = false;
        break;
      }
    }
    if (prime) ++found;
  }
  return candidate;
}

}  // namespace

ContextSet sample_context(ContextSampler sampler, const Box& box, Index n,
                          std::uint64_t seed, const Matrix& batch_inputs) {
  if (n < 1) throw DomainError("context set needs at least one point");
  ContextSet out;
  out.sampler = sampler;
  if (sampler == ContextSampler::train_batch) {
    if (batch_inputs.rows() == 0) throw DomainError("train_batch context needs inputs");
    out.points = batch_inputs;
    return out;
  }
  box.validate();
  const Index d = box.dim();
  const Vector width = box.upper - box.lower;
  out.points.resize(n, d);
  if (sampler == ContextSampler::uniform_box) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < d; ++j) out.points(i, j) = box.lower(j) + width(j) * unit(rng);
    }
  } else {
    for (Index j = 0; j < d; ++j) {
      const std::uint64_t base = nth_prime(j);
      for (Index i = 0; i < n; ++i) {
        const double u = radical_inverse(seed + static_cast<std::uint64_t>(i) + 1, base);
        out.points(i, j) = box.lower(j) + width(j) * u;
      }
    }
  }
  return out;
}

ContextPrior prepare_context(const GPPrior& prior, const Matrix& points, Index outputs) {
  ContextPrior ctx;
  ctx.points = points;
  Matrix gram = kernel_matrix(prior.kernel, points);
  gram.diagonal().array() += prior.jitter * prior.kernel.variance;
  ctx.lower = cholesky_with_jitter(gram).lower;
  ctx.mean = prior.mean_at(points, outputs);
  return ctx;
}

double fsp_regularizer(const ModelSpec& model, const FlatVector& theta,
                       const ContextPrior& ctx, FlatVector* gradient) {
  const ForwardCache cache = forward_cache(model, theta, ctx.points);
  const Matrix resid = cache.output - ctx.mean;
  const auto lower = ctx.lower.triangularView<Eigen::Lower>();
  const Matrix z = lower.transpose().solve(lower.solve(resid));
  if (gradient) *gradient = vjp(model, theta, cache, z);
  return 0.5 * resid.cwiseProduct(z).sum();
}

double fsp_regularizer(const ModelSpec& model, const FlatVector& theta,
                       const GPPrior& prior, const ContextSet& context) {
  if (context.points.rows() < 1) throw DomainError("context set is empty");
  return fsp_regularizer(model, theta,
                         prepare_context(prior, context.points, model.output_dim), nullptr);
}

namespace {

// Data term sum_n -log p(y_n | f_n) without constants, and its gradient.
double data_term(const ModelSpec& model, const FlatVector& theta, const Batch& batch,
                 const LossSpec& loss, double obs_noise, FlatVector* gradient) {
  const double scale = loss.kind == LossKind::mse ? 1.0 / obs_noise : 1.0;
  if (gradient) *gradient = scale * grad(model, theta, batch, loss);
  return scale * total_loss(model, theta, batch, loss);
}

}  // namespace

FspTrainResult fsp_train(const ModelSpec& model, const FlatVector& init,
                         const GPPrior& prior, const Batch& data, const LossSpec& loss,
                         const FspTrainOptions& opts, std::uint64_t seed) {
  data.validate();
  const Index n = data.size();
  if (opts.batch_size < 1 || opts.batch_size > n) {
    throw DomainError("batch size must lie in [1, n]");
  }
  if (!(opts.obs_noise > 0.0)) throw DomainError("observation noise must be positive");
  if (init.size() != model.param_count()) throw DimensionError("init has wrong length");

  FspTrainResult out;
  out.theta = init;
  Adam adam(init.size(), opts.adam);
  std::mt19937_64 rng(seed);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  Index cursor = n;
  const double scale = static_cast<double>(n) / static_cast<double>(opts.batch_size);

  for (Index step = 0; step < opts.steps; ++step) {
    if (cursor + opts.batch_size > n) {
      for (Index i = n - 1; i > 0; --i) {
        std::swap(order[i], order[rng() % static_cast<std::uint64_t>(i + 1)]);
      }
      cursor = 0;
    }
    Batch batch{Matrix(opts.batch_size, data.inputs.cols()),
                Matrix(opts.batch_size, data.targets.cols())};
    for (Index i = 0; i < opts.batch_size; ++i) {
      batch.inputs.row(i) = data.inputs.row(order[cursor + i]);
      batch.targets.row(i) = data.targets.row(order[cursor + i]);
    }
    cursor += opts.batch_size;

    const std::uint64_t ctx_seed =
        opts.sampler == ContextSampler::halton
            ? static_cast<std::uint64_t>(step * opts.n_context)
            : rng();
    const ContextSet context =
        sample_context(opts.sampler, opts.domain, opts.n_context, ctx_seed, batch.inputs);
    const ContextPrior ctx = prepare_context(prior, context.points, model.output_dim);

    FlatVector g_data;
    FlatVector g_reg;
    const double value =
        scale * data_term(model, out.theta, batch, loss, opts.obs_noise, &g_data) +
        fsp_regularizer(model, out.theta, ctx, &g_reg);
    out.objective_trace.push_back(value);
    const FlatVector g = scale * g_data + g_reg;
    if (!std::isfinite(value) || !g.allFinite()) {
      out.diverged = true;
      break;
    }
    FlatVector next = out.theta;
    adam.step(next, g);
    if (!next.allFinite()) {
      out.diverged = true;
      break;
    }
    out.theta = std::move(next);
  }
  return out;
}

namespace {

// Stacked per-output Gram matrix: entry (n*C + c, m*C + d) = K(x_n, x_m) [c == d].
Matrix stacked_gram(const KernelSpec& k, const Matrix& points, Index outputs) {
  const Matrix g = kernel_matrix(k, points);
  if (outputs == 1) return g;
  Matrix out = Matrix::Zero(g.rows() * outputs, g.cols() * outputs);
  for (Index c = 0; c < outputs; ++c) {
    out(Eigen::seqN(c, g.rows(), outputs), Eigen::seqN(c, g.cols(), outputs)) = g;
  }
  return out;
}

// Block-diagonal output Hessian of -log p(y | f) for one datum.
Matrix output_precision(const LossSpec& loss, const Vector& f, double obs_noise) {
  if (loss.kind == LossKind::mse) {
    return Matrix::Identity(f.size(), f.size()) / obs_noise;
  }
  return loss_output_hessian(loss, f);
}

}  // namespace

FspPosterior fsp_posterior(const ModelSpec& model, const GPPrior& prior,
                           const ContextSet& context, const Batch& data,
                           const LossSpec& loss, const FlatVector& theta,
                           const FspPosteriorOptions& opts) {
  if (context.points.rows() < 1) throw DomainError("context set is empty");
  if (!(opts.obs_noise > 0.0)) throw DomainError("observation noise must be positive");
  const Index c_out = model.output_dim;
  const Index p = theta.size();

  // Prior precision factor L with L L^T ~ K^-1 on a Krylov subspace of K.
  const Matrix jc = jacobian(model, theta, context.points);
  Matrix gram = stacked_gram(prior.kernel, context.points, c_out);
  gram.diagonal().array() += prior.jitter * prior.kernel.variance;
  const Index nc = gram.rows();
  Vector start = jc * Vector::Ones(p);
  const bool usable = start.norm() > 0.0 && start.allFinite();
  LanczosProcess proc([&gram](const Vector& v) -> Vector { return gram * v; }, nc,
                      usable ? start : random_unit_vector(nc, opts.seed), false, opts.seed,
                      opts.lanczos_tol);
  const Index max_rank = std::min(nc, opts.max_lanczos_rank);
  while (proc.size() < max_rank && proc.step()) {
  }
  Eigen::SelfAdjointEigenSolver<Matrix> tri(proc.tridiagonal());
  const Vector ritz = tri.eigenvalues();
  const double ritz_max = ritz.size() > 0 ? ritz.maxCoeff() : 0.0;
  std::vector<Index> keep;
  for (Index i = 0; i < ritz.size(); ++i) {
    if (ritz(i) > opts.eig_clip * ritz_max) keep.push_back(i);
  }
  if (keep.empty()) throw NumericalError("prior Gram matrix has no positive Ritz values");
  Matrix lfac(nc, static_cast<Index>(keep.size()));
  const Matrix q = proc.basis();
  for (std::size_t j = 0; j < keep.size(); ++j) {
    lfac.col(static_cast<Index>(j)) =
        q * tri.eigenvectors().col(keep[j]) / std::sqrt(ritz(keep[j]));
  }

  // Parameter-space prior precision J^T L L^T J = U_M D_M^2 U_M^T.
  const Matrix m = jc.transpose() * lfac;
  Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU);
  const Vector sv = svd.singularValues();
  Index r = 0;
  const double sv_max = sv.size() > 0 ? sv(0) : 0.0;
  while (r < sv.size() && sv(r) > opts.eig_clip * sv_max) ++r;
  if (r == 0) throw NumericalError("context Jacobian carries no prior information");
  const Matrix um = svd.matrixU().leftCols(r);
  const Vector dm = sv.head(r);

  // A = D_M^2 + sum_i U_M^T J_i^T Lambda_i J_i U_M.
  Matrix a = dm.cwiseAbs2().asDiagonal();
  if (data.size() > 0) {
    const Matrix f = forward(model, theta, data.inputs);
    const Matrix b = jacobian(model, theta, data.inputs) * um;
    for (Index i = 0; i < data.size(); ++i) {
      const Matrix lam = output_precision(loss, f.row(i).transpose(), opts.obs_noise);
      const auto bi = b.middleRows(i * c_out, c_out);
      a.noalias() += bi.transpose() * lam * bi;
    }
  }
  a = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(a);
  const Vector da_all = eig.eigenvalues();
  const double da_max = da_all.cwiseAbs().maxCoeff();
  std::vector<Index> pos;
  for (Index i = 0; i < da_all.size(); ++i) {
    if (da_all(i) > opts.eig_clip * da_max) pos.push_back(i);
  }
  if (pos.empty()) throw NumericalError("degenerate FSP posterior: A has no positive eigenvalues");

  // S = U_M U_A D_A^-1/2, columns by ascending eigenvalue (largest variance first).
  const Index rs = static_cast<Index>(pos.size());
  Matrix s(p, rs);
  Vector da(rs);
  for (Index j = 0; j < rs; ++j) {
    da(j) = da_all(pos[static_cast<std::size_t>(j)]);
    s.col(j) = um * eig.eigenvectors().col(pos[static_cast<std::size_t>(j)]) / std::sqrt(da(j));
  }

  FspPosterior post;
  post.theta = theta;
  post.rank = rs;
  post.singular_values = dm;
  post.eigenvalues = da;
  post.lanczos_rank = proc.size();

  // Smallest k with diag(J_c S_{:,k:} S_{:,k:}^T J_c^T) <= prior variance everywhere.
  const Matrix g = jc * s;
  const Vector prior_var = Vector::Constant(nc, prior.kernel.variance);  // k(c, c)
  Matrix suffix = Matrix::Zero(g.rows(), rs + 1);
  for (Index j = rs - 1; j >= 0; --j) suffix.col(j) = suffix.col(j + 1) + g.col(j).cwiseAbs2();
  Index k = 0;
  while (k < rs && !(suffix.col(k).array() <= prior_var.array()).all()) ++k;
  // Confirm with the same arithmetic used for predictions; rounding can differ
  // from the suffix sums in the last bit.
  for (;; ++k) {
    post.truncation = k;
    post.factor = s.rightCols(rs - k);
    if (k == rs) break;
    if ((fsp_marginal_variance(model, post, context.points).array() <= prior_var.array()).all()) {
      break;
    }
  }
  post.bound_unmet = post.truncation == rs;
  return post;
}

Vector fsp_marginal_variance(const ModelSpec& model, const FspPosterior& post,
                             const Matrix& inputs) {
  const Matrix j = jacobian(model, post.theta, inputs);
  if (post.factor.cols() == 0) return Vector::Zero(j.rows());
  return (j * post.factor).rowwise().squaredNorm();
}

std::vector<OutputGaussian> fsp_predict(const ModelSpec& model, const FspPosterior& post,
                                        const Matrix& inputs) {
  const Index c = model.output_dim;
  const Matrix mean = forward(model, post.theta, inputs);
  const Matrix j = jacobian(model, post.theta, inputs);
  const Matrix g = post.factor.cols() > 0 ? Matrix(j * post.factor) : Matrix::Zero(j.rows(), 1);
  std::vector<OutputGaussian> out(static_cast<std::size_t>(inputs.rows()));
  for (Index i = 0; i < inputs.rows(); ++i) {
    const auto gi = g.middleRows(i * c, c);
    out[i] = {mean.row(i).transpose(), gi * gi.transpose()};
  }
  return out;
}

}  // namespace lapnet

#include "lapnet/posterior.hpp"

#include <atomic>
#include <cmath>
#include <random>
#include <sstream>

#include "lapnet/errors.hpp"
#include "lapnet/linalg.hpp"

namespace lapnet {

namespace {

std::atomic<std::size_t> g_cov_products{0};

template <class... Fs>
struct overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
overloaded(Fs...) -> overloaded<Fs...>;

void check_rows(const PosteriorState& state, Index rows) {
  if (rows != state.dim()) {
    throw DimensionError("posterior of size " + std::to_string(state.dim()) +
                         " applied to length " + std::to_string(rows));
  }
}

}  // namespace

void Hyperparams::validate() const {
  if (!(prior_prec > 0.0) || !std::isfinite(prior_prec)) {
    throw DomainError("prior precision must be positive and finite");
  }
  if (!(obs_noise > 0.0) || !std::isfinite(obs_noise)) {
    throw DomainError("observation noise must be positive and finite");
  }
}

Index PosteriorState::dim() const {
  return std::visit(overloaded{
                        [](const FullPosterior& f) { return f.precision.rows(); },
                        [](const DiagonalPosterior& d) { return d.precision.size(); },
                        [](const LowRankPosterior& l) { return l.U.rows(); },
                    },
                    factors);
}

PosteriorState posterior_fn(const CurvEstimate& estimate, const Hyperparams& hp) {
  hp.validate();
  const double tau = hp.prior_prec;
  const double inv_noise = 1.0 / hp.obs_noise;
  PosteriorState state{hp, DiagonalPosterior{}};
  std::visit(
      overloaded{
          [&](const FullCurvature& c) {
            if (!c.matrix.allFinite()) throw NumericalError("curvature has non-finite entries");
            FullPosterior f;
            f.precision = c.matrix * inv_noise;
            f.precision.diagonal().array() += tau;
            JitteredCholesky chol = cholesky_with_jitter(f.precision);
            f.precision.diagonal().array() += chol.jitter;
            f.chol = std::move(chol.lower);
            f.jitter = chol.jitter;
            state.factors = std::move(f);
          },
          [&](const DiagonalCurvature& c) {
            if (!c.diagonal.allFinite()) throw NumericalError("curvature has non-finite entries");
            DiagonalPosterior d{(c.diagonal * inv_noise).array() + tau};
            if (d.precision.size() > 0 && !(d.precision.minCoeff() > 0.0)) {
              std::ostringstream os;
              os << "diagonal precision not positive (min " << d.precision.minCoeff() << ")";
              throw NumericalError(os.str());
            }
            state.factors = std::move(d);
          },
          [&](const LowRankCurvature& c) {
            if (!c.S.allFinite() || !c.U.allFinite()) {
              throw NumericalError("curvature has non-finite entries");
            }
            LowRankPosterior l;
            l.U = c.U;
            l.S = c.S * inv_noise;
            l.S_bar = (l.S.array() + tau).rsqrt() - 1.0 / std::sqrt(tau);
            state.factors = std::move(l);
          },
      },
      estimate.value);
  return state;
}

Matrix precision_mp(const PosteriorState& state, const Matrix& v) {
  check_rows(state, v.rows());
  const double tau = state.hp.prior_prec;
  return std::visit(
      overloaded{
          [&](const FullPosterior& f) -> Matrix { return f.precision * v; },
          [&](const DiagonalPosterior& d) -> Matrix { return d.precision.asDiagonal() * v; },
          [&](const LowRankPosterior& l) -> Matrix {
            return tau * v + l.U * (l.S.asDiagonal() * (l.U.transpose() * v));
          },
      },
      state.factors);
}

Matrix cov_mp(const PosteriorState& state, const Matrix& v) {
  check_rows(state, v.rows());
  g_cov_products.fetch_add(1);
  const double tau = state.hp.prior_prec;
  return std::visit(
      overloaded{
          [&](const FullPosterior& f) -> Matrix {
            const auto lower = f.chol.triangularView<Eigen::Lower>();
            return lower.transpose().solve(lower.solve(v));
          },
          [&](const DiagonalPosterior& d) -> Matrix {
            return d.precision.cwiseInverse().asDiagonal() * v;
          },
          [&](const LowRankPosterior& l) -> Matrix {
            // Woodbury: tau^-1 v - tau^-1 U (S^-1 + tau^-1 I)^-1 U^T v tau^-1
            const double inv_tau = 1.0 / tau;
            const Vector inner = (l.S.cwiseInverse().array() + inv_tau).inverse();
            return inv_tau * v -
                   inv_tau * inv_tau * (l.U * (inner.asDiagonal() * (l.U.transpose() * v)));
          },
      },
      state.factors);
}

Matrix scale_mp(const PosteriorState& state, const Matrix& v) {
  check_rows(state, v.rows());
  const double tau = state.hp.prior_prec;
  return std::visit(
      overloaded{
          [&](const FullPosterior& f) -> Matrix {
            return f.chol.transpose().triangularView<Eigen::Upper>().solve(v);
          },
          [&](const DiagonalPosterior& d) -> Matrix {
            return d.precision.cwiseSqrt().cwiseInverse().asDiagonal() * v;
          },
          [&](const LowRankPosterior& l) -> Matrix {
            return v / std::sqrt(tau) +
                   l.U * (l.S_bar.asDiagonal() * (l.U.transpose() * v));
          },
      },
      state.factors);
}

Vector precision_vp(const PosteriorState& state, const Vector& v) {
  return precision_mp(state, v);
}

Vector cov_vp(const PosteriorState& state, const Vector& v) {
  return cov_mp(state, v);
}

Vector scale_vp(const PosteriorState& state, const Vector& v) {
  return scale_mp(state, v);
}

Matrix dense_covariance(const PosteriorState& state) {
  const Index p = state.dim();
  Matrix c = cov_mp(state, Matrix::Identity(p, p));
  return 0.5 * (c + c.transpose());
}

std::vector<FlatVector> sample_flat(const PosteriorState& state,
                                    const FlatVector& theta_star,
                                    const ParamMask& mask, std::uint64_t seed,
                                    Index n) {
  if (n < 1) throw DomainError("sample count must be at least 1");
  if (mask.full_dim() != theta_star.size() || mask.dim() != state.dim()) {
    throw DimensionError("sample: mask, posterior and theta* sizes disagree");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix eps(state.dim(), n);
  for (Index s = 0; s < n; ++s) {
    for (Index i = 0; i < state.dim(); ++i) eps(i, s) = normal(rng);
  }
  const Matrix delta = scale_mp(state, eps);
  std::vector<FlatVector> out;
  out.reserve(static_cast<std::size_t>(n));
  for (Index s = 0; s < n; ++s) {
    out.push_back(theta_star + mask.embed(delta.col(s)));
  }
  return out;
}

std::vector<ParamTree> sample(const PosteriorState& state,
                              const ParamTree& theta_star, std::uint64_t seed,
                              Index n) {
  const FlatVector flat = flatten(theta_star);
  std::vector<ParamTree> out;
  for (const auto& s : sample_flat(state, flat, ParamMask::all(flat.size()), seed, n)) {
    out.push_back(unflatten(s, theta_star));
  }
  return out;
}

std::size_t cov_product_count() { return g_cov_products.load(); }

}  // namespace lapnet

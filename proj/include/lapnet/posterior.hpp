#pragma once

// Structured Gaussian weight posteriors N(theta*, H^-1) with
//   H = Curv / sigma^2 + tau * I.
// Classification uses sigma^2 = 1, which leaves the curvature unscaled.

#include <cstdint>
#include <variant>
#include <vector>

#include "lapnet/curvature.hpp"
#include "lapnet/net.hpp"

namespace lapnet {

struct Hyperparams {
  double prior_prec = 1.0;  // tau
  double obs_noise = 1.0;   // sigma^2

  void validate() const;
};

struct FullPosterior {
  Matrix precision;  // H, including any Cholesky jitter
  Matrix chol;       // lower factor R with H = R R^T
  double jitter = 0.0;
};

struct DiagonalPosterior {
  Vector precision;  // d_i = c_i / sigma^2 + tau
};

struct LowRankPosterior {
  Matrix U;
  Vector S;      // scaled eigenvalues S / sigma^2
  Vector S_bar;  // (S + tau)^-1/2 - tau^-1/2
};

struct PosteriorState {
  Hyperparams hp;
  std::variant<FullPosterior, DiagonalPosterior, LowRankPosterior> factors;

  Index dim() const;
};

PosteriorState posterior_fn(const CurvEstimate& estimate, const Hyperparams& hp);

Vector precision_vp(const PosteriorState& state, const Vector& v);
Vector cov_vp(const PosteriorState& state, const Vector& v);
/// L v with L L^T = H^-1.
Vector scale_vp(const PosteriorState& state, const Vector& v);

/// Column-wise versions of the three maps.
Matrix precision_mp(const PosteriorState& state, const Matrix& v);
Matrix cov_mp(const PosteriorState& state, const Matrix& v);
Matrix scale_mp(const PosteriorState& state, const Matrix& v);

/// Dense H^-1, for small P.
Matrix dense_covariance(const PosteriorState& state);

/// theta_s = theta* + embed(L eps_s) with eps_s ~ N(0, I) from `seed`.
std::vector<FlatVector> sample_flat(const PosteriorState& state,
                                    const FlatVector& theta_star,
                                    const ParamMask& mask, std::uint64_t seed,
                                    Index n);

std::vector<ParamTree> sample(const PosteriorState& state,
                              const ParamTree& theta_star, std::uint64_t seed,
                              Index n);

/// Process-wide count of covariance products (cov_vp/cov_mp calls). Lets
/// callers check that a pipeline never inverts the precision.
std::size_t cov_product_count();

}  // namespace lapnet

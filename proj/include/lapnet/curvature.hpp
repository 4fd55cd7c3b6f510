#pragma once

// Matrix-free curvature operators (GGN and Hessian over a dataset) and the
// three structural estimators that compress them: full, diagonal, low-rank.

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "lapnet/net.hpp"
#include "lapnet/types.hpp"

namespace lapnet {

enum class CurvatureKind { ggn, hessian, generic };

/// Symmetric linear map v -> C v on R^P. Copies share the apply function and
/// the matvec counter.
class CurvatureOperator {
 public:
  using ApplyFn = std::function<Vector(const Vector&)>;

  CurvatureOperator(Index dim, CurvatureKind kind, ApplyFn fn);

  Vector apply(const Vector& v) const;
  Vector operator()(const Vector& v) const { return apply(v); }

  Index dim() const { return dim_; }
  CurvatureKind kind() const { return kind_; }

  /// Number of apply() calls since construction or the last reset.
  std::size_t matvecs() const { return counter_->load(); }
  void reset_matvecs() const { counter_->store(0); }

 private:
  Index dim_;
  CurvatureKind kind_;
  std::shared_ptr<const ApplyFn> fn_;
  std::shared_ptr<std::atomic<std::size_t>> counter_;
};

/// Wraps an explicit symmetric matrix.
CurvatureOperator dense_operator(Matrix m);
CurvatureOperator identity_operator(Index dim);

/// v -> sum_n J_n^T Lambda_n J_n v with Lambda_n the output Hessian of the loss
/// at f(x_n, theta). Batches are visited in the given order.
CurvatureOperator ggn_vp(const ModelSpec& model, const LossSpec& loss,
                         const std::vector<Batch>& data,
                         const FlatVector& theta);

/// v -> Hessian(sum_n loss_n) v.
CurvatureOperator hessian_vp(const ModelSpec& model, const LossSpec& loss,
                             const std::vector<Batch>& data,
                             const FlatVector& theta);

/// Coordinate subset of R^P. Coordinates outside the subset are treated as
/// deterministic by the posterior code.
class ParamMask {
 public:
  static ParamMask all(Index full_dim);
  static ParamMask range(Index full_dim, Index begin, Index end);
  static ParamMask last_layer(const ModelSpec& model);
  static ParamMask none(Index full_dim);

  Index full_dim() const { return full_dim_; }
  Index dim() const { return static_cast<Index>(indices_.size()); }
  bool is_full() const { return dim() == full_dim_; }
  const std::vector<Index>& indices() const { return indices_; }

  Vector select(const Vector& full) const;
  /// Zero-padded embedding of a subset vector into R^P.
  Vector embed(const Vector& sub) const;
  /// Keeps the columns of a (rows x P) matrix that belong to the subset.
  Matrix select_cols(const Matrix& m) const;

 private:
  Index full_dim_ = 0;
  std::vector<Index> indices_;
};

/// The operator M C M^T acting on the masked coordinates only.
CurvatureOperator restrict_to(const CurvatureOperator& op, const ParamMask& mask);

// ---------------------------------------------------------------------------
// Estimates

struct FullCurvature {
  Matrix matrix;
};

struct DiagonalCurvature {
  Vector diagonal;
};

/// Top eigenpairs: orthonormal columns in U, eigenvalues S > 0 descending.
struct LowRankCurvature {
  Matrix U;
  Vector S;
};

struct CurvEstimate {
  std::variant<FullCurvature, DiagonalCurvature, LowRankCurvature> value;
  bool converged = true;
  std::size_t matvecs = 0;

  Index dim() const;
  std::string kind_name() const;
};

inline constexpr Index kDefaultFullCap = 20000;

/// Column i is op(e_i); the result is symmetrized. Throws ResourceError when
/// P exceeds `cap`.
CurvEstimate estimate_full(const CurvatureOperator& op,
                           Index cap = kDefaultFullCap);

/// Entry i is e_i^T op(e_i).
CurvEstimate estimate_diagonal(const CurvatureOperator& op);

struct LanczosOptions {
  Index rank = 10;
  std::uint64_t seed = 0;
  double tol = 1e-10;
  Index max_iters = 1000;
};

struct LobpcgOptions {
  Index rank = 10;
  Index block_size = 0;  // 0 means block_size = rank
  std::uint64_t seed = 0;
  double tol = 1e-10;
  Index max_iters = 1000;
};

/// Top-R Ritz pairs with full reorthogonalization. Eigenvalues below
/// 1e-10 * max(S) are discarded, so the returned rank can be smaller than R.
CurvEstimate estimate_lanczos(const CurvatureOperator& op,
                              const LanczosOptions& opts);

/// Top-R eigenpairs by locally optimal block preconditioned conjugate
/// gradients (no preconditioner).
CurvEstimate estimate_lobpcg(const CurvatureOperator& op,
                             const LobpcgOptions& opts);

/// Dense symmetric matrix represented by an estimate.
Matrix to_dense(const CurvEstimate& est);

/// {"kind": "full|diagonal|low_rank", "data": ..., "rank": R,
///  "converged": bool, "matvecs": n}
nlohmann::ordered_json estimate_to_json(const CurvEstimate& est);
CurvEstimate estimate_from_json(const nlohmann::ordered_json& j);

}  // namespace lapnet

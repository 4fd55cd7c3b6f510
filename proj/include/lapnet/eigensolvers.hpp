#pragma once

// Krylov and block eigensolvers for symmetric operators given only as
// matrix-vector products.

#include <cstdint>
#include <functional>

#include "lapnet/types.hpp"

namespace lapnet {

using MatVec = std::function<Vector(const Vector&)>;

/// Lanczos tridiagonalization A Q = Q T with full reorthogonalization.
/// On breakdown (invariant subspace found) the process either stops or, when
/// `restart` is set, continues from a fresh seeded vector orthogonal to Q, in
/// which case T is block tridiagonal with a zero coupling.
class LanczosProcess {
 public:
  LanczosProcess(MatVec apply, Index dim, Vector start, bool restart,
                 std::uint64_t seed, double breakdown_tol = 1e-12);

  /// Runs one iteration. Returns false once no further vector can be added.
  bool step();

  Index size() const { return static_cast<Index>(alpha_.size()); }
  bool exhausted() const { return exhausted_; }
  /// Norm of the residual coupling Q to the next Krylov vector.
  double next_beta() const { return next_beta_; }

  /// Basis vectors computed so far (dim x size()).
  Matrix basis() const { return q_.leftCols(size()); }
  /// Diagonal and off-diagonal of T.
  const std::vector<double>& alpha() const { return alpha_; }
  const std::vector<double>& beta() const { return beta_; }
  Matrix tridiagonal() const;

 private:
  bool add_vector(Vector v);

  MatVec apply_;
  Index dim_;
  bool restart_;
  std::uint64_t seed_;
  std::uint64_t restarts_ = 0;
  double breakdown_tol_;
  double scale_ = 0.0;
  Matrix q_;
  std::vector<double> alpha_;
  std::vector<double> beta_;
  Vector residual_;
  double next_beta_ = 0.0;
  bool exhausted_ = false;
};

/// Uniformly distributed unit vector from a seeded generator.
Vector random_unit_vector(Index dim, std::uint64_t seed);

/// Sorts descending, drops eigenvalues <= clip * max, and flips each vector so
/// its first nonzero component is positive.
void canonicalize_eigenpairs(Matrix& vectors, Vector& values, double clip);

}  // namespace lapnet

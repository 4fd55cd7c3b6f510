#include "lapnet/eigensolvers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "lapnet/curvature.hpp"
#include "lapnet/errors.hpp"

namespace lapnet {

Vector random_unit_vector(Index dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(dim);
  for (Index i = 0; i < dim; ++i) v(i) = normal(rng);
  const double n = v.norm();
  return n > 0.0 ? Vector(v / n) : v;
}

void canonicalize_eigenpairs(Matrix& vectors, Vector& values, double clip) {
  const Index k = values.size();
  std::vector<Index> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return values(a) > values(b); });
  const double top = k > 0 ? values(order.front()) : 0.0;
  std::vector<Index> kept;
  for (Index i : order) {
    if (values(i) > 0.0 && values(i) > clip * top) kept.push_back(i);
  }
  Matrix u(vectors.rows(), static_cast<Index>(kept.size()));
  Vector s(static_cast<Index>(kept.size()));
  for (std::size_t c = 0; c < kept.size(); ++c) {
    const Index col = static_cast<Index>(c);
    u.col(col) = vectors.col(kept[c]);
    s(col) = values(kept[c]);
    const double thresh = 1e-12 * u.col(col).norm();
    for (Index r = 0; r < u.rows(); ++r) {
      if (std::abs(u(r, col)) > thresh) {
        if (u(r, col) < 0.0) u.col(col) = -u.col(col);
        break;
      }
    }
  }
  vectors = std::move(u);
  values = std::move(s);
}

// ---------------------------------------------------------------------------
// LanczosProcess

LanczosProcess::LanczosProcess(MatVec apply, Index dim, Vector start,
                               bool restart, std::uint64_t seed,
                               double breakdown_tol)
    : apply_(std::move(apply)),
      dim_(dim),
      restart_(restart),
      seed_(seed),
      breakdown_tol_(breakdown_tol) {
  if (start.size() != dim) throw DimensionError("Lanczos start vector has wrong length");
  q_.resize(dim, 0);
  const double n = start.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    if (!restart_) throw DomainError("Lanczos start vector must be nonzero");
    start = random_unit_vector(dim, seed_ + (++restarts_));
  } else {
    start /= n;
  }
  if (dim == 0) {
    exhausted_ = true;
    return;
  }
  add_vector(std::move(start));
}

bool LanczosProcess::add_vector(Vector v) {
  const Index k = q_.cols();
  q_.conservativeResize(Eigen::NoChange, k + 1);
  q_.col(k) = std::move(v);
  return true;
}

bool LanczosProcess::step() {
  if (exhausted_) return false;
  const Index j = size();
  const Vector v = q_.col(j);
  Vector w = apply_(v);
  const double a = v.dot(w);
  alpha_.push_back(a);
  scale_ = std::max(scale_, std::abs(a));

  // Full reorthogonalization against every basis vector, done twice.
  const auto basis = q_.leftCols(j + 1);
  for (int pass = 0; pass < 2; ++pass) w -= basis * (basis.transpose() * w);

  const double b = w.norm();
  scale_ = std::max(scale_, b);
  if (j + 1 == dim_) {
    next_beta_ = b;
    exhausted_ = true;
    return true;
  }
  if (b > breakdown_tol_ * std::max(scale_, 1e-300)) {
    beta_.push_back(b);
    next_beta_ = b;
    add_vector(w / b);
    return true;
  }
  // Invariant subspace reached.
  next_beta_ = 0.0;
  if (!restart_) {
    exhausted_ = true;
    return true;
  }
  for (int attempt = 0; attempt < 8; ++attempt) {
    Vector r = random_unit_vector(dim_, seed_ + (++restarts_));
    for (int pass = 0; pass < 2; ++pass) r -= basis * (basis.transpose() * r);
    const double rn = r.norm();
    if (rn > 1e-8) {
      beta_.push_back(0.0);
      add_vector(r / rn);
      return true;
    }
  }
  exhausted_ = true;
  return true;
}

Matrix LanczosProcess::tridiagonal() const {
  const Index k = size();
  Matrix t = Matrix::Zero(k, k);
  for (Index i = 0; i < k; ++i) {
    t(i, i) = alpha_[static_cast<std::size_t>(i)];
    if (i + 1 < k) {
      t(i, i + 1) = t(i + 1, i) = beta_[static_cast<std::size_t>(i)];
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Low-rank estimators

namespace {

constexpr double kEigenClip = 1e-10;

// Top `rank` eigenpairs of the current tridiagonal matrix, descending.
void top_ritz(const LanczosProcess& proc, Index rank, Matrix& y, Vector& theta) {
  const Index k = proc.size();
  Eigen::SelfAdjointEigenSolver<Matrix> es(proc.tridiagonal());
  const Index r = std::min(rank, k);
  y = es.eigenvectors().rightCols(r).rowwise().reverse();
  theta = es.eigenvalues().tail(r).reverse();
}

// True residual check: ||A u_i - s_i u_i|| <= tol * max(S) for all i.
bool residuals_ok(const CurvatureOperator& op, const Matrix& u, const Vector& s,
                  double tol) {
  if (s.size() == 0) return true;
  const double bound = tol * std::max(s.cwiseAbs().maxCoeff(), 0.0);
  for (Index i = 0; i < s.size(); ++i) {
    const double r = (op.apply(u.col(i)) - s(i) * u.col(i)).norm();
    if (!(r <= bound)) return false;
  }
  return true;
}

void check_rank(Index rank, Index dim) {
  if (rank < 1 || rank > dim) {
    throw DomainError("low-rank estimate requires 1 <= rank <= P (rank " +
                      std::to_string(rank) + ", P " + std::to_string(dim) + ")");
  }
}

// Appends the columns of `cand` to `basis` after orthogonalizing against it,
// dropping columns that become numerically dependent.
Matrix orthonormal_extension(const Matrix& basis, const Matrix& cand) {
  Matrix out(basis.rows(), 0);
  const Index dim = basis.rows();
  for (Index c = 0; c < cand.cols(); ++c) {
    if (basis.cols() + out.cols() >= dim) break;
    Vector v = cand.col(c);
    const double n0 = v.norm();
    if (!(n0 > 0.0)) continue;
    for (int pass = 0; pass < 2; ++pass) {
      if (basis.cols() > 0) v -= basis * (basis.transpose() * v);
      if (out.cols() > 0) v -= out * (out.transpose() * v);
    }
    const double n = v.norm();
    if (n > 1e-10 * n0) {
      out.conservativeResize(Eigen::NoChange, out.cols() + 1);
      out.col(out.cols() - 1) = v / n;
    }
  }
  return out;
}

Matrix apply_block(const CurvatureOperator& op, const Matrix& x) {
  Matrix ax(x.rows(), x.cols());
  for (Index c = 0; c < x.cols(); ++c) ax.col(c) = op.apply(x.col(c));
  return ax;
}

}  // namespace

CurvEstimate estimate_lanczos(const CurvatureOperator& op,
                              const LanczosOptions& opts) {
  const Index p = op.dim();
  check_rank(opts.rank, p);
  const std::size_t before = op.matvecs();
  LanczosProcess proc([&op](const Vector& v) { return op.apply(v); }, p,
                      random_unit_vector(p, opts.seed), true, opts.seed);
  const Index max_steps = std::min<Index>(std::max<Index>(opts.max_iters, opts.rank), p);

  Matrix y;
  Vector theta;
  while (proc.size() < max_steps && proc.step()) {
    const Index k = proc.size();
    if (k < opts.rank) continue;
    if ((k - opts.rank) % 4 != 0 && k != max_steps && !proc.exhausted()) continue;
    top_ritz(proc, opts.rank, y, theta);
    const double bound = opts.tol * std::max(theta.cwiseAbs().maxCoeff(), 0.0);
    bool ok = true;
    for (Index i = 0; i < theta.size() && ok; ++i) {
      ok = std::abs(proc.next_beta() * y(k - 1, i)) <= bound;
    }
    if (ok) break;
  }
  top_ritz(proc, opts.rank, y, theta);
  Matrix u = proc.basis() * y;
  Vector s = theta;
  canonicalize_eigenpairs(u, s, kEigenClip);

  CurvEstimate est{LowRankCurvature{u, s}};
  est.converged = residuals_ok(op, u, s, opts.tol);
  est.matvecs = op.matvecs() - before;
  return est;
}

CurvEstimate estimate_lobpcg(const CurvatureOperator& op,
                             const LobpcgOptions& opts) {
  const Index p = op.dim();
  check_rank(opts.rank, p);
  const Index block = std::min(p, opts.block_size > 0 ? std::max(opts.block_size, opts.rank)
                                                      : opts.rank);
  const std::size_t before = op.matvecs();

  // Seeded random start block, orthonormalized.
  Matrix start(p, block);
  for (Index c = 0; c < block; ++c) {
    start.col(c) = random_unit_vector(p, opts.seed + static_cast<std::uint64_t>(c) * 7919);
  }
  Matrix x = orthonormal_extension(Matrix(p, 0), start);
  Matrix ax = apply_block(op, x);
  Matrix dir(p, 0);
  Vector lambda;
  bool converged = false;

  auto rayleigh_ritz = [&](const Matrix& s, const Matrix& as, Index keep,
                           Matrix& coeffs, Vector& vals) {
    Matrix g = s.transpose() * as;
    g = 0.5 * (g + g.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(g);
    const Index k = std::min(keep, s.cols());
    coeffs = es.eigenvectors().rightCols(k).rowwise().reverse();
    vals = es.eigenvalues().tail(k).reverse();
  };

  {
    Matrix c;
    rayleigh_ritz(x, ax, x.cols(), c, lambda);
    x = x * c;
    ax = ax * c;
  }

  for (Index it = 0; it < opts.max_iters; ++it) {
    Matrix res = ax - x * lambda.asDiagonal();
    const Index want = std::min(opts.rank, lambda.size());
    const double bound = opts.tol * std::max(lambda.head(want).cwiseAbs().maxCoeff(), 0.0);
    bool ok = true;
    for (Index i = 0; i < want && ok; ++i) ok = res.col(i).norm() <= bound;
    if (ok) {
      converged = true;
      break;
    }
    Matrix cand(p, res.cols() + dir.cols());
    cand << res, dir;
    const Matrix ext = orthonormal_extension(x, cand);
    if (ext.cols() == 0) break;
    const Matrix aext = apply_block(op, ext);
    Matrix s(p, x.cols() + ext.cols());
    s << x, ext;
    Matrix as(p, s.cols());
    as << ax, aext;
    Matrix c;
    Vector vals;
    rayleigh_ritz(s, as, x.cols(), c, vals);
    Matrix x_new = s * c;
    // Search direction: the part of the update outside the old block.
    dir = ext * c.bottomRows(ext.cols());
    x = std::move(x_new);
    ax = as * c;
    lambda = vals;
  }

  Matrix u = x.leftCols(std::min(opts.rank, x.cols()));
  Vector s = lambda.head(u.cols());
  canonicalize_eigenpairs(u, s, kEigenClip);
  CurvEstimate est{LowRankCurvature{u, s}};
  est.converged = converged && residuals_ok(op, u, s, opts.tol);
  est.matvecs = op.matvecs() - before;
  return est;
}

}  // namespace lapnet

#include "lapnet/curvature.hpp"

#include <algorithm>
#include <sstream>

#include "lapnet/errors.hpp"

namespace lapnet {

CurvatureOperator::CurvatureOperator(Index dim, CurvatureKind kind, ApplyFn fn)
    : dim_(dim),
      kind_(kind),
      fn_(std::make_shared<const ApplyFn>(std::move(fn))),
      counter_(std::make_shared<std::atomic<std::size_t>>(0)) {}

Vector CurvatureOperator::apply(const Vector& v) const {
  if (v.size() != dim_) {
    throw DimensionError("curvature operator of size " + std::to_string(dim_) +
                         " applied to a vector of length " +
                         std::to_string(v.size()));
  }
  counter_->fetch_add(1);
  return (*fn_)(v);
}

CurvatureOperator dense_operator(Matrix m) {
  if (m.rows() != m.cols()) throw DimensionError("operator matrix must be square");
  const Index dim = m.rows();
  auto shared = std::make_shared<const Matrix>(std::move(m));
  return CurvatureOperator(dim, CurvatureKind::generic,
                           [shared](const Vector& v) -> Vector {
                             return (*shared) * v;
                           });
}

CurvatureOperator identity_operator(Index dim) {
  return CurvatureOperator(dim, CurvatureKind::generic,
                           [](const Vector& v) -> Vector { return v; });
}

namespace {

struct PreparedBatch {
  ForwardCache cache;
  Matrix targets;
};

std::shared_ptr<const std::vector<PreparedBatch>> prepare(
    const ModelSpec& model, const std::vector<Batch>& data,
    const FlatVector& theta) {
  if (data.empty()) throw DomainError("curvature requires at least one batch");
  auto out = std::make_shared<std::vector<PreparedBatch>>();
  out->reserve(data.size());
  for (const auto& b : data) {
    b.validate();
    out->push_back({forward_cache(model, theta, b.inputs), b.targets});
  }
  return out;
}

}  // namespace

CurvatureOperator ggn_vp(const ModelSpec& model, const LossSpec& loss,
                         const std::vector<Batch>& data,
                         const FlatVector& theta) {
  auto batches = prepare(model, data, theta);
  const Index p = model.param_count();
  return CurvatureOperator(
      p, CurvatureKind::ggn,
      [model, loss, theta, batches, p](const Vector& v) -> Vector {
        Vector acc = Vector::Zero(p);
        for (const auto& b : *batches) {
          Matrix t = jvp(model, theta, b.cache, v);
          if (loss.kind == LossKind::cross_entropy) {
            for (Index n = 0; n < t.rows(); ++n) {
              const Vector prob = softmax(b.cache.output.row(n).transpose());
              const Vector tn = t.row(n).transpose();
              t.row(n) = (prob.cwiseProduct(tn) - prob * prob.dot(tn)).transpose();
            }
          }
          acc += vjp(model, theta, b.cache, t);
        }
        return acc;
      });
}

CurvatureOperator hessian_vp(const ModelSpec& model, const LossSpec& loss,
                             const std::vector<Batch>& data,
                             const FlatVector& theta) {
  auto batches = prepare(model, data, theta);
  const Index p = model.param_count();
  return CurvatureOperator(
      p, CurvatureKind::hessian,
      [model, loss, theta, batches, p](const Vector& v) -> Vector {
        Vector acc = Vector::Zero(p);
        for (const auto& b : *batches) {
          acc += hvp(model, theta, b.cache, b.targets, loss, v);
        }
        return acc;
      });
}

// ---------------------------------------------------------------------------
// ParamMask

ParamMask ParamMask::all(Index full_dim) { return range(full_dim, 0, full_dim); }

ParamMask ParamMask::none(Index full_dim) { return range(full_dim, 0, 0); }

ParamMask ParamMask::range(Index full_dim, Index begin, Index end) {
  if (begin < 0 || end > full_dim || begin > end) {
    throw DimensionError("mask range outside [0, P)");
  }
  ParamMask m;
  m.full_dim_ = full_dim;
  for (Index i = begin; i < end; ++i) m.indices_.push_back(i);
  return m;
}

ParamMask ParamMask::last_layer(const ModelSpec& model) {
  const auto [b, e] = last_layer_range(model);
  return range(model.param_count(), b, e);
}

Vector ParamMask::select(const Vector& full) const {
  if (full.size() != full_dim_) throw DimensionError("mask/vector size mismatch");
  Vector out(dim());
  for (Index i = 0; i < dim(); ++i) out(i) = full(indices_[i]);
  return out;
}

Vector ParamMask::embed(const Vector& sub) const {
  if (sub.size() != dim()) throw DimensionError("mask/subvector size mismatch");
  Vector out = Vector::Zero(full_dim_);
  for (Index i = 0; i < dim(); ++i) out(indices_[i]) = sub(i);
  return out;
}

Matrix ParamMask::select_cols(const Matrix& m) const {
  if (m.cols() != full_dim_) throw DimensionError("mask/matrix size mismatch");
  Matrix out(m.rows(), dim());
  for (Index i = 0; i < dim(); ++i) out.col(i) = m.col(indices_[i]);
  return out;
}

CurvatureOperator restrict_to(const CurvatureOperator& op, const ParamMask& mask) {
  if (mask.full_dim() != op.dim()) throw DimensionError("mask does not match operator");
  if (mask.is_full()) return op;
  return CurvatureOperator(mask.dim(), op.kind(),
                           [op, mask](const Vector& v) -> Vector {
                             return mask.select(op.apply(mask.embed(v)));
                           });
}

// ---------------------------------------------------------------------------
// Estimators

Index CurvEstimate::dim() const {
  return std::visit(
      [](const auto& e) -> Index {
        using T = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<T, FullCurvature>) return e.matrix.rows();
        else if constexpr (std::is_same_v<T, DiagonalCurvature>) return e.diagonal.size();
        else return e.U.rows();
      },
      value);
}

std::string CurvEstimate::kind_name() const {
  switch (value.index()) {
    case 0: return "full";
    case 1: return "diagonal";
    default: return "low_rank";
  }
}

CurvEstimate estimate_full(const CurvatureOperator& op, Index cap) {
  const Index p = op.dim();
  if (p > cap) {
    std::ostringstream os;
    os << "full curvature of size " << p << " exceeds the cap of " << cap
       << "; use a low-rank estimate instead";
    throw ResourceError(os.str());
  }
  const std::size_t before = op.matvecs();
  Matrix m(p, p);
  Vector e = Vector::Zero(p);
  for (Index i = 0; i < p; ++i) {
    e(i) = 1.0;
    m.col(i) = op.apply(e);
    e(i) = 0.0;
  }
  Matrix sym = 0.5 * (m + m.transpose());
  CurvEstimate est{FullCurvature{std::move(sym)}};
  est.matvecs = op.matvecs() - before;
  return est;
}

CurvEstimate estimate_diagonal(const CurvatureOperator& op) {
  const Index p = op.dim();
  const std::size_t before = op.matvecs();
  Vector d(p);
  Vector e = Vector::Zero(p);
  for (Index i = 0; i < p; ++i) {
    e(i) = 1.0;
    d(i) = e.dot(op.apply(e));
    e(i) = 0.0;
  }
  CurvEstimate est{DiagonalCurvature{std::move(d)}};
  est.matvecs = op.matvecs() - before;
  return est;
}

Matrix to_dense(const CurvEstimate& est) {
  return std::visit(
      [](const auto& e) -> Matrix {
        using T = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<T, FullCurvature>) {
          return e.matrix;
        } else if constexpr (std::is_same_v<T, DiagonalCurvature>) {
          return e.diagonal.asDiagonal();
        } else {
          return e.U * e.S.asDiagonal() * e.U.transpose();
        }
      },
      est.value);
}

namespace {

using json = nlohmann::ordered_json;

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

json vector_to_json(const Vector& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Matrix matrix_from_json(const json& j, Index cols_if_empty = 0) {
  const Index rows = static_cast<Index>(j.size());
  const Index cols = rows > 0 ? static_cast<Index>(j.at(0).size()) : cols_if_empty;
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    if (static_cast<Index>(j.at(i).size()) != cols) {
      throw DimensionError("ragged matrix in estimate JSON");
    }
    for (Index k = 0; k < cols; ++k) m(i, k) = j.at(i).at(k).get<double>();
  }
  return m;
}

Vector vector_from_json(const json& j) {
  Vector v(static_cast<Index>(j.size()));
  for (Index i = 0; i < v.size(); ++i) v(i) = j.at(i).get<double>();
  return v;
}

}  // namespace

json estimate_to_json(const CurvEstimate& est) {
  json out;
  out["kind"] = est.kind_name();
  std::visit(
      [&](const auto& e) {
        using T = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<T, FullCurvature>) {
          out["data"] = matrix_to_json(e.matrix);
          out["rank"] = e.matrix.rows();
        } else if constexpr (std::is_same_v<T, DiagonalCurvature>) {
          out["data"] = vector_to_json(e.diagonal);
          out["rank"] = e.diagonal.size();
        } else {
          out["data"] = {{"U", matrix_to_json(e.U)}, {"S", vector_to_json(e.S)}};
          out["rank"] = e.S.size();
        }
      },
      est.value);
  out["dim"] = est.dim();
  out["converged"] = est.converged;
  out["matvecs"] = est.matvecs;
  return out;
}

CurvEstimate estimate_from_json(const json& j) {
  try {
    const std::string kind = j.at("kind").get<std::string>();
    CurvEstimate est;
    if (kind == "full") {
      est.value = FullCurvature{matrix_from_json(j.at("data"))};
    } else if (kind == "diagonal") {
      est.value = DiagonalCurvature{vector_from_json(j.at("data"))};
    } else if (kind == "low_rank") {
      const json& d = j.at("data");
      const Vector s = vector_from_json(d.at("S"));
      Matrix u = matrix_from_json(d.at("U"));
      if (u.rows() == 0) u.resize(j.value("dim", Index{0}), 0);
      if (u.cols() != s.size()) {
        throw DimensionError("low-rank estimate U/S sizes differ");
      }
      est.value = LowRankCurvature{std::move(u), s};
    } else {
      throw ConfigError("unknown estimate kind: " + kind);
    }
    est.converged = j.value("converged", true);
    est.matvecs = j.value("matvecs", std::size_t{0});
    return est;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed estimate JSON: ") + e.what());
  }
}

}  // namespace lapnet

#include "lapnet/linalg.hpp"

#include <cmath>
#include <sstream>

#include "lapnet/errors.hpp"

namespace lapnet {

JitteredCholesky cholesky_with_jitter(const Matrix& a) {
  if (a.rows() != a.cols()) throw DimensionError("Cholesky of a non-square matrix");
  if (!a.allFinite()) throw NumericalError("Cholesky of a matrix with non-finite entries");
  const Index n = a.rows();
  if (n == 0) return {Matrix(0, 0), 0.0};
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() == Eigen::Success) return {llt.matrixL(), 0.0};

  const double base = a.diagonal().mean();
  if (base > 0.0) {
    for (double rel = 1e-10; rel <= 1e-6 * (1.0 + 1e-9); rel *= 10.0) {
      const double jitter = rel * base;
      Matrix shifted = a;
      shifted.diagonal().array() += jitter;
      llt.compute(shifted);
      if (llt.info() == Eigen::Success) return {llt.matrixL(), jitter};
    }
  }
  Matrix shifted = a;
  if (base > 0.0) shifted.diagonal().array() += 1e-6 * base;
  const Eigen::LDLT<Matrix> ldlt(shifted);
  std::ostringstream os;
  os << "Cholesky failed after maximum jitter; smallest pivot "
     << ldlt.vectorD().minCoeff();
  throw NumericalError(os.str());
}

double log_det_from_cholesky(const Matrix& lower) {
  return 2.0 * lower.diagonal().array().log().sum();
}

}  // namespace lapnet

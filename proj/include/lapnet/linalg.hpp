#pragma once

#include "lapnet/types.hpp"

namespace lapnet {

/// Lower Cholesky factor of a symmetric matrix and the diagonal jitter that
/// was needed to obtain it.
struct JitteredCholesky {
  Matrix lower;
  double jitter = 0.0;
};

/// Cholesky of `a`; on failure retries with jitter 1e-10 * mean(diag), growing
/// tenfold up to 1e-6 * mean(diag). Throws NumericalError reporting the
/// smallest pivot if every attempt fails.
JitteredCholesky cholesky_with_jitter(const Matrix& a);

/// log|A| from the lower Cholesky factor of A.
double log_det_from_cholesky(const Matrix& lower);

}  // namespace lapnet

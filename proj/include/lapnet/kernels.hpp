#pragma once

#include <functional>
#include <string>

#include "lapnet/types.hpp"

namespace lapnet {

enum class KernelKind { matern52, periodic, rbf };

std::string to_string(KernelKind kind);
KernelKind kernel_from_string(const std::string& name);

struct KernelSpec {
  KernelKind kind = KernelKind::matern52;
  double variance = 1.0;
  double lengthscale = 1.0;
  double period = 1.0;  // periodic only

  void validate() const;
  double operator()(const Vector& a, const Vector& b) const;
  /// Value as a function of the distance r = |a - b|.
  double at_distance(double r) const;
};

/// Gram matrix K(X, X') for row-wise inputs.
Matrix kernel_matrix(const KernelSpec& k, const Matrix& x, const Matrix& x2);
Matrix kernel_matrix(const KernelSpec& k, const Matrix& x);

/// GP(m, k) with independent, identically distributed outputs.
struct GPPrior {
  KernelSpec kernel;
  /// Prior mean per input row; empty means zero.
  std::function<double(const Vector&)> mean;
  /// Relative diagonal jitter always added to Gram matrices (times the kernel
  /// variance) before factorization, on top of the automatic jitter ladder.
  double jitter = 0.0;

  /// n x outputs matrix of prior means.
  Matrix mean_at(const Matrix& x, Index outputs) const;
};

}  // namespace lapnet

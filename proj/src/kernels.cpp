#include "lapnet/kernels.hpp"

#include <cmath>
#include <numbers>

#include "lapnet/errors.hpp"

namespace lapnet {

std::string to_string(KernelKind kind) {
  switch (kind) {
    case KernelKind::matern52: return "matern52";
    case KernelKind::periodic: return "periodic";
    case KernelKind::rbf: return "rbf";
  }
  return "unknown";
}

KernelKind kernel_from_string(const std::string& name) {
  if (name == "matern52") return KernelKind::matern52;
  if (name == "periodic") return KernelKind::periodic;
  if (name == "rbf") return KernelKind::rbf;
  throw ConfigError("unknown kernel: " + name);
}

void KernelSpec::validate() const {
  if (!(variance > 0.0) || !(lengthscale > 0.0) ||
      (kind == KernelKind::periodic && !(period > 0.0))) {
    throw DomainError("kernel parameters must be positive");
  }
}

double KernelSpec::at_distance(double r) const {
  switch (kind) {
    case KernelKind::matern52: {
      const double s = std::sqrt(5.0) * r / lengthscale;
      return variance * (1.0 + s + s * s / 3.0) * std::exp(-s);
    }
    case KernelKind::periodic: {
      const double sn = std::sin(std::numbers::pi * r / period);
      return variance * std::exp(-2.0 * sn * sn / (lengthscale * lengthscale));
    }
    case KernelKind::rbf:
      return variance * std::exp(-r * r / (2.0 * lengthscale * lengthscale));
  }
  return 0.0;
}

double KernelSpec::operator()(const Vector& a, const Vector& b) const {
  return at_distance((a - b).norm());
}

Matrix kernel_matrix(const KernelSpec& k, const Matrix& x, const Matrix& x2) {
  k.validate();
  if (x.cols() != x2.cols()) throw DimensionError("kernel inputs differ in dimension");
  Matrix out(x.rows(), x2.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x2.rows(); ++j) {
      out(i, j) = k.at_distance((x.row(i) - x2.row(j)).norm());
    }
  }
  return out;
}

Matrix kernel_matrix(const KernelSpec& k, const Matrix& x) {
  Matrix out = kernel_matrix(k, x, x);
  return 0.5 * (out + out.transpose());
}

Matrix GPPrior::mean_at(const Matrix& x, Index outputs) const {
  Matrix m = Matrix::Zero(x.rows(), outputs);
  if (!mean) return m;
  for (Index i = 0; i < x.rows(); ++i) {
    m.row(i).setConstant(mean(x.row(i).transpose()));
  }
  return m;
}

}  // namespace lapnet

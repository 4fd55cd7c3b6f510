#include "lapnet/optim.hpp"

#include <cmath>

#include "lapnet/errors.hpp"

namespace lapnet {

Adam::Adam(Index dim, AdamOptions opts)
    : opts_(opts), m_(Vector::Zero(dim)), v_(Vector::Zero(dim)) {
  if (!(opts_.lr > 0.0)) throw DomainError("Adam learning rate must be positive");
}

void Adam::step(FlatVector& theta, const FlatVector& gradient) {
  if (theta.size() != m_.size() || gradient.size() != m_.size()) {
    throw DimensionError("Adam: parameter and gradient sizes differ");
  }
  ++t_;
  m_ = opts_.beta1 * m_ + (1.0 - opts_.beta1) * gradient;
  v_ = opts_.beta2 * v_ + (1.0 - opts_.beta2) * gradient.cwiseAbs2();
  const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  theta.array() -= opts_.lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + opts_.eps);
}

}  // namespace lapnet

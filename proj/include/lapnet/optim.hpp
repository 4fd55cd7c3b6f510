#pragma once

#include "lapnet/types.hpp"

namespace lapnet {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam on a flat parameter vector.
class Adam {
 public:
  Adam(Index dim, AdamOptions opts = {});

  void step(FlatVector& theta, const FlatVector& gradient);
  Index steps() const { return t_; }
  const AdamOptions& options() const { return opts_; }
  void set_lr(double lr) { opts_.lr = lr; }

 private:
  AdamOptions opts_;
  Vector m_;
  Vector v_;
  Index t_ = 0;
};

}  // namespace lapnet

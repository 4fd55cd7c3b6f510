#pragma once

#include <Eigen/Dense>

namespace lapnet {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Flat length-P coordinate vector of a parameter tree.
using FlatVector = Eigen::VectorXd;

}  // namespace lapnet

#pragma once

#include "lapnet/types.hpp"

namespace lapnet {

/// 1/2 log(2 pi var) + (y - mean)^2 / (2 var).
double gaussian_nll(double mean, double var, double y);

/// Dataset average of gaussian_nll.
double gaussian_nll(const Vector& mean, const Vector& var, const Vector& y);

inline constexpr Index kDefaultEceBins = 15;

/// Top-label expected calibration error with equal-width bins on (0, 1].
/// `labels` holds class indices.
double ece(const Matrix& probs, const Vector& labels, Index n_bins = kDefaultEceBins);

/// Closed-form CRPS of N(mean, sd^2) at y. sd = 0 gives |y - mean|.
double crps_gaussian(double mean, double sd, double y);

double crps_gaussian(const Vector& mean, const Vector& sd, const Vector& y);

/// Average of -log p(y_n) for class probabilities (N x C) and index labels.
double categorical_nll(const Matrix& probs, const Vector& labels);

double accuracy(const Matrix& probs, const Vector& labels);

}  // namespace lapnet

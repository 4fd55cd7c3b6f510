#include "lapnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "lapnet/errors.hpp"

namespace lapnet {

double gaussian_nll(double mean, double var, double y) {
  if (!(var > 0.0)) throw DomainError("gaussian_nll needs a positive variance");
  const double r = y - mean;
  return 0.5 * std::log(2.0 * std::numbers::pi * var) + r * r / (2.0 * var);
}

double gaussian_nll(const Vector& mean, const Vector& var, const Vector& y) {
  if (mean.size() != var.size() || mean.size() != y.size()) {
    throw DimensionError("gaussian_nll: lengths differ");
  }
  if (y.size() == 0) throw DomainError("gaussian_nll: empty input");
  double acc = 0.0;
  for (Index i = 0; i < y.size(); ++i) acc += gaussian_nll(mean(i), var(i), y(i));
  return acc / static_cast<double>(y.size());
}

namespace {

Index label_at(const Vector& labels, Index i, Index classes) {
  const double v = labels(i);
  const auto k = static_cast<Index>(std::llround(v));
  if (k < 0 || k >= classes || static_cast<double>(k) != v) {
    throw DomainError("label out of range");
  }
  return k;
}

void check_probs(const Matrix& probs, const Vector& labels) {
  if (probs.rows() == 0) throw DomainError("empty input");
  if (probs.rows() != labels.size()) throw DimensionError("probs and labels differ in N");
}

}  // namespace

double ece(const Matrix& probs, const Vector& labels, Index n_bins) {
  check_probs(probs, labels);
  if (n_bins < 1) throw DomainError("ece needs at least one bin");
  std::vector<double> conf(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<double> hits(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<Index> count(static_cast<std::size_t>(n_bins), 0);
  for (Index i = 0; i < probs.rows(); ++i) {
    Index top = 0;
    const double c = probs.row(i).maxCoeff(&top);
    // Bin b covers (b / n, (b + 1) / n].
    auto b = static_cast<Index>(std::ceil(c * static_cast<double>(n_bins))) - 1;
    b = std::clamp<Index>(b, 0, n_bins - 1);
    conf[b] += c;
    hits[b] += top == label_at(labels, i, probs.cols()) ? 1.0 : 0.0;
    ++count[b];
  }
  double out = 0.0;
  const double n = static_cast<double>(probs.rows());
  for (Index b = 0; b < n_bins; ++b) {
    if (count[b] == 0) continue;
    out += std::abs(hits[b] - conf[b]) / n;
  }
  return out;
}

double crps_gaussian(double mean, double sd, double y) {
  if (sd < 0.0) throw DomainError("crps_gaussian needs sd >= 0");
  if (sd == 0.0) return std::abs(y - mean);
  const double z = (y - mean) / sd;
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return sd * (z * (2.0 * cdf - 1.0) + 2.0 * pdf - 1.0 / std::sqrt(std::numbers::pi));
}

double crps_gaussian(const Vector& mean, const Vector& sd, const Vector& y) {
  if (mean.size() != sd.size() || mean.size() != y.size()) {
    throw DimensionError("crps_gaussian: lengths differ");
  }
  if (y.size() == 0) throw DomainError("crps_gaussian: empty input");
  double acc = 0.0;
  for (Index i = 0; i < y.size(); ++i) acc += crps_gaussian(mean(i), sd(i), y(i));
  return acc / static_cast<double>(y.size());
}

double categorical_nll(const Matrix& probs, const Vector& labels) {
  check_probs(probs, labels);
  double acc = 0.0;
  for (Index i = 0; i < probs.rows(); ++i) {
    acc -= std::log(std::max(probs(i, label_at(labels, i, probs.cols())), 1e-300));
  }
  return acc / static_cast<double>(probs.rows());
}

double accuracy(const Matrix& probs, const Vector& labels) {
  check_probs(probs, labels);
  double hits = 0.0;
  for (Index i = 0; i < probs.rows(); ++i) {
    Index top = 0;
    probs.row(i).maxCoeff(&top);
    hits += top == label_at(labels, i, probs.cols()) ? 1.0 : 0.0;
  }
  return hits / static_cast<double>(probs.rows());
}

}  // namespace lapnet

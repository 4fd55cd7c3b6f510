#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "lapnet/net.hpp"

namespace lapnet {

/// x drawn uniformly from a union of intervals (picked with probability
/// proportional to length), y = sin(2 pi x) + N(0, noise^2).
struct SineOptions {
  Index n = 128;
  double noise = 0.1;
  std::vector<std::pair<double, double>> clusters{{-1.0, -0.4}, {0.4, 1.0}};
};

Batch gen_sine(const SineOptions& opts, std::uint64_t seed);

/// Two interleaving half circles with labels 0 and 1 (an N x 1 index column)
/// and isotropic Gaussian noise.
Batch gen_moons(Index n, double noise, std::uint64_t seed);

/// Seeded shuffle, then the first round(frac * N) rows go to the first part.
std::pair<Batch, Batch> split(const Batch& data, double frac, std::uint64_t seed);

/// Rows of `data` at the given indices.
Batch take_rows(const Batch& data, const std::vector<Index>& rows);

/// Consecutive chunks of at most `size` rows.
std::vector<Batch> chunk(const Batch& data, Index size);

}  // namespace lapnet

#include "lapnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "lapnet/errors.hpp"

namespace lapnet {

Batch gen_sine(const SineOptions& opts, std::uint64_t seed) {
  if (opts.n < 1) throw DomainError("gen_sine needs n >= 1");
  if (opts.noise < 0.0) throw DomainError("noise must be non-negative");
  if (opts.clusters.empty()) throw DomainError("gen_sine needs at least one interval");
  std::vector<double> lengths;
  for (const auto& [lo, hi] : opts.clusters) {
    if (!(hi > lo)) throw DomainError("empty interval in sine clusters");
    lengths.push_back(hi - lo);
  }
  std::mt19937_64 rng(seed);
  std::discrete_distribution<std::size_t> pick(lengths.begin(), lengths.end());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Batch b{Matrix(opts.n, 1), Matrix(opts.n, 1)};
  for (Index i = 0; i < opts.n; ++i) {
    const auto& [lo, hi] = opts.clusters[pick(rng)];
    const double x = lo + (hi - lo) * unit(rng);
    const double eps = normal(rng);
    b.inputs(i, 0) = x;
    b.targets(i, 0) = std::sin(2.0 * std::numbers::pi * x) + opts.noise * eps;
  }
  return b;
}

Batch gen_moons(Index n, double noise, std::uint64_t seed) {
  if (n < 1) throw DomainError("gen_moons needs n >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::normal_distribution<double> normal(0.0, 1.0);
  Batch b{Matrix(n, 2), Matrix(n, 1)};
  for (Index i = 0; i < n; ++i) {
    const double t = angle(rng);
    const bool upper = i % 2 == 0;
    double x = upper ? std::cos(t) : 1.0 - std::cos(t);
    double y = upper ? std::sin(t) : 0.5 - std::sin(t);
    x += noise * normal(rng);
    y += noise * normal(rng);
    b.inputs.row(i) << x, y;
    b.targets(i, 0) = upper ? 0.0 : 1.0;
  }
  return b;
}

Batch take_rows(const Batch& data, const std::vector<Index>& rows) {
  Batch out{Matrix(static_cast<Index>(rows.size()), data.inputs.cols()),
            Matrix(static_cast<Index>(rows.size()), data.targets.cols())};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.inputs.row(static_cast<Index>(i)) = data.inputs.row(rows[i]);
    out.targets.row(static_cast<Index>(i)) = data.targets.row(rows[i]);
  }
  return out;
}

std::pair<Batch, Batch> split(const Batch& data, double frac, std::uint64_t seed) {
  if (!(frac > 0.0 && frac < 1.0)) throw DomainError("split fraction must lie in (0, 1)");
  const Index n = data.size();
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::mt19937_64 rng(seed);
  // Fisher-Yates on raw generator output, portable across standard libraries.
  for (Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Index>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(idx[i], idx[j]);
  }
  const auto head = static_cast<Index>(std::llround(frac * static_cast<double>(n)));
  if (head < 1 || head >= n) throw DomainError("split leaves an empty part");
  std::vector<Index> a(idx.begin(), idx.begin() + head);
  std::vector<Index> b(idx.begin() + head, idx.end());
  return {take_rows(data, a), take_rows(data, b)};
}

std::vector<Batch> chunk(const Batch& data, Index size) {
  if (size < 1) throw DomainError("chunk size must be positive");
  std::vector<Batch> out;
  for (Index start = 0; start < data.size(); start += size) {
    const Index len = std::min(size, data.size() - start);
    out.push_back({data.inputs.middleRows(start, len), data.targets.middleRows(start, len)});
  }
  return out;
}

}  // namespace lapnet

#pragma once

// Hyperparameter calibration by grid search over tau or by gradient steps in
// (log tau, log sigma^2).

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lapnet/posterior.hpp"
#include "lapnet/types.hpp"

namespace lapnet {

enum class Direction { maximize, minimize };

enum class CalibMethod { grid_search, gradient };

std::string to_string(CalibMethod m);  // "GS" | "GD"

/// log10 grid over tau.
struct GridSpec {
  double log10_lower = -5.0;
  double log10_upper = 5.0;
  Index n = 41;

  void validate() const;
  std::vector<double> points() const;
};

struct TraceEntry {
  Index step = 0;
  double prior_prec = 0.0;
  double obs_noise = 0.0;
  double objective = 0.0;
};

struct CalibResult {
  Hyperparams best;
  double best_objective = 0.0;
  std::vector<TraceEntry> trace;
  std::string objective_name;
  CalibMethod method = CalibMethod::grid_search;
  /// Set when a gradient run stopped early on a non-finite objective.
  bool halted = false;
};

/// Evaluates `objective(tau)` at every grid point with sigma^2 held at
/// `obs_noise`. Non-finite points are skipped; ties go to the smaller tau.
/// Throws CalibrationError when no point is finite.
CalibResult grid_search(const std::function<double(double)>& objective,
                        const GridSpec& grid, Direction direction,
                        double obs_noise = 1.0, std::string name = "objective");

using LogObjective = std::function<double(double, double)>;
using LogGradient = std::function<Vector(double, double)>;

struct GradientOptions {
  Index steps = 200;
  double lr = 0.1;
  /// Per-step cap on the Euclidean length of the update in log space.
  double max_step = 1.0;
  /// When false only log tau moves.
  bool fit_noise = true;
  /// Halve the learning rate whenever a step makes the objective worse.
  bool backtrack = true;
};

/// Central differences with h = 1e-4 (1 + |x|) per coordinate.
Vector finite_difference_gradient(const LogObjective& objective, double log_tau,
                                  double log_noise);

/// Fixed-step gradient ascent or descent on (log tau, log sigma^2). Returns the
/// best iterate seen, never the last by default.
CalibResult gradient_calibrate(const LogObjective& objective, const Hyperparams& init,
                               Direction direction, const GradientOptions& opts = {},
                               const std::optional<LogGradient>& gradient = std::nullopt,
                               std::string name = "objective");

}  // namespace lapnet

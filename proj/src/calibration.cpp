#include "lapnet/calibration.hpp"

#include <cmath>
#include <limits>

#include "lapnet/errors.hpp"

namespace lapnet {

std::string to_string(CalibMethod m) {
  return m == CalibMethod::grid_search ? "GS" : "GD";
}

void GridSpec::validate() const {
  if (!(log10_lower < log10_upper)) throw DomainError("grid lower bound must be below upper");
  if (n < 2) throw DomainError("grid needs at least two points");
}

std::vector<double> GridSpec::points() const {
  validate();
  std::vector<double> out(static_cast<std::size_t>(n));
  const double step = (log10_upper - log10_lower) / static_cast<double>(n - 1);
  for (Index i = 0; i < n; ++i) {
    out[i] = std::pow(10.0, log10_lower + step * static_cast<double>(i));
  }
  return out;
}

namespace {

bool better(double a, double b, Direction d) {
  return d == Direction::maximize ? a > b : a < b;
}

}  // namespace

CalibResult grid_search(const std::function<double(double)>& objective,
                        const GridSpec& grid, Direction direction, double obs_noise,
                        std::string name) {
  CalibResult r;
  r.method = CalibMethod::grid_search;
  r.objective_name = std::move(name);
  bool found = false;
  const auto pts = grid.points();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double tau = pts[i];
    double v = std::numeric_limits<double>::quiet_NaN();
    try {
      v = objective(tau);
    } catch (const NumericalError&) {
      // counted as a non-finite point
    }
    r.trace.push_back({static_cast<Index>(i), tau, obs_noise, v});
    if (!std::isfinite(v)) continue;
    if (!found || better(v, r.best_objective, direction) ||
        (v == r.best_objective && tau < r.best.prior_prec)) {
      r.best = {tau, obs_noise};
      r.best_objective = v;
      found = true;
    }
  }
  if (!found) throw CalibrationError("objective is non-finite at every grid point");
  return r;
}

Vector finite_difference_gradient(const LogObjective& objective, double log_tau,
                                  double log_noise) {
  Vector g(2);
  const double h0 = 1e-4 * (1.0 + std::abs(log_tau));
  g(0) = (objective(log_tau + h0, log_noise) - objective(log_tau - h0, log_noise)) /
         (2.0 * h0);
  const double h1 = 1e-4 * (1.0 + std::abs(log_noise));
  g(1) = (objective(log_tau, log_noise + h1) - objective(log_tau, log_noise - h1)) /
         (2.0 * h1);
  return g;
}

CalibResult gradient_calibrate(const LogObjective& objective, const Hyperparams& init,
                               Direction direction, const GradientOptions& opts,
                               const std::optional<LogGradient>& gradient,
                               std::string name) {
  init.validate();
  if (opts.steps < 0) throw DomainError("gradient steps must be non-negative");
  CalibResult r;
  r.method = CalibMethod::gradient;
  r.objective_name = std::move(name);

  Vector x(2);
  x << std::log(init.prior_prec), std::log(init.obs_noise);
  const LogObjective safe = [&objective](double a, double b) {
    try {
      return objective(a, b);
    } catch (const NumericalError&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  };
  auto eval = [&safe](const Vector& at) { return safe(at(0), at(1)); };
  double fx = eval(x);
  if (!std::isfinite(fx)) {
    throw CalibrationError("objective is not finite at the initial hyperparameters");
  }
  r.trace.push_back({0, init.prior_prec, init.obs_noise, fx});
  r.best = init;
  r.best_objective = fx;

  const double sign = direction == Direction::maximize ? 1.0 : -1.0;
  double lr = opts.lr;
  for (Index step = 1; step <= opts.steps; ++step) {
    Vector g(2);
    if (gradient) {
      g = (*gradient)(x(0), x(1));
    } else if (opts.fit_noise) {
      g = finite_difference_gradient(safe, x(0), x(1));
    } else {
      const double h = 1e-4 * (1.0 + std::abs(x(0)));
      g(0) = (safe(x(0) + h, x(1)) - safe(x(0) - h, x(1))) / (2.0 * h);
    }
    if (!opts.fit_noise) g(1) = 0.0;
    if (!g.allFinite()) {
      r.halted = true;
      break;
    }
    Vector delta = sign * lr * g;
    const double len = delta.norm();
    if (len > opts.max_step) delta *= opts.max_step / len;
    const Vector next = x + delta;
    const double fn = eval(next);
    r.trace.push_back({step, std::exp(next(0)), std::exp(next(1)), fn});
    if (!std::isfinite(fn)) {
      r.halted = true;
      break;
    }
    if (opts.backtrack && better(fx, fn, direction)) {
      lr *= 0.5;  // reject the step
      continue;
    }
    x = next;
    fx = fn;
    if (better(fx, r.best_objective, direction)) {
      r.best = {std::exp(x(0)), std::exp(x(1))};
      r.best_objective = fx;
    }
  }
  return r;
}

}  // namespace lapnet

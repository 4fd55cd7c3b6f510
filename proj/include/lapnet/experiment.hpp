#pragma once

// Batch experiment harness: configuration, data, MAP training, the Laplace
// pipeline, the structure x calibration sweep, the FSP demo and plot data.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lapnet/calibration.hpp"
#include "lapnet/checkpoint.hpp"
#include "lapnet/csv.hpp"
#include "lapnet/curvature.hpp"
#include "lapnet/evidence.hpp"
#include "lapnet/fsp.hpp"
#include "lapnet/net.hpp"
#include "lapnet/posterior.hpp"
#include "lapnet/predictive.hpp"

namespace lapnet {

enum class Task { sine_regression, moons_classification, toy };
enum class CurvStructure { full, diagonal, lanczos, lobpcg };
enum class MaskKind { all, last_layer };
enum class PushKind { linear, nonlinear };
enum class CalibObjective { lml, nll, ece, none };

std::string to_string(Task t);
std::string to_string(CurvStructure s);
std::string to_string(MaskKind m);
std::string to_string(PushKind p);
std::string to_string(CalibObjective o);

struct DataConfig {
  Index n = 128;
  double noise = 0.1;
  Index n_test = 200;
  std::vector<std::pair<double, double>> clusters{{-1.0, -0.4}, {0.4, 1.0}};
  /// Fraction of the generated set used for training; the rest validates.
  double train_frac = 0.8;
  /// Inline data for the toy task.
  Matrix inputs;
  Matrix targets;
};

struct TrainConfig {
  Index steps = 3000;
  double lr = 1e-2;
  /// Weight decay tau_train / 2 ||theta||^2 added to the summed loss.
  double prior_prec = 1e-3;
  /// 0 means full batch.
  Index batch_size = 0;
};

struct CalibConfig {
  CalibObjective objective = CalibObjective::lml;
  CalibMethod method = CalibMethod::grid_search;
  GridSpec grid{};
  GradientOptions gd{20, 0.1, 1.0, true, true};
};

struct LaplaceConfig {
  CurvStructure curv = CurvStructure::full;
  CurvatureKind curvature = CurvatureKind::ggn;
  MaskKind mask = MaskKind::all;
  Index rank = 20;
  Index max_iters = 1000;
  double tol = 1e-10;
  PushKind pushforward = PushKind::linear;
  PredictiveKind predictive = PredictiveKind::mean_field_0;
  Index samples = 200;
  CalibConfig calibration{};
  /// Hyperparameters used when the calibration objective is none.
  Hyperparams fixed{};
  /// Grid for prediction output: [lower, upper] with n points per input axis.
  double grid_lower = -2.0;
  double grid_upper = 2.0;
  Index grid_n = 201;
};

struct SweepRowSpec {
  CurvStructure curv = CurvStructure::full;
  MaskKind mask = MaskKind::all;
  std::string label() const;
};

struct SweepConfig {
  std::vector<SweepRowSpec> rows{{CurvStructure::full, MaskKind::last_layer},
                                 {CurvStructure::full, MaskKind::all},
                                 {CurvStructure::diagonal, MaskKind::all},
                                 {CurvStructure::lanczos, MaskKind::all}};
  std::vector<CalibObjective> objectives{CalibObjective::lml, CalibObjective::nll};
  std::vector<CalibMethod> methods{CalibMethod::grid_search, CalibMethod::gradient};
  std::vector<PushKind> pushforwards{PushKind::linear, PushKind::nonlinear};
  /// Regression probes: std is compared between these inputs.
  std::vector<double> probe_center{-0.7, 0.7};
  std::vector<double> probe_outside{0.0, 2.0};
};

struct FspConfig {
  KernelSpec kernel{KernelKind::periodic, 1.0, 0.5, 1.0};
  /// Relative Gram jitter; the periodic Gram is close to singular without it.
  double jitter = 1e-2;
  ContextSampler sampler = ContextSampler::uniform_box;
  Index n_train_context = 128;
  Index n_posterior_context = 512;
  double domain_lower = -3.0;
  double domain_upper = 3.0;
  Index steps = 10000;
  Index batch_size = 32;
  double lr = 1e-2;
  double obs_noise = 0.01;
  Index max_lanczos_rank = 500;
  /// Prediction grid.
  Index grid_n = 601;
  /// Window outside the data used for the periodicity check.
  double window_lower = 1.0;
  double window_upper = 3.0;
};

struct ExperimentConfig {
  Task task = Task::sine_regression;
  ModelSpec model;
  LossSpec loss;
  DataConfig data;
  TrainConfig train;
  LaplaceConfig laplace;
  SweepConfig sweep;
  FspConfig fsp;
  std::uint64_t seed = 0;
};

ExperimentConfig config_from_json(const nlohmann::ordered_json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Defaults for a task: model, loss and data sizes.
ExperimentConfig default_config(Task task);

// ---------------------------------------------------------------------------
// Data and training

struct TaskData {
  Batch train;
  Batch valid;
  Batch test;
};

/// Deterministic in config.seed. The toy task uses its inline data for all
/// three parts.
TaskData gen_data(const ExperimentConfig& config);

/// Columns x0.. then y0.. for a batch.
CsvTable batch_table(const Batch& b);

struct MapResult {
  Checkpoint checkpoint;
  std::vector<double> trace;
};

/// Adam on sum of losses + tau_train / 2 ||theta||^2 with a cosine learning
/// rate schedule. Throws NumericalError with the tail of the trace on divergence.
MapResult train_map(const ExperimentConfig& config, const Batch& train);

// ---------------------------------------------------------------------------
// Laplace pipeline

struct PlotArtifact {
  std::string name;
  std::vector<std::string> header;
  Matrix values;
};

nlohmann::ordered_json artifacts_to_json(const std::vector<PlotArtifact>& artifacts);
std::vector<PlotArtifact> artifacts_from_json(const nlohmann::ordered_json& j);

/// Writes <name>.csv per artifact and returns the paths.
std::vector<std::filesystem::path> emit_plot_data(const std::vector<PlotArtifact>& artifacts,
                                                  const std::filesystem::path& dir);

struct LaplaceResult {
  CurvEstimate estimate;
  CalibResult calibration;
  EvidenceReport evidence;
  Index posterior_dim = 0;
  std::vector<PlotArtifact> artifacts;
};

/// Curvature, estimate, calibration and posterior for one configuration.
/// Emits grid predictions and, for two-dimensional posteriors, 1- and 2-sigma
/// ellipses of H^-1.
LaplaceResult run_laplace(const ExperimentConfig& config, const Checkpoint& checkpoint,
                          const TaskData& data);

// ---------------------------------------------------------------------------
// Sweep

struct SweepCell {
  std::string row;
  CalibObjective objective = CalibObjective::lml;
  CalibMethod method = CalibMethod::grid_search;
  PushKind pushforward = PushKind::linear;
  double tau = 0.0;
  double sigma2 = 0.0;
  double nll = 0.0;
  double nll_uncalibrated = 0.0;
  double crps = 0.0;
  double ece = 0.0;
  double std_center = 0.0;
  double std_outside = 0.0;
  std::string status = "ok";
  double seconds = 0.0;  // wall time of the shared calibration, not part of the report
};

struct SweepReport {
  std::vector<SweepCell> cells;
};

SweepReport run_sweep(const ExperimentConfig& config, const Checkpoint& checkpoint,
                      const TaskData& data, Index threads = 1);

/// Deterministic CSV view without timings.
CsvTable sweep_table(const SweepReport& report);
CsvTable sweep_timing_table(const SweepReport& report);

// ---------------------------------------------------------------------------
// FSP demo

struct FspResult {
  FspPosterior posterior;
  FspTrainResult training;
  double init_nll = 0.0;
  double final_nll = 0.0;
  bool bound_holds = false;
  double estimated_period = 0.0;
  std::vector<PlotArtifact> artifacts;
};

/// Lag in [0.5 p, 1.5 p] maximizing the normalized autocorrelation of `values`
/// sampled on a uniform grid with spacing `dx`.
double autocorrelation_peak(const Vector& values, double dx, double period);

FspResult run_fsp(const ExperimentConfig& config, const TaskData& data);

}  // namespace lapnet

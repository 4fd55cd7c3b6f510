#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "lapnet/errors.hpp"
#include "lapnet/experiment.hpp"
#include "oracles.hpp"

using namespace lapnet;
namespace fs = std::filesystem;

namespace {

const PlotArtifact* find(const std::vector<PlotArtifact>& as, const std::string& name) {
  for (const auto& a : as) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

ExperimentConfig small_sine() {
  ExperimentConfig c = default_config(Task::sine_regression);
  c.model = ModelSpec::mlp(1, {12}, 1, ActivationKind::tanh);
  c.data.n = 60;
  c.data.n_test = 40;
  c.train.steps = 400;
  c.train.lr = 2e-2;
  c.laplace.calibration.grid = GridSpec{-3, 3, 13};
  c.laplace.grid_n = 21;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("lapnet_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Config, UnknownKeysAndBadEnumsAreConfigErrors) {
  using nlohmann::ordered_json;
  EXPECT_THROW(config_from_json(ordered_json::parse(R"({"task": "sine_regression", "bogus": 1})")),
               ConfigError);
  EXPECT_THROW(config_from_json(ordered_json::parse(R"({"task": "spiral"})")), ConfigError);
  EXPECT_THROW(
      config_from_json(ordered_json::parse(R"({"task": "sine_regression", "laplace": {"curv": "kfac"}})")),
      ConfigError);
  EXPECT_THROW(config_from_json(ordered_json::parse(R"({"task": "sine_regression", "train": {"steps": 0}})")),
               ConfigError);
  EXPECT_THROW(load_config("/nonexistent/config.json"), Error);
}

TEST(Config, OverridesApply) {
  const auto c = config_from_json(nlohmann::ordered_json::parse(
      R"({"task": "sine_regression", "seed": 9, "train": {"steps": 17},
          "laplace": {"curv": "diagonal", "calibration": {"objective": "nll", "method": "gd"}}})"));
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.train.steps, 17);
  EXPECT_EQ(c.laplace.curv, CurvStructure::diagonal);
  EXPECT_EQ(c.laplace.calibration.objective, CalibObjective::nll);
  EXPECT_EQ(c.laplace.calibration.method, CalibMethod::gradient);
}

TEST(GenData, NoiselessTargetsAreExact) {
  ExperimentConfig c = default_config(Task::sine_regression);
  c.data.noise = 0.0;
  const auto d = gen_data(c);
  for (const Batch* b : {&d.train, &d.valid, &d.test}) {
    ASSERT_GT(b->size(), 0);
    for (Index i = 0; i < b->size(); ++i) {
      EXPECT_EQ(b->targets(i, 0), std::sin(2.0 * std::numbers::pi * b->inputs(i, 0)));
    }
  }
  EXPECT_EQ(d.train.size() + d.valid.size(), c.data.n);
}

TEST(GenData, NoiseVariance) {
  ExperimentConfig c = default_config(Task::sine_regression);
  c.data.n = 10000;
  c.data.noise = 0.1;
  const auto d = gen_data(c);
  const Vector r = d.train.targets.col(0) -
                   (2.0 * std::numbers::pi * d.train.inputs.col(0)).array().sin().matrix();
  const double var = r.squaredNorm() / static_cast<double>(r.size());
  EXPECT_NEAR(var, 0.01, 0.001);
}

TEST(GenData, MoonsLabelsAndDeterminism) {
  const auto c = default_config(Task::moons_classification);
  const auto a = gen_data(c);
  const auto b = gen_data(c);
  EXPECT_EQ(a.train.inputs, b.train.inputs);
  for (Index i = 0; i < a.train.size(); ++i) {
    EXPECT_TRUE(a.train.targets(i, 0) == 0.0 || a.train.targets(i, 0) == 1.0);
  }
}

TEST(TrainMap, FitsSineAndIsDeterministic) {
  ExperimentConfig c = small_sine();
  c.train.steps = 2000;
  const auto d = gen_data(c);
  const auto a = train_map(c, d.train);
  const auto b = train_map(c, d.train);
  const FlatVector theta = flatten(a.checkpoint.params);
  EXPECT_EQ(theta, flatten(b.checkpoint.params));
  EXPECT_EQ(a.trace, b.trace);
  const Matrix f = forward(c.model, theta, d.train.inputs);
  const double rmse = std::sqrt((f - d.train.targets).squaredNorm() / static_cast<double>(d.train.size()));
  EXPECT_LT(rmse, 0.2);
}

TEST(RunLaplace, Figure1Ellipse) {
  const ExperimentConfig c = default_config(Task::toy);
  const auto model = oracle::figure1_model();
  const Checkpoint ckpt{model, unflatten(oracle::figure1_theta(), param_template(model)), 0,
                        {LossKind::mse}};
  const auto r = run_laplace(c, ckpt, gen_data(c));
  EXPECT_EQ(r.posterior_dim, 2);
  EXPECT_NEAR(r.calibration.best.prior_prec, 0.2, 1e-15);
  const PlotArtifact* e = find(r.artifacts, "ellipse");
  ASSERT_NE(e, nullptr);
  // Posterior covariance (GGN + 0.2 I)^-1 has eigenvalues 5 and 1 / 1.71573.
  EXPECT_NEAR(e->values(0, 3), std::sqrt(5.0), 1e-5);
  EXPECT_NEAR(e->values(0, 4), std::sqrt(1.0 / (0.2 + 1.5157266)), 1e-5);
  EXPECT_NEAR(e->values(1, 3), 2.0 * std::sqrt(5.0), 1e-5);
  EXPECT_NEAR(e->values(0, 1), 1.6556547, 1e-12);
  ASSERT_NE(find(r.artifacts, "grid"), nullptr);
}

TEST(RunLaplace, LastLayerMaskDimension) {
  ExperimentConfig c = small_sine();
  c.laplace.mask = MaskKind::last_layer;
  const auto d = gen_data(c);
  const auto m = train_map(c, d.train);
  const auto r = run_laplace(c, m.checkpoint, d);
  EXPECT_EQ(r.posterior_dim, 12 + 1);
  EXPECT_TRUE(std::isfinite(r.evidence.lml));
}

TEST(Sweep, CellCountOrderAndThreads) {
  ExperimentConfig c = small_sine();
  c.sweep.rows = {{CurvStructure::full, MaskKind::last_layer}, {CurvStructure::diagonal, MaskKind::all}};
  c.sweep.objectives = {CalibObjective::lml, CalibObjective::nll};
  c.sweep.methods = {CalibMethod::grid_search};
  c.sweep.pushforwards = {PushKind::linear};
  const auto d = gen_data(c);
  const auto m = train_map(c, d.train);
  const auto one = run_sweep(c, m.checkpoint, d, 1);
  const auto two = run_sweep(c, m.checkpoint, d, 2);
  ASSERT_EQ(one.cells.size(), 4u);
  EXPECT_EQ(one.cells[0].row, "full_last_layer");
  EXPECT_EQ(one.cells[3].objective, CalibObjective::nll);
  for (const auto& cell : one.cells) EXPECT_EQ(cell.status, "ok");
  EXPECT_EQ(sweep_table(one).rows, sweep_table(two).rows);
}

TEST(Csv, SeventeenDigitRoundTrip) {
  const fs::path dir = scratch("csv");
  const Matrix v{{0.1, 1.0 / 3.0}, {std::numbers::pi, -2.5e-300}};
  write_csv(dir / "v.csv", {"a", "b"}, v);
  const CsvTable t = read_csv(dir / "v.csv");
  EXPECT_EQ(t.numeric("a")(0), 0.1);
  EXPECT_EQ(t.numeric("b")(0), 1.0 / 3.0);
  EXPECT_EQ(t.numeric("a")(1), std::numbers::pi);
  EXPECT_EQ(t.numeric("b")(1), -2.5e-300);
  EXPECT_THROW(t.column("c"), IoError);
}

TEST(PlotData, EmptyInputWritesNothing) {
  const fs::path dir = scratch("plot");
  EXPECT_TRUE(emit_plot_data({}, dir).empty());
  EXPECT_TRUE(fs::is_empty(dir));
  const std::vector<PlotArtifact> one{{"curve", {"x", "y"}, Matrix{{0.0, 1.0}}}};
  const auto written = emit_plot_data(one, dir);
  ASSERT_EQ(written.size(), 1u);
  EXPECT_TRUE(fs::exists(written[0]));
  EXPECT_EQ(artifacts_from_json(artifacts_to_json(one))[0].values, one[0].values);
}

TEST(Fsp, AutocorrelationRecoversPeriod) {
  const double dx = 0.01;
  Vector v(401);
  for (Index i = 0; i < v.size(); ++i) v(i) = std::sin(2.0 * std::numbers::pi * dx * i / 1.3);
  EXPECT_NEAR(autocorrelation_peak(v, dx, 1.3), 1.3, 2 * dx);
}

// Command-line front end for the experiment harness.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lapnet/checkpoint.hpp"
#include "lapnet/csv.hpp"
#include "lapnet/errors.hpp"
#include "lapnet/experiment.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace lapnet;

namespace {

enum ExitCode { kOk = 0, kConfig = 1, kNumerical = 2, kIo = 3 };

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  Index threads = 1;
  std::string task = "sine_regression";
};

ExperimentConfig resolve(const Globals& g) {
  ExperimentConfig c;
  if (!g.config.empty()) {
    c = load_config(g.config);
  } else if (g.task == "sine_regression") {
    c = default_config(Task::sine_regression);
  } else if (g.task == "moons_classification") {
    c = default_config(Task::moons_classification);
  } else if (g.task == "toy") {
    c = default_config(Task::toy);
  } else {
    throw ConfigError("unknown task: " + g.task);
  }
  if (g.seed) c.seed = *g.seed;
  return c;
}

fs::path out_dir(const Globals& g) {
  std::error_code ec;
  fs::create_directories(g.out_dir, ec);
  if (ec) throw IoError("cannot create " + g.out_dir + ": " + ec.message());
  return g.out_dir;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint checkpoint_for(const ExperimentConfig& c, const std::string& path,
                          const TaskData& data) {
  if (!path.empty()) {
    if (!fs::exists(path)) throw IoError("checkpoint not found: " + path);
    return load_checkpoint(path);
  }
  std::cerr << "no --checkpoint given; training a MAP network first\n";
  return train_map(c, data.train).checkpoint;
}

void cmd_gen_data(const Globals& g) {
  const ExperimentConfig c = resolve(g);
  const TaskData d = gen_data(c);
  const fs::path dir = out_dir(g);
  write_csv(dir / "train.csv", batch_table(d.train));
  write_csv(dir / "valid.csv", batch_table(d.valid));
  write_csv(dir / "test.csv", batch_table(d.test));
}

void cmd_train(const Globals& g) {
  const ExperimentConfig c = resolve(g);
  const TaskData d = gen_data(c);
  const MapResult r = train_map(c, d.train);
  const fs::path dir = out_dir(g);
  save_checkpoint(dir / "checkpoint.json", r.checkpoint);
  Matrix trace(static_cast<Index>(r.trace.size()), 2);
  for (std::size_t i = 0; i < r.trace.size(); ++i) {
    trace.row(static_cast<Index>(i)) << static_cast<double>(i), r.trace[i];
  }
  write_csv(dir / "train_trace.csv", {"step", "objective"}, trace);
}

void cmd_laplace(const Globals& g, const std::string& ckpt_path) {
  const ExperimentConfig c = resolve(g);
  const TaskData d = gen_data(c);
  const Checkpoint ckpt = checkpoint_for(c, ckpt_path, d);
  const LaplaceResult r = run_laplace(c, ckpt, d);
  const fs::path dir = out_dir(g);
  write_json(dir / "estimate.json", estimate_to_json(r.estimate));
  json summary = {{"structure", r.evidence.structure},
                  {"prior_prec", r.calibration.best.prior_prec},
                  {"obs_noise", r.calibration.best.obs_noise},
                  {"objective", r.calibration.objective_name},
                  {"method", to_string(r.calibration.method)},
                  {"halted", r.calibration.halted},
                  {"joint", r.evidence.joint},
                  {"complexity", r.evidence.complexity},
                  {"lml", r.evidence.lml},
                  {"posterior_dim", r.posterior_dim}};
  write_json(dir / "laplace.json", summary);
  write_json(dir / "artifacts.json", artifacts_to_json(r.artifacts));
  emit_plot_data(r.artifacts, dir);
}

void cmd_sweep(const Globals& g, const std::string& ckpt_path, bool timing) {
  const ExperimentConfig c = resolve(g);
  const TaskData d = gen_data(c);
  const Checkpoint ckpt = checkpoint_for(c, ckpt_path, d);
  const SweepReport r = run_sweep(c, ckpt, d, g.threads);
  const fs::path dir = out_dir(g);
  write_csv(dir / "sweep.csv", sweep_table(r));
  // Wall-clock seconds differ between runs, so they are opt-in.
  if (timing) write_csv(dir / "sweep_timing.csv", sweep_timing_table(r));
  std::size_t failed = 0;
  for (const auto& cell : r.cells) failed += cell.status != "ok";
  std::cerr << r.cells.size() << " cells, " << failed << " not ok\n";
}

void cmd_fsp(const Globals& g) {
  const ExperimentConfig c = resolve(g);
  const TaskData d = gen_data(c);
  const FspResult r = run_fsp(c, d);
  const fs::path dir = out_dir(g);
  write_json(dir / "fsp.json", {{"rank", r.posterior.rank},
                                {"truncation", r.posterior.truncation},
                                {"lanczos_rank", r.posterior.lanczos_rank},
                                {"bound_unmet", r.posterior.bound_unmet},
                                {"bound_holds", r.bound_holds},
                                {"init_nll", r.init_nll},
                                {"final_nll", r.final_nll},
                                {"estimated_period", r.estimated_period}});
  Matrix trace(static_cast<Index>(r.training.objective_trace.size()), 2);
  for (std::size_t i = 0; i < r.training.objective_trace.size(); ++i) {
    trace.row(static_cast<Index>(i)) << static_cast<double>(i), r.training.objective_trace[i];
  }
  write_csv(dir / "fsp_trace.csv", {"step", "objective"}, trace);
  emit_plot_data(r.artifacts, dir);
}

void cmd_plot_data(const Globals& g, const std::vector<std::string>& inputs) {
  std::vector<PlotArtifact> all;
  for (const auto& path : inputs) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    json j;
    try {
      j = json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path + " is not valid JSON: " + e.what());
    }
    auto a = artifacts_from_json(j);
    all.insert(all.end(), a.begin(), a.end());
  }
  if (all.empty()) return;
  for (const auto& p : emit_plot_data(all, g.out_dir)) std::cout << p.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Laplace approximations for small neural networks"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON experiment config")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Override the config seed");
  app.add_option("--out-dir", g.out_dir, "Output directory");
  app.add_option("--threads", g.threads, "Sweep worker threads")->check(CLI::PositiveNumber);
  app.add_option("--task", g.task, "Task defaults when no config is given")
      ->check(CLI::IsMember({"sine_regression", "moons_classification", "toy"}));

  std::string ckpt;
  std::vector<std::string> inputs;
  auto* gen = app.add_subcommand("gen-data", "Write train/valid/test CSVs");
  auto* train = app.add_subcommand("train", "Train the MAP network and save a checkpoint");
  auto* laplace = app.add_subcommand("laplace", "Fit, calibrate and evaluate one posterior");
  laplace->add_option("--checkpoint", ckpt, "Checkpoint JSON (trains one if omitted)");
  auto* sweep = app.add_subcommand("sweep", "Structure x calibration x pushforward sweep");
  sweep->add_option("--checkpoint", ckpt, "Checkpoint JSON (trains one if omitted)");
  bool timing = false;
  sweep->add_flag("--timing", timing, "Also write sweep_timing.csv");
  auto* fsp = app.add_subcommand("fsp", "Function-space prior demo");
  auto* plot = app.add_subcommand("plot-data", "Turn artifact JSON into plot CSVs");
  plot->add_option("--input", inputs, "Artifact JSON files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (gen->parsed()) cmd_gen_data(g);
    else if (train->parsed()) cmd_train(g);
    else if (laplace->parsed()) cmd_laplace(g, ckpt);
    else if (sweep->parsed()) cmd_sweep(g, ckpt, timing);
    else if (fsp->parsed()) cmd_fsp(g);
    else if (plot->parsed()) cmd_plot_data(g, inputs);
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const Error& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumerical;
  }
}

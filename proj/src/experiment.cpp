#include "lapnet/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

#include "lapnet/data.hpp"
#include "lapnet/errors.hpp"
#include "lapnet/metrics.hpp"
#include "lapnet/optim.hpp"
#include "lapnet/posterior.hpp"
#include "lapnet/pushforward.hpp"

namespace lapnet {

using json = nlohmann::ordered_json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over (seed, stream)
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

template <class E>
E parse_enum(const std::string& name, std::initializer_list<E> values, const char* what) {
  for (E v : values) {
    if (to_string(v) == name) return v;
  }
  throw ConfigError(std::string("unknown ") + what + ": " + name);
}

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& section) {
  if (!j.is_object()) throw ConfigError(section + " must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!ok.count(key)) throw ConfigError("unknown key '" + key + "' in " + section);
  }
}

Matrix matrix_from(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw ConfigError(what + " must be a non-empty array");
  const Index rows = static_cast<Index>(j.size());
  const Index cols = static_cast<Index>(j.at(0).size());
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    if (static_cast<Index>(j.at(i).size()) != cols) throw ConfigError(what + " is ragged");
    for (Index k = 0; k < cols; ++k) m(i, k) = j.at(i).at(k).get<double>();
  }
  return m;
}

ModelSpec figure1_model() {
  ModelSpec m;
  m.input_dim = 1;
  m.output_dim = 1;
  m.layers = {DenseLayer{1, 1, false, -1.0}, ActivationLayer{ActivationKind::relu},
              DenseLayer{1, 1, false, 0.0}};
  return m;
}

std::string sanitize(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Names

std::string to_string(Task t) {
  switch (t) {
    case Task::sine_regression: return "sine_regression";
    case Task::moons_classification: return "moons_classification";
    case Task::toy: return "toy";
  }
  return "unknown";
}

std::string to_string(CurvStructure s) {
  switch (s) {
    case CurvStructure::full: return "full";
    case CurvStructure::diagonal: return "diagonal";
    case CurvStructure::lanczos: return "lanczos";
    case CurvStructure::lobpcg: return "lobpcg";
  }
  return "unknown";
}

std::string to_string(MaskKind m) { return m == MaskKind::all ? "all" : "last_layer"; }

std::string to_string(PushKind p) { return p == PushKind::linear ? "linear" : "nonlinear"; }

std::string to_string(CalibObjective o) {
  switch (o) {
    case CalibObjective::lml: return "lml";
    case CalibObjective::nll: return "nll";
    case CalibObjective::ece: return "ece";
    case CalibObjective::none: return "none";
  }
  return "unknown";
}

std::string SweepRowSpec::label() const {
  std::string s = to_string(curv);
  if (mask == MaskKind::last_layer) s += "_last_layer";
  return s;
}

// ---------------------------------------------------------------------------
// Configuration

ExperimentConfig default_config(Task task) {
  ExperimentConfig c;
  c.task = task;
  switch (task) {
    case Task::sine_regression:
      c.model = ModelSpec::mlp(1, {50, 50}, 1, ActivationKind::tanh);
      c.loss.kind = LossKind::mse;
      break;
    case Task::moons_classification:
      c.model = ModelSpec::mlp(2, {50, 50}, 2, ActivationKind::tanh);
      c.loss.kind = LossKind::cross_entropy;
      c.data.n = 256;
      c.data.noise = 0.2;
      c.laplace.grid_lower = -1.5;
      c.laplace.grid_upper = 2.5;
      c.laplace.grid_n = 41;
      break;
    case Task::toy:
      c.model = figure1_model();
      c.loss.kind = LossKind::mse;
      c.data.inputs = Matrix{{1.0}, {-1.0}};
      c.data.targets = Matrix{{1.0}, {-1.0}};
      c.laplace.calibration.objective = CalibObjective::none;
      c.laplace.fixed = {0.2, 1.0};
      break;
  }
  return c;
}

namespace {

const auto kCurvs = {CurvStructure::full, CurvStructure::diagonal, CurvStructure::lanczos,
                     CurvStructure::lobpcg};
const auto kObjectives = {CalibObjective::lml, CalibObjective::nll, CalibObjective::ece,
                          CalibObjective::none};
const auto kPush = {PushKind::linear, PushKind::nonlinear};
const auto kMasks = {MaskKind::all, MaskKind::last_layer};

CalibMethod method_from(const std::string& s) {
  if (s == "gs") return CalibMethod::grid_search;
  if (s == "gd") return CalibMethod::gradient;
  throw ConfigError("unknown calibration method: " + s + " (expected gs or gd)");
}

void parse_calibration(const json& j, CalibConfig& c) {
  check_keys(j, {"objective", "method", "grid", "gd"}, "laplace.calibration");
  if (j.contains("objective")) {
    c.objective = parse_enum(j["objective"].get<std::string>(), kObjectives, "objective");
  }
  if (j.contains("method")) c.method = method_from(j["method"].get<std::string>());
  if (j.contains("grid")) {
    const json& g = j["grid"];
    check_keys(g, {"log10_lower", "log10_upper", "n"}, "laplace.calibration.grid");
    c.grid.log10_lower = g.value("log10_lower", c.grid.log10_lower);
    c.grid.log10_upper = g.value("log10_upper", c.grid.log10_upper);
    c.grid.n = g.value("n", c.grid.n);
  }
  if (j.contains("gd")) {
    const json& g = j["gd"];
    check_keys(g, {"steps", "lr", "max_step", "fit_noise", "backtrack"}, "laplace.calibration.gd");
    c.gd.steps = g.value("steps", c.gd.steps);
    c.gd.lr = g.value("lr", c.gd.lr);
    c.gd.max_step = g.value("max_step", c.gd.max_step);
    c.gd.fit_noise = g.value("fit_noise", c.gd.fit_noise);
    c.gd.backtrack = g.value("backtrack", c.gd.backtrack);
  }
}

void parse_laplace(const json& j, LaplaceConfig& l) {
  check_keys(j,
             {"curv", "curvature", "mask", "rank", "max_iters", "tol", "pushforward",
              "predictive", "samples", "calibration", "prior_prec", "obs_noise", "grid"},
             "laplace");
  if (j.contains("curv")) l.curv = parse_enum(j["curv"].get<std::string>(), kCurvs, "curv");
  if (j.contains("curvature")) {
    const std::string k = j["curvature"].get<std::string>();
    if (k == "ggn") l.curvature = CurvatureKind::ggn;
    else if (k == "hessian") l.curvature = CurvatureKind::hessian;
    else throw ConfigError("unknown curvature: " + k);
  }
  if (j.contains("mask")) l.mask = parse_enum(j["mask"].get<std::string>(), kMasks, "mask");
  l.rank = j.value("rank", l.rank);
  l.max_iters = j.value("max_iters", l.max_iters);
  l.tol = j.value("tol", l.tol);
  if (j.contains("pushforward")) {
    l.pushforward = parse_enum(j["pushforward"].get<std::string>(), kPush, "pushforward");
  }
  if (j.contains("predictive")) {
    l.predictive = predictive_from_string(j["predictive"].get<std::string>());
  }
  l.samples = j.value("samples", l.samples);
  if (j.contains("calibration")) parse_calibration(j["calibration"], l.calibration);
  l.fixed.prior_prec = j.value("prior_prec", l.fixed.prior_prec);
  l.fixed.obs_noise = j.value("obs_noise", l.fixed.obs_noise);
  if (j.contains("grid")) {
    const json& g = j["grid"];
    check_keys(g, {"lower", "upper", "n"}, "laplace.grid");
    l.grid_lower = g.value("lower", l.grid_lower);
    l.grid_upper = g.value("upper", l.grid_upper);
    l.grid_n = g.value("n", l.grid_n);
  }
}

SweepRowSpec row_from(const std::string& s) {
  for (auto c : kCurvs) {
    for (auto m : kMasks) {
      SweepRowSpec r{c, m};
      if (r.label() == s) return r;
    }
  }
  throw ConfigError("unknown sweep row: " + s);
}

void parse_sweep(const json& j, SweepConfig& s) {
  check_keys(j, {"rows", "objectives", "methods", "pushforwards", "probe_center", "probe_outside"},
             "sweep");
  if (j.contains("rows")) {
    s.rows.clear();
    for (const auto& r : j["rows"]) s.rows.push_back(row_from(r.get<std::string>()));
  }
  if (j.contains("objectives")) {
    s.objectives.clear();
    for (const auto& o : j["objectives"]) {
      s.objectives.push_back(parse_enum(o.get<std::string>(), kObjectives, "objective"));
    }
  }
  if (j.contains("methods")) {
    s.methods.clear();
    for (const auto& m : j["methods"]) s.methods.push_back(method_from(m.get<std::string>()));
  }
  if (j.contains("pushforwards")) {
    s.pushforwards.clear();
    for (const auto& p : j["pushforwards"]) {
      s.pushforwards.push_back(parse_enum(p.get<std::string>(), kPush, "pushforward"));
    }
  }
  if (j.contains("probe_center")) s.probe_center = j["probe_center"].get<std::vector<double>>();
  if (j.contains("probe_outside")) s.probe_outside = j["probe_outside"].get<std::vector<double>>();
}

void parse_fsp(const json& j, FspConfig& f) {
  check_keys(j,
             {"prior", "context", "steps", "batch_size", "lr", "obs_noise", "max_lanczos_rank",
              "grid_n", "window"},
             "fsp");
  if (j.contains("prior")) {
    const json& p = j["prior"];
    check_keys(p, {"kind", "variance", "lengthscale", "period", "jitter"}, "fsp.prior");
    if (p.contains("kind")) f.kernel.kind = kernel_from_string(p["kind"].get<std::string>());
    f.kernel.variance = p.value("variance", f.kernel.variance);
    f.kernel.lengthscale = p.value("lengthscale", f.kernel.lengthscale);
    f.kernel.period = p.value("period", f.kernel.period);
    f.jitter = p.value("jitter", f.jitter);
  }
  if (j.contains("context")) {
    const json& c = j["context"];
    check_keys(c, {"sampler", "n_train", "n_posterior", "domain"}, "fsp.context");
    if (c.contains("sampler")) {
      f.sampler = context_sampler_from_string(c["sampler"].get<std::string>());
    }
    f.n_train_context = c.value("n_train", f.n_train_context);
    f.n_posterior_context = c.value("n_posterior", f.n_posterior_context);
    if (c.contains("domain")) {
      const auto d = c["domain"].get<std::vector<double>>();
      if (d.size() != 2) throw ConfigError("fsp.context.domain must be [lower, upper]");
      f.domain_lower = d[0];
      f.domain_upper = d[1];
    }
  }
  f.steps = j.value("steps", f.steps);
  f.batch_size = j.value("batch_size", f.batch_size);
  f.lr = j.value("lr", f.lr);
  f.obs_noise = j.value("obs_noise", f.obs_noise);
  f.max_lanczos_rank = j.value("max_lanczos_rank", f.max_lanczos_rank);
  f.grid_n = j.value("grid_n", f.grid_n);
  if (j.contains("window")) {
    const auto w = j["window"].get<std::vector<double>>();
    if (w.size() != 2) throw ConfigError("fsp.window must be [lower, upper]");
    f.window_lower = w[0];
    f.window_upper = w[1];
  }
}

void validate(const ExperimentConfig& c) {
  c.model.validate();
  if (c.loss.kind == LossKind::mse && c.task == Task::moons_classification) {
    throw ConfigError("moons_classification needs the cross_entropy loss");
  }
  if (c.loss.kind == LossKind::cross_entropy && c.task == Task::sine_regression) {
    throw ConfigError("sine_regression needs the mse loss");
  }
  if (c.task == Task::toy && (c.data.inputs.rows() == 0 ||
                              c.data.inputs.rows() != c.data.targets.rows())) {
    throw ConfigError("toy task needs inline data.inputs and data.targets of equal length");
  }
  if (c.data.n < 2 || c.data.n_test < 1) throw ConfigError("data sizes are too small");
  if (c.train.steps < 1) throw ConfigError("train.steps must be positive");
  if (!(c.train.lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (!(c.train.prior_prec >= 0.0)) throw ConfigError("train.prior_prec must be non-negative");
  if (c.train.batch_size < 0) throw ConfigError("train.batch_size must be non-negative");
  if (c.fsp.steps < 1) throw ConfigError("fsp.steps must be positive");
  if (c.laplace.rank < 1) throw ConfigError("laplace.rank must be positive");
  if (c.laplace.samples < 2) throw ConfigError("laplace.samples must be at least 2");
  if (c.laplace.grid_n < 2) throw ConfigError("laplace.grid.n must be at least 2");
  c.laplace.calibration.grid.validate();
  c.laplace.fixed.validate();
  if (c.fsp.grid_n < 2) throw ConfigError("fsp.grid_n must be at least 2");
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  try {
    check_keys(j, {"task", "seed", "model", "loss", "data", "train", "laplace", "sweep", "fsp"},
               "config");
    const Task task = j.contains("task")
                          ? parse_enum(j["task"].get<std::string>(),
                                       {Task::sine_regression, Task::moons_classification,
                                        Task::toy},
                                       "task")
                          : Task::sine_regression;
    ExperimentConfig c = default_config(task);
    c.seed = j.value("seed", c.seed);
    if (j.contains("model")) {
      const json& m = j["model"];
      if (m.contains("layers")) {
        c.model = model_from_json(m);
      } else {
        check_keys(m, {"hidden", "activation"}, "model");
        c.model = ModelSpec::mlp(
            c.model.input_dim, m.value("hidden", std::vector<Index>{50, 50}),
            c.model.output_dim,
            activation_from_string(m.value("activation", std::string("tanh"))));
      }
    }
    if (j.contains("loss")) c.loss.kind = loss_from_string(j["loss"].get<std::string>());
    if (j.contains("data")) {
      const json& d = j["data"];
      check_keys(d, {"n", "noise", "n_test", "clusters", "train_frac", "inputs", "targets"}, "data");
      c.data.n = d.value("n", c.data.n);
      c.data.noise = d.value("noise", c.data.noise);
      c.data.n_test = d.value("n_test", c.data.n_test);
      c.data.train_frac = d.value("train_frac", c.data.train_frac);
      if (d.contains("clusters")) {
        c.data.clusters.clear();
        for (const auto& iv : d["clusters"]) {
          const auto v = iv.get<std::vector<double>>();
          if (v.size() != 2) throw ConfigError("data.clusters entries must be [lower, upper]");
          c.data.clusters.emplace_back(v[0], v[1]);
        }
      }
      if (d.contains("inputs")) c.data.inputs = matrix_from(d["inputs"], "data.inputs");
      if (d.contains("targets")) c.data.targets = matrix_from(d["targets"], "data.targets");
    }
    if (j.contains("train")) {
      const json& t = j["train"];
      check_keys(t, {"steps", "lr", "prior_prec", "batch_size"}, "train");
      c.train.steps = t.value("steps", c.train.steps);
      c.train.lr = t.value("lr", c.train.lr);
      c.train.prior_prec = t.value("prior_prec", c.train.prior_prec);
      c.train.batch_size = t.value("batch_size", c.train.batch_size);
    }
    if (j.contains("laplace")) parse_laplace(j["laplace"], c.laplace);
    if (j.contains("sweep")) parse_sweep(j["sweep"], c.sweep);
    if (j.contains("fsp")) parse_fsp(j["fsp"], c.fsp);
    validate(c);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  } catch (const DimensionError& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  } catch (const DomainError& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Data and training

TaskData gen_data(const ExperimentConfig& config) {
  const auto& d = config.data;
  switch (config.task) {
    case Task::sine_regression: {
      SineOptions opts{d.n, d.noise, d.clusters};
      const Batch all = gen_sine(opts, derive_seed(config.seed, 1));
      auto [train, valid] = split(all, d.train_frac, derive_seed(config.seed, 2));
      opts.n = d.n_test;
      return {train, valid, gen_sine(opts, derive_seed(config.seed, 3))};
    }
    case Task::moons_classification: {
      const Batch all = gen_moons(d.n, d.noise, derive_seed(config.seed, 1));
      auto [train, valid] = split(all, d.train_frac, derive_seed(config.seed, 2));
      return {train, valid, gen_moons(d.n_test, d.noise, derive_seed(config.seed, 3))};
    }
    case Task::toy: {
      const Batch b{d.inputs, d.targets};
      return {b, b, b};
    }
  }
  throw ConfigError("unknown task");
}

CsvTable batch_table(const Batch& b) {
  CsvTable t;
  for (Index j = 0; j < b.inputs.cols(); ++j) t.header.push_back("x" + std::to_string(j));
  for (Index j = 0; j < b.targets.cols(); ++j) t.header.push_back("y" + std::to_string(j));
  for (Index i = 0; i < b.size(); ++i) {
    std::vector<std::string> row;
    for (Index j = 0; j < b.inputs.cols(); ++j) row.push_back(format_double(b.inputs(i, j)));
    for (Index j = 0; j < b.targets.cols(); ++j) row.push_back(format_double(b.targets(i, j)));
    t.rows.push_back(std::move(row));
  }
  return t;
}

MapResult train_map(const ExperimentConfig& config, const Batch& train) {
  train.validate();
  const ModelSpec& model = config.model;
  const TrainConfig& tc = config.train;
  if (tc.steps < 1) throw ConfigError("train.steps must be positive");
  const Index n = train.size();
  const Index b = tc.batch_size > 0 ? std::min(tc.batch_size, n) : n;
  const double scale = static_cast<double>(n) / static_cast<double>(b);

  MapResult out;
  const std::uint64_t init_seed = derive_seed(config.seed, 10);
  FlatVector theta = flatten(init_params(model, init_seed));
  Adam adam(theta.size(), AdamOptions{tc.lr});
  std::mt19937_64 rng(derive_seed(config.seed, 11));
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  Index cursor = n;

  for (Index step = 0; step < tc.steps; ++step) {
    Batch batch = train;
    if (b < n) {
      if (cursor + b > n) {
        for (Index i = n - 1; i > 0; --i) {
          std::swap(order[i], order[rng() % static_cast<std::uint64_t>(i + 1)]);
        }
        cursor = 0;
      }
      batch = take_rows(train, std::vector<Index>(order.begin() + cursor,
                                                  order.begin() + cursor + b));
      cursor += b;
    }
    const double value = scale * total_loss(model, theta, batch, config.loss) +
                         0.5 * tc.prior_prec * theta.squaredNorm();
    const FlatVector g = scale * grad(model, theta, batch, config.loss) + tc.prior_prec * theta;
    out.trace.push_back(value);
    if (!std::isfinite(value) || !g.allFinite()) {
      std::ostringstream os;
      os << "MAP training diverged at step " << step << "; last objectives:";
      for (std::size_t i = out.trace.size() >= 5 ? out.trace.size() - 5 : 0;
           i < out.trace.size(); ++i) {
        os << ' ' << out.trace[i];
      }
      throw NumericalError(os.str());
    }
    const double progress = static_cast<double>(step) / static_cast<double>(tc.steps);
    adam.set_lr(tc.lr * (0.05 + 0.95 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress))));
    adam.step(theta, g);
  }
  out.checkpoint = {model, unflatten(theta, param_template(model)), init_seed, config.loss};
  return out;
}

// ---------------------------------------------------------------------------
// Plot artifacts

json artifacts_to_json(const std::vector<PlotArtifact>& artifacts) {
  json arr = json::array();
  for (const auto& a : artifacts) {
    json rows = json::array();
    for (Index i = 0; i < a.values.rows(); ++i) {
      json r = json::array();
      for (Index k = 0; k < a.values.cols(); ++k) r.push_back(a.values(i, k));
      rows.push_back(std::move(r));
    }
    arr.push_back({{"name", a.name}, {"header", a.header}, {"values", std::move(rows)}});
  }
  return arr;
}

std::vector<PlotArtifact> artifacts_from_json(const json& j) {
  try {
    std::vector<PlotArtifact> out;
    for (const auto& e : j) {
      PlotArtifact a;
      a.name = e.at("name").get<std::string>();
      a.header = e.at("header").get<std::vector<std::string>>();
      const json& v = e.at("values");
      a.values.resize(static_cast<Index>(v.size()), static_cast<Index>(a.header.size()));
      for (Index i = 0; i < a.values.rows(); ++i) {
        for (Index k = 0; k < a.values.cols(); ++k) {
          const json& x = v.at(i).at(k);
          a.values(i, k) = x.is_null() ? kNaN : x.get<double>();
        }
      }
      out.push_back(std::move(a));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed artifact JSON: ") + e.what());
  }
}

std::vector<std::filesystem::path> emit_plot_data(const std::vector<PlotArtifact>& artifacts,
                                                  const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  if (artifacts.empty()) return out;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  for (const auto& a : artifacts) {
    const auto path = dir / (a.name + ".csv");
    write_csv(path, a.header, a.values);
    out.push_back(path);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Laplace pipeline

namespace {

ParamMask make_mask(const ModelSpec& model, MaskKind kind) {
  return kind == MaskKind::all ? ParamMask::all(model.param_count())
                               : ParamMask::last_layer(model);
}

CurvEstimate estimate(const ExperimentConfig& config, const ModelSpec& model,
                      const FlatVector& theta, const Batch& train, CurvStructure structure,
                      MaskKind mask_kind, std::uint64_t seed) {
  const std::vector<Batch> data{train};
  const CurvatureOperator base = config.laplace.curvature == CurvatureKind::hessian
                                     ? hessian_vp(model, config.loss, data, theta)
                                     : ggn_vp(model, config.loss, data, theta);
  const CurvatureOperator op = restrict_to(base, make_mask(model, mask_kind));
  const Index rank = std::min(config.laplace.rank, op.dim());
  switch (structure) {
    case CurvStructure::full: return estimate_full(op);
    case CurvStructure::diagonal: return estimate_diagonal(op);
    case CurvStructure::lanczos:
      return estimate_lanczos(op, {rank, seed, config.laplace.tol, config.laplace.max_iters});
    case CurvStructure::lobpcg:
      return estimate_lobpcg(op, {rank, 0, seed, config.laplace.tol, config.laplace.max_iters});
  }
  throw ConfigError("unknown curvature structure");
}

// Predictions of one posterior on one set of inputs.
struct Predictions {
  Matrix mean;  // regression: N x C means; classification: N x C probabilities
  Matrix var;   // regression: epistemic variances, N x C
};

struct PipelineContext {
  const ExperimentConfig* config;
  ModelSpec model;
  FlatVector theta;
  ParamMask mask;
  bool classification;
  std::uint64_t sample_seed;
};

Predictions predict(const PipelineContext& ctx, const PosteriorState& post, PushKind push,
                    const Matrix& inputs) {
  const Index c = ctx.model.output_dim;
  const Index n = inputs.rows();
  Predictions p{Matrix(n, c), Matrix::Zero(n, c)};
  const auto& lc = ctx.config->laplace;
  if (push == PushKind::linear) {
    const auto gs = linear_pushforward(ctx.model, ctx.theta, post, ctx.mask, inputs);
    PredictiveOptions opts{kDefaultMeanFieldScale, lc.samples, ctx.sample_seed};
    for (Index i = 0; i < n; ++i) {
      if (ctx.classification) {
        p.mean.row(i) = predictive(lc.predictive, {gs[i].mean, gs[i].cov}, opts).transpose();
      } else {
        p.mean.row(i) = gs[i].mean.transpose();
        p.var.row(i) = gs[i].cov.diagonal().cwiseMax(0.0).transpose();
      }
    }
    return p;
  }
  const auto ens = nonlinear_pushforward(ctx.model, ctx.theta, post, ctx.mask, inputs,
                                         lc.samples, ctx.sample_seed);
  for (Index i = 0; i < n; ++i) {
    if (ctx.classification) {
      Vector acc = Vector::Zero(c);
      for (Index s = 0; s < ens[i].samples.rows(); ++s) {
        acc += softmax(ens[i].samples.row(s).transpose());
      }
      p.mean.row(i) = (acc / acc.sum()).transpose();
    } else {
      const EnsembleStats st = ensemble_stats(ens[i]);
      p.mean.row(i) = st.mean.transpose();
      p.var.row(i) = st.cov.diagonal().transpose();
    }
  }
  return p;
}

struct Scores {
  double nll = kNaN;
  double crps = kNaN;
  double ece = kNaN;
};

Scores score(const PipelineContext& ctx, const Predictions& p, const Batch& data,
             double obs_noise) {
  Scores s;
  if (ctx.classification) {
    const Vector labels = data.targets.col(0);
    s.nll = categorical_nll(p.mean, labels);
    s.ece = ece(p.mean, labels);
    return s;
  }
  const Index n = data.size();
  const Index c = data.targets.cols();
  double nll = 0.0;
  double crps = 0.0;
  for (Index i = 0; i < n; ++i) {
    for (Index k = 0; k < c; ++k) {
      const double var = p.var(i, k) + obs_noise;
      nll += gaussian_nll(p.mean(i, k), var, data.targets(i, k));
      crps += crps_gaussian(p.mean(i, k), std::sqrt(var), data.targets(i, k));
    }
  }
  s.nll = nll / static_cast<double>(n * c);
  s.crps = crps / static_cast<double>(n * c);
  return s;
}

// sigma^2 plug-in: mean squared training residual (mse is half the squared error).
double residual_variance(const FitSummary& fit) {
  if (fit.loss == LossKind::cross_entropy) return 1.0;
  return std::max(2.0 * fit.loss_sum / static_cast<double>(fit.n_outputs), 1e-12);
}

CalibResult calibrate(const PipelineContext& ctx, const CurvEstimate& est,
                      const FitSummary& fit, const CalibConfig& cc, const Batch& valid,
                      PushKind push) {
  const double s2 = residual_variance(fit);
  const bool fit_noise = !ctx.classification && cc.gd.fit_noise;
  GradientOptions gd = cc.gd;
  gd.fit_noise = fit_noise;
  const Hyperparams init{1.0, s2};

  if (cc.objective == CalibObjective::lml) {
    const HyperObjective obj = lml_objective(est, fit);
    if (cc.method == CalibMethod::grid_search) {
      const double log_s2 = std::log(s2);
      return grid_search([&](double tau) { return obj(std::log(tau), log_s2); }, cc.grid,
                         Direction::maximize, s2, "lml");
    }
    return gradient_calibrate(obj, init, Direction::maximize, gd, std::nullopt, "lml");
  }
  if (cc.objective == CalibObjective::ece && !ctx.classification) {
    throw ConfigError("ece calibration needs a classification task");
  }
  // Downstream metric on the validation split under the given pushforward.
  const bool use_ece = cc.objective == CalibObjective::ece;
  auto metric = [&ctx, &est, &valid, use_ece, push](double tau, double sigma2) {
    const Hyperparams hp{tau, ctx.classification ? 1.0 : sigma2};
    const PosteriorState post = posterior_fn(est, hp);
    const Scores s = score(ctx, predict(ctx, post, push, valid.inputs), valid,
                           hp.obs_noise);
    return use_ece ? s.ece : s.nll;
  };
  const std::string name = to_string(cc.objective);
  if (cc.method == CalibMethod::grid_search) {
    return grid_search([&](double tau) { return metric(tau, s2); }, cc.grid,
                       Direction::minimize, s2, name);
  }
  return gradient_calibrate(
      [&](double lt, double ls) { return metric(std::exp(lt), std::exp(ls)); }, init,
      Direction::minimize, gd, std::nullopt, name);
}

Matrix linspace_grid(double lo, double hi, Index n, Index dims) {
  const Vector axis = Vector::LinSpaced(n, lo, hi);
  if (dims == 1) return axis;
  if (dims != 2) throw ConfigError("prediction grids support one or two input dimensions");
  Matrix g(n * n, 2);
  for (Index i = 0; i < n; ++i) {
    for (Index k = 0; k < n; ++k) g.row(i * n + k) << axis(i), axis(k);
  }
  return g;
}

PlotArtifact ellipse_artifact(const Vector& center, const Matrix& cov) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  const Vector vals = es.eigenvalues().cwiseMax(0.0);
  const Vector major = es.eigenvectors().col(1);
  const double angle = std::atan2(major(1), major(0));
  PlotArtifact a{"ellipse",
                 {"level", "center_0", "center_1", "axis_major", "axis_minor", "angle"},
                 Matrix(2, 6)};
  for (int level = 1; level <= 2; ++level) {
    a.values.row(level - 1) << level, center(0), center(1), level * std::sqrt(vals(1)),
        level * std::sqrt(vals(0)), angle;
  }
  return a;
}

PlotArtifact calibration_artifact(const CalibResult& r) {
  PlotArtifact a{"calibration", {"step", "tau", "sigma2", "objective"},
                 Matrix(static_cast<Index>(r.trace.size()), 4)};
  for (std::size_t i = 0; i < r.trace.size(); ++i) {
    const auto& t = r.trace[i];
    a.values.row(static_cast<Index>(i)) << static_cast<double>(t.step), t.prior_prec,
        t.obs_noise, t.objective;
  }
  return a;
}

}  // namespace

LaplaceResult run_laplace(const ExperimentConfig& config, const Checkpoint& checkpoint,
                          const TaskData& data) {
  const ModelSpec& model = checkpoint.model;
  const FlatVector theta = flatten(checkpoint.params);
  if (model.input_dim != data.train.inputs.cols()) {
    throw ConfigError("checkpoint input dimension does not match the task data");
  }
  const auto& lc = config.laplace;
  PipelineContext ctx{&config, model, theta, make_mask(model, lc.mask),
                      config.loss.kind == LossKind::cross_entropy,
                      derive_seed(config.seed, 40)};

  LaplaceResult out;
  out.estimate = estimate(config, model, theta, data.train, lc.curv, lc.mask,
                          derive_seed(config.seed, 30));
  const FitSummary fit = summarize_fit(model, theta, {data.train}, config.loss, ctx.mask);
  Hyperparams hp = lc.fixed;
  if (lc.calibration.objective == CalibObjective::none) {
    if (ctx.classification) hp.obs_noise = 1.0;
    out.calibration.best = hp;
    out.calibration.objective_name = "none";
  } else {
    out.calibration =
        calibrate(ctx, out.estimate, fit, lc.calibration, data.valid, lc.pushforward);
    hp = out.calibration.best;
  }
  out.evidence = log_marginal_likelihood(out.estimate, hp, joint_log_likelihood(fit, hp));
  const PosteriorState post = posterior_fn(out.estimate, hp);
  out.posterior_dim = post.dim();

  // Grid predictions.
  const Matrix grid =
      linspace_grid(lc.grid_lower, lc.grid_upper, lc.grid_n, model.input_dim);
  const Predictions pred = predict(ctx, post, lc.pushforward, grid);
  PlotArtifact g;
  g.name = "grid";
  for (Index j = 0; j < grid.cols(); ++j) {
    g.header.push_back(grid.cols() == 1 ? "x" : "x" + std::to_string(j));
  }
  if (ctx.classification) {
    for (Index k = 0; k < model.output_dim; ++k) g.header.push_back("p" + std::to_string(k));
    g.values.resize(grid.rows(), grid.cols() + model.output_dim);
    g.values << grid, pred.mean;
  } else {
    g.header.insert(g.header.end(), {"mean", "std", "std_total"});
    g.values.resize(grid.rows(), grid.cols() + 3);
    g.values << grid, pred.mean.col(0), pred.var.col(0).cwiseSqrt(),
        (pred.var.col(0).array() + hp.obs_noise).sqrt().matrix();
  }
  out.artifacts.push_back(std::move(g));
  if (post.dim() == 2) {
    out.artifacts.push_back(ellipse_artifact(ctx.mask.select(theta), dense_covariance(post)));
  }
  out.artifacts.push_back(calibration_artifact(out.calibration));
  return out;
}

// ---------------------------------------------------------------------------
// Sweep

namespace {

template <class Fn>
void run_pool(std::size_t n_tasks, Index threads, Fn&& fn) {
  const auto workers = static_cast<std::size_t>(std::max<Index>(1, threads));
  std::atomic<std::size_t> next{0};
  auto loop = [&] {
    for (std::size_t i = next++; i < n_tasks; i = next++) fn(i);
  };
  if (workers == 1 || n_tasks <= 1) {
    loop();
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n_tasks); ++w) pool.emplace_back(loop);
  for (auto& t : pool) t.join();
}

struct RowState {
  SweepRowSpec spec;
  std::optional<CurvEstimate> estimate;
  std::string error;
};

double probe_std(const PipelineContext& ctx, const PosteriorState& post, PushKind push,
                 const std::vector<double>& xs, bool take_max) {
  if (xs.empty()) return kNaN;
  Matrix inputs(static_cast<Index>(xs.size()), 1);
  for (std::size_t i = 0; i < xs.size(); ++i) inputs(static_cast<Index>(i), 0) = xs[i];
  const Predictions p = predict(ctx, post, push, inputs);
  const Vector sd = p.var.col(0).cwiseSqrt();
  return take_max ? sd.maxCoeff() : sd.minCoeff();
}

}  // namespace

SweepReport run_sweep(const ExperimentConfig& config, const Checkpoint& checkpoint,
                      const TaskData& data, Index threads) {
  const ModelSpec& model = checkpoint.model;
  const FlatVector theta = flatten(checkpoint.params);
  const auto& sc = config.sweep;
  const bool classification = config.loss.kind == LossKind::cross_entropy;
  const bool probes = !classification && model.input_dim == 1;

  std::vector<RowState> rows(sc.rows.size());
  run_pool(rows.size(), threads, [&](std::size_t r) {
    rows[r].spec = sc.rows[r];
    try {
      rows[r].estimate = estimate(config, model, theta, data.train, sc.rows[r].curv,
                                  sc.rows[r].mask, derive_seed(config.seed, 30));
    } catch (const Error& e) {
      rows[r].error = sanitize(e.what());
    }
  });

  // The evidence does not depend on the pushforward, so one LML calibration
  // serves every pushforward of a row; downstream metrics calibrate per cell.
  struct CalibTask {
    std::size_t row;
    CalibObjective objective;
    CalibMethod method;
    PushKind calib_push;
    std::vector<std::size_t> cells;
  };
  SweepReport report;
  std::vector<CalibTask> tasks;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (auto o : sc.objectives) {
      for (auto m : sc.methods) {
        std::vector<std::size_t> shared;
        for (auto push : sc.pushforwards) {
          const std::size_t idx = report.cells.size();
          SweepCell cell;
          cell.row = rows[r].spec.label();
          cell.objective = o;
          cell.method = m;
          cell.pushforward = push;
          cell.tau = cell.sigma2 = cell.nll = cell.nll_uncalibrated = kNaN;
          cell.crps = cell.ece = cell.std_center = cell.std_outside = kNaN;
          report.cells.push_back(cell);
          if (o == CalibObjective::lml) {
            shared.push_back(idx);
          } else {
            tasks.push_back({r, o, m, push, {idx}});
          }
        }
        if (!shared.empty()) tasks.push_back({r, o, m, PushKind::linear, shared});
      }
    }
  }

  run_pool(tasks.size(), threads, [&](std::size_t t) {
    const CalibTask& task = tasks[t];
    const RowState& row = rows[task.row];
    if (!row.estimate) {
      for (auto idx : task.cells) report.cells[idx].status = "error: " + row.error;
      return;
    }
    const auto start = std::chrono::steady_clock::now();
    const PipelineContext ctx{&config, model, theta, make_mask(model, row.spec.mask),
                              classification, derive_seed(config.seed, 40)};
    CalibResult calib;
    FitSummary fit;
    try {
      fit = summarize_fit(model, theta, {data.train}, config.loss, ctx.mask);
      CalibConfig cc = config.laplace.calibration;
      cc.objective = task.objective;
      cc.method = task.method;
      calib = calibrate(ctx, *row.estimate, fit, cc, data.valid, task.calib_push);
    } catch (const Error& e) {
      for (auto idx : task.cells) report.cells[idx].status = "error: " + sanitize(e.what());
      return;
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const Hyperparams uncal{1.0, residual_variance(fit)};
    for (auto idx : task.cells) {
      SweepCell& cell = report.cells[idx];
      cell.seconds = seconds;
      cell.tau = calib.best.prior_prec;
      cell.sigma2 = calib.best.obs_noise;
      try {
        const PosteriorState post = posterior_fn(*row.estimate, calib.best);
        const Scores s = score(ctx, predict(ctx, post, cell.pushforward, data.test.inputs),
                               data.test, calib.best.obs_noise);
        cell.nll = s.nll;
        cell.crps = s.crps;
        cell.ece = s.ece;
        if (probes) {
          cell.std_center = probe_std(ctx, post, cell.pushforward, sc.probe_center, true);
          cell.std_outside = probe_std(ctx, post, cell.pushforward, sc.probe_outside, false);
        }
        const PosteriorState post0 = posterior_fn(*row.estimate, uncal);
        cell.nll_uncalibrated =
            score(ctx, predict(ctx, post0, cell.pushforward, data.test.inputs), data.test,
                  uncal.obs_noise)
                .nll;
        if (!std::isfinite(cell.nll)) cell.status = "non-finite nll";
      } catch (const Error& e) {
        cell.status = "error: " + sanitize(e.what());
      }
    }
  });
  return report;
}

CsvTable sweep_table(const SweepReport& report) {
  CsvTable t;
  t.header = {"row",      "objective", "method", "pushforward", "column",
              "tau",      "sigma2",    "nll",    "nll_uncalibrated", "crps",
              "ece",      "std_center", "std_outside", "status"};
  for (const auto& c : report.cells) {
    std::string column = to_string(c.objective);
    for (auto& ch : column) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    column += "-" + to_string(c.method) + "-" + (c.pushforward == PushKind::linear ? "L" : "NL");
    t.rows.push_back({c.row, to_string(c.objective), to_string(c.method),
                      to_string(c.pushforward), column, format_double(c.tau),
                      format_double(c.sigma2), format_double(c.nll),
                      format_double(c.nll_uncalibrated), format_double(c.crps),
                      format_double(c.ece), format_double(c.std_center),
                      format_double(c.std_outside), c.status});
  }
  return t;
}

CsvTable sweep_timing_table(const SweepReport& report) {
  CsvTable t;
  t.header = {"row", "objective", "method", "pushforward", "seconds"};
  for (const auto& c : report.cells) {
    t.rows.push_back({c.row, to_string(c.objective), to_string(c.method),
                      to_string(c.pushforward), format_double(c.seconds)});
  }
  return t;
}

// ---------------------------------------------------------------------------
// FSP demo

double autocorrelation_peak(const Vector& values, double dx, double period) {
  if (!(dx > 0.0) || !(period > 0.0)) throw DomainError("spacing and period must be positive");
  const Vector v = values.array() - values.mean();
  const Index n = v.size();
  const auto lo = static_cast<Index>(std::ceil(0.5 * period / dx));
  const auto hi = std::min<Index>(static_cast<Index>(std::floor(1.5 * period / dx)), n - 2);
  if (lo > hi) throw DomainError("window too short for the requested period");
  double best = -std::numeric_limits<double>::infinity();
  Index best_lag = lo;
  for (Index lag = lo; lag <= hi; ++lag) {
    const auto a = v.head(n - lag);
    const auto b = v.tail(n - lag);
    const double denom = std::sqrt(a.squaredNorm() * b.squaredNorm());
    const double r = denom > 0.0 ? a.dot(b) / denom : 0.0;
    if (r > best) {
      best = r;
      best_lag = lag;
    }
  }
  return static_cast<double>(best_lag) * dx;
}

FspResult run_fsp(const ExperimentConfig& config, const TaskData& data) {
  const auto& fc = config.fsp;
  const ModelSpec& model = config.model;
  if (model.input_dim != 1) throw ConfigError("the FSP demo expects one input dimension");
  GPPrior prior{fc.kernel, {}, fc.jitter};
  prior.kernel.validate();
  Box domain{Vector::Constant(1, fc.domain_lower), Vector::Constant(1, fc.domain_upper)};
  domain.validate();

  FspTrainOptions opts;
  opts.steps = fc.steps;
  opts.batch_size = std::min(fc.batch_size, data.train.size());
  opts.n_context = fc.n_train_context;
  opts.sampler = fc.sampler;
  opts.domain = domain;
  opts.obs_noise = fc.obs_noise;
  opts.adam.lr = fc.lr;

  FspResult out;
  const FlatVector init = flatten(init_params(model, derive_seed(config.seed, 20)));
  const double n = static_cast<double>(data.train.size());
  out.init_nll = total_loss(model, init, data.train, config.loss) / n;
  out.training = fsp_train(model, init, prior, data.train, config.loss, opts,
                           derive_seed(config.seed, 21));
  if (out.training.diverged) throw NumericalError("FSP training diverged");
  out.final_nll = total_loss(model, out.training.theta, data.train, config.loss) / n;

  const ContextSet context =
      sample_context(ContextSampler::halton, domain, fc.n_posterior_context, 0);
  FspPosteriorOptions popts;
  popts.max_lanczos_rank = fc.max_lanczos_rank;
  popts.obs_noise = fc.obs_noise;
  popts.seed = derive_seed(config.seed, 22);
  out.posterior =
      fsp_posterior(model, prior, context, data.train, config.loss, out.training.theta, popts);
  const Vector var = fsp_marginal_variance(model, out.posterior, context.points);
  out.bound_holds = (var.array() <= prior.kernel.variance).all();

  const Matrix grid = Vector::LinSpaced(fc.grid_n, fc.domain_lower, fc.domain_upper);
  const auto pred = fsp_predict(model, out.posterior, grid);
  PlotArtifact g{"fsp_grid", {"x", "mean", "std"}, Matrix(grid.rows(), 3)};
  std::vector<double> window;
  for (Index i = 0; i < grid.rows(); ++i) {
    const double sd = std::sqrt(std::max(pred[i].cov(0, 0), 0.0));
    g.values.row(i) << grid(i, 0), pred[i].mean(0), sd;
    if (grid(i, 0) >= fc.window_lower && grid(i, 0) <= fc.window_upper) {
      window.push_back(pred[i].mean(0));
    }
  }
  out.artifacts.push_back(std::move(g));
  const double dx = (fc.domain_upper - fc.domain_lower) / static_cast<double>(fc.grid_n - 1);
  const double period = fc.kernel.kind == KernelKind::periodic ? fc.kernel.period : 1.0;
  out.estimated_period = autocorrelation_peak(
      Eigen::Map<const Vector>(window.data(), static_cast<Index>(window.size())), dx, period);

  PlotArtifact cv{"fsp_context", {"x", "variance", "prior_variance"},
                  Matrix(context.points.rows(), 3)};
  for (Index i = 0; i < context.points.rows(); ++i) {
    cv.values.row(i) << context.points(i, 0), var(i), prior.kernel.variance;
  }
  out.artifacts.push_back(std::move(cv));
  return out;
}

}  // namespace lapnet

#include "lapnet/checkpoint.hpp"

#include <fstream>

#include "lapnet/errors.hpp"

namespace lapnet {

using json = nlohmann::ordered_json;

namespace {

json nested(const Tensor& t, std::size_t axis, std::size_t& pos) {
  if (axis == t.shape.size()) return t.data[pos++];
  json arr = json::array();
  for (Index i = 0; i < t.shape[axis]; ++i) arr.push_back(nested(t, axis + 1, pos));
  return arr;
}

void read_nested(const json& j, const Tensor& shape_of, std::size_t axis,
                 std::vector<double>& out) {
  if (axis == shape_of.shape.size()) {
    if (!j.is_number()) throw ConfigError("expected a number in parameter array");
    out.push_back(j.get<double>());
    return;
  }
  if (!j.is_array() || static_cast<Index>(j.size()) != shape_of.shape[axis]) {
    throw DimensionError("parameter array does not match the model shape");
  }
  for (const auto& e : j) read_nested(e, shape_of, axis + 1, out);
}

json node_to_json(const ParamTree::Node& node) {
  if (node.leaf) {
    std::size_t pos = 0;
    return nested(*node.leaf, 0, pos);
  }
  json obj = json::object();
  for (const auto& c : node.children) obj[c.name] = node_to_json(c);
  return obj;
}

ParamTree tree_from_json(const json& j, const std::vector<ParamTree::Node>& nodes) {
  ParamTree out;
  for (const auto& n : nodes) {
    if (!j.contains(n.name)) throw ConfigError("missing parameter: " + n.name);
    const json& sub = j.at(n.name);
    if (n.leaf) {
      std::vector<double> data;
      read_nested(sub, *n.leaf, 0, data);
      out.add(n.name, Tensor(n.leaf->shape, std::move(data)));
    } else {
      out.add(n.name, tree_from_json(sub, n.children));
    }
  }
  return out;
}

}  // namespace

json model_to_json(const ModelSpec& model) {
  json layers = json::array();
  for (const auto& l : model.layers) {
    if (const auto* d = std::get_if<DenseLayer>(&l)) {
      json e = {{"type", "dense"}, {"in", d->in}, {"out", d->out},
                {"bias", d->with_bias}};
      if (d->offset != 0.0) e["offset"] = d->offset;
      layers.push_back(e);
    } else {
      layers.push_back({{"type", to_string(std::get<ActivationLayer>(l).kind)}});
    }
  }
  return {{"input_dim", model.input_dim},
          {"output_dim", model.output_dim},
          {"layers", layers}};
}

ModelSpec model_from_json(const json& j) {
  try {
    ModelSpec m;
    m.input_dim = j.at("input_dim").get<Index>();
    m.output_dim = j.at("output_dim").get<Index>();
    for (const auto& e : j.at("layers")) {
      const std::string type = e.at("type").get<std::string>();
      if (type == "dense") {
        m.layers.emplace_back(DenseLayer{e.at("in").get<Index>(),
                                         e.at("out").get<Index>(),
                                         e.value("bias", true),
                                         e.value("offset", 0.0)});
      } else {
        m.layers.emplace_back(ActivationLayer{activation_from_string(type)});
      }
    }
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid model spec: ") + e.what());
  } catch (const DomainError& e) {
    throw ConfigError(std::string("invalid model spec: ") + e.what());
  }
}

json params_to_json(const ParamTree& params) {
  json obj = json::object();
  for (const auto& n : params.nodes()) obj[n.name] = node_to_json(n);
  return obj;
}

ParamTree params_from_json(const json& j, const ParamTree& templ) {
  return tree_from_json(j, templ.nodes());
}

json checkpoint_to_json(const Checkpoint& ckpt) {
  return {{"model", model_to_json(ckpt.model)},
          {"params", params_to_json(ckpt.params)},
          {"meta", {{"seed", ckpt.seed}, {"loss", to_string(ckpt.loss.kind)}}}};
}

Checkpoint checkpoint_from_json(const json& j) {
  Checkpoint c;
  c.model = model_from_json(j.at("model"));
  c.params = params_from_json(j.at("params"), param_template(c.model));
  const json& meta = j.at("meta");
  c.seed = meta.value("seed", std::uint64_t{0});
  c.loss.kind = loss_from_string(meta.value("loss", std::string("mse")));
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << checkpoint_to_json(ckpt).dump(1) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed checkpoint " + path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace lapnet

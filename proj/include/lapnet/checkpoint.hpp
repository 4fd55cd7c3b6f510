#pragma once

#include <cstdint>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "lapnet/net.hpp"

namespace lapnet {

/// Trained network on disk:
///   {"model": {...}, "params": {<nested arrays>}, "meta": {"seed", "loss"}}
struct Checkpoint {
  ModelSpec model;
  ParamTree params;
  std::uint64_t seed = 0;
  LossSpec loss;
};

nlohmann::ordered_json model_to_json(const ModelSpec& model);
ModelSpec model_from_json(const nlohmann::ordered_json& j);

/// Leaves become nested row-major arrays; scalars become plain numbers.
nlohmann::ordered_json params_to_json(const ParamTree& params);
ParamTree params_from_json(const nlohmann::ordered_json& j,
                           const ParamTree& templ);

nlohmann::ordered_json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::ordered_json& j);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lapnet

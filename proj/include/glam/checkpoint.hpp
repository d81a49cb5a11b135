#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "json.hpp"

#include "glam/audio.hpp"
#include "glam/model.hpp"

namespace glam {

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// File layout: "GCKP" | u64 manifest length | manifest JSON | GTSR blobs in
/// manifest order. The manifest holds the config, parameter names, kinds,
/// shapes, the training step and free-form metadata.
struct Checkpoint {
  ModelConfig config;
  ParameterSet<float> params;
  std::uint64_t step = 0;
  std::optional<FeatureStats> feature_stats;
  nlohmann::json metadata = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);

/// Loads and validates every parameter name and shape against the stored config.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace glam

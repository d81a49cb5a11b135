#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "glam/audio.hpp"
#include "glam/manifest.hpp"
#include "glam/metrics.hpp"
#include "glam/model.hpp"
#include "glam/training.hpp"

namespace glam {

/// Everything one CLI invocation needs. Settings come from a flat
/// `key = value` file (`#` starts a comment) and then from command-line
/// flags, which win.
struct RunConfig {
  MfccConfig mfcc;
  ModelConfig model;
  TrainConfig train;
  SplitMode split = SplitMode::holdout_80_20;
  std::size_t n_runs = 1;
  DatasetFilter dataset = DatasetFilter::full;
  std::filesystem::path manifest;
  std::filesystem::path out_dir = ".";
  std::filesystem::path cache_dir;  // empty: <out_dir>/cache, or $GLAM_CACHE_DIR
  std::optional<std::uint64_t> seed;
  std::filesystem::path checkpoint;
  std::filesystem::path embeddings;
  std::size_t n_per_class = 25;

  /// Applies one setting; ConfigError for unknown keys or malformed values.
  void set(std::string_view key, std::string_view value);
  /// The model config with its input shape taken from the feature settings.
  ModelConfig resolved_model() const;
  std::uint64_t require_seed() const;
  std::filesystem::path feature_cache_dir() const;
  nlohmann::json to_json() const;
};

/// Keys accepted by RunConfig::set, in documentation order.
const std::vector<std::string>& run_config_keys();

void apply_config_text(RunConfig& cfg, std::string_view text, const std::string& source = "config");
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);

}  // namespace glam

#pragma once

#include <filesystem>
#include <string>

#include "glam/audio.hpp"
#include "glam/experiment.hpp"
#include "glam/manifest.hpp"

namespace glam {

/// Loads, analyzes and segments one utterance.
UtteranceFeatures extract_utterance(const UtteranceRecord& record, const MfccConfig& cfg);

/// $GLAM_CACHE_DIR when set, otherwise `fallback`.
std::filesystem::path resolve_cache_dir(const std::filesystem::path& fallback);

enum class CacheStatus { reused, extracted };

/// One GTSR tensor [segments x frames x coefficients] per utterance plus a
/// JSON sidecar holding the utterance id, label, segment count, source path
/// and the MfccConfig hash. Entries with a different hash are stale.
class FeatureCache {
 public:
  FeatureCache(std::filesystem::path dir, MfccConfig cfg);

  const std::filesystem::path& dir() const { return dir_; }
  const MfccConfig& config() const { return cfg_; }

  bool is_fresh(const UtteranceRecord& record) const;
  /// Extracts and stores the utterance unless a fresh entry exists.
  CacheStatus ensure(const UtteranceRecord& record);
  /// ConfigError when the entry is missing or stale.
  UtteranceFeatures load(const UtteranceRecord& record) const;

  std::filesystem::path tensor_path(const std::string& utterance_id) const;
  std::filesystem::path sidecar_path(const std::string& utterance_id) const;

 private:
  std::filesystem::path dir_;
  MfccConfig cfg_;
  std::string hash_;
};

}  // namespace glam

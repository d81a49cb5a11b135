#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace glam {

inline constexpr std::array<std::string_view, 4> kEmotionLabels{"angry", "happy", "sad", "neutral"};

std::vector<std::string> emotion_label_names();
/// Index into kEmotionLabels; ValidationError for anything else.
int parse_emotion_label(std::string_view label);

struct UtteranceRecord {
  std::string utterance_id;
  std::filesystem::path wav_path;
  int label = 0;
  std::string session;
  bool scripted = false;
};

/// One JSON object per line with utterance_id, wav_path, label, session and
/// scripted. Blank lines are skipped; relative wav paths resolve against
/// `base_dir`.
std::vector<UtteranceRecord> parse_manifest_text(std::string_view text, const std::filesystem::path& base_dir = {});
/// Relative wav paths resolve against the manifest's directory.
std::vector<UtteranceRecord> parse_manifest(const std::filesystem::path& path);

/// Serializes records in the format parse_manifest reads; paths are written
/// as given.
std::string manifest_to_text(const std::vector<UtteranceRecord>& records);

enum class DatasetFilter { improvisation, script, full };

std::string to_string(DatasetFilter filter);
DatasetFilter parse_dataset_filter(std::string_view text);

/// improvisation keeps unscripted records, script the scripted ones, full all.
std::vector<UtteranceRecord> filter_records(const std::vector<UtteranceRecord>& records, DatasetFilter filter);

}  // namespace glam

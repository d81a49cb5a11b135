#include "glam/manifest.hpp"

#include <set>

#include "json.hpp"

#include "glam/error.hpp"
#include "glam/serialize.hpp"

namespace glam {

std::vector<std::string> emotion_label_names() { return {kEmotionLabels.begin(), kEmotionLabels.end()}; }

int parse_emotion_label(std::string_view label) {
  for (std::size_t i = 0; i < kEmotionLabels.size(); ++i) {
    if (kEmotionLabels[i] == label) return static_cast<int>(i);
  }
  std::string msg = "unknown label '" + std::string(label) + "'; expected angry, happy, sad or neutral";
  if (label == "excited") msg += " (map excited to happy when building the manifest)";
  throw ValidationError(msg);
}

namespace {

template <typename T>
T field(const nlohmann::json& j, const char* key, std::size_t line) {
  if (!j.contains(key)) throw ParseError("manifest line " + std::to_string(line) + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError("manifest line " + std::to_string(line) + ": field '" + key + "' has the wrong type");
  }
}

}  // namespace

std::vector<UtteranceRecord> parse_manifest_text(std::string_view text, const std::filesystem::path& base_dir) {
  std::vector<UtteranceRecord> out;
  std::set<std::string, std::less<>> ids;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;

    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object()) throw ParseError("manifest line " + std::to_string(line_no) + ": expected a JSON object");

    UtteranceRecord r;
    r.utterance_id = field<std::string>(j, "utterance_id", line_no);
    if (r.utterance_id.empty()) throw ParseError("manifest line " + std::to_string(line_no) + ": empty utterance_id");
    r.wav_path = field<std::string>(j, "wav_path", line_no);
    if (r.wav_path.is_relative() && !base_dir.empty()) r.wav_path = (base_dir / r.wav_path).lexically_normal();
    try {
      r.label = parse_emotion_label(field<std::string>(j, "label", line_no));
    } catch (const ValidationError& e) {
      throw ValidationError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    r.session = field<std::string>(j, "session", line_no);
    r.scripted = field<bool>(j, "scripted", line_no);
    if (!ids.insert(r.utterance_id).second) {
      throw ValidationError("manifest line " + std::to_string(line_no) + ": duplicate utterance_id '" +
                            r.utterance_id + "'");
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<UtteranceRecord> parse_manifest(const std::filesystem::path& path) {
  return parse_manifest_text(read_file(path), std::filesystem::absolute(path).parent_path());
}

std::string manifest_to_text(const std::vector<UtteranceRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    const nlohmann::json j{{"utterance_id", r.utterance_id},
                           {"wav_path", r.wav_path.string()},
                           {"label", std::string(kEmotionLabels.at(static_cast<std::size_t>(r.label)))},
                           {"session", r.session},
                           {"scripted", r.scripted}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string to_string(DatasetFilter filter) {
  switch (filter) {
    case DatasetFilter::improvisation: return "improvisation";
    case DatasetFilter::script: return "script";
    case DatasetFilter::full: return "full";
  }
  return "full";
}

DatasetFilter parse_dataset_filter(std::string_view text) {
  if (text == "improvisation") return DatasetFilter::improvisation;
  if (text == "script") return DatasetFilter::script;
  if (text == "full") return DatasetFilter::full;
  throw ConfigError("unknown dataset '" + std::string(text) + "'; expected improvisation, script or full");
}

std::vector<UtteranceRecord> filter_records(const std::vector<UtteranceRecord>& records, DatasetFilter filter) {
  std::vector<UtteranceRecord> out;
  for (const auto& r : records) {
    if (filter == DatasetFilter::full || r.scripted == (filter == DatasetFilter::script)) out.push_back(r);
  }
  return out;
}

}  // namespace glam

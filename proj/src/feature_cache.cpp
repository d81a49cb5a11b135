#include "glam/feature_cache.hpp"

#include <cstdlib>
#include <sstream>

#include "json.hpp"

#include "glam/error.hpp"
#include "glam/serialize.hpp"

namespace glam {

UtteranceFeatures extract_utterance(const UtteranceRecord& record, const MfccConfig& cfg) {
  UtteranceFeatures u;
  u.utterance_id = record.utterance_id;
  u.label = record.label;
  const auto clip = load_wav(record.wav_path);
  u.segments = segment_utterance(compute_mfcc(clip, cfg), cfg, record.utterance_id, record.label);
  return u;
}

std::filesystem::path resolve_cache_dir(const std::filesystem::path& fallback) {
  if (const char* env = std::getenv("GLAM_CACHE_DIR"); env && *env) return env;
  return fallback;
}

namespace {

// Ids become file names: unsafe characters are replaced and, if anything was
// replaced, a digest of the original id keeps names distinct.
std::string file_stem(const std::string& id) {
  std::string stem;
  bool changed = false;
  for (char c : id) {
    const bool safe = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
                      c == '_' || c == '.';
    stem += safe ? c : '_';
    changed |= !safe;
  }
  if (changed || stem.front() == '.') {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : id) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    std::ostringstream os;
    os << stem << '-' << std::hex << h;
    stem = os.str();
  }
  return stem;
}

}  // namespace

FeatureCache::FeatureCache(std::filesystem::path dir, MfccConfig cfg)
    : dir_(std::move(dir)), cfg_(cfg), hash_(cfg.hash()) {
  cfg_.validate();
}

std::filesystem::path FeatureCache::tensor_path(const std::string& utterance_id) const {
  return dir_ / (file_stem(utterance_id) + ".gtsr");
}

std::filesystem::path FeatureCache::sidecar_path(const std::string& utterance_id) const {
  return dir_ / (file_stem(utterance_id) + ".json");
}

bool FeatureCache::is_fresh(const UtteranceRecord& record) const {
  const auto sidecar = sidecar_path(record.utterance_id);
  if (!std::filesystem::exists(sidecar) || !std::filesystem::exists(tensor_path(record.utterance_id))) return false;
  try {
    const auto j = nlohmann::json::parse(read_file(sidecar));
    return j.at("config_hash") == hash_ && j.at("utterance_id") == record.utterance_id &&
           j.at("source") == record.wav_path.string();
  } catch (const std::exception&) {
    return false;
  }
}

CacheStatus FeatureCache::ensure(const UtteranceRecord& record) {
  if (is_fresh(record)) return CacheStatus::reused;
  const auto u = extract_utterance(record, cfg_);
  const std::size_t frames = segment_frames(cfg_);
  Buffer<float> data;
  data.reserve(u.segments.size() * frames * cfg_.n_mfcc);
  for (const auto& s : u.segments) data.insert(data.end(), s.features.data(), s.features.data() + s.features.size());
  std::filesystem::create_directories(dir_);
  save_tensor(tensor_path(record.utterance_id), Tensor<float>({u.segments.size(), frames, cfg_.n_mfcc}, std::move(data)));
  const nlohmann::json sidecar{{"utterance_id", record.utterance_id},
                               {"label", std::string(kEmotionLabels.at(static_cast<std::size_t>(record.label)))},
                               {"n_segments", u.segments.size()},
                               {"config_hash", hash_},
                               {"source", record.wav_path.string()}};
  write_file_atomic(sidecar_path(record.utterance_id), sidecar.dump(2) + "\n");
  return CacheStatus::extracted;
}

UtteranceFeatures FeatureCache::load(const UtteranceRecord& record) const {
  if (!is_fresh(record)) {
    throw ConfigError("no up-to-date cached features for '" + record.utterance_id + "' in " + dir_.string() +
                      "; run `glam features` first");
  }
  const auto t = load_tensor<float>(tensor_path(record.utterance_id));
  const std::size_t frames = segment_frames(cfg_);
  if (t.rank() != 3 || t.dim(1) != frames || t.dim(2) != cfg_.n_mfcc) {
    throw FormatError("cached features for '" + record.utterance_id + "' have shape " + to_string(t.shape()));
  }
  UtteranceFeatures u;
  u.utterance_id = record.utterance_id;
  u.label = record.label;
  const std::size_t per = frames * cfg_.n_mfcc;
  for (std::size_t i = 0; i < t.dim(0); ++i) {
    FeatureSegment s;
    s.features = Eigen::Map<const FeatureMatrix>(t.data().data() + i * per, static_cast<Eigen::Index>(frames),
                                                 static_cast<Eigen::Index>(cfg_.n_mfcc));
    s.utterance_id = record.utterance_id;
    s.segment_index = i;
    s.label = record.label;
    u.segments.push_back(std::move(s));
  }
  return u;
}

}  // namespace glam

#include "glam/run_config.hpp"

#include <charconv>
#include <functional>
#include <map>

#include "glam/checkpoint.hpp"
#include "glam/error.hpp"
#include "glam/feature_cache.hpp"
#include "glam/serialize.hpp"

namespace glam {
namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError("invalid value '" + std::string(value) + "' for " + std::string(key));
  }
  return out;
}

std::size_t parse_size(std::string_view key, std::string_view value) { return parse_number<std::size_t>(key, value); }
double parse_real(std::string_view key, std::string_view value) { return parse_number<double>(key, value); }

using Setter = std::function<void(RunConfig&, std::string_view key, std::string_view value)>;

const std::vector<std::pair<std::string, Setter>>& setters() {
  static const std::vector<std::pair<std::string, Setter>> table = [] {
    std::vector<std::pair<std::string, Setter>> t;
    auto size_field = [&t](const char* name, auto member_of) {
      t.emplace_back(name, [member_of](RunConfig& c, auto k, auto v) { member_of(c) = parse_size(k, v); });
    };
    auto real_field = [&t](const char* name, auto member_of) {
      t.emplace_back(name, [member_of](RunConfig& c, auto k, auto v) { member_of(c) = parse_real(k, v); });
    };
    t.emplace_back("manifest", [](RunConfig& c, auto, auto v) { c.manifest = std::string(v); });
    t.emplace_back("out", [](RunConfig& c, auto, auto v) { c.out_dir = std::string(v); });
    t.emplace_back("cache_dir", [](RunConfig& c, auto, auto v) { c.cache_dir = std::string(v); });
    t.emplace_back("checkpoint", [](RunConfig& c, auto, auto v) { c.checkpoint = std::string(v); });
    t.emplace_back("embeddings", [](RunConfig& c, auto, auto v) { c.embeddings = std::string(v); });
    t.emplace_back("seed", [](RunConfig& c, auto k, auto v) { c.seed = parse_number<std::uint64_t>(k, v); });
    t.emplace_back("dataset", [](RunConfig& c, auto, auto v) { c.dataset = parse_dataset_filter(v); });
    t.emplace_back("split", [](RunConfig& c, auto, auto v) { c.split = parse_split_mode(v); });
    size_field("runs", [](RunConfig& c) -> std::size_t& { return c.n_runs; });
    size_field("n_per_class", [](RunConfig& c) -> std::size_t& { return c.n_per_class; });

    t.emplace_back("fusion", [](RunConfig& c, auto, auto v) { c.model.fusion_mode = parse_fusion_mode(v); });
    size_field("n_multiscale_blocks", [](RunConfig& c) -> std::size_t& { return c.model.n_multiscale_blocks; });
    size_field("branch_channels", [](RunConfig& c) -> std::size_t& { return c.model.branch_channels; });
    size_field("final_kernel", [](RunConfig& c) -> std::size_t& { return c.model.final_kernel; });
    size_field("final_channels", [](RunConfig& c) -> std::size_t& { return c.model.final_channels; });
    size_field("pool", [](RunConfig& c) -> std::size_t& { return c.model.pool; });
    size_field("gate_kernel", [](RunConfig& c) -> std::size_t& { return c.model.gate_kernel; });
    size_field("head_hidden", [](RunConfig& c) -> std::size_t& { return c.model.head_hidden; });

    size_field("epochs", [](RunConfig& c) -> std::size_t& { return c.train.epochs; });
    size_field("batch_size", [](RunConfig& c) -> std::size_t& { return c.train.batch_size; });
    real_field("lr0", [](RunConfig& c) -> double& { return c.train.lr0; });
    real_field("lr_decay", [](RunConfig& c) -> double& { return c.train.lr_decay; });
    real_field("lr_floor", [](RunConfig& c) -> double& { return c.train.lr_floor; });
    real_field("weight_decay", [](RunConfig& c) -> double& { return c.train.weight_decay; });
    real_field("alpha", [](RunConfig& c) -> double& { return c.train.alpha; });
    real_field("beta1", [](RunConfig& c) -> double& { return c.train.beta1; });
    real_field("beta2", [](RunConfig& c) -> double& { return c.train.beta2; });
    real_field("adam_eps", [](RunConfig& c) -> double& { return c.train.adam_eps; });

    t.emplace_back("sample_rate", [](RunConfig& c, auto k, auto v) { c.mfcc.sample_rate = parse_number<int>(k, v); });
    size_field("window_len", [](RunConfig& c) -> std::size_t& { return c.mfcc.window_len; });
    size_field("hop", [](RunConfig& c) -> std::size_t& { return c.mfcc.hop; });
    size_field("fft_size", [](RunConfig& c) -> std::size_t& { return c.mfcc.fft_size; });
    size_field("n_mels", [](RunConfig& c) -> std::size_t& { return c.mfcc.n_mels; });
    size_field("n_mfcc", [](RunConfig& c) -> std::size_t& { return c.mfcc.n_mfcc; });
    real_field("pre_emphasis", [](RunConfig& c) -> double& { return c.mfcc.pre_emphasis; });
    real_field("log_floor", [](RunConfig& c) -> double& { return c.mfcc.log_floor; });
    real_field("segment_seconds", [](RunConfig& c) -> double& { return c.mfcc.segment_seconds; });
    real_field("overlap_seconds", [](RunConfig& c) -> double& { return c.mfcc.overlap_seconds; });
    return t;
  }();
  return table;
}

}  // namespace

const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, setter] : setters()) k.push_back(name);
    return k;
  }();
  return keys;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  for (const auto& [name, setter] : setters()) {
    if (name == key) {
      setter(*this, key, trim(value));
      return;
    }
  }
  throw ConfigError("unknown setting '" + std::string(key) + "'");
}

ModelConfig RunConfig::resolved_model() const {
  ModelConfig out = model;
  out.in_height = segment_frames(mfcc);
  out.in_width = mfcc.n_mfcc;
  return out;
}

std::uint64_t RunConfig::require_seed() const {
  if (!seed) throw ConfigError("a seed is required: pass --seed N or set seed in the config file");
  return *seed;
}

std::filesystem::path RunConfig::feature_cache_dir() const {
  return resolve_cache_dir(cache_dir.empty() ? out_dir / "cache" : cache_dir);
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json mf{{"sample_rate", mfcc.sample_rate},     {"window_len", mfcc.window_len},
                    {"hop", mfcc.hop},                     {"fft_size", mfcc.fft_size},
                    {"n_mels", mfcc.n_mels},               {"n_mfcc", mfcc.n_mfcc},
                    {"pre_emphasis", mfcc.pre_emphasis},   {"log_floor", mfcc.log_floor},
                    {"segment_seconds", mfcc.segment_seconds}, {"overlap_seconds", mfcc.overlap_seconds},
                    {"hash", mfcc.hash()}};
  nlohmann::json tr{{"epochs", train.epochs},     {"batch_size", train.batch_size},
                    {"lr0", train.lr0},           {"lr_decay", train.lr_decay},
                    {"lr_floor", train.lr_floor}, {"weight_decay", train.weight_decay},
                    {"alpha", train.alpha},       {"beta1", train.beta1},
                    {"beta2", train.beta2},       {"adam_eps", train.adam_eps}};
  nlohmann::json j{{"mfcc", mf},
                   {"model", glam::to_json(resolved_model())},
                   {"train", tr},
                   {"split", to_string(split)},
                   {"runs", n_runs},
                   {"dataset", to_string(dataset)}};
  j["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json(nullptr);
  return j;
}

void apply_config_text(RunConfig& cfg, std::string_view text, const std::string& source) {
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected key = value");
    }
    try {
      cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file " + path.string() + " does not exist");
  apply_config_text(cfg, read_file(path), path.string());
}

}  // namespace glam

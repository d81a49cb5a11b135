#include "glam/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "glam/error.hpp"
#include "glam/serialize.hpp"

namespace glam {
namespace {

constexpr char kMagic[4] = {'G', 'C', 'K', 'P'};

const char* kind_name(ParamKind kind) {
  switch (kind) {
    case ParamKind::weight: return "weight";
    case ParamKind::norm: return "norm";
    case ParamKind::buffer: return "buffer";
  }
  return "weight";
}

}  // namespace

nlohmann::json to_json(const ModelConfig& cfg) {
  return {{"n_classes", cfg.n_classes},
          {"in_height", cfg.in_height},
          {"in_width", cfg.in_width},
          {"n_multiscale_blocks", cfg.n_multiscale_blocks},
          {"branch_channels", cfg.branch_channels},
          {"final_kernel", cfg.final_kernel},
          {"final_channels", cfg.final_channels},
          {"pool", cfg.pool},
          {"gate_kernel", cfg.gate_kernel},
          {"head_hidden", cfg.head_hidden},
          {"fusion_mode", to_string(cfg.fusion_mode)}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  try {
    cfg.n_classes = j.at("n_classes").get<std::size_t>();
    cfg.in_height = j.at("in_height").get<std::size_t>();
    cfg.in_width = j.at("in_width").get<std::size_t>();
    cfg.n_multiscale_blocks = j.at("n_multiscale_blocks").get<std::size_t>();
    cfg.branch_channels = j.at("branch_channels").get<std::size_t>();
    cfg.final_kernel = j.at("final_kernel").get<std::size_t>();
    cfg.final_channels = j.at("final_channels").get<std::size_t>();
    cfg.pool = j.at("pool").get<std::size_t>();
    cfg.gate_kernel = j.at("gate_kernel").get<std::size_t>();
    cfg.head_hidden = j.at("head_hidden").get<std::size_t>();
    cfg.fusion_mode = parse_fusion_mode(j.at("fusion_mode").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json manifest;
  manifest["format"] = "glam-checkpoint";
  manifest["version"] = 1;
  manifest["config"] = to_json(ckpt.config);
  manifest["step"] = ckpt.step;
  manifest["metadata"] = ckpt.metadata;
  nlohmann::json params = nlohmann::json::array();
  for (const auto& e : ckpt.params.entries()) {
    params.push_back({{"name", e.name}, {"kind", kind_name(e.kind)}, {"shape", e.tensor.shape()}});
  }
  manifest["parameters"] = params;
  if (ckpt.feature_stats) {
    manifest["feature_stats"] = {{"mean", ckpt.feature_stats->mean}, {"stddev", ckpt.feature_stats->stddev}};
  }
  const std::string text = manifest.dump();

  std::ostringstream os(std::ios::binary);
  os.write(kMagic, 4);
  std::uint64_t len = text.size();
  for (int i = 0; i < 8; ++i) os.put(static_cast<char>((len >> (8 * i)) & 0xFF));
  os << text;
  for (const auto& e : ckpt.params.entries()) write_tensor(os, e.tensor);
  write_file_atomic(path, os.str());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IOError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::string_view(magic, 4) != std::string_view(kMagic, 4)) {
    throw FormatError(path.string() + " is not a checkpoint");
  }
  unsigned char lenbytes[8];
  if (!is.read(reinterpret_cast<char*>(lenbytes), 8)) throw FormatError("truncated checkpoint header");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(lenbytes[i]) << (8 * i);
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError("truncated checkpoint manifest");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest is not JSON: ") + e.what());
  }

  Checkpoint ckpt;
  ckpt.config = model_config_from_json(manifest.at("config"));
  ckpt.step = manifest.value("step", std::uint64_t{0});
  ckpt.metadata = manifest.value("metadata", nlohmann::json::object());
  if (manifest.contains("feature_stats")) {
    ckpt.feature_stats = FeatureStats{manifest["feature_stats"].at("mean").get<std::vector<double>>(),
                                      manifest["feature_stats"].at("stddev").get<std::vector<double>>()};
  }

  const auto specs = parameter_specs(ckpt.config);
  const auto& listed = manifest.at("parameters");
  if (listed.size() != specs.size()) {
    throw FormatError("checkpoint lists " + std::to_string(listed.size()) + " parameters, config implies " +
                      std::to_string(specs.size()));
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto name = listed[i].at("name").get<std::string>();
    if (name != specs[i].name) throw FormatError("parameter " + std::to_string(i) + " is '" + name + "', expected '" + specs[i].name + "'");
    auto tensor = read_tensor<float>(is);
    if (tensor.shape() != specs[i].shape) {
      throw FormatError("parameter '" + name + "' has shape " + to_string(tensor.shape()) + ", config implies " +
                        to_string(specs[i].shape));
    }
    tensor.set_requires_grad(specs[i].kind != ParamKind::buffer);
    ckpt.params.add(name, std::move(tensor), specs[i].kind);
  }
  return ckpt;
}

}  // namespace glam

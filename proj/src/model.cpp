#include "glam/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "glam/error.hpp"

namespace glam {

std::string to_string(FusionMode mode) { return mode == FusionMode::global_aware ? "global_aware" : "none"; }

FusionMode parse_fusion_mode(std::string_view text) {
  if (text == "global_aware") return FusionMode::global_aware;
  if (text == "none") return FusionMode::none;
  throw ConfigError("unknown fusion mode '" + std::string(text) + "' (expected global_aware or none)");
}

void ModelConfig::validate() const {
  if (n_classes < 2) throw ConfigError("n_classes must be at least 2");
  if (in_height == 0 || in_width == 0) throw ConfigError("input dimensions must be positive");
  if (n_multiscale_blocks == 0) throw ConfigError("need at least one multiscale block");
  if (branch_channels == 0 || final_channels == 0 || head_hidden == 0) throw ConfigError("channel counts must be positive");
  if (pool == 0) throw ConfigError("pool must be positive");
  if (final_kernel % 2 == 0 || gate_kernel % 2 == 0) throw ConfigError("kernel sizes must be odd");
  block_output_shape(n_multiscale_blocks - 1);
}

Shape ModelConfig::block_output_shape(std::size_t block) const {
  std::size_t ch = 1, h = in_height, w = in_width;
  for (std::size_t b = 0; b <= block; ++b) {
    if (b == 0) {
      ch = branch_channels;
      w *= 2;
    } else {
      ch = 2 * branch_channels;
    }
    if (h < pool || w < pool) {
      throw ConfigError("input " + to_string(Shape{in_height, in_width}) + " is too small for " +
                        std::to_string(block + 1) + " pooled blocks");
    }
    h /= pool;
    w /= pool;
  }
  return {ch, h, w};
}

std::size_t ModelConfig::feature_length() const {
  const Shape s = block_output_shape(n_multiscale_blocks - 1);
  return s[1] * s[2];
}

std::vector<ParamSpec> parameter_specs(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> specs;
  auto conv_bn = [&](const std::string& prefix, Shape kernel) {
    const std::size_t out = kernel[0];
    specs.push_back({prefix + ".weight", std::move(kernel), ParamKind::weight});
    specs.push_back({prefix + ".bn.gamma", {out}, ParamKind::norm});
    specs.push_back({prefix + ".bn.beta", {out}, ParamKind::norm});
    specs.push_back({prefix + ".bn.running_mean", {out}, ParamKind::buffer});
    specs.push_back({prefix + ".bn.running_var", {out}, ParamKind::buffer});
  };
  const std::size_t branch = cfg.branch_channels;
  std::size_t in_ch = 1;
  for (std::size_t b = 0; b < cfg.n_multiscale_blocks; ++b) {
    const std::string prefix = "ms" + std::to_string(b);
    conv_bn(prefix + ".spatial", {branch, in_ch, 1, 3});
    conv_bn(prefix + ".temporal", {branch, in_ch, 3, 1});
    in_ch = b == 0 ? branch : 2 * branch;
  }
  conv_bn("final", {cfg.final_channels, in_ch, cfg.final_kernel, cfg.final_kernel});

  const std::size_t c = cfg.channels(), df = cfg.feature_length();
  if (cfg.fusion_mode == FusionMode::global_aware) {
    specs.push_back({"fusion.norm.gamma", {df}, ParamKind::norm});
    specs.push_back({"fusion.norm.beta", {df}, ParamKind::norm});
    specs.push_back({"fusion.fc1.weight", {df, 4 * df}, ParamKind::weight});
    specs.push_back({"fusion.fc1.bias", {4 * df}, ParamKind::weight});
    specs.push_back({"fusion.gate.weight", {c, c, 1, cfg.gate_kernel}, ParamKind::weight});
    specs.push_back({"fusion.gate.bias", {c}, ParamKind::weight});
    specs.push_back({"fusion.fc2.weight", {2 * df, df}, ParamKind::weight});
    specs.push_back({"fusion.fc2.bias", {df}, ParamKind::weight});
  }
  specs.push_back({"head.fc1.weight", {c * df, cfg.head_hidden}, ParamKind::weight});
  specs.push_back({"head.fc1.bias", {cfg.head_hidden}, ParamKind::weight});
  specs.push_back({"head.out.weight", {cfg.head_hidden, cfg.n_classes}, ParamKind::weight});
  specs.push_back({"head.out.bias", {cfg.n_classes}, ParamKind::weight});
  return specs;
}

template <typename Scalar>
void ParameterSet<Scalar>::add(std::string name, Tensor<Scalar> tensor, ParamKind kind) {
  if (index_.count(name)) throw ValidationError("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(tensor), kind});
}

template <typename Scalar>
std::size_t ParameterSet<Scalar>::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("no parameter named '" + name + "'");
  return it->second;
}

template <typename Scalar>
Tensor<Scalar>& ParameterSet<Scalar>::at(const std::string& name) {
  return entries_[index_of(name)].tensor;
}

template <typename Scalar>
const Tensor<Scalar>& ParameterSet<Scalar>::at(const std::string& name) const {
  return entries_[index_of(name)].tensor;
}

template <typename Scalar>
std::size_t ParameterSet<Scalar>::trainable_scalars() const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (e.kind != ParamKind::buffer) n += e.tensor.size();
  return n;
}

template <typename Scalar>
void ParameterSet<Scalar>::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

template <typename Scalar>
ParameterSet<Scalar> ParameterSet<Scalar>::clone() const {
  ParameterSet out;
  for (const auto& e : entries_) out.add(e.name, e.tensor.clone(), e.kind);
  return out;
}

template <typename Scalar>
BatchNormState<Scalar> ParameterSet<Scalar>::batchnorm_state(const std::string& prefix) {
  BatchNormState<Scalar> state;
  state.running_mean = at(prefix + ".running_mean");
  state.running_var = at(prefix + ".running_var");
  return state;
}

namespace {

std::uint64_t stream_seed(std::uint64_t seed, const std::string& name) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  // splitmix64 finalizer over the combined key
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (h | 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::size_t fan_in(const ParamSpec& spec) {
  if (spec.shape.size() == 4) return spec.shape[1] * spec.shape[2] * spec.shape[3];
  return spec.shape[0];  // linear weights are [in x out]
}

}  // namespace

template <typename Scalar>
ParameterSet<Scalar> init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  ParameterSet<Scalar> params;
  for (const auto& spec : parameter_specs(cfg)) {
    Scalar fill = 0;
    if (ends_with(spec.name, ".gamma") || ends_with(spec.name, ".running_var") || spec.name == "fusion.gate.bias") {
      fill = 1;
    }
    auto tensor = Tensor<Scalar>::full(spec.shape, fill, spec.kind != ParamKind::buffer);
    const bool random = ends_with(spec.name, ".weight") && spec.name != "fusion.gate.weight" &&
                        spec.name != "fusion.fc2.weight";
    if (random) {
      // kaiming_uniform with a = sqrt(5): bound = sqrt(6 / fan_in) / sqrt(1 + a^2)
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in(spec))) / std::sqrt(6.0);
      std::mt19937_64 rng(stream_seed(seed, spec.name));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (Scalar& v : tensor.mutable_data()) v = static_cast<Scalar>(dist(rng));
    }
    params.add(spec.name, std::move(tensor), spec.kind);
  }
  return params;
}

namespace {

template <typename Scalar>
Tensor<Scalar> conv_bn_relu(const Tensor<Scalar>& x, ParameterSet<Scalar>& params, const std::string& prefix,
                            Mode mode) {
  auto state = params.batchnorm_state(prefix + ".bn");
  const auto conv = conv2d_same(x, params.at(prefix + ".weight"), Tensor<Scalar>{});
  return relu(batchnorm2d(conv, params.at(prefix + ".bn.gamma"), params.at(prefix + ".bn.beta"), state, mode));
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> multiscale_block_forward(const Tensor<Scalar>& x, ParameterSet<Scalar>& params,
                                        const std::string& prefix, BlockPosition position, Mode mode,
                                        std::size_t pool) {
  const auto spatial = conv_bn_relu(x, params, prefix + ".spatial", mode);
  const auto temporal = conv_bn_relu(x, params, prefix + ".temporal", mode);
  const std::size_t axis = position == BlockPosition::first ? 3 : 1;
  return maxpool2d(concat({spatial, temporal}, axis), pool, pool);
}

template <typename Scalar>
Tensor<Scalar> final_conv_forward(const Tensor<Scalar>& x, ParameterSet<Scalar>& params, Mode mode) {
  return conv_bn_relu(x, params, "final", mode);
}

template <typename Scalar>
Tensor<Scalar> global_aware_forward(const Tensor<Scalar>& x, const ParameterSet<Scalar>& params) {
  if (x.rank() != 3) throw ShapeError("global_aware_forward expects N x C x d_f, got " + to_string(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), df = x.dim(2);
  const auto& fc1_w = params.at("fusion.fc1.weight");
  if (fc1_w.dim(0) != df) {
    throw ShapeError("fusion block built for d_f = " + std::to_string(fc1_w.dim(0)) + ", input " + to_string(x.shape()));
  }
  if (params.at("fusion.gate.weight").dim(0) != c) {
    throw ShapeError("fusion gate built for C = " + std::to_string(params.at("fusion.gate.weight").dim(0)) +
                     ", input " + to_string(x.shape()));
  }
  const auto normed = layer_norm(x, params.at("fusion.norm.gamma"), params.at("fusion.norm.beta"));
  const auto z = gelu(linear(reshape(normed, {n * c, df}), fc1_w, params.at("fusion.fc1.bias")));
  const auto [u, v] = split_half(reshape(z, {n, c, 4 * df}), 2);
  const auto gate = conv2d_same(reshape(v, {n, c, 1, 2 * df}), params.at("fusion.gate.weight"),
                                params.at("fusion.gate.bias"));
  const auto mixed = reshape(u, {n * c, 2 * df}) * reshape(gate, {n * c, 2 * df});
  const auto projected = linear(mixed, params.at("fusion.fc2.weight"), params.at("fusion.fc2.bias"));
  return x + reshape(projected, {n, c, df});
}

namespace {

template <typename Scalar>
Tensor<Scalar> forward_to_embeddings(const Tensor<Scalar>& x, ParameterSet<Scalar>& params, const ModelConfig& cfg,
                                     Mode mode) {
  if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != cfg.in_height || x.dim(3) != cfg.in_width) {
    throw ShapeError("model expects N x 1 x " + std::to_string(cfg.in_height) + " x " + std::to_string(cfg.in_width) +
                     " input, got " + to_string(x.shape()));
  }
  Tensor<Scalar> h = x;
  for (std::size_t b = 0; b < cfg.n_multiscale_blocks; ++b) {
    h = multiscale_block_forward(h, params, "ms" + std::to_string(b), b == 0 ? BlockPosition::first : BlockPosition::rest,
                                 mode, cfg.pool);
  }
  h = final_conv_forward(h, params, mode);
  const std::size_t n = h.dim(0), c = h.dim(1), df = h.dim(2) * h.dim(3);
  h = reshape(h, {n, c, df});
  if (cfg.fusion_mode == FusionMode::global_aware) h = global_aware_forward(h, params);
  h = reshape(h, {n, c * df});
  return relu(linear(h, params.at("head.fc1.weight"), params.at("head.fc1.bias")));
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> glam_forward(const Tensor<Scalar>& x, ParameterSet<Scalar>& params, const ModelConfig& cfg,
                            Mode mode) {
  const auto emb = forward_to_embeddings(x, params, cfg, mode);
  return linear(emb, params.at("head.out.weight"), params.at("head.out.bias"));
}

template <typename Scalar>
Tensor<Scalar> export_embeddings(const Tensor<Scalar>& x, ParameterSet<Scalar>& params, const ModelConfig& cfg,
                                 Mode mode) {
  return forward_to_embeddings(x, params, cfg, mode);
}

template <typename Scalar>
Tensor<Scalar> make_batch(std::span<const FeatureSegment> segments, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ValidationError("cannot build an empty batch");
  const auto rows = static_cast<std::size_t>(segments[indices[0]].features.rows());
  const auto cols = static_cast<std::size_t>(segments[indices[0]].features.cols());
  Buffer<Scalar> data(indices.size() * rows * cols);
  Scalar* dst = data.data();
  for (std::size_t i : indices) {
    const auto& f = segments[i].features;
    if (static_cast<std::size_t>(f.rows()) != rows || static_cast<std::size_t>(f.cols()) != cols) {
      throw ShapeError("segments in one batch differ in shape");
    }
    dst = std::transform(f.data(), f.data() + f.size(), dst, [](float v) { return static_cast<Scalar>(v); });
  }
  return Tensor<Scalar>({indices.size(), 1, rows, cols}, std::move(data));
}

template <typename Scalar>
std::vector<std::vector<double>> predict_probabilities(ParameterSet<Scalar>& params, const ModelConfig& cfg,
                                                       std::span<const FeatureSegment> segments,
                                                       std::size_t batch_size) {
  std::vector<std::vector<double>> out;
  out.reserve(segments.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < segments.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(segments.size(), start + batch_size); ++i) idx.push_back(i);
    const auto probs = softmax(glam_forward(make_batch<Scalar>(segments, idx), params, cfg, Mode::eval).detach());
    const std::size_t k = probs.dim(1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      out.emplace_back(probs.data().begin() + static_cast<std::ptrdiff_t>(r * k),
                       probs.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * k));
    }
  }
  return out;
}

#define GLAM_INSTANTIATE_MODEL(S)                                                                              \
  template class ParameterSet<S>;                                                                              \
  template ParameterSet<S> init_parameters<S>(const ModelConfig&, std::uint64_t);                              \
  template Tensor<S> multiscale_block_forward(const Tensor<S>&, ParameterSet<S>&, const std::string&,         \
                                              BlockPosition, Mode, std::size_t);                               \
  template Tensor<S> final_conv_forward(const Tensor<S>&, ParameterSet<S>&, Mode);                             \
  template Tensor<S> global_aware_forward(const Tensor<S>&, const ParameterSet<S>&);                           \
  template Tensor<S> glam_forward(const Tensor<S>&, ParameterSet<S>&, const ModelConfig&, Mode);               \
  template Tensor<S> export_embeddings(const Tensor<S>&, ParameterSet<S>&, const ModelConfig&, Mode);          \
  template Tensor<S> make_batch<S>(std::span<const FeatureSegment>, std::span<const std::size_t>);             \
  template std::vector<std::vector<double>> predict_probabilities(ParameterSet<S>&, const ModelConfig&,        \
                                                                  std::span<const FeatureSegment>, std::size_t);

GLAM_INSTANTIATE_MODEL(float)
GLAM_INSTANTIATE_MODEL(double)

}  // namespace glam

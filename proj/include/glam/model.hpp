#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "glam/audio.hpp"
#include "glam/ops.hpp"
#include "glam/tensor.hpp"

namespace glam {

enum class FusionMode { global_aware, none };

std::string to_string(FusionMode mode);
FusionMode parse_fusion_mode(std::string_view text);

/// Architecture of the network. Input is N x 1 x H x W with H the time axis
/// (frames) and W the coefficient axis.
struct ModelConfig {
  std::size_t n_classes = 4;
  std::size_t in_height = 198;
  std::size_t in_width = 40;
  std::size_t n_multiscale_blocks = 3;
  std::size_t branch_channels = 16;
  std::size_t final_kernel = 5;
  std::size_t final_channels = 32;
  std::size_t pool = 2;
  std::size_t gate_kernel = 3;
  std::size_t head_hidden = 64;
  FusionMode fusion_mode = FusionMode::global_aware;

  void validate() const;

  /// C: channels entering the fusion block.
  std::size_t channels() const { return final_channels; }
  /// d_f: flattened per-channel feature length H' * W' after the conv stack.
  std::size_t feature_length() const;
  /// Output shape (C, H, W) of multiscale block `block`, after its pooling.
  Shape block_output_shape(std::size_t block) const;
};

enum class ParamKind {
  weight,  // trained, weight-decayed
  norm,    // trained, exempt from weight decay
  buffer,  // running statistics; never trained
};

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamKind kind;
};

/// Every parameter the configuration implies, in creation order.
std::vector<ParamSpec> parameter_specs(const ModelConfig& cfg);

/// Named tensors of one model. Names are unique; order is creation order.
template <typename Scalar>
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor<Scalar> tensor;
    ParamKind kind;
  };

  void add(std::string name, Tensor<Scalar> tensor, ParamKind kind);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor<Scalar>& at(const std::string& name);
  const Tensor<Scalar>& at(const std::string& name) const;
  const Entry& entry(const std::string& name) const { return entries_[index_of(name)]; }

  std::span<Entry> entries() { return entries_; }
  std::span<const Entry> entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  /// Number of scalars in trainable (non-buffer) parameters.
  std::size_t trainable_scalars() const;

  void zero_grad();
  /// Deep copy; trainable tensors stay gradient-tracking leaves.
  ParameterSet clone() const;
  template <typename Other>
  ParameterSet<Other> cast() const {
    ParameterSet<Other> out;
    for (const auto& e : entries_) {
      auto t = e.tensor.template cast<Other>();
      t.set_requires_grad(e.kind != ParamKind::buffer);
      out.add(e.name, std::move(t), e.kind);
    }
    return out;
  }

  /// Running-statistics view of the batch-norm layer named `prefix`.
  BatchNormState<Scalar> batchnorm_state(const std::string& prefix);

 private:
  std::size_t index_of(const std::string& name) const;

  std::vector<Entry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Kaiming-uniform (fan-in, a = sqrt(5)) conv and FC weights, zero biases,
/// unit BN/LN scales. The fusion gate starts at weights 0 / bias 1 and the
/// fusion output projection at zero, so the fusion block is the identity.
/// Each tensor draws from its own stream keyed by (seed, name).
template <typename Scalar>
ParameterSet<Scalar> init_parameters(const ModelConfig& cfg, std::uint64_t seed);

enum class BlockPosition { first, rest };

/// Parallel 1x3 (coefficient axis) and 3x1 (time axis) conv + BN + ReLU
/// branches. The first block joins them along the coefficient axis, later
/// blocks along channels; a max pool follows.
template <typename Scalar>
Tensor<Scalar> multiscale_block_forward(const Tensor<Scalar>& x, ParameterSet<Scalar>& params,
                                        const std::string& prefix, BlockPosition position, Mode mode,
                                        std::size_t pool = 2);

/// Large-kernel conv + BN + ReLU closing the convolutional stack.
template <typename Scalar>
Tensor<Scalar> final_conv_forward(const Tensor<Scalar>& x, ParameterSet<Scalar>& params, Mode mode);

/// gMLP-style block on x [N x C x d_f]:
///   out = x + fc2(u * gate(v)),  (u, v) = split(gelu(fc1(layer_norm(x))))
/// where gate is a channel-mixing conv of length gate_kernel along features.
template <typename Scalar>
Tensor<Scalar> global_aware_forward(const Tensor<Scalar>& x, const ParameterSet<Scalar>& params);

/// N x 1 x H x W -> N x n_classes logits.
template <typename Scalar>
Tensor<Scalar> glam_forward(const Tensor<Scalar>& x, ParameterSet<Scalar>& params, const ModelConfig& cfg,
                            Mode mode);

/// Penultimate (head_hidden) activations, N x head_hidden.
template <typename Scalar>
Tensor<Scalar> export_embeddings(const Tensor<Scalar>& x, ParameterSet<Scalar>& params, const ModelConfig& cfg,
                                 Mode mode = Mode::eval);

/// Stacks segments into an N x 1 x H x W batch.
template <typename Scalar>
Tensor<Scalar> make_batch(std::span<const FeatureSegment> segments, std::span<const std::size_t> indices);

/// Eval-mode class probabilities, one row per segment.
template <typename Scalar>
std::vector<std::vector<double>> predict_probabilities(ParameterSet<Scalar>& params, const ModelConfig& cfg,
                                                       std::span<const FeatureSegment> segments,
                                                       std::size_t batch_size = 64);

}  // namespace glam

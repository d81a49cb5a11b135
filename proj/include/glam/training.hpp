#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "glam/audio.hpp"
#include "glam/model.hpp"
#include "glam/tensor.hpp"

namespace glam {

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double lr0 = 1e-4;
  double lr_decay = 0.95;  // per epoch
  double lr_floor = 1e-6;
  double weight_decay = 1e-6;
  double alpha = 0.5;  // mixup Beta(alpha, alpha); 0 disables mixup
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

using Rng = std::mt19937_64;

/// Gamma(shape, 1) by Marsaglia-Tsang; shapes below 1 use the
/// Gamma(shape + 1) * U^(1/shape) boost.
double sample_gamma(double shape, Rng& rng);

/// Beta(alpha, alpha) as X / (X + Y) with X, Y ~ Gamma(alpha).
double sample_beta(double alpha, Rng& rng);

/// x~ = lambda x + (1 - lambda) x[perm], and the same for the labels.
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> mix_pairs(const Tensor<Scalar>& x, const Tensor<Scalar>& y_probs,
                                                    double lambda, std::span<const std::size_t> perm);

/// Draws one lambda ~ Beta(alpha, alpha) and one permutation of the batch,
/// then mixes rows (first axis) of `x` and `y_probs`.
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> mixup_batch(const Tensor<Scalar>& x, const Tensor<Scalar>& y_probs,
                                                      double alpha, Rng& rng);

/// max(lr0 * lr_decay^epoch, lr_floor), epoch counted from 0.
double lr_at_epoch(std::size_t epoch, const TrainConfig& cfg);

template <typename Scalar>
struct AdamState {
  std::map<std::string, std::vector<Scalar>> first_moment;
  std::map<std::string, std::vector<Scalar>> second_moment;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam step over every non-buffer parameter. Weight decay
/// is decoupled and lr-scaled, p <- p - lr * weight_decay * p, applied before
/// the Adam update and only to ParamKind::weight tensors.
template <typename Scalar>
void adam_step(ParameterSet<Scalar>& params, AdamState<Scalar>& state, double lr, const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0;
  double lr = 0;
  std::optional<double> val_wa;
  std::optional<double> val_ua;
  bool snapshot = false;
};

template <typename Scalar>
struct TrainResult {
  ParameterSet<Scalar> params;
  std::vector<EpochRecord> history;
  std::optional<std::size_t> best_epoch;
  std::uint64_t steps = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Epoch loop: seeded shuffle, batches, mixup (alpha > 0), train-mode forward,
/// cross-entropy on soft labels, backward, Adam. With a validation set, the
/// parameters of the epoch with the best mean(UA, WA) are returned (earliest
/// on ties); otherwise the final parameters.
template <typename Scalar>
TrainResult<Scalar> train(const ModelConfig& model_cfg, std::span<const FeatureSegment> train_set,
                          std::span<const FeatureSegment> val_set, const TrainConfig& cfg,
                          const EpochCallback& on_epoch = {});

/// One JSON object per line: epoch, loss, lr, val_wa, val_ua, snapshot.
std::string history_to_jsonl(std::span<const EpochRecord> history);

}  // namespace glam

#include "glam/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

#include "glam/error.hpp"
#include "glam/metrics.hpp"

namespace glam {

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be at least 1");
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (!(alpha >= 0)) throw ConfigError("alpha must be >= 0");
  if (alpha > 0 && batch_size < 2) throw ConfigError("mixup needs batch_size >= 2");
  if (!(lr0 > 0) || !(lr_floor >= 0) || lr_floor > lr0) throw ConfigError("need 0 <= lr_floor <= lr0, lr0 > 0");
  if (!(lr_decay > 0) || lr_decay > 1) throw ConfigError("lr_decay must lie in (0, 1]");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0)) throw ConfigError("adam_eps must be positive");
}

namespace {

double open_uniform(Rng& rng) { return 1.0 - std::generate_canonical<double, 53>(rng); }  // (0, 1]

}  // namespace

double sample_gamma(double shape, Rng& rng) {
  if (!(shape > 0)) throw ConfigError("gamma shape must be positive");
  if (shape < 1) return sample_gamma(shape + 1.0, rng) * std::pow(open_uniform(rng), 1.0 / shape);
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  std::normal_distribution<double> normal;
  while (true) {
    const double x = normal(rng);
    double v = 1.0 + c * x;
    if (v <= 0) continue;
    v = v * v * v;
    const double u = open_uniform(rng);
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

double sample_beta(double alpha, Rng& rng) {
  if (!(alpha > 0)) throw ConfigError("Beta(alpha, alpha) needs alpha > 0; bypass mixup for alpha = 0");
  const double x = sample_gamma(alpha, rng);
  const double y = sample_gamma(alpha, rng);
  return x / (x + y);
}

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> mix_pairs(const Tensor<Scalar>& x, const Tensor<Scalar>& y_probs,
                                                    double lambda, std::span<const std::size_t> perm) {
  if (x.rank() == 0 || y_probs.rank() != 2 || y_probs.dim(0) != x.dim(0)) {
    throw ShapeError("mixup needs matching batch axes: " + to_string(x.shape()) + " vs " + to_string(y_probs.shape()));
  }
  const std::size_t batch = x.dim(0);
  if (perm.size() != batch) throw ShapeError("mixup permutation length differs from batch size");
  auto mix = [&](const Tensor<Scalar>& t) {
    const std::size_t row = t.size() / batch;
    const auto src = t.data();
    Buffer<Scalar> out(t.size());
    for (std::size_t i = 0; i < batch; ++i) {
      const Scalar* a = src.data() + i * row;
      const Scalar* b = src.data() + perm[i] * row;
      for (std::size_t j = 0; j < row; ++j) {
        // Identical values stay bitwise unchanged; the blend would round them.
        out[i * row + j] = a[j] == b[j] ? a[j]
                                         : static_cast<Scalar>(lambda * static_cast<double>(a[j]) +
                                                               (1 - lambda) * static_cast<double>(b[j]));
      }
    }
    return Tensor<Scalar>(t.shape(), std::move(out));
  };
  return {mix(x), mix(y_probs)};
}

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> mixup_batch(const Tensor<Scalar>& x, const Tensor<Scalar>& y_probs,
                                                      double alpha, Rng& rng) {
  if (!(alpha > 0)) throw ConfigError("mixup_batch needs alpha > 0; bypass mixup for alpha = 0");
  if (x.rank() == 0 || x.dim(0) < 2) throw ShapeError("mixup needs at least two examples per batch");
  const double lambda = sample_beta(alpha, rng);
  std::vector<std::size_t> perm(x.dim(0));
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  return mix_pairs(x, y_probs, lambda, perm);
}

double lr_at_epoch(std::size_t epoch, const TrainConfig& cfg) {
  return std::max(cfg.lr0 * std::pow(cfg.lr_decay, static_cast<double>(epoch)), cfg.lr_floor);
}

template <typename Scalar>
void adam_step(ParameterSet<Scalar>& params, AdamState<Scalar>& state, double lr, const TrainConfig& cfg) {
  for (const auto& e : params.entries()) {
    if (e.kind != ParamKind::buffer && !e.tensor.has_grad()) {
      throw StateError("no gradient for parameter '" + e.name + "'");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(cfg.beta1, t);
  const double bias2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& e : params.entries()) {
    if (e.kind == ParamKind::buffer) continue;
    auto p = e.tensor.mutable_data();
    const auto g = e.tensor.grad();
    auto& m = state.first_moment[e.name];
    auto& v = state.second_moment[e.name];
    if (m.size() != p.size()) m.assign(p.size(), Scalar(0));
    if (v.size() != p.size()) v.assign(p.size(), Scalar(0));
    const bool decayed = e.kind == ParamKind::weight && cfg.weight_decay > 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      double value = p[i];
      if (decayed) value -= lr * cfg.weight_decay * value;
      const double gi = g[i];
      const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<Scalar>(mi);
      v[i] = static_cast<Scalar>(vi);
      value -= lr * (mi / bias1) / (std::sqrt(vi / bias2) + cfg.adam_eps);
      p[i] = static_cast<Scalar>(value);
    }
  }
}

namespace {

// Batch boundaries over `n` shuffled items; a trailing single item joins the
// previous batch so every batch can be mixed.
std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t batch_size) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    std::size_t end = std::min(n, start + batch_size);
    if (n - end == 1) end = n;
    out.emplace_back(start, end);
    if (end == n) break;
  }
  return out;
}

}  // namespace

template <typename Scalar>
TrainResult<Scalar> train(const ModelConfig& model_cfg, std::span<const FeatureSegment> train_set,
                          std::span<const FeatureSegment> val_set, const TrainConfig& cfg,
                          const EpochCallback& on_epoch) {
  cfg.validate();
  model_cfg.validate();
  if (train_set.empty()) throw ConfigError("training set is empty");
  if (cfg.alpha > 0 && train_set.size() < 2) throw ConfigError("mixup needs at least two training segments");
  const std::size_t k = model_cfg.n_classes;
  for (const auto& s : train_set) {
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= k) {
      throw ValidationError("segment of '" + s.utterance_id + "' has label " + std::to_string(s.label) +
                            " outside 0.." + std::to_string(k - 1));
    }
  }

  TrainResult<Scalar> result;
  result.params = init_parameters<Scalar>(model_cfg, cfg.seed);
  AdamState<Scalar> adam;
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::optional<ParameterSet<Scalar>> best;
  double best_score = -1;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(epoch, cfg);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    std::size_t step = 0;
    for (const auto& [start, end] : batch_ranges(order.size(), cfg.batch_size)) {
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      Tensor<Scalar> x = make_batch<Scalar>(train_set, idx);
      std::vector<Scalar> onehot(idx.size() * k, Scalar(0));
      for (std::size_t i = 0; i < idx.size(); ++i) onehot[i * k + static_cast<std::size_t>(train_set[idx[i]].label)] = 1;
      Tensor<Scalar> y({idx.size(), k}, std::move(onehot));
      if (cfg.alpha > 0) std::tie(x, y) = mixup_batch(x, y, cfg.alpha, rng);

      result.params.zero_grad();
      const auto loss = softmax_cross_entropy(glam_forward(x, result.params, model_cfg, Mode::train), y);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
      }
      loss.backward();
      adam_step(result.params, adam, lr, cfg);
      loss_sum += value * static_cast<double>(idx.size());
      ++step;
    }

    EpochRecord record;
    record.epoch = epoch;
    record.loss = loss_sum / static_cast<double>(order.size());
    record.lr = lr;
    if (!val_set.empty()) {
      const auto probs = predict_probabilities(result.params, model_cfg, val_set);
      const auto report = evaluate_predictions(aggregate_predictions(val_set, probs), k);
      record.val_wa = report.wa;
      record.val_ua = report.ua;
      const double score = 0.5 * (report.wa + report.ua);
      if (!best || score > best_score) {
        best_score = score;
        best = result.params.clone();
        result.best_epoch = epoch;
        record.snapshot = true;
      }
    }
    result.history.push_back(record);
    if (on_epoch) on_epoch(record);
  }
  result.steps = adam.step;
  if (best) result.params = std::move(*best);
  return result;
}

std::string history_to_jsonl(std::span<const EpochRecord> history) {
  std::string out;
  for (const auto& r : history) {
    nlohmann::json j{{"epoch", r.epoch}, {"loss", r.loss}, {"lr", r.lr}, {"snapshot", r.snapshot}};
    j["val_wa"] = r.val_wa ? nlohmann::json(*r.val_wa) : nlohmann::json(nullptr);
    j["val_ua"] = r.val_ua ? nlohmann::json(*r.val_ua) : nlohmann::json(nullptr);
    out += j.dump();
    out += '\n';
  }
  return out;
}

#define GLAM_INSTANTIATE_TRAINING(S)                                                                            \
  template std::pair<Tensor<S>, Tensor<S>> mix_pairs(const Tensor<S>&, const Tensor<S>&, double,               \
                                                     std::span<const std::size_t>);                              \
  template std::pair<Tensor<S>, Tensor<S>> mixup_batch(const Tensor<S>&, const Tensor<S>&, double, Rng&);      \
  template struct AdamState<S>;                                                                                  \
  template void adam_step(ParameterSet<S>&, AdamState<S>&, double, const TrainConfig&);                         \
  template struct TrainResult<S>;                                                                                \
  template TrainResult<S> train(const ModelConfig&, std::span<const FeatureSegment>,                            \
                                std::span<const FeatureSegment>, const TrainConfig&, const EpochCallback&);

GLAM_INSTANTIATE_TRAINING(float)
GLAM_INSTANTIATE_TRAINING(double)

}  // namespace glam

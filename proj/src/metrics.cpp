#include "glam/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "glam/error.hpp"

namespace glam {

std::vector<double> aggregate_utterance(std::span<const std::vector<double>> segment_probs) {
  if (segment_probs.empty()) throw ValidationError("cannot aggregate zero segments");
  const std::size_t k = segment_probs.front().size();
  std::vector<double> mean(k, 0.0);
  for (const auto& p : segment_probs) {
    if (p.size() != k) throw ValidationError("segment probability vectors differ in length");
    for (std::size_t j = 0; j < k; ++j) mean[j] += p[j];
  }
  for (double& v : mean) v /= static_cast<double>(segment_probs.size());
  return mean;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw ValidationError("argmax of an empty vector");
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

ConfusionMatrix::ConfusionMatrix(std::size_t classes, std::vector<std::string> names)
    : k_(classes), names_(std::move(names)), counts_(classes * classes, 0) {
  if (names_.empty()) {
    for (std::size_t i = 0; i < k_; ++i) names_.push_back(std::to_string(i));
  }
  if (names_.size() != k_) throw ValidationError("confusion matrix needs one name per class");
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted) {
  if (truth >= k_ || predicted >= k_) throw ValidationError("class index out of range");
  ++counts_[truth * k_ + predicted];
}

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }

nlohmann::json ConfusionMatrix::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < k_; ++i) {
    rows.push_back(std::vector<std::uint64_t>(counts_.begin() + static_cast<std::ptrdiff_t>(i * k_),
                                              counts_.begin() + static_cast<std::ptrdiff_t>((i + 1) * k_)));
  }
  return {{"classes", names_}, {"counts", rows}};
}

std::string ConfusionMatrix::to_text() const {
  std::size_t width = 6;
  for (const auto& n : names_) width = std::max(width, n.size() + 1);
  for (auto c : counts_) width = std::max(width, std::to_string(c).size() + 1);
  std::ostringstream os;
  os << std::setw(static_cast<int>(width)) << "true\\pred";
  for (const auto& n : names_) os << std::setw(static_cast<int>(width)) << n;
  os << '\n';
  for (std::size_t i = 0; i < k_; ++i) {
    os << std::setw(static_cast<int>(width)) << names_[i];
    for (std::size_t j = 0; j < k_; ++j) os << std::setw(static_cast<int>(width)) << (*this)(i, j);
    os << '\n';
  }
  return os.str();
}

nlohmann::json MetricsReport::to_json() const {
  return {{"wa", wa}, {"ua", ua}, {"macro_f1", macro_f1}, {"micro_f1", micro_f1},
          {"n_utterances", n_utterances}, {"confusion", confusion.to_json()}};
}

MetricsReport metrics_from_confusion(const ConfusionMatrix& cm) {
  const std::size_t k = cm.classes();
  MetricsReport r;
  r.confusion = cm;
  r.n_utterances = cm.total();
  if (r.n_utterances == 0) return r;

  std::uint64_t correct = 0;
  std::vector<std::uint64_t> true_count(k, 0), pred_count(k, 0);
  for (std::size_t i = 0; i < k; ++i) {
    correct += cm(i, i);
    for (std::size_t j = 0; j < k; ++j) {
      true_count[i] += cm(i, j);
      pred_count[j] += cm(i, j);
    }
  }
  const double total = static_cast<double>(r.n_utterances);
  r.wa = static_cast<double>(correct) / total;

  double recall_sum = 0, f1_sum = 0;
  std::size_t recall_classes = 0, f1_classes = 0;
  std::uint64_t fp_total = 0, fn_total = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const std::uint64_t tp = cm(c, c);
    const std::uint64_t fn = true_count[c] - tp;
    const std::uint64_t fp = pred_count[c] - tp;
    fp_total += fp;
    fn_total += fn;
    if (true_count[c] > 0) {
      recall_sum += static_cast<double>(tp) / static_cast<double>(true_count[c]);
      ++recall_classes;
    }
    if (true_count[c] > 0 || pred_count[c] > 0) {
      // F1 = 2TP / (2TP + FP + FN), which is 2PR / (P + R) and 0 when TP = 0.
      f1_sum += 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
      ++f1_classes;
    }
  }
  r.ua = recall_classes ? recall_sum / static_cast<double>(recall_classes) : 0.0;
  r.macro_f1 = f1_classes ? f1_sum / static_cast<double>(f1_classes) : 0.0;
  // Pooled: FP and FN totals both equal the number of errors, so this is WA.
  r.micro_f1 = 2.0 * static_cast<double>(correct) / static_cast<double>(2 * correct + fp_total + fn_total);
  return r;
}

MetricsReport compute_metrics(std::span<const int> truth, std::span<const int> predicted, std::size_t classes,
                              std::vector<std::string> class_names) {
  if (truth.size() != predicted.size()) {
    throw ValidationError("label lists differ in length: " + std::to_string(truth.size()) + " vs " +
                          std::to_string(predicted.size()));
  }
  ConfusionMatrix cm(classes, std::move(class_names));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || predicted[i] < 0 || static_cast<std::size_t>(truth[i]) >= classes ||
        static_cast<std::size_t>(predicted[i]) >= classes) {
      throw ValidationError("label out of range at position " + std::to_string(i));
    }
    cm.add(static_cast<std::size_t>(truth[i]), static_cast<std::size_t>(predicted[i]));
  }
  return metrics_from_confusion(cm);
}

std::vector<UtterancePrediction> aggregate_predictions(std::span<const FeatureSegment> segments,
                                                       std::span<const std::vector<double>> segment_probs) {
  if (segments.size() != segment_probs.size()) throw ValidationError("one probability vector per segment required");
  std::vector<UtterancePrediction> out;
  std::vector<std::vector<std::vector<double>>> grouped;
  std::map<std::string, std::size_t> slot;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    auto [it, inserted] = slot.emplace(segments[i].utterance_id, out.size());
    if (inserted) {
      out.push_back({segments[i].utterance_id, segments[i].label, {}, 0});
      grouped.emplace_back();
    } else if (out[it->second].label != segments[i].label) {
      throw ValidationError("segments of utterance '" + segments[i].utterance_id + "' disagree on the label");
    }
    grouped[it->second].push_back(segment_probs[i]);
  }
  for (std::size_t u = 0; u < out.size(); ++u) {
    out[u].probs = aggregate_utterance(grouped[u]);
    out[u].predicted = static_cast<int>(argmax(out[u].probs));
  }
  return out;
}

MetricsReport evaluate_predictions(std::span<const UtterancePrediction> predictions, std::size_t classes,
                                   std::vector<std::string> class_names) {
  std::vector<int> truth, pred;
  for (const auto& p : predictions) {
    truth.push_back(p.label);
    pred.push_back(p.predicted);
  }
  return compute_metrics(truth, pred, classes, std::move(class_names));
}

std::string to_string(SplitMode mode) { return mode == SplitMode::holdout_80_20 ? "holdout" : "ratio811"; }

SplitMode parse_split_mode(std::string_view text) {
  if (text == "holdout" || text == "holdout_80_20") return SplitMode::holdout_80_20;
  if (text == "ratio811" || text == "ratio_8_1_1") return SplitMode::ratio_8_1_1;
  throw ConfigError("unknown split mode '" + std::string(text) + "' (expected holdout or ratio811)");
}

std::vector<SplitIndices> make_splits(std::size_t n_records, SplitMode mode, std::size_t n_runs, std::uint64_t seed) {
  if (n_records == 0) throw ConfigError("cannot split an empty record list");
  if (n_runs == 0) throw ConfigError("n_runs must be at least 1");
  const auto n = static_cast<double>(n_records);
  const auto n_train = static_cast<std::size_t>(std::llround(0.8 * n));
  const std::size_t n_val = mode == SplitMode::ratio_8_1_1 ? static_cast<std::size_t>(std::llround(0.1 * n)) : 0;
  if (n_train == 0 || n_train + n_val >= n_records || (mode == SplitMode::ratio_8_1_1 && n_val == 0)) {
    throw ConfigError(std::to_string(n_records) + " records are too few for a " + to_string(mode) +
                      " split with non-empty parts");
  }
  std::vector<SplitIndices> out;
  for (std::size_t run = 0; run < n_runs; ++run) {
    std::vector<std::size_t> order(n_records);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed + run);
    std::shuffle(order.begin(), order.end(), rng);
    SplitIndices s;
    s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                 order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

MetricSummary summarize_metric(std::span<const MetricsReport> runs, double MetricsReport::*field) {
  MetricSummary s;
  s.min = s.max = runs.front().*field;
  double total = 0;
  for (const auto& r : runs) {
    total += r.*field;
    s.min = std::min(s.min, r.*field);
    s.max = std::max(s.max, r.*field);
  }
  s.mean = total / static_cast<double>(runs.size());
  if (runs.size() > 1) {
    double ss = 0;
    for (const auto& r : runs) ss += (r.*field - s.mean) * (r.*field - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(runs.size() - 1));
  }
  return s;
}

nlohmann::json metric_json(const MetricSummary& s) {
  return {{"mean", s.mean}, {"std", s.stddev}, {"min", s.min}, {"max", s.max}};
}

}  // namespace

SplitSummary summarize(std::span<const MetricsReport> runs) {
  if (runs.empty()) throw ValidationError("cannot summarize zero runs");
  SplitSummary s;
  s.wa = summarize_metric(runs, &MetricsReport::wa);
  s.ua = summarize_metric(runs, &MetricsReport::ua);
  s.macro_f1 = summarize_metric(runs, &MetricsReport::macro_f1);
  s.micro_f1 = summarize_metric(runs, &MetricsReport::micro_f1);
  s.n_runs = runs.size();
  s.degenerate = runs.size() == 1;
  return s;
}

nlohmann::json SplitSummary::to_json() const {
  return {{"n_runs", n_runs}, {"degenerate", degenerate}, {"wa", metric_json(wa)}, {"ua", metric_json(ua)},
          {"macro_f1", metric_json(macro_f1)}, {"micro_f1", metric_json(micro_f1)}};
}

}  // namespace glam

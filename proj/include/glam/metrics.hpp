#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "glam/audio.hpp"

namespace glam {

/// Mean of per-segment probability vectors.
std::vector<double> aggregate_utterance(std::span<const std::vector<double>> segment_probs);

/// Index of the largest entry; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> values);

/// counts(i, j) = utterances of true class i predicted as j.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes, std::vector<std::string> names = {});

  void add(std::size_t truth, std::size_t predicted);
  std::uint64_t operator()(std::size_t truth, std::size_t predicted) const { return counts_[truth * k_ + predicted]; }
  std::size_t classes() const { return k_; }
  std::uint64_t total() const;
  const std::vector<std::string>& names() const { return names_; }

  nlohmann::json to_json() const;
  /// Aligned text table with true classes as rows.
  std::string to_text() const;

 private:
  std::size_t k_;
  std::vector<std::string> names_;
  std::vector<std::uint64_t> counts_;
};

struct MetricsReport {
  double wa = 0;
  double ua = 0;
  double macro_f1 = 0;
  double micro_f1 = 0;
  ConfusionMatrix confusion{1};
  std::size_t n_utterances = 0;

  nlohmann::json to_json() const;
};

/// WA = accuracy; UA = mean recall over classes present in the truth;
/// macro-F1 = mean per-class F1 over classes seen in truth or predictions;
/// micro-F1 from pooled counts.
MetricsReport metrics_from_confusion(const ConfusionMatrix& confusion);
MetricsReport compute_metrics(std::span<const int> truth, std::span<const int> predicted, std::size_t classes,
                              std::vector<std::string> class_names = {});

struct UtterancePrediction {
  std::string utterance_id;
  int label = 0;
  std::vector<double> probs;
  int predicted = 0;
};

/// Groups segment probabilities by utterance (in order of first appearance)
/// and averages them.
std::vector<UtterancePrediction> aggregate_predictions(std::span<const FeatureSegment> segments,
                                                       std::span<const std::vector<double>> segment_probs);

MetricsReport evaluate_predictions(std::span<const UtterancePrediction> predictions, std::size_t classes,
                                   std::vector<std::string> class_names = {});

enum class SplitMode { holdout_80_20, ratio_8_1_1 };

std::string to_string(SplitMode mode);
SplitMode parse_split_mode(std::string_view text);

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;  // empty in holdout mode
  std::vector<std::size_t> test;
};

/// Random utterance-level partitions; run i shuffles with seed + i.
std::vector<SplitIndices> make_splits(std::size_t n_records, SplitMode mode, std::size_t n_runs, std::uint64_t seed);

struct MetricSummary {
  double mean = 0;
  double stddev = 0;  // sample (n - 1) standard deviation; 0 for one run
  double min = 0;
  double max = 0;
};

struct SplitSummary {
  MetricSummary wa, ua, macro_f1, micro_f1;
  std::size_t n_runs = 0;
  bool degenerate = false;  // a single run has no spread

  nlohmann::json to_json() const;
};

SplitSummary summarize(std::span<const MetricsReport> runs);

}  // namespace glam

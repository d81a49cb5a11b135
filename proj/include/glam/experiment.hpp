#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "glam/audio.hpp"
#include "glam/error.hpp"
#include "glam/metrics.hpp"
#include "glam/model.hpp"
#include "glam/training.hpp"

namespace glam {

/// Every segment of one utterance, unnormalized.
struct UtteranceFeatures {
  std::string utterance_id;
  int label = 0;
  std::vector<FeatureSegment> segments;
};

struct RunResult {
  std::size_t run = 0;
  SplitIndices split;
  FeatureStats stats;  // from the run's training utterances
  TrainResult<float> training;
  std::vector<UtterancePrediction> test_predictions;
  MetricsReport test;
};

struct ExperimentResult {
  std::vector<RunResult> runs;
  SplitSummary summary;
};

/// Raised when one run of an experiment fails; the message names the run.
class RunFailure : public Error {
 public:
  RunFailure(std::size_t run, const std::string& what)
      : Error("run " + std::to_string(run) + ": " + what), run_(run) {}
  std::size_t run() const { return run_; }

 private:
  std::size_t run_;
};

using RunProgress = std::function<void(std::size_t run, const EpochRecord&)>;

/// Repeated random-split protocol. Run i splits the utterances with seed + i,
/// normalizes with statistics of its training utterances, trains with seed + i
/// (selecting on the validation part in ratio_8_1_1 mode), then scores the
/// test utterances by averaging segment probabilities.
ExperimentResult run_experiment(std::span<const UtteranceFeatures> corpus, const ModelConfig& model_cfg,
                                const TrainConfig& train_cfg, SplitMode mode, std::size_t n_runs,
                                std::uint64_t seed, const std::vector<std::string>& class_names = {},
                                const RunProgress& progress = {});

/// Segments of the selected utterances, normalized with `stats`, in order.
std::vector<FeatureSegment> gather_segments(std::span<const UtteranceFeatures> corpus,
                                            std::span<const std::size_t> indices, const FeatureStats& stats);

}  // namespace glam

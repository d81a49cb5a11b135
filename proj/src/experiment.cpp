#include "glam/experiment.hpp"

namespace glam {

std::vector<FeatureSegment> gather_segments(std::span<const UtteranceFeatures> corpus,
                                            std::span<const std::size_t> indices, const FeatureStats& stats) {
  std::vector<FeatureSegment> out;
  for (std::size_t i : indices) {
    for (const auto& s : corpus[i].segments) out.push_back(s);
  }
  return normalize_features(std::move(out), stats).first;
}

namespace {

RunResult run_once(std::span<const UtteranceFeatures> corpus, const ModelConfig& model_cfg, TrainConfig train_cfg,
                   const SplitIndices& split, std::size_t run, const std::vector<std::string>& class_names,
                   const RunProgress& progress) {
  RunResult r;
  r.run = run;
  r.split = split;

  std::vector<FeatureSegment> raw_train;
  for (std::size_t i : split.train) {
    for (const auto& s : corpus[i].segments) raw_train.push_back(s);
  }
  auto [train_set, stats] = normalize_features(std::move(raw_train));
  r.stats = stats;
  const auto val_set = gather_segments(corpus, split.val, stats);
  const auto test_set = gather_segments(corpus, split.test, stats);

  train_cfg.seed += run;
  EpochCallback on_epoch;
  if (progress) on_epoch = [&](const EpochRecord& e) { progress(run, e); };
  r.training = train<float>(model_cfg, train_set, val_set, train_cfg, on_epoch);

  const auto probs = predict_probabilities(r.training.params, model_cfg, test_set);
  r.test_predictions = aggregate_predictions(test_set, probs);
  r.test = evaluate_predictions(r.test_predictions, model_cfg.n_classes, class_names);
  return r;
}

}  // namespace

ExperimentResult run_experiment(std::span<const UtteranceFeatures> corpus, const ModelConfig& model_cfg,
                                const TrainConfig& train_cfg, SplitMode mode, std::size_t n_runs,
                                std::uint64_t seed, const std::vector<std::string>& class_names,
                                const RunProgress& progress) {
  for (const auto& u : corpus) {
    if (u.segments.empty()) throw ValidationError("utterance '" + u.utterance_id + "' has no segments");
  }
  const auto splits = make_splits(corpus.size(), mode, n_runs, seed);
  ExperimentResult result;
  std::vector<MetricsReport> reports;
  for (std::size_t run = 0; run < splits.size(); ++run) {
    TrainConfig cfg = train_cfg;
    cfg.seed = seed;
    try {
      result.runs.push_back(run_once(corpus, model_cfg, cfg, splits[run], run, class_names, progress));
    } catch (const RunFailure&) {
      throw;
    } catch (const std::exception& e) {
      throw RunFailure(run, e.what());
    }
    reports.push_back(result.runs.back().test);
  }
  result.summary = summarize(reports);
  return result;
}

}  // namespace glam

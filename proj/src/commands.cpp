#include "glam/commands.hpp"

#include <cstdio>
#include <map>

#include "glam/checkpoint.hpp"
#include "glam/error.hpp"
#include "glam/experiment.hpp"
#include "glam/feature_cache.hpp"
#include "glam/manifest.hpp"
#include "glam/serialize.hpp"
#include "glam/synth.hpp"

namespace glam {
namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string short_fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::vector<UtteranceRecord> selected_records(const RunConfig& cfg) {
  if (cfg.manifest.empty()) throw ConfigError("no manifest given: pass --manifest PATH");
  if (!std::filesystem::exists(cfg.manifest)) throw ConfigError("manifest " + cfg.manifest.string() + " does not exist");
  auto records = filter_records(parse_manifest(cfg.manifest), cfg.dataset);
  if (records.empty()) {
    throw ConfigError("manifest " + cfg.manifest.string() + " has no " + to_string(cfg.dataset) + " utterances");
  }
  return records;
}

std::vector<UtteranceFeatures> load_corpus(const FeatureCache& cache, const std::vector<UtteranceRecord>& records) {
  std::vector<UtteranceFeatures> corpus;
  corpus.reserve(records.size());
  for (const auto& r : records) corpus.push_back(cache.load(r));
  return corpus;
}

void write_text(const std::filesystem::path& path, const std::string& text) { write_file_atomic(path, text); }

}  // namespace

std::string output_tag(const RunConfig& cfg) { return to_string(cfg.model.fusion_mode); }

int cmd_synth(const RunConfig& cfg, std::ostream& out) {
  SynthOptions opt;
  opt.n_per_class = cfg.n_per_class;
  opt.seed = cfg.require_seed();
  opt.sample_rate = cfg.mfcc.sample_rate;
  const auto manifest = generate_synth_dataset(cfg.out_dir, opt);
  out << "wrote " << 4 * cfg.n_per_class << " utterances, manifest " << manifest.string() << "\n";
  return 0;
}

int cmd_features(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const auto records = selected_records(cfg);
  FeatureCache cache(cfg.feature_cache_dir(), cfg.mfcc);
  std::size_t extracted = 0, reused = 0, failed = 0;
  std::map<int, std::size_t> segments_per_class;
  for (const auto& r : records) {
    try {
      (cache.ensure(r) == CacheStatus::extracted ? extracted : reused) += 1;
      segments_per_class[r.label] += cache.load(r).segments.size();
    } catch (const std::exception& e) {
      ++failed;
      err << "error: " << r.utterance_id << " (" << r.wav_path.string() << "): " << e.what() << "\n";
    }
  }
  out << "cache " << cache.dir().string() << " (config " << cfg.mfcc.hash() << "): extracted " << extracted
      << ", reused " << reused << ", failed " << failed << "\n";
  for (std::size_t k = 0; k < kEmotionLabels.size(); ++k) {
    out << "  " << kEmotionLabels[k] << ": " << segments_per_class[static_cast<int>(k)] << " segments\n";
  }
  return failed == 0 ? 0 : 1;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  const std::uint64_t seed = cfg.require_seed();
  cfg.mfcc.validate();
  const ModelConfig model = cfg.resolved_model();
  model.validate();
  cfg.train.validate();
  const auto records = selected_records(cfg);
  const FeatureCache cache(cfg.feature_cache_dir(), cfg.mfcc);
  const auto corpus = load_corpus(cache, records);
  const auto names = emotion_label_names();
  const std::string tag = output_tag(cfg);
  std::filesystem::create_directories(cfg.out_dir);

  out << "training " << cfg.n_runs << " run(s) on " << corpus.size() << " " << to_string(cfg.dataset)
      << " utterances, fusion " << tag << ", alpha " << cfg.train.alpha << "\n";
  const auto result = run_experiment(corpus, model, cfg.train, cfg.split, cfg.n_runs, seed, names,
                                     [&out](std::size_t run, const EpochRecord& e) {
                                       out << "  run " << run << " epoch " << e.epoch << " loss " << short_fmt(e.loss)
                                           << " lr " << e.lr;
                                       if (e.val_wa) out << " val_wa " << short_fmt(*e.val_wa) << " val_ua " << short_fmt(*e.val_ua);
                                       if (e.snapshot) out << " *";
                                       out << "\n";
                                     });

  std::string csv = "run_id,wa,ua,macro_f1,micro_f1\n";
  for (const auto& run : result.runs) {
    const std::string stem = "run" + std::to_string(run.run) + "_" + tag;
    const auto& m = run.test;
    csv += std::to_string(run.run) + "," + fmt(m.wa) + "," + fmt(m.ua) + "," + fmt(m.macro_f1) + "," +
           fmt(m.micro_f1) + "\n";

    std::vector<UtteranceRecord> test_records;
    for (std::size_t i : run.split.test) test_records.push_back(records[i]);
    const std::string test_manifest = "test_" + stem + ".jsonl";
    write_text(cfg.out_dir / test_manifest, manifest_to_text(test_records));

    Checkpoint ckpt;
    ckpt.config = model;
    ckpt.params = run.training.params.clone();
    ckpt.step = run.training.steps;
    ckpt.feature_stats = run.stats;
    ckpt.metadata = {{"run", run.run},
                     {"seed", seed + run.run},
                     {"dataset", to_string(cfg.dataset)},
                     {"split", to_string(cfg.split)},
                     {"mfcc_hash", cfg.mfcc.hash()},
                     {"test_manifest", test_manifest},
                     {"test_metrics", m.to_json()}};
    ckpt.metadata["best_epoch"] =
        run.training.best_epoch ? nlohmann::json(*run.training.best_epoch) : nlohmann::json(nullptr);
    save_checkpoint(cfg.out_dir / (stem + ".ckpt"), ckpt);

    write_text(cfg.out_dir / ("history_" + stem + ".jsonl"), history_to_jsonl(run.training.history));
    write_text(cfg.out_dir / ("confusion_" + stem + ".json"), m.confusion.to_json().dump(2) + "\n");
    write_text(cfg.out_dir / ("confusion_" + stem + ".txt"), m.confusion.to_text());
    out << "run " << run.run << ": WA " << short_fmt(m.wa) << " UA " << short_fmt(m.ua) << " macro-F1 "
        << short_fmt(m.macro_f1) << " micro-F1 " << short_fmt(m.micro_f1) << "\n";
  }
  write_text(cfg.out_dir / ("runs_" + tag + ".csv"), csv);

  nlohmann::json summary{{"fusion", tag}, {"summary", result.summary.to_json()}, {"config", cfg.to_json()}};
  write_text(cfg.out_dir / ("summary_" + tag + ".json"), summary.dump(2) + "\n");
  const auto& s = result.summary;
  out << "summary over " << s.n_runs << " run(s)" << (s.degenerate ? " (single run, no spread)" : "") << ":\n"
      << "  WA " << short_fmt(s.wa.mean) << " +- " << short_fmt(s.wa.stddev) << "\n"
      << "  UA " << short_fmt(s.ua.mean) << " +- " << short_fmt(s.ua.stddev) << "\n"
      << "  macro-F1 " << short_fmt(s.macro_f1.mean) << " +- " << short_fmt(s.macro_f1.stddev) << "\n"
      << "  micro-F1 " << short_fmt(s.micro_f1.mean) << " +- " << short_fmt(s.micro_f1.stddev) << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
  if (cfg.checkpoint.empty()) throw ConfigError("no checkpoint given: pass --checkpoint PATH");
  auto ckpt = load_checkpoint(cfg.checkpoint);
  if (!ckpt.feature_stats) throw FormatError("checkpoint " + cfg.checkpoint.string() + " has no feature statistics");
  if (ckpt.metadata.contains("mfcc_hash") && ckpt.metadata["mfcc_hash"] != cfg.mfcc.hash()) {
    throw ConfigError("checkpoint was trained on features with config " +
                      ckpt.metadata["mfcc_hash"].get<std::string>() + ", current config is " + cfg.mfcc.hash());
  }
  const auto records = selected_records(cfg);
  const FeatureCache cache(cfg.feature_cache_dir(), cfg.mfcc);
  const auto corpus = load_corpus(cache, records);
  std::vector<std::size_t> all(corpus.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto segments = gather_segments(corpus, all, *ckpt.feature_stats);

  const auto probs = predict_probabilities(ckpt.params, ckpt.config, segments);
  const auto report = evaluate_predictions(aggregate_predictions(segments, probs), ckpt.config.n_classes,
                                           emotion_label_names());
  const std::string stem = "eval_" + cfg.checkpoint.stem().string();
  std::filesystem::create_directories(cfg.out_dir);
  nlohmann::json j = report.to_json();
  j["checkpoint"] = cfg.checkpoint.string();
  write_text(cfg.out_dir / (stem + ".json"), j.dump(2) + "\n");
  write_text(cfg.out_dir / (stem + "_confusion.txt"), report.confusion.to_text());
  out << "utterances " << report.n_utterances << "\n"
      << "wa " << fmt(report.wa) << "\nua " << fmt(report.ua) << "\nmacro_f1 " << fmt(report.macro_f1)
      << "\nmicro_f1 " << fmt(report.micro_f1) << "\n"
      << report.confusion.to_text();

  if (!cfg.embeddings.empty()) {
    std::string csv = "utterance_id,segment_index,label";
    for (std::size_t k = 0; k < ckpt.config.head_hidden; ++k) csv += ",e" + std::to_string(k);
    csv += "\n";
    constexpr std::size_t kBatch = 64;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < segments.size(); start += kBatch) {
      idx.clear();
      for (std::size_t i = start; i < std::min(segments.size(), start + kBatch); ++i) idx.push_back(i);
      const auto emb = export_embeddings(make_batch<float>(segments, idx), ckpt.params, ckpt.config);
      const std::size_t width = emb.dim(1);
      for (std::size_t r = 0; r < idx.size(); ++r) {
        const auto& seg = segments[idx[r]];
        csv += seg.utterance_id + "," + std::to_string(seg.segment_index) + "," +
               std::string(kEmotionLabels.at(static_cast<std::size_t>(seg.label)));
        for (std::size_t k = 0; k < width; ++k) csv += "," + fmt(emb.data()[r * width + k]);
        csv += "\n";
      }
    }
    write_text(cfg.embeddings, csv);
    out << "embeddings written to " << cfg.embeddings.string() << "\n";
  }
  return 0;
}

int cmd_gradcheck(std::ostream& out, const std::vector<GradCheckCase>& cases, std::size_t n_seeds) {
  const auto report = run_gradcheck_suite(cases, n_seeds);
  out << report.to_text();
  return report.passed ? 0 : 1;
}

}  // namespace glam

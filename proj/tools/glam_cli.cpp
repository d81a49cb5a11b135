#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "glam/commands.hpp"
#include "glam/error.hpp"
#include "glam/run_config.hpp"

namespace {

struct Flag {
  const char* name;
  const char* key;
  const char* help;
};

// Flags map one-to-one onto config keys; anything set on the command line
// overrides the config file.
const std::vector<Flag> kSharedFlags{
    {"--manifest", "manifest", "JSON-lines manifest of utterances"},
    {"--out", "out", "output directory"},
    {"--seed", "seed", "random seed"},
    {"--dataset", "dataset", "improvisation | script | full"},
    {"--fusion", "fusion", "global_aware | none"},
    {"--alpha", "alpha", "mixup Beta parameter; 0 disables mixup"},
    {"--runs", "runs", "number of repeated splits"},
    {"--split", "split", "holdout | ratio811"},
    {"--epochs", "epochs", "training epochs per run"},
    {"--batch-size", "batch_size", "training batch size"},
    {"--cache-dir", "cache_dir", "feature cache directory (GLAM_CACHE_DIR wins)"},
    {"--checkpoint", "checkpoint", "checkpoint to evaluate"},
    {"--embeddings", "embeddings", "write penultimate-layer embeddings to this CSV"},
    {"--n-per-class", "n_per_class", "synthetic utterances per class"},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GLAM speech emotion recognition: features, training, evaluation and checks"};
  app.require_subcommand(1);

  std::string config_path;
  std::map<std::string, std::string> values;
  std::vector<std::string> sets;
  std::size_t gradcheck_seeds = 1;

  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : std::vector<std::pair<std::string, std::string>>{
           {"synth", "generate the synthetic four-class dataset"},
           {"features", "extract and cache MFCC segments for a manifest"},
           {"train", "run the repeated-split training experiment"},
           {"eval", "score a checkpoint on a manifest"},
           {"gradcheck", "run the float64 gradient-check suite"}}) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "key = value configuration file");
    for (const auto& f : kSharedFlags) sub->add_option(f.name, values[f.key], f.help);
    sub->add_option("--set", sets, "extra key=value setting (repeatable)");
    subs[name] = sub;
  }
  subs["gradcheck"]->add_option("--seeds", gradcheck_seeds, "seeds per case")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    glam::RunConfig cfg;
    if (!config_path.empty()) glam::apply_config_file(cfg, config_path);
    CLI::App* chosen = app.get_subcommands().front();
    for (const auto& f : kSharedFlags) {
      if (chosen->count(f.name) > 0) cfg.set(f.key, values[f.key]);
    }
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw glam::ConfigError("--set expects key=value, got '" + s + "'");
      cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }

    const std::string name = chosen->get_name();
    if (name == "synth") return glam::cmd_synth(cfg, std::cout);
    if (name == "features") return glam::cmd_features(cfg, std::cout, std::cerr);
    if (name == "train") return glam::cmd_train(cfg, std::cout);
    if (name == "eval") return glam::cmd_eval(cfg, std::cout);
    return glam::cmd_gradcheck(std::cout, glam::default_gradcheck_cases(), gradcheck_seeds);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

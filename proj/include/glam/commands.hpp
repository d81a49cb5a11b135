#pragma once

#include <cstddef>
#include <ostream>
#include <string>
#include <vector>

#include "glam/gradcheck_suite.hpp"
#include "glam/run_config.hpp"

namespace glam {

// Entry points behind the `glam` subcommands. Each returns the process exit
// code; errors that stop the whole command are thrown.

/// Synthetic WAVs and manifest under out_dir.
int cmd_synth(const RunConfig& cfg, std::ostream& out);
/// Extracts missing or stale cache entries; 1 if any utterance failed.
int cmd_features(const RunConfig& cfg, std::ostream& out, std::ostream& err);
/// Repeated-split experiment; writes per-run checkpoints, histories,
/// confusion matrices and test manifests, plus the runs CSV and summary JSON.
int cmd_train(const RunConfig& cfg, std::ostream& out);
/// Scores a checkpoint on the manifest's utterances.
int cmd_eval(const RunConfig& cfg, std::ostream& out);
/// 1 if any case exceeds its tolerance.
int cmd_gradcheck(std::ostream& out, const std::vector<GradCheckCase>& cases, std::size_t n_seeds = 1);

/// Output-file tag of a configuration, e.g. "global_aware".
std::string output_tag(const RunConfig& cfg);

}  // namespace glam

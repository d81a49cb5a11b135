#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace glam {

struct SynthOptions {
  std::size_t n_per_class = 25;
  std::uint64_t seed = 0;
  int sample_rate = 16000;
  double min_seconds = 2.0;
  double max_seconds = 4.0;
  double noise_level = 0.01;
};

/// Waveform of one synthetic utterance of class `label` (0..3): two sines
/// at 200 (label + 1) Hz and 1.5 times that, amplitude-modulated at
/// 3 + 2 label Hz, with light Gaussian noise. `rng_seed` fixes duration,
/// jitter, phases and noise.
std::vector<float> synth_waveform(int label, std::uint64_t rng_seed, const SynthOptions& options);

/// Writes n_per_class PCM16 WAVs per class under `out_dir` and a
/// manifest.jsonl whose paths are relative to it; returns the manifest path.
/// Scripted and unscripted rounds alternate; sessions cycle S1..S5.
std::filesystem::path generate_synth_dataset(const std::filesystem::path& out_dir, const SynthOptions& options);

}  // namespace glam

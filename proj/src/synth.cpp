#include "glam/synth.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "glam/audio.hpp"
#include "glam/error.hpp"
#include "glam/manifest.hpp"
#include "glam/serialize.hpp"

namespace glam {

std::vector<float> synth_waveform(int label, std::uint64_t rng_seed, const SynthOptions& options) {
  if (label < 0 || label >= static_cast<int>(kEmotionLabels.size())) {
    throw ValidationError("synthetic label must lie in 0..3, got " + std::to_string(label));
  }
  std::mt19937_64 rng(rng_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double seconds = options.min_seconds + (options.max_seconds - options.min_seconds) * unit(rng);
  const double f0 = 200.0 * (label + 1) * (1.0 + 0.04 * (unit(rng) - 0.5));
  const double f1 = 1.5 * f0;
  const double am = 3.0 + 2.0 * label;
  const double ph0 = 2 * std::numbers::pi * unit(rng);
  const double ph1 = 2 * std::numbers::pi * unit(rng);
  const double ph_am = 2 * std::numbers::pi * unit(rng);
  std::normal_distribution<double> noise(0.0, options.noise_level);

  const auto n = static_cast<std::size_t>(std::llround(seconds * options.sample_rate));
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / options.sample_rate;
    const double env = 0.6 + 0.4 * std::sin(2 * std::numbers::pi * am * t + ph_am);
    const double tone = 0.5 * std::sin(2 * std::numbers::pi * f0 * t + ph0) + 0.3 * std::sin(2 * std::numbers::pi * f1 * t + ph1);
    out[i] = static_cast<float>(std::clamp(0.8 * env * tone + noise(rng), -1.0, 1.0));
  }
  return out;
}

std::filesystem::path generate_synth_dataset(const std::filesystem::path& out_dir, const SynthOptions& options) {
  if (options.n_per_class == 0) throw ConfigError("n_per_class must be at least 1");
  if (!(options.min_seconds > 0) || options.max_seconds < options.min_seconds) {
    throw ConfigError("synthetic durations need 0 < min_seconds <= max_seconds");
  }
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "wav", ec);
  if (ec) throw IOError("cannot create " + (out_dir / "wav").string() + ": " + ec.message());

  std::mt19937_64 master(options.seed);
  std::vector<UtteranceRecord> records;
  std::size_t index = 0;
  for (std::size_t i = 0; i < options.n_per_class; ++i) {
    for (int label = 0; label < static_cast<int>(kEmotionLabels.size()); ++label, ++index) {
      char name[64];
      std::snprintf(name, sizeof name, "synth_%s_%04zu", std::string(kEmotionLabels[label]).c_str(), i);
      const auto samples = synth_waveform(label, master(), options);
      const std::filesystem::path rel = std::filesystem::path("wav") / (std::string(name) + ".wav");
      try {
        write_file_atomic(out_dir / rel, encode_wav(samples, options.sample_rate, 1, WavEncoding::pcm16));
      } catch (const std::exception& e) {
        throw IOError("cannot write " + (out_dir / rel).string() + ": " + e.what());
      }
      UtteranceRecord r;
      r.utterance_id = name;
      r.wav_path = rel;
      r.label = label;
      r.session = "S" + std::to_string(index % 5 + 1);
      r.scripted = i % 2 == 1;
      records.push_back(std::move(r));
    }
  }
  const auto manifest = out_dir / "manifest.jsonl";
  try {
    write_file_atomic(manifest, manifest_to_text(records));
  } catch (const std::exception& e) {
    throw IOError("cannot write " + manifest.string() + ": " + e.what());
  }
  return manifest;
}

}  // namespace glam

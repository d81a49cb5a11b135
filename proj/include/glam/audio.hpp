#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "glam/tensor.hpp"

namespace glam {

struct AudioClip {
  std::vector<float> samples;  // mono, in [-1, 1]
  int sample_rate = 0;
};

enum class WavEncoding { pcm16, float32 };

/// Reads 16-bit PCM or 32-bit float WAV; multichannel audio is averaged to
/// mono and 16-bit samples are scaled by 1/32768. No resampling.
AudioClip load_wav(const std::filesystem::path& path);
AudioClip decode_wav(std::string_view bytes);

/// Serializes interleaved samples as a canonical 44-byte-header WAV file.
std::string encode_wav(const std::vector<float>& interleaved, int sample_rate, int channels,
                       WavEncoding encoding = WavEncoding::pcm16);

/// Short-time analysis and segmentation parameters. The defaults give
/// 198 x 40 segments: 2 s windows every 0.4 s over 10 ms frames.
struct MfccConfig {
  int sample_rate = 16000;
  std::size_t window_len = 400;
  std::size_t hop = 160;
  std::size_t fft_size = 512;
  std::size_t n_mels = 40;
  std::size_t n_mfcc = 40;
  double pre_emphasis = 0.97;
  double log_floor = 1e-10;
  double segment_seconds = 2.0;
  double overlap_seconds = 1.6;

  void validate() const;
  /// Stable 16-hex-digit digest of every field, used to key the feature cache.
  std::string hash() const;
};

using FeatureMatrix = RowMajorMatrix<float>;

std::size_t frame_count(std::size_t n_samples, const MfccConfig& cfg);
/// Frames in one segment: the frame count of a segment_seconds clip.
std::size_t segment_frames(const MfccConfig& cfg);
/// Segment step in frames: (segment_seconds - overlap_seconds) converted via hop.
std::size_t segment_step(const MfccConfig& cfg);

double hz_to_mel(double hz);
double mel_to_hz(double mel);
/// Triangular HTK mel filters, n_mels x (fft_size/2 + 1), spanning 0 Hz to Nyquist.
RowMajorMatrix<double> mel_filterbank(const MfccConfig& cfg);
std::vector<double> mel_center_frequencies(const MfccConfig& cfg);

/// frames x n_mels log filterbank energies (the input to the DCT).
RowMajorMatrix<double> log_mel_energies(const AudioClip& clip, const MfccConfig& cfg);
/// frames x n_mfcc cepstra: orthonormal DCT-II of log_mel_energies.
FeatureMatrix compute_mfcc(const AudioClip& clip, const MfccConfig& cfg);

struct FeatureSegment {
  FeatureMatrix features;  // segment_frames x n_mfcc
  std::string utterance_id;
  std::size_t segment_index = 0;
  int label = 0;
};

/// Cuts an utterance into overlapping fixed-length segments. An utterance
/// shorter than one segment yields a single zero-padded segment.
std::vector<FeatureSegment> segment_utterance(const FeatureMatrix& features, const MfccConfig& cfg,
                                              const std::string& utterance_id = {}, int label = 0);

struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

/// Per-coefficient z-normalization. Without `stats`, they are computed from
/// `segments` (pass the training split) and returned for reuse.
std::pair<std::vector<FeatureSegment>, FeatureStats> normalize_features(
    std::vector<FeatureSegment> segments, const std::optional<FeatureStats>& stats = std::nullopt);

}  // namespace glam

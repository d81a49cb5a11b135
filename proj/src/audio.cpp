#include "glam/audio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <numbers>
#include <sstream>
#include <unsupported/Eigen/FFT>

#include "glam/error.hpp"
#include "glam/serialize.hpp"

namespace glam {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::string_view take(std::size_t n, const char* what) {
    if (remaining() < n) throw FormatError(std::string("truncated WAV: ") + what);
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  template <typename T>
  T read(const char* what) {
    auto raw = take(sizeof(T), what);
    std::make_unsigned_t<T> v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<std::make_unsigned_t<T>>(static_cast<unsigned char>(raw[i])) << (8 * i);
    return static_cast<T>(v);
  }
  void skip(std::size_t n) { pos_ = std::min(bytes_.size(), pos_ + n); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

template <typename T>
void append_le(std::string& out, T value) {
  auto bits = static_cast<std::make_unsigned_t<T>>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

}  // namespace

AudioClip decode_wav(std::string_view bytes) {
  ByteReader in(bytes);
  if (in.take(4, "RIFF id") != "RIFF") throw FormatError("not a RIFF file");
  in.read<std::uint32_t>("RIFF size");
  if (in.take(4, "WAVE id") != "WAVE") throw FormatError("RIFF file is not WAVE");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::string_view payload;
  bool have_data = false;
  while (in.remaining() >= 8 && !have_data) {
    const auto id = in.take(4, "chunk id");
    const auto size = in.read<std::uint32_t>("chunk size");
    if (id == "fmt ") {
      ByteReader fmt(in.take(size, "fmt chunk"));
      format = fmt.read<std::uint16_t>("format");
      channels = fmt.read<std::uint16_t>("channels");
      rate = fmt.read<std::uint32_t>("sample rate");
      fmt.read<std::uint32_t>("byte rate");
      fmt.read<std::uint16_t>("block align");
      bits = fmt.read<std::uint16_t>("bits per sample");
      if (format == kFormatExtensible) {
        fmt.read<std::uint16_t>("extension size");
        fmt.read<std::uint16_t>("valid bits");
        fmt.read<std::uint32_t>("channel mask");
        format = fmt.read<std::uint16_t>("sub-format");
      }
      have_fmt = true;
      if (size % 2) in.skip(1);
    } else if (id == "data") {
      if (!have_fmt) throw FormatError("data chunk before fmt chunk");
      payload = in.take(std::min<std::size_t>(size, in.remaining()), "data chunk");
      have_data = true;
    } else {
      in.skip(size + size % 2);
    }
  }
  if (!have_fmt) throw FormatError("missing fmt chunk");
  if (!have_data) throw FormatError("missing data chunk");
  if (channels == 0 || rate == 0) throw FormatError("fmt chunk declares zero channels or rate");

  std::size_t width = 0;
  if (format == kFormatPcm && bits == 16) {
    width = 2;
  } else if (format == kFormatFloat && bits == 32) {
    width = 4;
  } else {
    throw FormatError("unsupported WAV encoding: format " + std::to_string(format) + ", " +
                      std::to_string(bits) + " bits");
  }

  const std::size_t frames = payload.size() / (width * channels);
  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.samples.resize(frames);
  ByteReader data(payload);
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0;
    for (std::size_t c = 0; c < channels; ++c) {
      if (width == 2) {
        acc += data.read<std::int16_t>("sample") / 32768.0;
      } else {
        acc += std::bit_cast<float>(data.read<std::uint32_t>("sample"));
      }
    }
    const double v = acc / channels;
    if (!std::isfinite(v)) throw FormatError("non-finite sample at frame " + std::to_string(f));
    clip.samples[f] = static_cast<float>(v);
  }
  return clip;
}

AudioClip load_wav(const std::filesystem::path& path) {
  try {
    return decode_wav(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string encode_wav(const std::vector<float>& interleaved, int sample_rate, int channels,
                       WavEncoding encoding) {
  if (channels <= 0 || sample_rate <= 0) throw ConfigError("WAV needs positive rate and channel count");
  const std::uint16_t width = encoding == WavEncoding::pcm16 ? 2 : 4;
  const auto data_size = static_cast<std::uint32_t>(interleaved.size() * width);
  std::string out;
  out.reserve(44 + data_size);
  out += "RIFF";
  append_le<std::uint32_t>(out, 36 + data_size);
  out += "WAVEfmt ";
  append_le<std::uint32_t>(out, 16);
  append_le<std::uint16_t>(out, encoding == WavEncoding::pcm16 ? kFormatPcm : kFormatFloat);
  append_le<std::uint16_t>(out, static_cast<std::uint16_t>(channels));
  append_le<std::uint32_t>(out, static_cast<std::uint32_t>(sample_rate));
  append_le<std::uint32_t>(out, static_cast<std::uint32_t>(sample_rate * channels * width));
  append_le<std::uint16_t>(out, static_cast<std::uint16_t>(channels * width));
  append_le<std::uint16_t>(out, static_cast<std::uint16_t>(width * 8));
  out += "data";
  append_le<std::uint32_t>(out, data_size);
  for (float v : interleaved) {
    if (encoding == WavEncoding::pcm16) {
      const double scaled = std::clamp(std::round(static_cast<double>(v) * 32768.0), -32768.0, 32767.0);
      append_le<std::int16_t>(out, static_cast<std::int16_t>(scaled));
    } else {
      append_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    }
  }
  return out;
}

void MfccConfig::validate() const {
  if (sample_rate <= 0) throw ConfigError("sample_rate must be positive");
  if (window_len == 0 || hop == 0) throw ConfigError("window_len and hop must be positive");
  if (fft_size < window_len) throw ConfigError("fft_size must be at least window_len");
  if (hop > window_len) throw ConfigError("hop must not exceed window_len");
  if (n_mels == 0 || n_mfcc == 0 || n_mfcc > n_mels) throw ConfigError("need 0 < n_mfcc <= n_mels");
  if (!(log_floor > 0)) throw ConfigError("log_floor must be positive");
  if (!(segment_seconds > overlap_seconds) || overlap_seconds < 0) {
    throw ConfigError("segment_seconds must exceed overlap_seconds >= 0");
  }
  if (segment_seconds * sample_rate < static_cast<double>(window_len)) {
    throw ConfigError("segment shorter than one analysis window");
  }
}

std::string MfccConfig::hash() const {
  std::ostringstream canon;
  canon.precision(17);
  canon << "sr=" << sample_rate << ";win=" << window_len << ";hop=" << hop << ";fft=" << fft_size
        << ";mels=" << n_mels << ";mfcc=" << n_mfcc << ";pre=" << pre_emphasis << ";floor=" << log_floor
        << ";seg=" << segment_seconds << ";overlap=" << overlap_seconds << ";window=hann;mel=htk;dct=ortho";
  std::uint64_t h = 14695981039346656037ULL;  // FNV-1a
  for (unsigned char c : canon.str()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream hex;
  hex << std::hex;
  hex.width(16);
  hex.fill('0');
  hex << h;
  return hex.str();
}

std::size_t frame_count(std::size_t n_samples, const MfccConfig& cfg) {
  if (n_samples < cfg.window_len) return 0;
  return 1 + (n_samples - cfg.window_len) / cfg.hop;
}

std::size_t segment_frames(const MfccConfig& cfg) {
  const auto samples = static_cast<std::size_t>(std::llround(cfg.segment_seconds * cfg.sample_rate));
  return frame_count(samples, cfg);
}

std::size_t segment_step(const MfccConfig& cfg) {
  const double step_samples = (cfg.segment_seconds - cfg.overlap_seconds) * cfg.sample_rate;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(step_samples / cfg.hop)));
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

std::vector<double> mel_edges(const MfccConfig& cfg) {
  const double top = hz_to_mel(cfg.sample_rate / 2.0);
  std::vector<double> edges(cfg.n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(top * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1));
  }
  return edges;
}

}  // namespace

std::vector<double> mel_center_frequencies(const MfccConfig& cfg) {
  const auto edges = mel_edges(cfg);
  return {edges.begin() + 1, edges.end() - 1};
}

RowMajorMatrix<double> mel_filterbank(const MfccConfig& cfg) {
  const auto edges = mel_edges(cfg);
  const std::size_t bins = cfg.fft_size / 2 + 1;
  RowMajorMatrix<double> bank = RowMajorMatrix<double>::Zero(cfg.n_mels, bins);
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / static_cast<double>(cfg.fft_size);
      if (f > lo && f <= mid) {
        bank(m, k) = (f - lo) / (mid - lo);
      } else if (f > mid && f < hi) {
        bank(m, k) = (hi - f) / (hi - mid);
      }
    }
  }
  return bank;
}

RowMajorMatrix<double> log_mel_energies(const AudioClip& clip, const MfccConfig& cfg) {
  cfg.validate();
  if (clip.sample_rate != cfg.sample_rate) {
    throw ConfigError("clip sample rate " + std::to_string(clip.sample_rate) + " Hz does not match configured " +
                      std::to_string(cfg.sample_rate) + " Hz (resampling is not supported)");
  }
  const std::size_t n = clip.samples.size();
  if (n < cfg.window_len) {
    throw TooShortError("clip has " + std::to_string(n) + " samples, fewer than one " +
                        std::to_string(cfg.window_len) + "-sample window");
  }
  std::vector<double> emphasized(n);
  emphasized[0] = clip.samples[0];
  for (std::size_t t = 1; t < n; ++t) emphasized[t] = clip.samples[t] - cfg.pre_emphasis * clip.samples[t - 1];

  std::vector<double> window(cfg.window_len);
  for (std::size_t i = 0; i < window.size(); ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                      static_cast<double>(cfg.window_len));
  }

  const RowMajorMatrix<double> bank = mel_filterbank(cfg);
  const std::size_t frames = frame_count(n, cfg);
  const std::size_t bins = cfg.fft_size / 2 + 1;
  RowMajorMatrix<double> out(frames, cfg.n_mels);
  Eigen::FFT<double> fft;
  std::vector<double> buffer(cfg.fft_size);
  std::vector<std::complex<double>> spectrum;
  Eigen::VectorXd power(bins);
  for (std::size_t f = 0; f < frames; ++f) {
    std::fill(buffer.begin(), buffer.end(), 0.0);
    const double* src = emphasized.data() + f * cfg.hop;
    for (std::size_t i = 0; i < cfg.window_len; ++i) buffer[i] = src[i] * window[i];
    fft.fwd(spectrum, buffer);
    for (std::size_t k = 0; k < bins; ++k) power[k] = std::norm(spectrum[k]);
    const Eigen::VectorXd energies = bank * power;
    for (std::size_t m = 0; m < cfg.n_mels; ++m) out(f, m) = std::log(std::max(energies[m], cfg.log_floor));
  }
  return out;
}

FeatureMatrix compute_mfcc(const AudioClip& clip, const MfccConfig& cfg) {
  const RowMajorMatrix<double> logmel = log_mel_energies(clip, cfg);
  const std::size_t m = cfg.n_mels;
  RowMajorMatrix<double> dct(cfg.n_mfcc, m);
  for (std::size_t k = 0; k < cfg.n_mfcc; ++k) {
    const double scale = std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(m));
    for (std::size_t i = 0; i < m; ++i) {
      dct(k, i) = scale * std::cos(std::numbers::pi * static_cast<double>(k) * (2.0 * i + 1.0) / (2.0 * m));
    }
  }
  return (logmel * dct.transpose()).cast<float>();
}

std::vector<FeatureSegment> segment_utterance(const FeatureMatrix& features, const MfccConfig& cfg,
                                              const std::string& utterance_id, int label) {
  if (features.rows() == 0 || features.cols() == 0) throw ValidationError("cannot segment an empty feature matrix");
  const auto total = static_cast<std::size_t>(features.rows());
  const std::size_t window = segment_frames(cfg);
  const std::size_t step = segment_step(cfg);
  std::vector<FeatureSegment> out;
  if (total < window) {
    FeatureSegment seg{FeatureMatrix::Zero(static_cast<Eigen::Index>(window), features.cols()), utterance_id, 0, label};
    seg.features.topRows(features.rows()) = features;
    out.push_back(std::move(seg));
    return out;
  }
  for (std::size_t offset = 0; offset + window <= total; offset += step) {
    out.push_back({features.middleRows(static_cast<Eigen::Index>(offset), static_cast<Eigen::Index>(window)),
                   utterance_id, out.size(), label});
  }
  return out;
}

std::pair<std::vector<FeatureSegment>, FeatureStats> normalize_features(
    std::vector<FeatureSegment> segments, const std::optional<FeatureStats>& stats) {
  FeatureStats used;
  if (stats) {
    used = *stats;
  } else {
    const std::size_t dims = segments.empty() ? 0 : static_cast<std::size_t>(segments.front().features.cols());
    used.mean.assign(dims, 0.0);
    used.stddev.assign(dims, 0.0);
    double rows = 0;
    for (const auto& s : segments) {
      if (static_cast<std::size_t>(s.features.cols()) != dims) throw ShapeError("segments differ in coefficient count");
      for (Eigen::Index r = 0; r < s.features.rows(); ++r)
        for (std::size_t c = 0; c < dims; ++c) used.mean[c] += s.features(r, static_cast<Eigen::Index>(c));
      rows += static_cast<double>(s.features.rows());
    }
    for (auto& m : used.mean) m /= std::max(rows, 1.0);
    for (const auto& s : segments) {
      for (Eigen::Index r = 0; r < s.features.rows(); ++r) {
        for (std::size_t c = 0; c < dims; ++c) {
          const double d = s.features(r, static_cast<Eigen::Index>(c)) - used.mean[c];
          used.stddev[c] += d * d;
        }
      }
    }
    for (auto& sd : used.stddev) sd = std::sqrt(sd / std::max(rows, 1.0));
  }
  for (auto& sd : used.stddev) sd = std::max(sd, 1e-8);

  for (auto& s : segments) {
    if (static_cast<std::size_t>(s.features.cols()) != used.mean.size()) {
      throw ShapeError("feature stats cover " + std::to_string(used.mean.size()) + " coefficients, segment has " +
                       std::to_string(s.features.cols()));
    }
    for (Eigen::Index r = 0; r < s.features.rows(); ++r) {
      for (Eigen::Index c = 0; c < s.features.cols(); ++c) {
        const auto k = static_cast<std::size_t>(c);
        s.features(r, c) = static_cast<float>((s.features(r, c) - used.mean[k]) / used.stddev[k]);
      }
    }
  }
  return {std::move(segments), std::move(used)};
}

}  // namespace glam

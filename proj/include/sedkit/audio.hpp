#pragma once

// Audio frontend: RIFF/WAVE I/O, centered STFT magnitude, HTK mel filterbank,
// natural-log mel features, batch min-max normalization and the SEDF feature
// container.

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <mutex>
#include <numbers>
#include <string>
#include <vector>

#include "sedkit/binary_io.hpp"
#include "sedkit/error.hpp"
#include "sedkit/tensor.hpp"

namespace sedkit {

inline constexpr std::uint32_t kExpectedSampleRate = 16000;

struct Waveform {
  std::vector<float> samples;
  std::uint32_t sample_rate = kExpectedSampleRate;
  // Set when the file's rate differs from 16 kHz; audio is never resampled.
  bool rate_warning = false;

  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate; }
};

struct FrontendConfig {
  std::size_t n_fft = 2048;
  std::size_t hop = 256;
  std::size_t n_mels = 128;
  std::uint32_t sample_rate = kExpectedSampleRate;
  double log_floor = 1e-10;

  std::size_t n_bins() const { return n_fft / 2 + 1; }
  double frame_hop_s() const { return static_cast<double>(hop) / sample_rate; }

  void validate() const {
    require(n_fft >= 2 && n_fft % 2 == 0, ErrorCode::kInvalidArgument, "frontend: n_fft must be even and >= 2");
    require(hop >= 1 && hop <= n_fft, ErrorCode::kInvalidArgument, "frontend: hop must be in [1, n_fft]");
    require(n_mels >= 1 && n_mels <= n_bins(), ErrorCode::kInvalidArgument,
            "frontend: n_mels must be in [1, n_fft/2+1]");
    require(sample_rate > 0, ErrorCode::kInvalidArgument, "frontend: sample_rate must be > 0");
    require(log_floor > 0, ErrorCode::kInvalidArgument, "frontend: log_floor must be > 0");
  }
};

/// values is [n_mels, n_frames].
struct LogMelSpectrogram {
  Tensor<float> values;
  float frame_hop_s = 0.016f;

  std::size_t n_mels() const { return values.dim(0); }
  std::size_t n_frames() const { return values.dim(1); }
};

inline std::size_t frame_count(std::size_t n_samples, std::size_t hop) { return (n_samples + hop - 1) / hop; }

// ---------------------------------------------------------------------------
// WAV

namespace detail {

constexpr std::uint16_t kWavPcm = 1;
constexpr std::uint16_t kWavFloat = 3;
constexpr std::uint16_t kWavExtensible = 0xFFFE;

}  // namespace detail

inline Waveform parse_wav(std::string_view bytes, const std::string& name = "wav") {
  ByteReader rd(bytes, name);
  if (bytes.size() < 12 || bytes.substr(0, 4) != "RIFF" || bytes.substr(8, 4) != "WAVE")
    fail(ErrorCode::kBadMagic, name + ": not a RIFF/WAVE file");
  rd.bytes(12);

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0, block_align = 0;
  std::uint32_t rate = 0;
  while (true) {
    if (rd.remaining() < 8) fail(ErrorCode::kTruncated, name + ": no data chunk");
    const auto id = rd.bytes(4);
    const std::uint32_t size = rd.u32();
    if (id == "fmt ") {
      rd.need(size);
      ByteReader fmt(rd.bytes(size), name + " fmt chunk");
      format = fmt.u16();
      channels = fmt.u16();
      rate = fmt.u32();
      fmt.u32();  // byte rate
      block_align = fmt.u16();
      bits = fmt.u16();
      if (format == detail::kWavExtensible) {
        fmt.u16();  // cbSize
        fmt.u16();  // valid bits
        fmt.u32();  // channel mask
        format = fmt.u16();
      }
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) fail(ErrorCode::kParse, name + ": data chunk before fmt chunk");
      const bool pcm16 = format == detail::kWavPcm && bits == 16;
      const bool f32 = format == detail::kWavFloat && bits == 32;
      if (!pcm16 && !f32)
        fail(ErrorCode::kUnsupportedCodec, name + ": format tag " + std::to_string(format) + " with " +
                                               std::to_string(bits) + " bits (need PCM16 or float32)");
      if (channels != 1 && channels != 2)
        fail(ErrorCode::kUnsupportedCodec, name + ": " + std::to_string(channels) + " channels");
      if (rate == 0) fail(ErrorCode::kParse, name + ": zero sample rate");
      const std::size_t frame_bytes = static_cast<std::size_t>(channels) * (bits / 8);
      if (block_align != frame_bytes) fail(ErrorCode::kParse, name + ": inconsistent block_align");
      if (size == 0) fail(ErrorCode::kEmptyAudio, name + ": zero-length data chunk");
      if (rd.remaining() < size || size % frame_bytes != 0)
        fail(ErrorCode::kTruncated, name + ": data chunk declares " + std::to_string(size) + " bytes, " +
                                        std::to_string(rd.remaining()) + " present");
      ByteReader data(rd.bytes(size), name + " data");
      const std::size_t n = size / frame_bytes;
      Waveform w;
      w.sample_rate = rate;
      w.rate_warning = rate != kExpectedSampleRate;
      w.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        float acc = 0.f;
        for (std::uint16_t c = 0; c < channels; ++c)
          acc += pcm16 ? static_cast<float>(static_cast<std::int16_t>(data.u16())) / 32768.f : data.f32();
        w.samples[i] = channels == 2 ? acc * 0.5f : acc;
      }
      return w;
    } else {
      rd.bytes(size + (size & 1u));
    }
  }
}

inline Waveform load_wav(const std::filesystem::path& path) { return parse_wav(read_file(path), path.string()); }

/// Mono 16-bit PCM encoding; samples are rounded and clipped to the int16 range.
inline std::string encode_wav_pcm16(const Waveform& w) {
  const auto n = static_cast<std::uint32_t>(w.samples.size());
  ByteWriter out;
  out.bytes("RIFF");
  out.u32(36 + 2 * n);
  out.bytes("WAVE");
  out.bytes("fmt ");
  out.u32(16);
  out.u16(detail::kWavPcm);
  out.u16(1);
  out.u32(w.sample_rate);
  out.u32(w.sample_rate * 2);
  out.u16(2);
  out.u16(16);
  out.bytes("data");
  out.u32(2 * n);
  for (float s : w.samples) {
    const double q = std::clamp(std::round(static_cast<double>(s) * 32768.0), -32768.0, 32767.0);
    out.u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  return out.take();
}

inline void save_wav(const std::filesystem::path& path, const Waveform& w) {
  write_file_atomic(path, encode_wav_pcm16(w));
}

// ---------------------------------------------------------------------------
// STFT

namespace detail {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

// fftw_plan creation and destruction are not thread-safe; execution is.
class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    in_ = static_cast<double*>(fftw_malloc(sizeof(double) * n));
    out_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)));
    if (!in_ || !out_) fail(ErrorCode::kIo, "fftw_malloc failed");
    std::lock_guard lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    {
      std::lock_guard lock(fftw_planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_; }
  const fftw_complex* execute() {
    fftw_execute(plan_);
    return out_;
  }

 private:
  std::size_t n_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

// Mirror index into [0, n) without repeating the edge sample, folding as many
// times as needed so signals shorter than the pad still work.
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<std::ptrdiff_t>(n) ? m : period - m);
}

}  // namespace detail

/// Periodic Hann window of length n.
inline std::vector<double> hann_periodic(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

/// Magnitude spectrogram [n_fft/2+1, ceil(N/hop)]. Frame k is centered on
/// sample k*hop; the signal is reflect-padded by n_fft/2 on both sides.
inline Tensor<float> stft_magnitude(const Waveform& w, const FrontendConfig& cfg) {
  cfg.validate();
  require(!w.samples.empty(), ErrorCode::kEmptyAudio, "stft_magnitude: empty waveform");
  const std::size_t n = w.samples.size(), bins = cfg.n_bins();
  const std::size_t frames = frame_count(n, cfg.hop);
  const auto half = static_cast<std::ptrdiff_t>(cfg.n_fft / 2);
  const auto window = hann_periodic(cfg.n_fft);

  Tensor<float> mag({bins, frames});
  detail::RealFft fft(cfg.n_fft);
  double* buf = fft.input();
  for (std::size_t k = 0; k < frames; ++k) {
    const auto start = static_cast<std::ptrdiff_t>(k * cfg.hop) - half;
    for (std::size_t i = 0; i < cfg.n_fft; ++i)
      buf[i] = window[i] * w.samples[detail::reflect_index(start + static_cast<std::ptrdiff_t>(i), n)];
    const fftw_complex* spec = fft.execute();
    for (std::size_t b = 0; b < bins; ++b)
      mag(b, k) = static_cast<float>(std::hypot(spec[b][0], spec[b][1]));
  }
  return mag;
}

// ---------------------------------------------------------------------------
// Mel features

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Frequencies (Hz) of the n_mels + 2 breakpoints, equally spaced on the HTK
/// mel scale from 0 Hz to Nyquist. Filter m peaks at breakpoint m + 1.
inline std::vector<double> mel_breakpoints_hz(const FrontendConfig& cfg) {
  const double top = hz_to_mel(cfg.sample_rate / 2.0);
  std::vector<double> hz(cfg.n_mels + 2);
  for (std::size_t i = 0; i < hz.size(); ++i)
    hz[i] = mel_to_hz(top * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1));
  return hz;
}

/// Triangular filters [n_mels, n_fft/2+1] with unit peak.
inline Tensor<float> mel_filterbank(const FrontendConfig& cfg) {
  cfg.validate();
  const auto pts = mel_breakpoints_hz(cfg);
  const std::size_t bins = cfg.n_bins();
  Tensor<float> fb({cfg.n_mels, bins});
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const double lo = pts[m], mid = pts[m + 1], hi = pts[m + 2];
    for (std::size_t b = 0; b < bins; ++b) {
      const double f = static_cast<double>(b) * cfg.sample_rate / static_cast<double>(cfg.n_fft);
      const double up = (f - lo) / (mid - lo), down = (hi - f) / (hi - mid);
      fb(m, b) = static_cast<float>(std::max(0.0, std::min(up, down)));
    }
  }
  return fb;
}

/// ln(max(fb * mag, floor)) in the amplitude domain.
inline LogMelSpectrogram log_mel(const Tensor<float>& mag, const Tensor<float>& fb, double log_floor = 1e-10,
                                 float frame_hop_s = 0.016f) {
  detail::check_rank(mag.shape(), 2, "log_mel", "magnitude");
  detail::check_rank(fb.shape(), 2, "log_mel", "filterbank");
  detail::check_axis(fb.dim(1), mag.dim(0), "log_mel", "filterbank columns vs magnitude bins (axis 0)");
  const std::size_t mels = fb.dim(0), bins = fb.dim(1), frames = mag.dim(1);
  LogMelSpectrogram out{Tensor<float>({mels, frames}), frame_hop_s};
  std::vector<double> acc(frames);
  for (std::size_t m = 0; m < mels; ++m) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t b = 0; b < bins; ++b) {
      const double wv = fb(m, b);
      if (wv == 0.0) continue;
      for (std::size_t t = 0; t < frames; ++t) acc[t] += wv * mag(b, t);
    }
    for (std::size_t t = 0; t < frames; ++t) out.values(m, t) = static_cast<float>(std::log(std::max(acc[t], log_floor)));
  }
  return out;
}

inline LogMelSpectrogram extract_log_mel(const Waveform& w, const FrontendConfig& cfg) {
  return log_mel(stft_magnitude(w, cfg), mel_filterbank(cfg), cfg.log_floor,
                 static_cast<float>(cfg.frame_hop_s()));
}

/// Per mel bin, rescale to [0, 1] using the min and max over batch and time.
/// batch is [B, n_mels, n_frames]; bins whose range is below 1e-12 become 0.
inline Tensor<float> normalize_minmax(const Tensor<float>& batch) {
  detail::check_rank(batch.shape(), 3, "normalize_minmax", "batch");
  const std::size_t B = batch.dim(0), M = batch.dim(1), T = batch.dim(2);
  Tensor<float> out(batch.shape());
  for (std::size_t m = 0; m < M; ++m) {
    float lo = std::numeric_limits<float>::infinity(), hi = -lo;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < T; ++t) {
        lo = std::min(lo, batch(b, m, t));
        hi = std::max(hi, batch(b, m, t));
      }
    const double range = static_cast<double>(hi) - lo;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < T; ++t)
        out(b, m, t) = range < 1e-12 ? 0.f : static_cast<float>((static_cast<double>(batch(b, m, t)) - lo) / range);
  }
  return out;
}

// ---------------------------------------------------------------------------
// SEDF feature container: "SEDF", u32 version, u32 n_mels, u32 n_frames,
// f32 frame_hop_s, then n_mels * n_frames f32 row-major.

inline constexpr std::uint32_t kSedfVersion = 1;

inline std::string encode_features(const LogMelSpectrogram& s) {
  ByteWriter out;
  out.bytes("SEDF");
  out.u32(kSedfVersion);
  out.u32(static_cast<std::uint32_t>(s.n_mels()));
  out.u32(static_cast<std::uint32_t>(s.n_frames()));
  out.f32(s.frame_hop_s);
  for (float v : s.values.data()) out.f32(v);
  return out.take();
}

inline LogMelSpectrogram decode_features(std::string_view bytes, const std::string& name = "features") {
  ByteReader rd(bytes, name);
  if (rd.remaining() < 4 || rd.bytes(4) != "SEDF") fail(ErrorCode::kBadMagic, name + ": expected SEDF magic");
  const auto version = rd.u32();
  if (version != kSedfVersion) fail(ErrorCode::kUnknownVersion, name + ": SEDF version " + std::to_string(version));
  const auto mels = rd.u32(), frames = rd.u32();
  const float hop = rd.f32();
  require(mels >= 1 && frames >= 1, ErrorCode::kParse, name + ": zero extent");
  rd.need(static_cast<std::size_t>(mels) * frames * 4);
  std::vector<float> v(static_cast<std::size_t>(mels) * frames);
  for (float& x : v) x = rd.f32();
  return {Tensor<float>({mels, frames}, std::move(v)), hop};
}

inline void save_features(const std::filesystem::path& path, const LogMelSpectrogram& s) {
  write_file_atomic(path, encode_features(s));
}

inline LogMelSpectrogram load_features(const std::filesystem::path& path) {
  return decode_features(read_file(path), path.string());
}

}  // namespace sedkit

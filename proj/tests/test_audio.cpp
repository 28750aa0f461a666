#include <cmath>
#include <cstring>
#include <functional>
#include <complex>
#include <numbers>

#include <gtest/gtest.h>

#include "sedkit/audio.hpp"
#include "sedkit/binary_io.hpp"
#include "test_util.hpp"

using namespace sedkit;

namespace {

// Minimal WAV writer independent of encode_wav_pcm16.
std::string wav_bytes(std::uint16_t format, std::uint16_t channels, std::uint16_t bits, std::uint32_t rate,
                      const std::string& payload) {
  ByteWriter w;
  w.bytes("RIFF");
  w.u32(static_cast<std::uint32_t>(36 + payload.size()));
  w.bytes("WAVE");
  w.bytes("fmt ");
  w.u32(16);
  w.u16(format);
  w.u16(channels);
  w.u32(rate);
  w.u32(rate * channels * bits / 8);
  w.u16(static_cast<std::uint16_t>(channels * bits / 8));
  w.u16(bits);
  w.bytes("data");
  w.u32(static_cast<std::uint32_t>(payload.size()));
  w.bytes(payload);
  return w.take();
}

std::string pcm16(std::initializer_list<std::int16_t> v) {
  ByteWriter w;
  for (auto s : v) w.u16(static_cast<std::uint16_t>(s));
  return w.take();
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::kInvalidArgument;
}

Waveform sine(double hz, double seconds, std::uint32_t rate = 16000, double amp = 0.5) {
  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(static_cast<std::size_t>(std::lround(seconds * rate)));
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    w.samples[i] = static_cast<float>(amp * std::sin(2 * std::numbers::pi * hz * double(i) / rate));
  return w;
}

}  // namespace

TEST(WavTest, Pcm16Scaling) {
  const auto w = parse_wav(wav_bytes(1, 1, 16, 16000, pcm16({0, 16384, -16384})));
  EXPECT_EQ(w.samples, (std::vector<float>{0.f, 0.5f, -0.5f}));
  EXPECT_EQ(w.sample_rate, 16000u);
  EXPECT_FALSE(w.rate_warning);
}

TEST(WavTest, StereoIsAveraged) {
  ByteWriter p;
  p.f32(0.2f);
  p.f32(0.4f);
  const auto w = parse_wav(wav_bytes(3, 2, 32, 16000, p.take()));
  ASSERT_EQ(w.samples.size(), 1u);
  EXPECT_FLOAT_EQ(w.samples[0], 0.3f);
}

TEST(WavTest, OtherRateIsFlaggedNotResampled) {
  const auto w = parse_wav(wav_bytes(1, 1, 16, 44100, pcm16({1, 2, 3})));
  EXPECT_TRUE(w.rate_warning);
  EXPECT_EQ(w.sample_rate, 44100u);
  EXPECT_EQ(w.samples.size(), 3u);
}

TEST(WavTest, SineRoundTrip) {
  const auto s = sine(440, 1.0);
  const auto back = parse_wav(encode_wav_pcm16(s));
  ASSERT_EQ(back.samples.size(), s.samples.size());
  for (std::size_t i = 0; i < s.samples.size(); ++i) EXPECT_LE(std::abs(back.samples[i] - s.samples[i]), 1.0 / 32768);
  EXPECT_EQ(back.samples.size(), std::size_t(std::lround(back.duration_s() * back.sample_rate)));
}

TEST(WavTest, DistinctErrors) {
  EXPECT_EQ(code_of([] { parse_wav("not a wav file at all"); }), ErrorCode::kBadMagic);
  EXPECT_EQ(code_of([] { parse_wav(wav_bytes(2, 1, 16, 16000, pcm16({1, 2}))); }), ErrorCode::kUnsupportedCodec);
  EXPECT_EQ(code_of([] { parse_wav(wav_bytes(1, 1, 8, 16000, "ab")); }), ErrorCode::kUnsupportedCodec);
  EXPECT_EQ(code_of([] { parse_wav(wav_bytes(1, 1, 16, 16000, "")); }), ErrorCode::kEmptyAudio);
  auto cut = wav_bytes(1, 1, 16, 16000, pcm16({1, 2, 3, 4}));
  cut.resize(cut.size() - 3);
  EXPECT_EQ(code_of([&] { parse_wav(cut); }), ErrorCode::kTruncated);
  EXPECT_EQ(code_of([&] { parse_wav(cut.substr(0, 30)); }), ErrorCode::kTruncated);
}

TEST(WavTest, SkipsUnknownChunks) {
  auto bytes = wav_bytes(1, 1, 16, 16000, pcm16({16384}));
  // Insert an odd-sized LIST chunk (padded to even) between fmt and data.
  ByteWriter extra;
  extra.bytes("LIST");
  extra.u32(3);
  extra.bytes(std::string("abc\0", 4));
  bytes.insert(36, extra.take());
  EXPECT_EQ(parse_wav(bytes).samples, std::vector<float>{0.5f});
}

TEST(StftTest, FrameCount) {
  EXPECT_EQ(frame_count(160000, 256), 625u);
  Waveform w;
  w.samples.assign(160000, 0.f);
  const auto mag = stft_magnitude(w, FrontendConfig{});
  EXPECT_EQ(mag.shape(), (Shape{1025, 625}));
}

TEST(StftTest, ZeroInput) {
  Waveform w;
  w.samples.assign(5000, 0.f);
  for (float v : stft_magnitude(w, FrontendConfig{}).vec()) EXPECT_EQ(v, 0.f);
}

TEST(StftTest, ConstantInputIsDc) {
  Waveform w;
  w.samples.assign(8192, 1.f);
  const FrontendConfig cfg;
  const auto mag = stft_magnitude(w, cfg);
  for (std::size_t k = 0; k < mag.dim(1); ++k) {
    EXPECT_NEAR(mag(0, k), 1024.0, 1e-3);
    for (std::size_t b = 2; b < mag.dim(0); ++b) ASSERT_LT(mag(b, k), 1e-3) << "bin " << b << " frame " << k;
  }
}

TEST(StftTest, OneKilohertzPeaksAtBin128) {
  const auto w = sine(1000, 1.0);
  const FrontendConfig cfg;
  const auto mag = stft_magnitude(w, cfg);
  for (std::size_t k = 8; k + 8 < mag.dim(1); ++k) {
    std::size_t best = 0;
    for (std::size_t b = 1; b < mag.dim(0); ++b)
      if (mag(b, k) > mag(best, k)) best = b;
    ASSERT_EQ(best, 128u) << "frame " << k;
  }
  // Direct DFT of one interior frame.
  const std::size_t k = 20, n = cfg.n_fft;
  const auto win = hann_periodic(n);
  for (std::size_t b : {0u, 100u, 127u, 128u, 129u, 500u}) {
    std::complex<double> acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = w.samples[k * cfg.hop + i - n / 2] * win[i];
      acc += x * std::polar(1.0, -2 * std::numbers::pi * double(b * i) / double(n));
    }
    EXPECT_NEAR(mag(b, k), std::abs(acc), 1e-3 * std::max(1.0, std::abs(acc))) << "bin " << b;
  }
}

TEST(StftTest, ShortSignalIsReflected) {
  Waveform w;
  w.samples = {0.1f, -0.2f, 0.3f};
  const auto mag = stft_magnitude(w, FrontendConfig{});
  EXPECT_EQ(mag.dim(1), 1u);
  for (float v : mag.data()) EXPECT_TRUE(std::isfinite(v) && v >= 0.f);
  EXPECT_THROW(stft_magnitude(Waveform{}, FrontendConfig{}), Error);
}

TEST(StftTest, NonNegativeOnNoise) {
  Rng rng(3);
  Waveform w;
  w.samples.resize(4000);
  for (auto& s : w.samples) s = float(rng.uniform(-1, 1));
  for (float v : stft_magnitude(w, FrontendConfig{}).vec()) ASSERT_GE(v, 0.f);
}

TEST(MelTest, FilterbankShape) {
  const FrontendConfig cfg;
  const auto fb = mel_filterbank(cfg);
  EXPECT_EQ(fb.shape(), (Shape{128, 1025}));
  for (std::size_t m = 0; m < fb.dim(0); ++m) {
    // Non-negative, one maximal plateau.
    float peak = 0.f;
    for (std::size_t b = 0; b < fb.dim(1); ++b) {
      ASSERT_GE(fb(m, b), 0.f);
      peak = std::max(peak, fb(m, b));
    }
    int plateaus = 0;
    for (std::size_t b = 0; b < fb.dim(1); ++b)
      if (fb(m, b) == peak && (b == 0 || fb(m, b - 1) != peak)) ++plateaus;
    EXPECT_EQ(plateaus, 1) << "filter " << m;
    EXPECT_LE(peak, 1.f);
  }
}

TEST(MelTest, PeakFollowsDistanceToCenter) {
  // Value at the bin nearest the center is 1 - distance / side width, so a
  // center that lands on a bin gives exactly 1.
  const FrontendConfig cfg;
  const auto pts = mel_breakpoints_hz(cfg);
  const auto fb = mel_filterbank(cfg);
  const double df = double(cfg.sample_rate) / cfg.n_fft;
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const double c = pts[m + 1];
    const auto b = std::size_t(std::lround(c / df));
    const double f = b * df;
    const double want = f <= c ? (f - pts[m]) / (c - pts[m]) : (pts[m + 2] - f) / (pts[m + 2] - c);
    EXPECT_NEAR(fb(m, b), std::max(0.0, want), 1e-6) << "filter " << m;
  }
  FrontendConfig on_bin;
  on_bin.sample_rate = 16;
  on_bin.n_fft = 16;
  on_bin.hop = 4;
  on_bin.n_mels = 1;
  // Single filter 0 .. c .. 8 Hz on a 1 Hz grid; the bin at round(c) is its max.
  const auto tiny = mel_filterbank(on_bin);
  const double c = mel_breakpoints_hz(on_bin)[1];
  EXPECT_NEAR(c, mel_to_hz(hz_to_mel(8.0) / 2), 1e-12);
  EXPECT_NEAR(tiny(0, 4), (8.0 - 4.0) / (8.0 - c), 1e-6);
}

TEST(MelTest, CentersIncreaseAndMatchFormula) {
  const FrontendConfig cfg;
  const auto pts = mel_breakpoints_hz(cfg);
  ASSERT_EQ(pts.size(), 130u);
  EXPECT_EQ(pts.front(), 0.0);
  EXPECT_NEAR(pts.back(), 8000.0, 1e-9);
  for (std::size_t i = 1; i < pts.size(); ++i) EXPECT_GT(pts[i], pts[i - 1]);
  // Hand evaluation: delta = 2595 log10(1 + 8000/700) / 129.
  const double dm = 2595.0 * std::log10(1.0 + 8000.0 / 700.0) / 129.0;
  EXPECT_NEAR(pts[1], 700.0 * (std::pow(10.0, dm / 2595.0) - 1.0), 1e-9);
  EXPECT_NEAR(pts[1], 13.81, 0.01);  // 22.016 mel
}

TEST(LogMelTest, Floor) {
  const FrontendConfig cfg;
  const auto lm = log_mel(Tensor<float>({1025, 3}), mel_filterbank(cfg));
  for (float v : lm.values.data()) EXPECT_NEAR(v, -23.0259, 1e-4);
}

TEST(LogMelTest, NaturalLog) {
  const Tensor<float> fb({1, 1}, {1.f}), mag({1, 1}, {float(std::exp(2.0))});
  EXPECT_NEAR(log_mel(mag, fb).values[0], 2.0, 1e-6);
}

TEST(LogMelTest, MatchesMatrixProductOracle) {
  Rng rng(4);
  const auto fb = testutil::random_tensor<float>(rng, {6, 9}, 0, 1);
  const auto mag = testutil::random_tensor<float>(rng, {9, 5}, 0, 2);
  const auto lm = log_mel(mag, fb);
  for (std::size_t m = 0; m < 6; ++m)
    for (std::size_t t = 0; t < 5; ++t) {
      double acc = 0;
      for (std::size_t b = 0; b < 9; ++b) acc += double(fb(m, b)) * mag(b, t);
      EXPECT_NEAR(lm.values(m, t), std::log(std::max(acc, 1e-10)), 1e-5);
    }
  EXPECT_THROW(log_mel(mag, testutil::random_tensor<float>(rng, {6, 8})), Error);
}

TEST(NormalizeTest, Examples) {
  const Tensor<float> x({1, 1, 3}, {2, 4, 6});
  EXPECT_EQ(normalize_minmax(x).vec(), (std::vector<float>{0, 0.5f, 1}));
  const Tensor<float> c({2, 1, 3}, 7.f);
  for (float v : normalize_minmax(c).vec()) EXPECT_EQ(v, 0.f);
  // Statistics span the batch axis.
  const Tensor<float> b2({2, 1, 1}, {2, 6});
  EXPECT_EQ(normalize_minmax(b2).vec(), (std::vector<float>{0, 1}));
}

TEST(NormalizeTest, RangeAndIdempotence) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t B = rng.uniform_int(1, 3), M = rng.uniform_int(1, 6), T = rng.uniform_int(2, 20);
    const auto x = testutil::random_tensor<float>(rng, {B, M, T}, -30, 5);
    const auto y = normalize_minmax(x);
    for (std::size_t m = 0; m < M; ++m) {
      float lo = 2, hi = -1;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < T; ++t) {
          ASSERT_GE(y(b, m, t), 0.f);
          ASSERT_LE(y(b, m, t), 1.f);
          lo = std::min(lo, y(b, m, t));
          hi = std::max(hi, y(b, m, t));
        }
      EXPECT_EQ(lo, 0.f);
      EXPECT_EQ(hi, 1.f);
    }
    EXPECT_LT(testutil::max_abs_diff(normalize_minmax(y), y), 1e-6);
  }
}

TEST(FrontendTest, DeterministicAndSedfRoundTrip) {
  const auto w = sine(700, 0.5);
  const FrontendConfig cfg;
  const auto a = extract_log_mel(w, cfg), b = extract_log_mel(w, cfg);
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(a.n_mels(), 128u);
  EXPECT_EQ(a.n_frames(), frame_count(8000, 256));
  EXPECT_FLOAT_EQ(a.frame_hop_s, 0.016f);
  const auto bytes = encode_features(a);
  EXPECT_EQ(bytes.size(), 20 + 4 * a.values.size());
  const auto back = decode_features(bytes);
  EXPECT_EQ(back.values, a.values);
  EXPECT_EQ(back.frame_hop_s, a.frame_hop_s);

  EXPECT_EQ(code_of([&] { decode_features("XEDF" + bytes.substr(4)); }), ErrorCode::kBadMagic);
  auto v2 = bytes;
  v2[4] = 2;
  EXPECT_EQ(code_of([&] { decode_features(v2); }), ErrorCode::kUnknownVersion);
  EXPECT_EQ(code_of([&] { decode_features(bytes.substr(0, bytes.size() - 1)); }), ErrorCode::kTruncated);
}

TEST(FrontendTest, ConfigValidation) {
  FrontendConfig c;
  c.hop = 4096;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.n_mels = 2000;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.n_fft = 1023;
  EXPECT_THROW(c.validate(), Error);
}

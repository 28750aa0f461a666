#pragma once

// FilterAugment (step and linear band gains on a mel spectrogram) and the
// auxiliary spectrogram augmentations: mixup, time masking and frame shift.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sedkit/error.hpp"
#include "sedkit/rng.hpp"
#include "sedkit/tensor.hpp"

namespace sedkit {

enum class FilterKind { kStep, kLinear };

inline const char* to_string(FilterKind k) { return k == FilterKind::kStep ? "step" : "linear"; }

inline FilterKind parse_filter_kind(std::string_view s) {
  if (s == "step") return FilterKind::kStep;
  if (s == "linear") return FilterKind::kLinear;
  fail(ErrorCode::kParse, "filter kind must be step or linear, got '" + std::string(s) + "'");
}

struct FilterAugParams {
  FilterKind kind = FilterKind::kStep;
  double db_low = -4.5;
  double db_high = 6.0;
  std::size_t min_bands = 2;  // inclusive
  std::size_t max_bands = 5;  // inclusive
  std::size_t min_bandwidth = 4;

  /// Step set: dB (-4.5, 6), 2..5 bands, min width 4 bins.
  static FilterAugParams step_default() { return {FilterKind::kStep, -4.5, 6.0, 2, 5, 4}; }
  /// Linear set: dB (-6, 4.5), 3..6 bands, min width 7 bins.
  static FilterAugParams linear_default() { return {FilterKind::kLinear, -6.0, 4.5, 3, 6, 7}; }
  static FilterAugParams defaults_for(FilterKind k) {
    return k == FilterKind::kStep ? step_default() : linear_default();
  }

  void validate(std::size_t n_mels) const {
    require(db_low < db_high, ErrorCode::kInvalidArgument, "filter augment: db range must have low < high");
    require(min_bands >= 1 && min_bands <= max_bands, ErrorCode::kInvalidArgument,
            "filter augment: band range must satisfy 1 <= min <= max");
    require(min_bandwidth >= 1, ErrorCode::kInvalidArgument, "filter augment: min_bandwidth must be >= 1");
    require(max_bands * min_bandwidth <= n_mels, ErrorCode::kInvalidArgument,
            "filter augment: max_bands * min_bandwidth exceeds " + std::to_string(n_mels) + " mel bins");
  }
};

/// One sampled FilterAugment realization. boundaries run 0 = b_0 < ... < b_n =
/// n_mels; step configs carry n weights (one per band), linear configs n + 1
/// (one per boundary).
struct FilterConfig {
  FilterKind kind = FilterKind::kStep;
  std::vector<std::size_t> boundaries;
  std::vector<double> weights_db;

  std::size_t n_bands() const { return boundaries.empty() ? 0 : boundaries.size() - 1; }
  std::size_t n_mels() const { return boundaries.empty() ? 0 : boundaries.back(); }

  void validate() const {
    require(boundaries.size() >= 2 && boundaries.front() == 0, ErrorCode::kInvalidArgument,
            "filter config: boundaries must start at 0 and contain at least one band");
    for (std::size_t i = 1; i < boundaries.size(); ++i)
      require(boundaries[i] > boundaries[i - 1], ErrorCode::kInvalidArgument,
              "filter config: boundaries must be strictly ascending");
    const std::size_t want = kind == FilterKind::kStep ? n_bands() : n_bands() + 1;
    require(weights_db.size() == want, ErrorCode::kInvalidArgument,
            "filter config: expected " + std::to_string(want) + " weights, got " + std::to_string(weights_db.size()));
  }
};

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename T>
T parse_number(std::string_view s, std::string_view what) {
  T v{};
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
    fail(ErrorCode::kParse, std::string(what) + ": malformed number '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace detail

/// `kind;boundaries=0,41,97,128;weights_db=-2.1,3.4,0.8` with shortest
/// round-trip number formatting.
inline std::string to_string(const FilterConfig& cfg) {
  std::string s = to_string(cfg.kind);
  s += ";boundaries=";
  for (std::size_t i = 0; i < cfg.boundaries.size(); ++i) s += (i ? "," : "") + std::to_string(cfg.boundaries[i]);
  s += ";weights_db=";
  for (std::size_t i = 0; i < cfg.weights_db.size(); ++i) s += (i ? "," : "") + detail::format_double(cfg.weights_db[i]);
  return s;
}

inline FilterConfig parse_filter_config(std::string_view text) {
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r' || text.back() == ' ')) text.remove_suffix(1);
  const auto parts = detail::split(text, ';');
  require(parts.size() == 3, ErrorCode::kParse, "filter config: expected kind;boundaries=...;weights_db=...");
  FilterConfig cfg;
  cfg.kind = parse_filter_kind(parts[0]);
  constexpr std::string_view kb = "boundaries=", kw = "weights_db=";
  require(parts[1].starts_with(kb) && parts[2].starts_with(kw), ErrorCode::kParse,
          "filter config: missing boundaries= or weights_db= field");
  for (auto v : detail::split(parts[1].substr(kb.size()), ','))
    cfg.boundaries.push_back(detail::parse_number<std::size_t>(v, "filter config boundary"));
  for (auto v : detail::split(parts[2].substr(kw.size()), ','))
    cfg.weights_db.push_back(detail::parse_number<double>(v, "filter config weight"));
  cfg.validate();
  return cfg;
}

/// Draws a band layout and gains. The band count is uniform over the inclusive
/// range; interior boundaries are drawn as distinct sorted bins from
/// [min_bandwidth, n_mels - min_bandwidth] and redrawn until every band is at
/// least min_bandwidth wide (at most 1000 attempts, then equal spacing).
inline FilterConfig sample_filter_config(Rng& rng, const FilterAugParams& params, std::size_t n_mels) {
  params.validate(n_mels);
  FilterConfig cfg;
  cfg.kind = params.kind;
  const auto n_bands = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(params.min_bands),
                                                                static_cast<std::int64_t>(params.max_bands)));
  const std::size_t mbw = params.min_bandwidth;

  std::vector<std::size_t> interior;
  bool ok = n_bands == 1;
  for (int attempt = 0; !ok && attempt < 1000; ++attempt) {
    interior.clear();
    while (interior.size() < n_bands - 1) {
      const auto v = static_cast<std::size_t>(
          rng.uniform_int(static_cast<std::int64_t>(mbw), static_cast<std::int64_t>(n_mels - mbw)));
      if (std::find(interior.begin(), interior.end(), v) == interior.end()) interior.push_back(v);
    }
    std::sort(interior.begin(), interior.end());
    ok = true;
    for (std::size_t i = 1; i < interior.size(); ++i) ok = ok && interior[i] - interior[i - 1] >= mbw;
  }
  if (!ok) {
    interior.clear();
    for (std::size_t i = 1; i < n_bands; ++i) interior.push_back(i * n_mels / n_bands);
  }

  cfg.boundaries.push_back(0);
  cfg.boundaries.insert(cfg.boundaries.end(), interior.begin(), interior.end());
  cfg.boundaries.push_back(n_mels);
  const std::size_t n_weights = params.kind == FilterKind::kStep ? n_bands : n_bands + 1;
  for (std::size_t i = 0; i < n_weights; ++i) cfg.weights_db.push_back(rng.uniform(params.db_low, params.db_high));
  return cfg;
}

/// Per-bin gain in dB. Linear configs interpolate from anchor b_i to b_{i+1}
/// with t = (f - b_i) / (b_{i+1} - b_i) for f in [b_i, b_{i+1}).
inline std::vector<double> filter_gains_db(const FilterConfig& cfg) {
  cfg.validate();
  std::vector<double> g(cfg.n_mels());
  for (std::size_t band = 0; band < cfg.n_bands(); ++band) {
    const std::size_t lo = cfg.boundaries[band], hi = cfg.boundaries[band + 1];
    for (std::size_t f = lo; f < hi; ++f) {
      if (cfg.kind == FilterKind::kStep) {
        g[f] = cfg.weights_db[band];
      } else {
        const double t = static_cast<double>(f - lo) / static_cast<double>(hi - lo);
        g[f] = cfg.weights_db[band] + (cfg.weights_db[band + 1] - cfg.weights_db[band]) * t;
      }
    }
  }
  return g;
}

inline double db_to_amplitude(double db) { return std::pow(10.0, db / 20.0); }

/// Scales amplitude-domain mel rows [n_mels, T] by 10^(gain_db / 20).
inline Tensor<float> apply_filter_augment(const Tensor<float>& mel_amplitude, const FilterConfig& cfg) {
  detail::check_rank(mel_amplitude.shape(), 2, "apply_filter_augment", "mel");
  detail::check_axis(mel_amplitude.dim(0), cfg.n_mels(), "apply_filter_augment", "mel axis (0) vs last boundary");
  const auto gains = filter_gains_db(cfg);
  Tensor<float> out(mel_amplitude.shape());
  const std::size_t T = mel_amplitude.dim(1);
  for (std::size_t f = 0; f < gains.size(); ++f) {
    const double a = db_to_amplitude(gains[f]);
    for (std::size_t t = 0; t < T; ++t) out(f, t) = static_cast<float>(mel_amplitude(f, t) * a);
  }
  return out;
}

/// Same gains applied to natural-log mel features: adds ln(10) * gain_db / 20.
inline Tensor<float> apply_filter_augment_log(const Tensor<float>& log_mel, const FilterConfig& cfg) {
  detail::check_rank(log_mel.shape(), 2, "apply_filter_augment_log", "mel");
  detail::check_axis(log_mel.dim(0), cfg.n_mels(), "apply_filter_augment_log", "mel axis (0) vs last boundary");
  const auto gains = filter_gains_db(cfg);
  Tensor<float> out(log_mel.shape());
  const std::size_t T = log_mel.dim(1);
  for (std::size_t f = 0; f < gains.size(); ++f) {
    const double shift = gains[f] * std::numbers::ln10 / 20.0;
    for (std::size_t t = 0; t < T; ++t) out(f, t) = static_cast<float>(log_mel(f, t) + shift);
  }
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
std::pair<Tensor<T>, Tensor<T>> mixup(const Tensor<T>& x1, const Tensor<T>& x2, const Tensor<T>& y1,
                                      const Tensor<T>& y2, double lambda) {
  require(lambda >= 0.0 && lambda <= 1.0, ErrorCode::kInvalidArgument, "mixup: lambda must lie in [0, 1]");
  require(x1.shape() == x2.shape(), ErrorCode::kShapeMismatch, "mixup: feature shapes differ");
  require(y1.shape() == y2.shape(), ErrorCode::kShapeMismatch, "mixup: label shapes differ");
  auto blend = [lambda](const Tensor<T>& a, const Tensor<T>& b) {
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i)
      out[i] = static_cast<T>(lambda * a[i] + (1.0 - lambda) * b[i]);
    return out;
  };
  return {blend(x1, x2), blend(y1, y2)};
}

struct TimeMaskResult {
  Tensor<float> spec;
  std::size_t start = 0;  // masked interval, for reproducibility logs
  std::size_t width = 0;
};

inline std::size_t default_max_mask_frames(std::size_t n_frames) { return n_frames / 5; }
inline std::size_t default_max_shift(std::size_t n_frames) { return n_frames / 10; }

/// Masks [start, start + width) with the spectrogram minimum, where width is
/// uniform on [0, max_mask_frames].
inline TimeMaskResult time_mask(const Tensor<float>& spec, Rng& rng, std::size_t max_mask_frames) {
  detail::check_rank(spec.shape(), 2, "time_mask", "spec");
  const std::size_t T = spec.dim(1);
  require(max_mask_frames <= T, ErrorCode::kInvalidArgument, "time_mask: max_mask_frames exceeds frame count");
  TimeMaskResult r{spec};
  r.width = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(max_mask_frames)));
  r.start = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(T - r.width)));
  if (r.width == 0) return r;
  const float floor = *std::min_element(spec.data().begin(), spec.data().end());
  for (std::size_t f = 0; f < spec.dim(0); ++f)
    for (std::size_t t = r.start; t < r.start + r.width; ++t) r.spec(f, t) = floor;
  return r;
}

namespace detail {

// Circularly rolls a rank-2 tensor along `axis` by `shift` (positive moves content later).
inline Tensor<float> roll(const Tensor<float>& x, std::size_t axis, std::int64_t shift) {
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  const auto n = static_cast<std::int64_t>(axis == 0 ? rows : cols);
  const std::int64_t s = ((shift % n) + n) % n;
  Tensor<float> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      if (axis == 0)
        out((r + static_cast<std::size_t>(s)) % rows, c) = x(r, c);
      else
        out(r, (c + static_cast<std::size_t>(s)) % cols) = x(r, c);
    }
  return out;
}

}  // namespace detail

struct FrameShiftResult {
  Tensor<float> spec;
  Tensor<float> labels;
  std::int64_t shift = 0;  // in spectrogram frames
};

/// Circular shift of spec [n_mels, T] along time by `shift` frames and of labels
/// [T', C] by round(shift / pooling_factor) label frames.
inline FrameShiftResult apply_frame_shift(const Tensor<float>& spec, const Tensor<float>& labels, std::int64_t shift,
                                          std::size_t pooling_factor = 4) {
  detail::check_rank(spec.shape(), 2, "frame_shift", "spec");
  detail::check_rank(labels.shape(), 2, "frame_shift", "labels");
  require(pooling_factor >= 1, ErrorCode::kInvalidArgument, "frame_shift: pooling factor must be >= 1");
  const auto label_shift = static_cast<std::int64_t>(std::lround(static_cast<double>(shift) / pooling_factor));
  return {detail::roll(spec, 1, shift), detail::roll(labels, 0, label_shift), shift};
}

inline FrameShiftResult frame_shift(const Tensor<float>& spec, const Tensor<float>& labels, Rng& rng,
                                    std::size_t max_shift, std::size_t pooling_factor = 4) {
  const auto m = static_cast<std::int64_t>(max_shift);
  return apply_frame_shift(spec, labels, rng.uniform_int(-m, m), pooling_factor);
}

}  // namespace sedkit

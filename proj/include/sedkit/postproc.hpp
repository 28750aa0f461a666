#pragma once

// Frame predictions -> events: weak-prediction masking or weak SED, class-wise
// median smoothing, thresholding and run-length decoding.

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "sedkit/error.hpp"
#include "sedkit/model.hpp"
#include "sedkit/tensor.hpp"

namespace sedkit {

struct ClassTable {
  std::vector<std::string> names;
  std::vector<std::size_t> median_lengths;  // in output frames, odd

  /// The ten DESED classes with their smoothing lengths.
  static ClassTable dcase() {
    ClassTable t{{"Alarm_bell_ringing", "Blender", "Cat", "Dishes", "Dog", "Electric_shaver_toothbrush", "Frying",
                  "Running_water", "Speech", "Vacuum_cleaner"},
                 {5, 11, 5, 5, 5, 67, 61, 49, 5, 17}};
    return t;
  }

  std::size_t size() const { return names.size(); }

  std::size_t index_of(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    fail(ErrorCode::kInvalidArgument, "unknown class '" + std::string(name) + "'");
  }

  void validate() const {
    require(!names.empty(), ErrorCode::kInvalidArgument, "class table is empty");
    require(names.size() == median_lengths.size(), ErrorCode::kInvalidArgument,
            "class table: one median length per class required");
    for (std::size_t i = 0; i < names.size(); ++i)
      require(median_lengths[i] >= 1 && median_lengths[i] % 2 == 1, ErrorCode::kInvalidArgument,
              "class table: median length for " + names[i] + " must be odd and >= 1, got " +
                  std::to_string(median_lengths[i]));
  }
};

struct Event {
  std::string clip;
  std::string label;
  double onset = 0.0;
  double offset = 0.0;

  double duration() const { return offset - onset; }
  friend bool operator==(const Event&, const Event&) = default;
};

enum class PostprocMode { kMask, kWeakSed };

inline const char* to_string(PostprocMode m) { return m == PostprocMode::kMask ? "mask" : "weaksed"; }

inline PostprocMode parse_postproc_mode(std::string_view s) {
  if (s == "mask") return PostprocMode::kMask;
  if (s == "weaksed") return PostprocMode::kWeakSed;
  fail(ErrorCode::kParse, "postproc mode must be mask or weaksed, got '" + std::string(s) + "'");
}

namespace detail {

inline void check_strong_weak(const Tensor<float>& strong, const Tensor<float>& weak, const char* op) {
  check_rank(strong.shape(), 2, op, "strong");
  check_rank(weak.shape(), 1, op, "weak");
  check_axis(weak.dim(0), strong.dim(1), op, "weak length vs strong class axis (1)");
}

}  // namespace detail

/// Zeroes class columns whose clip-level probability is below `threshold`.
inline Tensor<float> weak_prediction_masking(const Tensor<float>& strong, const Tensor<float>& weak,
                                             float threshold = 0.5f) {
  detail::check_strong_weak(strong, weak, "weak_prediction_masking");
  Tensor<float> out = strong;
  for (std::size_t c = 0; c < strong.dim(1); ++c)
    if (weak[c] < threshold)
      for (std::size_t t = 0; t < strong.dim(0); ++t) out(t, c) = 0.f;
  return out;
}

/// Replaces every frame with the clip-level probabilities.
inline Tensor<float> weak_sed(const Tensor<float>& strong, const Tensor<float>& weak) {
  detail::check_strong_weak(strong, weak, "weak_sed");
  Tensor<float> out(strong.shape());
  for (std::size_t t = 0; t < strong.dim(0); ++t)
    for (std::size_t c = 0; c < strong.dim(1); ++c) out(t, c) = weak[c];
  return out;
}

/// Centered running median of odd length with edge replication.
inline std::vector<float> median_filter(std::span<const float> x, std::size_t length) {
  require(length % 2 == 1, ErrorCode::kInvalidArgument, "median_filter: length must be odd");
  const std::size_t n = x.size(), half = length / 2;
  std::vector<float> out(n), win(length);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t k = 0; k < length; ++k) {
      const auto idx = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(half);
      win[k] = x[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(idx, 0, static_cast<std::ptrdiff_t>(n) - 1))];
    }
    std::nth_element(win.begin(), win.begin() + static_cast<std::ptrdiff_t>(half), win.end());
    out[t] = win[half];
  }
  return out;
}

/// Smooths column c of strong [T', C] with the table's length for class c.
inline Tensor<float> median_filter_per_class(const Tensor<float>& strong, const ClassTable& table) {
  table.validate();
  detail::check_rank(strong.shape(), 2, "median_filter_per_class", "strong");
  detail::check_axis(strong.dim(1), table.size(), "median_filter_per_class", "class axis (1) vs class table");
  const std::size_t T = strong.dim(0), C = strong.dim(1);
  Tensor<float> out(strong.shape());
  std::vector<float> col(T);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t t = 0; t < T; ++t) col[t] = strong(t, c);
    const auto sm = median_filter(col, table.median_lengths[c]);
    for (std::size_t t = 0; t < T; ++t) out(t, c) = sm[t];
  }
  return out;
}

/// Maximal runs of frames >= threshold become events [i * dt, (j + 1) * dt),
/// offsets clipped to clip_duration_s when it is positive. Sorted by onset,
/// then class order.
inline std::vector<Event> decode_events(const Tensor<float>& smoothed, const std::vector<std::string>& class_names,
                                        const std::string& clip, float threshold = 0.5f,
                                        double frame_duration_s = 0.064, double clip_duration_s = 0.0) {
  require(threshold > 0.f && threshold < 1.f, ErrorCode::kInvalidArgument, "decode_events: threshold must lie in (0, 1)");
  detail::check_rank(smoothed.shape(), 2, "decode_events", "scores");
  detail::check_axis(smoothed.dim(1), class_names.size(), "decode_events", "class axis (1) vs class names");
  const std::size_t T = smoothed.dim(0), C = smoothed.dim(1);
  struct Run {
    std::size_t start, end, cls;
  };
  std::vector<Run> runs;
  for (std::size_t c = 0; c < C; ++c) {
    std::size_t t = 0;
    while (t < T) {
      if (smoothed(t, c) < threshold) {
        ++t;
        continue;
      }
      std::size_t j = t;
      while (j + 1 < T && smoothed(j + 1, c) >= threshold) ++j;
      runs.push_back({t, j + 1, c});
      t = j + 1;
    }
  }
  std::sort(runs.begin(), runs.end(),
            [](const Run& a, const Run& b) { return a.start != b.start ? a.start < b.start : a.cls < b.cls; });
  std::vector<Event> events;
  for (const auto& r : runs) {
    double off = static_cast<double>(r.end) * frame_duration_s;
    if (clip_duration_s > 0.0) off = std::min(off, clip_duration_s);
    const double on = static_cast<double>(r.start) * frame_duration_s;
    if (off > on) events.push_back({clip, class_names[r.cls], on, off});
  }
  return events;
}

/// Binary [n_frames, C] mask with frame i set when an event covers [i*dt, (i+1)*dt).
inline Tensor<float> rasterize_events(const std::vector<Event>& events, const std::vector<std::string>& class_names,
                                      std::size_t n_frames, double frame_duration_s = 0.064) {
  Tensor<float> mask({n_frames, class_names.size()});
  for (const auto& e : events) {
    const auto it = std::find(class_names.begin(), class_names.end(), e.label);
    require(it != class_names.end(), ErrorCode::kInvalidArgument, "rasterize_events: unknown class " + e.label);
    const auto c = static_cast<std::size_t>(it - class_names.begin());
    const auto first = static_cast<std::size_t>(std::llround(e.onset / frame_duration_s));
    const auto last = std::min<std::size_t>(n_frames, static_cast<std::size_t>(std::ceil(e.offset / frame_duration_s - 1e-9)));
    for (std::size_t i = first; i < last; ++i) mask(i, c) = 1.f;
  }
  return mask;
}

/// Mode-specific weak handling followed by class-wise median smoothing.
inline Tensor<float> postprocess_scores(const FramePredictions& pred, PostprocMode mode, const ClassTable& table,
                                        float mask_threshold = 0.5f) {
  const auto gated = mode == PostprocMode::kMask ? weak_prediction_masking(pred.strong, pred.weak, mask_threshold)
                                                 : weak_sed(pred.strong, pred.weak);
  return median_filter_per_class(gated, table);
}

}  // namespace sedkit

#pragma once

// Intersection-based event matching, effective ROC construction and the
// polyphonic sound detection score, plus collar-based macro F1 and ensemble
// averaging of frame predictions.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "sedkit/error.hpp"
#include "sedkit/model.hpp"
#include "sedkit/postproc.hpp"

namespace sedkit {

struct PsdsParams {
  double dtc = 0.7;
  double gtc = 0.7;
  double cttc = 0.3;
  double alpha_ct = 0.0;
  double alpha_st = 1.0;
  double e_max = 100.0;  // false positives per hour

  static PsdsParams psds1() { return {0.7, 0.7, 0.3, 0.0, 1.0, 100.0}; }
  static PsdsParams psds2() { return {0.1, 0.1, 0.3, 0.5, 1.0, 100.0}; }

  void validate() const {
    auto ratio = [](double v) { return v > 0.0 && v <= 1.0; };
    require(ratio(dtc) && ratio(gtc) && ratio(cttc), ErrorCode::kInvalidArgument,
            "psds: dtc, gtc and cttc must lie in (0, 1]");
    require(alpha_ct >= 0.0 && alpha_st >= 0.0, ErrorCode::kInvalidArgument, "psds: alpha_ct and alpha_st must be >= 0");
    require(e_max > 0.0, ErrorCode::kInvalidArgument, "psds: e_max must be > 0");
  }
};

/// Counts for one operating point, indexed by class position.
struct MatchCounts {
  std::vector<std::size_t> tp;                 // ground truths satisfying GTC
  std::vector<std::size_t> fp;                 // detections failing DTC
  std::vector<std::size_t> n_gt;               // ground truths per class
  std::vector<std::vector<std::size_t>> ct;    // ct[c][c2]: class-c detections cross-triggering c2
  std::size_t unknown_label_detections = 0;    // detections whose label is not in the class list
};

struct OperatingPoint {
  double threshold = 0.0;
  MatchCounts counts;
};

namespace detail {

inline double overlap(const Event& a, const Event& b) {
  return std::max(0.0, std::min(a.offset, b.offset) - std::max(a.onset, b.onset));
}

inline void check_events(const std::vector<Event>& events, const char* what) {
  for (const auto& e : events)
    require(e.offset > e.onset && std::isfinite(e.onset) && std::isfinite(e.offset), ErrorCode::kInvalidArgument,
            std::string(what) + ": malformed event in " + e.clip + " (" + e.label + ", onset " +
                std::to_string(e.onset) + ", offset " + std::to_string(e.offset) + ")");
}

inline std::ptrdiff_t class_index(const std::vector<std::string>& classes, const std::string& label) {
  auto it = std::find(classes.begin(), classes.end(), label);
  return it == classes.end() ? -1 : it - classes.begin();
}

// Events grouped by clip, then class position.
using Grouped = std::map<std::string, std::vector<std::vector<const Event*>>>;

inline Grouped group_events(const std::vector<Event>& events, const std::vector<std::string>& classes,
                            std::size_t* unknown = nullptr) {
  Grouped g;
  for (const auto& e : events) {
    const auto c = class_index(classes, e.label);
    if (c < 0) {
      if (unknown) ++*unknown;
      continue;
    }
    auto& slot = g[e.clip];
    if (slot.empty()) slot.resize(classes.size());
    slot[static_cast<std::size_t>(c)].push_back(&e);
  }
  return g;
}

}  // namespace detail

/// Intersection-criteria matching.
///  - A detection passes DTC when its summed overlap with same-class ground
///    truths covers at least `dtc` of its own duration.
///  - A ground truth is a TP when DTC-passing same-class detections cover at
///    least `gtc` of it.
///  - Detections failing DTC are FPs; among them, those whose overlap with
///    class-c2 ground truths covers at least `cttc` of their duration are
///    cross-triggers on c2.
inline MatchCounts match_detections(const std::vector<Event>& dets, const std::vector<Event>& gts,
                                    const std::vector<std::string>& classes, double dtc, double gtc, double cttc) {
  detail::check_events(dets, "detections");
  detail::check_events(gts, "ground truth");
  const std::size_t C = classes.size();
  MatchCounts m{std::vector<std::size_t>(C), std::vector<std::size_t>(C), std::vector<std::size_t>(C),
                std::vector<std::vector<std::size_t>>(C, std::vector<std::size_t>(C))};
  const auto gt_by_clip = detail::group_events(gts, classes);
  const auto det_by_clip = detail::group_events(dets, classes, &m.unknown_label_detections);
  const std::vector<std::vector<const Event*>> no_events(C);

  for (const auto& [clip, gt_cls] : gt_by_clip)
    for (std::size_t c = 0; c < C; ++c) m.n_gt[c] += gt_cls[c].size();

  for (const auto& [clip, det_cls] : det_by_clip) {
    auto git = gt_by_clip.find(clip);
    const auto& gt_cls = git == gt_by_clip.end() ? no_events : git->second;
    for (std::size_t c = 0; c < C; ++c) {
      for (const Event* d : det_cls[c]) {
        double same = 0.0;
        for (const Event* g : gt_cls[c]) same += detail::overlap(*d, *g);
        if (same / d->duration() >= dtc) continue;
        ++m.fp[c];
        for (std::size_t c2 = 0; c2 < C; ++c2) {
          if (c2 == c) continue;
          double other = 0.0;
          for (const Event* g : gt_cls[c2]) other += detail::overlap(*d, *g);
          if (other / d->duration() >= cttc) ++m.ct[c][c2];
        }
      }
    }
  }

  for (const auto& [clip, gt_cls] : gt_by_clip) {
    auto dit = det_by_clip.find(clip);
    const auto& det_cls = dit == det_by_clip.end() ? no_events : dit->second;
    for (std::size_t c = 0; c < C; ++c) {
      std::vector<const Event*> passing;
      for (const Event* d : det_cls[c]) {
        double same = 0.0;
        for (const Event* g : gt_cls[c]) same += detail::overlap(*d, *g);
        if (same / d->duration() >= dtc) passing.push_back(d);
      }
      for (const Event* g : gt_cls[c]) {
        double covered = 0.0;
        for (const Event* d : passing) covered += detail::overlap(*d, *g);
        if (covered / g->duration() >= gtc) ++m.tp[c];
      }
    }
  }
  return m;
}

struct RocPoint {
  double efpr = 0.0;
  double etpr = 0.0;
  friend bool operator==(const RocPoint&, const RocPoint&) = default;
};

/// Step curve: etpr of point i holds on [efpr_i, efpr_{i+1}); the last point
/// holds up to e_max. The first point is at efpr 0.
struct RocCurve {
  std::vector<RocPoint> points;
  double e_max = 100.0;
  std::vector<std::string> excluded_classes;  // no ground truth
};

/// Effective rates for one operating point over the classes with ground truth.
/// eFPR = mean_c (FP_c / hours + alpha_ct * mean_{c2 != c} CT_{c,c2} / hours)
/// eTPR = mean_c TPR_c - alpha_st * std_c TPR_c (population std).
inline RocPoint effective_rates(const MatchCounts& m, const PsdsParams& p, double total_duration_h) {
  require(total_duration_h > 0.0, ErrorCode::kInvalidArgument, "psds: total duration must be > 0");
  std::vector<std::size_t> cls;
  for (std::size_t c = 0; c < m.n_gt.size(); ++c)
    if (m.n_gt[c] > 0) cls.push_back(c);
  if (cls.empty()) return {0.0, 0.0};
  const double n = static_cast<double>(cls.size());
  double efpr = 0.0, mean = 0.0;
  std::vector<double> tpr;
  for (std::size_t c : cls) {
    double ct = 0.0;
    if (cls.size() > 1) {
      for (std::size_t c2 : cls)
        if (c2 != c) ct += static_cast<double>(m.ct[c][c2]) / total_duration_h;
      ct /= n - 1.0;
    }
    efpr += static_cast<double>(m.fp[c]) / total_duration_h + p.alpha_ct * ct;
    tpr.push_back(static_cast<double>(m.tp[c]) / static_cast<double>(m.n_gt[c]));
    mean += tpr.back();
  }
  efpr /= n;
  mean /= n;
  double var = 0.0;
  for (double v : tpr) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  return {efpr, mean - p.alpha_st * sd};
}

/// Sorts operating points by eFPR, keeps the running-maximum (upper envelope)
/// eTPR and drops points beyond e_max. The curve starts at (0, 0): below the
/// smallest observed eFPR nothing is credited, so adding an operating point
/// can only raise the curve.
inline RocCurve roc_from_points(std::vector<RocPoint> pts, double e_max) {
  require(!pts.empty(), ErrorCode::kInvalidArgument, "build_roc: need at least one operating point");
  std::sort(pts.begin(), pts.end(), [](const RocPoint& a, const RocPoint& b) {
    return a.efpr != b.efpr ? a.efpr < b.efpr : a.etpr > b.etpr;
  });
  RocCurve curve;
  curve.e_max = e_max;
  curve.points.push_back({0.0, 0.0});
  for (const auto& p : pts) {
    if (p.efpr > e_max) break;
    const double best = std::max(curve.points.back().etpr, p.etpr);
    if (p.efpr == curve.points.back().efpr)
      curve.points.back().etpr = best;
    else if (best > curve.points.back().etpr)
      curve.points.push_back({p.efpr, best});
  }
  return curve;
}

inline RocCurve build_roc(const std::vector<OperatingPoint>& ops, const std::vector<std::string>& classes,
                          const PsdsParams& params, double total_duration_h) {
  params.validate();
  require(!ops.empty(), ErrorCode::kInvalidArgument, "build_roc: need at least one operating point");
  for (std::size_t i = 0; i < ops.size(); ++i)
    for (std::size_t j = i + 1; j < ops.size(); ++j)
      require(ops[i].threshold != ops[j].threshold, ErrorCode::kInvalidArgument, "build_roc: duplicate threshold");
  std::vector<RocPoint> pts;
  for (const auto& op : ops) pts.push_back(effective_rates(op.counts, params, total_duration_h));
  auto curve = roc_from_points(std::move(pts), params.e_max);
  const auto& n_gt = ops.front().counts.n_gt;
  for (std::size_t c = 0; c < n_gt.size() && c < classes.size(); ++c)
    if (n_gt[c] == 0) curve.excluded_classes.push_back(classes[c]);
  return curve;
}

/// Normalized area under max(eTPR, 0) over [0, e_max], step-integrated.
inline double psds_score(const RocCurve& curve) {
  double area = 0.0;
  for (std::size_t i = 0; i < curve.points.size(); ++i) {
    const double x0 = std::min(curve.points[i].efpr, curve.e_max);
    const double x1 = i + 1 < curve.points.size() ? std::min(curve.points[i + 1].efpr, curve.e_max) : curve.e_max;
    area += std::max(curve.points[i].etpr, 0.0) * (x1 - x0);
  }
  return std::clamp(area / curve.e_max, 0.0, 1.0);
}

/// Detections per operating threshold.
using DetectionSets = std::map<double, std::vector<Event>>;

struct PsdsResult {
  double score = 0.0;
  RocCurve curve;
  std::vector<OperatingPoint> operating_points;
};

inline PsdsResult evaluate_psds(const DetectionSets& sets, const std::vector<Event>& gts,
                                const std::vector<std::string>& classes, const PsdsParams& params,
                                double total_duration_s) {
  PsdsResult r;
  for (const auto& [th, dets] : sets)
    r.operating_points.push_back({th, match_detections(dets, gts, classes, params.dtc, params.gtc, params.cttc)});
  r.curve = build_roc(r.operating_points, classes, params, total_duration_s / 3600.0);
  r.score = psds_score(r.curve);
  return r;
}

// ---------------------------------------------------------------------------
// Collar-based F1

struct CollarParams {
  double onset_collar = 0.2;
  double offset_collar = 0.2;         // minimum offset collar in seconds
  double offset_collar_rate = 0.2;    // fraction of ground-truth duration
};

struct ClassF1 {
  std::string label;
  std::size_t tp = 0, fp = 0, fn = 0, n_gt = 0;
  double f1 = 0.0;
};

struct CollarF1Result {
  std::vector<ClassF1> per_class;
  double macro_f1 = 0.0;
};

/// Greedy one-to-one matching per clip and class in onset order. A detection
/// matches the first unmatched ground truth whose onset is within the onset
/// collar and whose offset is within max(offset_collar, rate * gt duration).
/// Macro average over classes that have ground truth.
inline CollarF1Result collar_f1(const std::vector<Event>& dets, const std::vector<Event>& gts,
                                const std::vector<std::string>& classes, const CollarParams& p = {}) {
  detail::check_events(dets, "detections");
  detail::check_events(gts, "ground truth");
  const std::size_t C = classes.size();
  CollarF1Result r;
  for (const auto& c : classes) r.per_class.push_back({c});
  auto gt_by_clip = detail::group_events(gts, classes);
  auto det_by_clip = detail::group_events(dets, classes);
  auto by_onset = [](const Event* a, const Event* b) {
    return a->onset != b->onset ? a->onset < b->onset : a->offset < b->offset;
  };
  std::set<std::string> clips;
  for (const auto& [k, v] : gt_by_clip) clips.insert(k);
  for (const auto& [k, v] : det_by_clip) clips.insert(k);
  for (const auto& clip : clips) {
    for (std::size_t c = 0; c < C; ++c) {
      std::vector<const Event*> g, d;
      if (auto it = gt_by_clip.find(clip); it != gt_by_clip.end()) g = it->second[c];
      if (auto it = det_by_clip.find(clip); it != det_by_clip.end()) d = it->second[c];
      std::sort(g.begin(), g.end(), by_onset);
      std::sort(d.begin(), d.end(), by_onset);
      std::vector<bool> used(g.size(), false);
      std::size_t tp = 0;
      for (const Event* de : d) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (used[i]) continue;
          const double off_collar = std::max(p.offset_collar, p.offset_collar_rate * g[i]->duration());
          if (std::abs(de->onset - g[i]->onset) <= p.onset_collar + 1e-12 &&
              std::abs(de->offset - g[i]->offset) <= off_collar + 1e-12) {
            used[i] = true;
            ++tp;
            break;
          }
        }
      }
      auto& pc = r.per_class[c];
      pc.tp += tp;
      pc.fp += d.size() - tp;
      pc.fn += g.size() - tp;
      pc.n_gt += g.size();
    }
  }
  std::size_t counted = 0;
  for (auto& pc : r.per_class) {
    const double denom = static_cast<double>(2 * pc.tp + pc.fp + pc.fn);
    pc.f1 = denom > 0 ? 2.0 * static_cast<double>(pc.tp) / denom : 0.0;
    if (pc.n_gt > 0) {
      r.macro_f1 += pc.f1;
      ++counted;
    }
  }
  if (counted) r.macro_f1 /= static_cast<double>(counted);
  return r;
}

// ---------------------------------------------------------------------------

/// Elementwise mean of strong and weak predictions across models.
inline FramePredictions ensemble_average(const std::vector<FramePredictions>& preds) {
  require(!preds.empty(), ErrorCode::kInvalidArgument, "ensemble_average: no predictions");
  const auto& first = preds.front();
  for (const auto& p : preds)
    require(p.strong.shape() == first.strong.shape() && p.weak.shape() == first.weak.shape(),
            ErrorCode::kShapeMismatch,
            "ensemble_average: prediction shapes differ (" + shape_str(p.strong.shape()) + " vs " +
                shape_str(first.strong.shape()) + ")");
  auto mean = [&](auto member) {
    const auto& ref = first.*member;
    std::vector<double> acc(ref.size(), 0.0);
    for (const auto& p : preds)
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += (p.*member)[i];
    Tensor<float> out(ref.shape());
    for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i] / static_cast<double>(preds.size()));
    return out;
  };
  return {mean(&FramePredictions::strong), mean(&FramePredictions::weak), first.frame_duration_s};
}

}  // namespace sedkit

#pragma once

// Acceptance checks runnable without external data. Each check builds its
// own fixtures and compares against oracles written independently of the
// code under test (naive loops, hand-computed constants).

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "sedkit/audio.hpp"
#include "sedkit/augment.hpp"
#include "sedkit/fdy_conv.hpp"
#include "sedkit/io.hpp"
#include "sedkit/model.hpp"
#include "sedkit/pipeline.hpp"
#include "sedkit/postproc.hpp"
#include "sedkit/psds.hpp"

namespace sedkit {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

namespace selftest {

// Collects failed expectations; the first few are kept for the report.
class Checker {
 public:
  void expect(bool ok, const std::string& what) {
    ++checks_;
    if (ok) return;
    ++failures_;
    if (messages_.size() < 3) messages_.push_back(what);
  }
  void near(double got, double want, double tol, const std::string& what) {
    std::ostringstream os;
    os.precision(12);
    os << what << ": got " << got << ", want " << want << " (tol " << tol << ")";
    expect(std::isfinite(got) && std::abs(got - want) <= tol, os.str());
  }
  bool ok() const { return failures_ == 0; }
  std::string summary(const std::string& extra = {}) const {
    std::string s = std::to_string(checks_) + " checks";
    if (!extra.empty()) s += ", " + extra;
    for (const auto& m : messages_) s += "; FAIL " + m;
    return s;
  }

 private:
  std::size_t checks_ = 0, failures_ = 0;
  std::vector<std::string> messages_;
};

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

// Direct 3x3 same-padded convolution in double.
inline Tensor<double> naive_conv3x3(const Tensor<double>& x, const Tensor<double>& w, const std::vector<double>& bias) {
  const std::size_t B = x.dim(0), Ci = x.dim(1), F = x.dim(2), T = x.dim(3), Co = w.dim(0);
  Tensor<double> y({B, Co, F, T});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < Co; ++o)
      for (std::size_t f = 0; f < F; ++f)
        for (std::size_t t = 0; t < T; ++t) {
          double acc = bias[o];
          for (std::size_t c = 0; c < Ci; ++c)
            for (int i = -1; i <= 1; ++i)
              for (int j = -1; j <= 1; ++j) {
                const long ff = static_cast<long>(f) + i, tt = static_cast<long>(t) + j;
                if (ff < 0 || tt < 0 || ff >= static_cast<long>(F) || tt >= static_cast<long>(T)) continue;
                acc += w(o, c, static_cast<std::size_t>(i + 1), static_cast<std::size_t>(j + 1)) *
                       x(b, c, static_cast<std::size_t>(ff), static_cast<std::size_t>(tt));
              }
          y(b, o, f, t) = acc;
        }
  return y;
}

inline double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline std::vector<std::uint32_t> bits(std::span<const float> v) {
  std::vector<std::uint32_t> out;
  for (float x : v) out.push_back(std::bit_cast<std::uint32_t>(x));
  return out;
}

template <typename F>
ErrorCode error_code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return static_cast<ErrorCode>(-1);
}

// ---------------------------------------------------------------------------

inline CriterionResult fdy_gradients(std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = gradcheck_suite(seed, 100, 1e-4, 1e-4, 4, 45.0);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CriterionResult c{1, "FDY gradient suite", false, {}};
  c.passed = r.passed() && r.trials >= 100 && secs < 60.0;
  c.detail = std::to_string(r.trials) + " instances, " + std::to_string(r.failures) + " failed, worst rel err " +
             fmt(r.worst_rel_err) + " (tol 1e-4), " + fmt(secs) + " s (limit 60 s)";
  if (!r.first_failure.empty()) c.detail += "; " + r.first_failure;
  return c;
}

inline CriterionResult fdy_degeneracy(std::uint64_t seed) {
  Rng rng(seed);
  Checker chk;
  double worst_k1 = 0, worst_mean = 0, worst_mix = 0;
  for (int trial = 0; trial < 25; ++trial) {
    FdyInstanceShape s;
    s.batch = static_cast<std::size_t>(rng.uniform_int(1, 2));
    s.in_channels = static_cast<std::size_t>(rng.uniform_int(1, 4));
    s.out_channels = static_cast<std::size_t>(rng.uniform_int(1, 4));
    s.freq = static_cast<std::size_t>(rng.uniform_int(1, 8));
    s.time = static_cast<std::size_t>(rng.uniform_int(1, 8));

    // K = 1: attention is identically 1.
    auto s1 = s;
    s1.n_basis = 1;
    auto [l1, x1] = random_fdy_instance(rng, s1);
    std::vector<double> b1(l1.out_channels());
    for (std::size_t o = 0; o < b1.size(); ++o) b1[o] = l1.basis_bias(0, o);
    const double d1 = max_abs_diff(fdy_conv_forward(x1, l1), naive_conv3x3(x1, l1.basis_kernels[0], b1));
    worst_k1 = std::max(worst_k1, d1);
    chk.expect(d1 <= 1e-6, "K=1 vs static conv diff " + fmt(d1));

    // Zero excite layer: uniform attention, i.e. the mean kernel.
    auto [l4, x4] = random_fdy_instance(rng, s);
    auto z = l4;
    z.excite_w.fill(0.0);
    z.excite_b.fill(0.0);
    Tensor<double> wmean(z.basis_kernels[0].shape());
    std::vector<double> bmean(z.out_channels(), 0.0);
    for (std::size_t k = 0; k < z.n_basis(); ++k) {
      for (std::size_t i = 0; i < wmean.size(); ++i) wmean[i] += z.basis_kernels[k][i] / static_cast<double>(z.n_basis());
      for (std::size_t o = 0; o < bmean.size(); ++o) bmean[o] += z.basis_bias(k, o) / static_cast<double>(z.n_basis());
    }
    const double d2 = max_abs_diff(fdy_conv_forward(x4, z), naive_conv3x3(x4, wmean, bmean));
    worst_mean = std::max(worst_mean, d2);
    chk.expect(d2 <= 1e-5, "zero excite vs mean kernel diff " + fmt(d2));

    const double d3 = max_abs_diff(fdy_conv_forward(x4, l4), fdy_conv_forward_mix_outputs(x4, l4));
    worst_mix = std::max(worst_mix, d3);
    chk.expect(d3 <= 1e-5, "mix kernels vs mix outputs diff " + fmt(d3));
  }
  CriterionResult c{2, "FDY degeneracy oracles", false, {}};
  c.passed = chk.ok();
  c.detail = chk.summary("max diff K=1 " + fmt(worst_k1) + " (tol 1e-6), mean kernel " + fmt(worst_mean) +
                         " (tol 1e-5), mix routes " + fmt(worst_mix) + " (tol 1e-5)");
  return c;
}

inline CriterionResult filter_augment(std::uint64_t seed) {
  Rng rng(seed);
  Checker chk;
  constexpr std::size_t n_mels = 128;
  for (const auto kind : {FilterKind::kStep, FilterKind::kLinear}) {
    const bool step = kind == FilterKind::kStep;
    const double db_lo = step ? -4.5 : -6.0, db_hi = step ? 6.0 : 4.5;
    const std::size_t min_b = step ? 2 : 3, max_b = step ? 5 : 6, min_w = step ? 4 : 7;
    const double a_lo = std::pow(10.0, db_lo / 20.0), a_hi = std::pow(10.0, db_hi / 20.0);
    const auto params = FilterAugParams::defaults_for(kind);
    const std::string tag = step ? "step" : "linear";
    for (int i = 0; i < 10000; ++i) {
      const auto cfg = sample_filter_config(rng, params, n_mels);
      const std::size_t nb = cfg.boundaries.size() - 1;
      chk.expect(nb >= min_b && nb <= max_b, tag + " band count " + std::to_string(nb));
      for (std::size_t b = 0; b < nb; ++b)
        chk.expect(cfg.boundaries[b + 1] - cfg.boundaries[b] >= min_w, tag + " bandwidth below minimum");
      const auto g = filter_gains_db(cfg);
      for (double db : g) {
        const double a = std::pow(10.0, db / 20.0);
        chk.expect(a >= a_lo && a <= a_hi, tag + " gain " + fmt(a) + " outside range");
      }
      if (!step) {
        // Exact anchors at band starts; constant slope inside each band.
        for (std::size_t b = 0; b < nb; ++b) {
          const std::size_t lo = cfg.boundaries[b], hi = cfg.boundaries[b + 1];
          chk.expect(g[lo] == cfg.weights_db[b], "linear anchor mismatch");
          const double slope = (cfg.weights_db[b + 1] - cfg.weights_db[b]) / static_cast<double>(hi - lo);
          for (std::size_t f = lo; f < hi; ++f)
            chk.expect(std::abs(g[f] - (cfg.weights_db[b] + slope * static_cast<double>(f - lo))) <= 1e-12,
                       "linear gain not piecewise linear");
          if (b + 1 == nb)
            chk.expect(std::abs(g[hi - 1] + slope - cfg.weights_db[b + 1]) <= 1e-12, "linear last anchor mismatch");
        }
      }
    }
    // A zero-dB config leaves features untouched bit for bit.
    auto zero = sample_filter_config(rng, params, n_mels);
    std::fill(zero.weights_db.begin(), zero.weights_db.end(), 0.0);
    Tensor<float> x({n_mels, 20});
    for (auto& v : x.data()) v = static_cast<float>(rng.uniform(0.0, 5.0));
    const auto amp = apply_filter_augment(x, zero), lg = apply_filter_augment_log(x, zero);
    chk.expect(bits(amp.data()) == bits(x.data()), tag + " zero dB is not identity");
    chk.expect(bits(lg.data()) == bits(x.data()), tag + " zero dB (log) is not identity");
  }
  CriterionResult c{3, "FilterAugment properties", false, {}};
  c.passed = chk.ok();
  c.detail = chk.summary("10000 configs per kind");
  return c;
}

inline CriterionResult frontend_arithmetic(std::uint64_t seed) {
  Rng rng(seed);
  Checker chk;
  Waveform w;
  w.samples.resize(160000);
  for (auto& s : w.samples) s = static_cast<float>(rng.uniform(-0.5, 0.5));
  const auto mel = extract_log_mel(w, FrontendConfig{});
  chk.expect(mel.n_frames() == 625, "log-mel frames " + std::to_string(mel.n_frames()) + ", want 625");
  chk.expect(mel.n_mels() == 128, "mel bins " + std::to_string(mel.n_mels()));

  const ModelConfig mc;
  const auto weights = init_weights(mc, seed);
  Tensor<float> batch({1, 128, mel.n_frames()});
  std::copy(mel.values.data().begin(), mel.values.data().end(), batch.data().begin());
  const auto preds = model_forward(normalize_minmax(batch), weights, mc, mel.frame_hop_s);
  chk.expect(preds.size() == 1 && preds[0].strong.shape() == Shape{156, 10},
             "strong shape " + shape_str(preds[0].strong.shape()) + ", want [156,10]");
  chk.near(preds[0].frame_duration_s, 0.064, 1e-6, "output frame duration");

  Tensor<float> nb({3, 16, 40});
  for (auto& v : nb.data()) v = static_cast<float>(rng.uniform(-20.0, 5.0));
  const auto n = normalize_minmax(nb);
  for (float v : n.data()) chk.expect(v >= 0.f && v <= 1.f, "normalized value outside [0,1]");
  for (std::size_t m = 0; m < 16; ++m) {
    float lo = INFINITY, hi = -INFINITY;
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t t = 0; t < 40; ++t) {
        lo = std::min(lo, n(b, m, t));
        hi = std::max(hi, n(b, m, t));
      }
    chk.expect(lo == 0.f && hi == 1.f, "bin " + std::to_string(m) + " min/max " + fmt(lo) + "/" + fmt(hi));
  }
  CriterionResult c{4, "Frontend arithmetic", false, {}};
  c.passed = chk.ok();
  c.detail = chk.summary("625 frames -> 156 x 0.064 s");
  return c;
}

// Two classes, two one-hour clips, so rates per hour are counts / 2.
struct PsdsFixture {
  std::vector<std::string> classes{"A", "B"};
  std::vector<Event> gt{{"a.wav", "A", 0, 10}, {"a.wav", "B", 20, 30}, {"b.wav", "A", 5, 15}};
  std::map<std::string, double> durations{{"a.wav", 3600}, {"b.wav", 3600}};
  Event d1{"a.wav", "A", 0, 8}, d2{"a.wav", "B", 20, 30}, d3{"b.wav", "A", 40, 50}, d4{"a.wav", "A", 22, 28},
      d5{"b.wav", "A", 5, 15};
  DetectionSets sets() const { return {{0.7, {d2}}, {0.6, {d1, d2, d4}}, {0.5, {d1, d2, d3, d4, d5}}}; }
};

inline CriterionResult psds_oracle() {
  Checker chk;
  const PsdsFixture fx;
  const double total_s = 7200.0, tol = 1e-9;

  // Single-criterion cases.
  {
    const std::vector<Event> gt{{"c", "A", 0, 10}};
    const auto m = match_detections({{"c", "A", 0, 6}}, gt, {"A"}, 0.7, 0.7, 0.3);
    chk.expect(m.tp[0] == 0 && m.fp[0] == 0, "DTC pass with GTC fail must be neither TP nor FP");
    const auto e = match_detections({{"c", "A", 0, 10}}, gt, {"A"}, 1.0, 1.0, 0.3);
    chk.expect(e.tp[0] == 1 && e.fp[0] == 0, "exact detection must be TP");
    const auto f = match_detections({{"c", "A", 20, 25}}, gt, {"A"}, 0.7, 0.7, 0.3);
    chk.expect(f.tp[0] == 0 && f.fp[0] == 1, "disjoint detection must be FP");
  }

  // Counts at the loosest operating point under both parameter sets.
  const auto dets = fx.sets().at(0.5);
  const auto m1 = match_detections(dets, fx.gt, fx.classes, 0.7, 0.7, 0.3);
  chk.expect(m1.tp == std::vector<std::size_t>{2, 1} && m1.fp == std::vector<std::size_t>{2, 0} &&
                 m1.n_gt == std::vector<std::size_t>{2, 1} && m1.ct[0][1] == 1 && m1.ct[1][0] == 0,
             "PSDS1 counts at 0.5");
  const auto m06 = match_detections(fx.sets().at(0.6), fx.gt, fx.classes, 0.1, 0.1, 0.3);
  chk.expect(m06.tp == std::vector<std::size_t>{1, 1} && m06.fp == std::vector<std::size_t>{1, 0} &&
                 m06.ct[0][1] == 1,
             "PSDS2 counts at 0.6");

  // Hand-computed (eFPR, eTPR) per operating point, e_max = 1 so areas are
  // sensitive to every step.
  auto p1 = PsdsParams::psds1();
  auto p2 = PsdsParams::psds2();
  p1.e_max = p2.e_max = 1.0;
  const auto r1 = evaluate_psds(fx.sets(), fx.gt, fx.classes, p1, total_s);
  const auto r2 = evaluate_psds(fx.sets(), fx.gt, fx.classes, p2, total_s);
  const std::vector<std::pair<double, double>> want1{{0.0, 0.0}, {0.25, 0.5}, {0.5, 1.0}};
  const std::vector<std::pair<double, double>> want2{{0.0, 0.0}, {0.375, 0.5}, {0.625, 1.0}};
  for (auto [res, want, tag] : {std::tuple{&r1, &want1, "PSDS1"}, std::tuple{&r2, &want2, "PSDS2"}}) {
    chk.expect(res->curve.points.size() == want->size(), std::string(tag) + " curve length");
    for (std::size_t i = 0; i < std::min(want->size(), res->curve.points.size()); ++i) {
      chk.near(res->curve.points[i].efpr, (*want)[i].first, tol, std::string(tag) + " eFPR[" + std::to_string(i) + "]");
      chk.near(res->curve.points[i].etpr, (*want)[i].second, tol, std::string(tag) + " eTPR[" + std::to_string(i) + "]");
    }
  }
  // Areas: 0.5 * 0.25 + 1 * 0.5 and 0.5 * 0.25 + 1 * 0.375.
  chk.near(r1.score, 0.625, tol, "PSDS1 area");
  chk.near(r2.score, 0.5, tol, "PSDS2 area");

  // Standalone step area.
  RocCurve steps;
  steps.points = {{0, 0}, {50, 0.5}};
  steps.e_max = 100;
  chk.near(psds_score(steps), 0.25, tol, "step area");

  // Perfect and empty systems at default e_max.
  DetectionSets perfect, empty;
  for (double th : {0.1, 0.5, 0.9}) {
    perfect[th] = fx.gt;
    empty[th] = {};
  }
  for (const auto& p : {PsdsParams::psds1(), PsdsParams::psds2()}) {
    chk.near(evaluate_psds(perfect, fx.gt, fx.classes, p, total_s).score, 1.0, tol, "perfect PSDS");
    chk.near(evaluate_psds(empty, fx.gt, fx.classes, p, total_s).score, 0.0, tol, "empty PSDS");
  }
  chk.near(collar_f1(fx.gt, fx.gt, fx.classes).macro_f1, 1.0, tol, "perfect CB-F1");
  chk.near(collar_f1({}, fx.gt, fx.classes).macro_f1, 0.0, tol, "empty CB-F1");
  // Offset collar max(0.2, 0.8) = 0.8: a 0.9 s offset miss fails, 0.7 s passes.
  chk.near(collar_f1({{"c", "A", 1.15, 5.9}}, {{"c", "A", 1.0, 5.0}}, {"A"}).macro_f1, 0.0, tol, "collar miss");
  chk.near(collar_f1({{"c", "A", 1.15, 5.7}}, {{"c", "A", 1.0, 5.0}}, {"A"}).macro_f1, 1.0, tol, "collar hit");

  CriterionResult c{5, "PSDS oracle", false, {}};
  c.passed = chk.ok();
  c.detail = chk.summary("tol 1e-9");
  return c;
}

inline CriterionResult postprocessing(std::uint64_t seed) {
  Rng rng(seed);
  Checker chk;
  const auto table = ClassTable::dcase();
  const std::vector<std::size_t> lengths{5, 11, 5, 5, 5, 67, 61, 49, 5, 17};
  chk.expect(table.median_lengths == lengths, "class table median lengths");
  constexpr std::size_t T = 156;
  for (int trial = 0; trial < 200; ++trial) {
    // One isolated spike per class on a zero background, and its inverse.
    // Edge replication copies frames 0 and T-1 into the padding, so a spike
    // there is not isolated; draw from the interior.
    Tensor<float> up({T, table.size()}), down({T, table.size()}, 1.f);
    for (std::size_t c = 0; c < table.size(); ++c) {
      const auto t = static_cast<std::size_t>(rng.uniform_int(1, T - 2));
      up(t, c) = 1.f;
      down(t, c) = 0.f;
    }
    const auto su = median_filter_per_class(up, table), sd = median_filter_per_class(down, table);
    for (std::size_t c = 0; c < table.size(); ++c)
      for (std::size_t t = 0; t < T; ++t) {
        chk.expect(su(t, c) == 0.f, "spike survives in class " + table.names[c]);
        chk.expect(sd(t, c) == 1.f, "dip survives in class " + table.names[c]);
      }

    // decode -> rasterize is exact on random binary masks.
    Tensor<float> mask({T, table.size()});
    for (auto& v : mask.data()) v = rng.uniform() < 0.3 ? 1.f : 0.f;
    const auto ev = decode_events(mask, table.names, "clip.wav", 0.5f, 0.064, 0.0);
    chk.expect(rasterize_events(ev, table.names, T, 0.064) == mask, "decode/rasterize round trip");

    Tensor<float> strong({T, table.size()}), weak({table.size()});
    for (auto& v : strong.data()) v = static_cast<float>(rng.uniform());
    for (auto& v : weak.data()) v = static_cast<float>(rng.uniform());
    const auto ws = weak_sed(strong, weak);
    for (std::size_t c = 0; c < table.size(); ++c) {
      double mean = 0, var = 0;
      for (std::size_t t = 0; t < T; ++t) mean += ws(t, c);
      mean /= T;
      for (std::size_t t = 0; t < T; ++t) var += (ws(t, c) - mean) * (ws(t, c) - mean);
      chk.expect(var == 0.0, "weak SED temporal variance nonzero");
    }
  }
  CriterionResult c{6, "Post-processing", false, {}};
  c.passed = chk.ok();
  c.detail = chk.summary("200 random trials");
  return c;
}

inline fs::path scratch_dir(const std::string& tag) {
  const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
  const auto tid = std::hash<std::thread::id>{}(std::this_thread::get_id());
  auto dir = fs::temp_directory_path() / ("sedkit-" + tag + "-" + std::to_string(stamp) + "-" + std::to_string(tid));
  fs::create_directories(dir);
  return dir;
}

inline std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = read_file(e.path());
  return files;
}

inline CriterionResult determinism(std::uint64_t seed) {
  Checker chk;
  const auto root = scratch_dir("determinism");
  std::string note;
  try {
    Rng rng(seed);
    fs::create_directories(root / "wav");
    for (const char* name : {"clip_a", "clip_b", "clip_c"}) {
      Waveform w;
      w.samples.resize(32000);
      for (auto& s : w.samples) s = static_cast<float>(rng.uniform(-0.3, 0.3));
      save_wav(root / "wav" / (std::string(name) + ".wav"), w);
    }
    save_events(root / "gt.tsv", {{"clip_a.wav", "Speech", 0.2, 1.1}, {"clip_b.wav", "Dog", 0.5, 1.9},
                                  {"clip_c.wav", "Cat", 0.0, 0.7}});

    PipelineConfig cfg;
    cfg.seed = seed;
    auto run = [&](const fs::path& out, std::size_t jobs) {
      auto c = cfg;
      c.jobs = jobs;
      run_infer(collect_inputs({root / "wav"}, {".wav"}), out, c);
      EvalInputs in{out / "detections", root / "gt.tsv", out / "durations.tsv", {}, out / "per_class.tsv",
                    out / "roc.tsv"};
      write_file_atomic(out / "report.txt", format_report(run_eval(in, c)) + "\n");
    };
    run(root / "run1", 1);
    run(root / "run2", 2);
    const auto a = snapshot(root / "run1"), b = snapshot(root / "run2");
    chk.expect(a.size() > 50 && a.size() == b.size(), "artifact count " + std::to_string(a.size()) + " vs " +
                                                          std::to_string(b.size()));
    for (const auto& [name, bytes] : a) {
      auto it = b.find(name);
      chk.expect(it != b.end() && it->second == bytes, "artifact differs: " + name);
    }
    note = std::to_string(a.size()) + " artifacts identical across runs (jobs 1 vs 2)";

    const auto p = load_predictions(root / "run1" / "scores" / "clip_a.sedp");
    const auto avg = ensemble_average(std::vector<FramePredictions>(5, p));
    double worst = 0.0;
    for (std::size_t i = 0; i < p.strong.size(); ++i) worst = std::max(worst, double(std::abs(avg.strong[i] - p.strong[i])));
    for (std::size_t i = 0; i < p.weak.size(); ++i) worst = std::max(worst, double(std::abs(avg.weak[i] - p.weak[i])));
    chk.expect(worst <= 1e-7, "ensemble of identical predictions off by " + fmt(worst));
    note += ", ensemble max diff " + fmt(worst) + " (tol 1e-7)";
  } catch (const std::exception& e) {
    chk.expect(false, std::string("exception: ") + e.what());
  }
  std::error_code ec;
  fs::remove_all(root, ec);
  CriterionResult c{7, "Determinism", false, {}};
  c.passed = chk.ok();
  c.detail = chk.summary(note);
  return c;
}

inline CriterionResult serialization(std::uint64_t seed) {
  Rng rng(seed);
  Checker chk;

  const auto w = init_weights(ModelConfig{}, seed);
  const auto blob = encode_weights(w);
  const auto back = decode_weights(blob);
  bool same = back.size() == w.size();
  for (const auto& [name, t] : w) {
    auto it = back.find(name);
    same = same && it != back.end() && it->second.shape() == t.shape() && bits(it->second.data()) == bits(t.data());
  }
  chk.expect(same, "SEDW round trip not bitwise exact");
  chk.expect(encode_weights(back) == blob, "SEDW re-encode differs");

  LogMelSpectrogram s{Tensor<float>({8, 13}), 0.016f};
  for (auto& v : s.values.data()) v = static_cast<float>(rng.uniform(-30.0, 10.0));
  s.values[0] = -0.0f;
  s.values[1] = std::numeric_limits<float>::denorm_min();
  s.values[2] = std::numeric_limits<float>::quiet_NaN();
  const auto fblob = encode_features(s);
  const auto sback = decode_features(fblob);
  chk.expect(sback.values.shape() == s.values.shape() && bits(sback.values.data()) == bits(s.values.data()) &&
                 std::bit_cast<std::uint32_t>(sback.frame_hop_s) == std::bit_cast<std::uint32_t>(s.frame_hop_s),
             "SEDF round trip not bitwise exact");

  // Hand-built SEDW: "SEDW", version, count, then one [1] tensor named "x".
  auto le32 = [](std::uint32_t v) {
    std::string b(4, '\0');
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    return b;
  };
  const std::string tensor_x = std::string("\x01\x00x", 3) + "\x01" + le32(1) + le32(0x3f800000);
  const std::string good = "SEDW" + le32(1) + le32(1) + tensor_x;
  chk.expect(decode_weights(good).at("x")[0] == 1.0f, "hand-built SEDW");
  auto code = [](auto f) { return error_code_of(f); };
  chk.expect(code([&] { decode_weights("SEDX" + good.substr(4)); }) == ErrorCode::kBadMagic, "SEDW bad magic");
  chk.expect(code([&] { decode_weights("SEDW" + le32(2) + good.substr(8)); }) == ErrorCode::kUnknownVersion,
             "SEDW unknown version");
  chk.expect(code([&] { decode_weights(good.substr(0, good.size() - 2)); }) == ErrorCode::kTruncated,
             "SEDW truncated payload");
  chk.expect(code([&] { decode_weights(std::string("SED")); }) == ErrorCode::kBadMagic, "SEDW short magic");
  chk.expect(code([&] { decode_weights("SEDW" + le32(1) + le32(2) + tensor_x + tensor_x); }) ==
                 ErrorCode::kDuplicateName,
             "SEDW duplicate name");
  chk.expect(code([&] { decode_weights(good + "zz"); }) == ErrorCode::kParse, "SEDW trailing bytes");
  chk.expect(code([&] { decode_features("SEDX" + fblob.substr(4)); }) == ErrorCode::kBadMagic, "SEDF bad magic");
  chk.expect(code([&] { decode_features("SEDF" + le32(7) + fblob.substr(8)); }) == ErrorCode::kUnknownVersion,
             "SEDF unknown version");
  chk.expect(code([&] { decode_features(fblob.substr(0, fblob.size() - 1)); }) == ErrorCode::kTruncated,
             "SEDF truncated payload");

  CriterionResult c{8, "Serialization", false, {}};
  c.passed = chk.ok();
  c.detail = chk.summary(std::to_string(w.size()) + " weight tensors");
  return c;
}

}  // namespace selftest

/// Runs criteria 1-8 in order.
inline std::vector<CriterionResult> run_selftest(std::uint64_t seed = 2022,
                                                 const std::function<void(const CriterionResult&)>& on_result = {}) {
  using Fn = std::function<CriterionResult()>;
  const std::vector<Fn> checks{
      [&] { return selftest::fdy_gradients(seed); },     [&] { return selftest::fdy_degeneracy(seed); },
      [&] { return selftest::filter_augment(seed); },    [&] { return selftest::frontend_arithmetic(seed); },
      [] { return selftest::psds_oracle(); },            [&] { return selftest::postprocessing(seed); },
      [&] { return selftest::determinism(seed); },       [&] { return selftest::serialization(seed); }};
  std::vector<CriterionResult> out;
  for (std::size_t i = 0; i < checks.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    CriterionResult r;
    try {
      r = checks[i]();
    } catch (const std::exception& e) {
      r = {static_cast<int>(i + 1), "criterion " + std::to_string(i + 1), false, std::string("exception: ") + e.what()};
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (on_result) on_result(r);
    out.push_back(std::move(r));
  }
  return out;
}

inline std::string format_criterion(const CriterionResult& r) {
  char head[96];
  std::snprintf(head, sizeof head, "%s %d %s (%.1f s): ", r.passed ? "PASS" : "FAIL", r.id, r.name.c_str(), r.seconds);
  return head + r.detail;
}

}  // namespace sedkit

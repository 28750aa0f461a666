#pragma once

// End-to-end stages behind the command-line tool: feature extraction,
// augmentation preview, inference, post-processing, ensembling and
// evaluation. File-level work runs on up to `jobs` threads; outputs are
// gathered in input order so they never depend on the thread count.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "sedkit/audio.hpp"
#include "sedkit/augment.hpp"
#include "sedkit/config.hpp"
#include "sedkit/io.hpp"
#include "sedkit/model.hpp"
#include "sedkit/postproc.hpp"
#include "sedkit/psds.hpp"

namespace sedkit {

namespace fs = std::filesystem;

using WarnSink = std::function<void(const std::string&)>;

namespace detail {

template <typename F>
void parallel_for(std::size_t n, std::size_t jobs, F&& f) {
  jobs = std::min(jobs, n);
  if (jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t j = 0; j < jobs; ++j)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          f(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::string lower_ext(const fs::path& p) {
  auto e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return e;
}

inline void warn_to(const WarnSink& sink, const std::string& msg) {
  if (sink) sink(msg);
}

}  // namespace detail

/// Removes every file registered since construction unless commit() ran.
class OutputGuard {
 public:
  OutputGuard() = default;
  OutputGuard(const OutputGuard&) = delete;
  OutputGuard& operator=(const OutputGuard&) = delete;
  ~OutputGuard() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& p : written_) fs::remove(p, ec);
  }

  void write(const fs::path& path, std::string_view bytes) {
    write_file_atomic(path, bytes);
    written_.push_back(path);
  }
  void commit() { committed_ = true; }
  const std::vector<fs::path>& written() const { return written_; }

 private:
  std::vector<fs::path> written_;
  bool committed_ = false;
};

/// Expands directories to their files with one of `exts` (sorted); plain
/// files are kept as given. Output names derive from stems, so stems must
/// be unique.
inline std::vector<fs::path> collect_inputs(const std::vector<fs::path>& args, const std::vector<std::string>& exts) {
  std::vector<fs::path> out;
  for (const auto& a : args) {
    if (fs::is_directory(a)) {
      std::vector<fs::path> found;
      for (const auto& entry : fs::directory_iterator(a))
        if (entry.is_regular_file() && std::find(exts.begin(), exts.end(), detail::lower_ext(entry.path())) != exts.end())
          found.push_back(entry.path());
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      require(fs::is_regular_file(a), ErrorCode::kIo, "no such file: " + a.string());
      out.push_back(a);
    }
  }
  std::map<std::string, fs::path> stems;
  for (const auto& p : out) {
    auto [it, fresh] = stems.emplace(p.stem().string(), p);
    require(fresh, ErrorCode::kDuplicateName,
            "inputs " + it->second.string() + " and " + p.string() + " share the stem " + it->first);
  }
  return out;
}

struct ClipFeatures {
  std::string stem;
  LogMelSpectrogram mel;
  double duration_s = 0.0;
  std::string warning;
};

/// .wav is decoded and analysed; .sedf is read as stored log-mel features.
inline ClipFeatures load_clip(const fs::path& path, const FrontendConfig& fe) {
  ClipFeatures c;
  c.stem = path.stem().string();
  const auto ext = detail::lower_ext(path);
  if (ext == ".wav") {
    const auto w = load_wav(path);
    if (w.rate_warning)
      c.warning = path.string() + ": sample rate " + std::to_string(w.sample_rate) + " Hz, expected " +
                  std::to_string(fe.sample_rate) + " Hz; not resampled";
    auto local = fe;
    local.sample_rate = w.sample_rate;
    c.mel = extract_log_mel(w, local);
    c.duration_s = w.duration_s();
  } else if (ext == ".sedf") {
    c.mel = load_features(path);
    require(c.mel.n_mels() == fe.n_mels, ErrorCode::kShapeMismatch,
            path.string() + ": " + std::to_string(c.mel.n_mels()) + " mel bins, config expects " +
                std::to_string(fe.n_mels));
    c.duration_s = static_cast<double>(c.mel.n_frames()) * c.mel.frame_hop_s;
  } else {
    fail(ErrorCode::kUnsupportedCodec, path.string() + ": expected a .wav or .sedf input");
  }
  return c;
}

inline std::string threshold_file_name(double th) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "th_%.3f.tsv", th);
  return buf;
}

// ---------------------------------------------------------------------------

inline std::vector<fs::path> run_extract(const std::vector<fs::path>& inputs, const fs::path& out_dir,
                                         const PipelineConfig& cfg, const WarnSink& warn = {}) {
  fs::create_directories(out_dir);
  std::vector<std::string> blobs(inputs.size()), warnings(inputs.size());
  detail::parallel_for(inputs.size(), cfg.jobs, [&](std::size_t i) {
    require(detail::lower_ext(inputs[i]) == ".wav", ErrorCode::kUnsupportedCodec,
            inputs[i].string() + ": extract expects .wav input");
    auto clip = load_clip(inputs[i], cfg.frontend);
    warnings[i] = clip.warning;
    blobs[i] = encode_features(clip.mel);
  });
  OutputGuard guard;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!warnings[i].empty()) detail::warn_to(warn, warnings[i]);
    guard.write(out_dir / (inputs[i].stem().string() + ".sedf"), blobs[i]);
  }
  guard.commit();
  return guard.written();
}

struct AugmentResult {
  FilterConfig filter;
  fs::path features;
  fs::path filter_text;
};

/// Applies one sampled FilterAugment config (drawn from cfg.seed) to the
/// log-mel features of `input` and writes them with the config text beside.
inline AugmentResult run_augment(const fs::path& input, const fs::path& output, const PipelineConfig& cfg,
                                 const WarnSink& warn = {}) {
  auto clip = load_clip(input, cfg.frontend);
  if (!clip.warning.empty()) detail::warn_to(warn, clip.warning);
  Rng rng(cfg.seed);
  AugmentResult r;
  r.filter = sample_filter_config(rng, cfg.augment, clip.mel.n_mels());
  const LogMelSpectrogram aug{apply_filter_augment_log(clip.mel.values, r.filter), clip.mel.frame_hop_s};
  if (output.has_parent_path()) fs::create_directories(output.parent_path());
  r.features = output;
  r.filter_text = output;
  r.filter_text.replace_extension(".filter.txt");
  OutputGuard guard;
  guard.write(r.features, encode_features(aug));
  guard.write(r.filter_text, to_string(r.filter) + "\n");
  guard.commit();
  return r;
}

struct ScoredClip {
  std::string stem;
  FramePredictions pred;
  double duration_s = 0.0;  // 0 when unknown
};

/// Smoothing and thresholding for every clip: detections/th_<t>.tsv for the
/// evaluation grid plus events.tsv at the single operating threshold.
inline void write_detections(const std::vector<ScoredClip>& clips, const fs::path& out_dir, const PipelineConfig& cfg,
                             OutputGuard& guard) {
  const auto& table = cfg.postproc.classes;
  std::vector<Tensor<float>> smoothed(clips.size());
  detail::parallel_for(clips.size(), cfg.jobs, [&](std::size_t i) {
    require(clips[i].pred.n_classes() == table.size(), ErrorCode::kShapeMismatch,
            clips[i].stem + ": " + std::to_string(clips[i].pred.n_classes()) + " classes, table has " +
                std::to_string(table.size()));
    smoothed[i] = postprocess_scores(clips[i].pred, cfg.postproc.mode, table, cfg.postproc.mask_threshold);
  });
  auto events_at = [&](double th) {
    std::vector<Event> all;
    for (std::size_t i = 0; i < clips.size(); ++i) {
      auto ev = decode_events(smoothed[i], table.names, clips[i].stem + ".wav", static_cast<float>(th),
                              clips[i].pred.frame_duration_s, clips[i].duration_s);
      all.insert(all.end(), ev.begin(), ev.end());
    }
    return all;
  };
  fs::create_directories(out_dir / "detections");
  for (double th : cfg.eval.thresholds())
    guard.write(out_dir / "detections" / threshold_file_name(th), format_events(events_at(th)));
  guard.write(out_dir / "events.tsv", format_events(events_at(cfg.postproc.threshold)));
  std::map<std::string, double> durations;
  for (const auto& c : clips)
    if (c.duration_s > 0.0) durations[c.stem + ".wav"] = c.duration_s;
  if (!durations.empty()) guard.write(out_dir / "durations.tsv", format_durations(durations));
}

inline ModelWeights resolve_weights(const PipelineConfig& cfg) {
  auto w = cfg.weights.empty() ? init_weights(cfg.model, cfg.seed) : load_weights(cfg.weights);
  validate_weights(w, cfg.model);
  return w;
}

/// Consecutive clips with equal frame counts share one min-max normalization,
/// up to cfg.batch_size clips per batch.
inline std::vector<std::pair<std::size_t, std::size_t>> normalization_batches(const std::vector<ClipFeatures>& clips,
                                                                              std::size_t batch_size) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t i = 0;
  while (i < clips.size()) {
    std::size_t j = i + 1;
    while (j < clips.size() && j - i < batch_size && clips[j].mel.n_frames() == clips[i].mel.n_frames()) ++j;
    out.emplace_back(i, j);
    i = j;
  }
  return out;
}

struct InferSummary {
  std::size_t clips = 0;
  std::vector<fs::path> written;
};

/// out_dir/scores/<stem>.sedp, out_dir/detections/th_*.tsv, out_dir/events.tsv
/// and out_dir/durations.tsv.
inline InferSummary run_infer(const std::vector<fs::path>& inputs, const fs::path& out_dir, const PipelineConfig& cfg,
                              const WarnSink& warn = {}, const fs::path& save_weights_to = {}) {
  cfg.validate();
  require(!inputs.empty(), ErrorCode::kInvalidArgument, "infer: no input clips");
  const auto weights = resolve_weights(cfg);

  std::vector<ClipFeatures> clips(inputs.size());
  detail::parallel_for(inputs.size(), cfg.jobs, [&](std::size_t i) { clips[i] = load_clip(inputs[i], cfg.frontend); });
  for (const auto& c : clips)
    if (!c.warning.empty()) detail::warn_to(warn, c.warning);

  const auto batches = normalization_batches(clips, cfg.batch_size);
  std::vector<ScoredClip> scored(clips.size());
  detail::parallel_for(batches.size(), cfg.jobs, [&](std::size_t b) {
    const auto [lo, hi] = batches[b];
    const std::size_t M = clips[lo].mel.n_mels(), T = clips[lo].mel.n_frames();
    Tensor<float> batch({hi - lo, M, T});
    for (std::size_t i = lo; i < hi; ++i)
      std::copy(clips[i].mel.values.data().begin(), clips[i].mel.values.data().end(),
                batch.data().begin() + static_cast<std::ptrdiff_t>((i - lo) * M * T));
    std::vector<FramePredictions> preds;
    try {
      preds = model_forward(normalize_minmax(batch), weights, cfg.model, clips[lo].mel.frame_hop_s);
    } catch (const Error& e) {
      fail(e.code(), clips[lo].stem + ": " + e.what());
    }
    for (std::size_t i = lo; i < hi; ++i) scored[i] = {clips[i].stem, std::move(preds[i - lo]), clips[i].duration_s};
  });

  OutputGuard guard;
  fs::create_directories(out_dir / "scores");
  for (const auto& s : scored) guard.write(out_dir / "scores" / (s.stem + ".sedp"), encode_predictions(s.pred));
  write_detections(scored, out_dir, cfg, guard);
  if (!save_weights_to.empty()) guard.write(save_weights_to, encode_weights(weights));
  guard.commit();
  return {clips.size(), guard.written()};
}

/// Re-thresholds stored score dumps. Durations (filename -> seconds) clip
/// event offsets when given.
inline std::vector<fs::path> run_postprocess(const std::vector<fs::path>& score_files, const fs::path& out_dir,
                                             const PipelineConfig& cfg,
                                             const std::map<std::string, double>& durations = {}) {
  cfg.validate();
  std::vector<ScoredClip> clips(score_files.size());
  detail::parallel_for(score_files.size(), cfg.jobs, [&](std::size_t i) {
    clips[i].stem = score_files[i].stem().string();
    clips[i].pred = load_predictions(score_files[i]);
    if (auto it = durations.find(clips[i].stem + ".wav"); it != durations.end()) clips[i].duration_s = it->second;
  });
  OutputGuard guard;
  write_detections(clips, out_dir, cfg, guard);
  guard.commit();
  return guard.written();
}

/// Files in, one averaged file out; or directories in, one averaged dump per
/// shared stem written to `output` as a directory.
inline std::vector<fs::path> run_ensemble(const std::vector<fs::path>& inputs, const fs::path& output) {
  require(!inputs.empty(), ErrorCode::kInvalidArgument, "ensemble: no inputs");
  const bool dirs = fs::is_directory(inputs.front());
  for (const auto& p : inputs)
    require(fs::is_directory(p) == dirs, ErrorCode::kInvalidArgument, "ensemble: mix of files and directories");
  OutputGuard guard;
  if (!dirs) {
    std::vector<FramePredictions> preds;
    for (const auto& p : inputs) preds.push_back(load_predictions(p));
    if (output.has_parent_path()) fs::create_directories(output.parent_path());
    guard.write(output, encode_predictions(ensemble_average(preds)));
  } else {
    const auto first = collect_inputs({inputs.front()}, {".sedp"});
    require(!first.empty(), ErrorCode::kInvalidArgument, "ensemble: " + inputs.front().string() + " has no .sedp files");
    for (const auto& d : inputs)
      require(collect_inputs({d}, {".sedp"}).size() == first.size(), ErrorCode::kShapeMismatch,
              "ensemble: " + d.string() + " holds a different number of score files");
    fs::create_directories(output);
    for (const auto& f : first) {
      std::vector<FramePredictions> preds;
      for (const auto& d : inputs) {
        const auto p = d / f.filename();
        require(fs::is_regular_file(p), ErrorCode::kIo, "ensemble: missing " + p.string());
        preds.push_back(load_predictions(p));
      }
      guard.write(output / f.filename(), encode_predictions(ensemble_average(preds)));
    }
  }
  guard.commit();
  return guard.written();
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalInputs {
  fs::path detections_dir;   // th_<value>.tsv files
  fs::path ground_truth;
  fs::path durations;
  fs::path cbf1_detections;  // optional; default is the file closest to 0.5
  fs::path per_class_out;    // optional
  fs::path roc_out;          // optional
};

struct EvalReport {
  PsdsResult psds1;
  PsdsResult psds2;
  CollarF1Result cbf1;
  double cbf1_threshold = 0.0;
};

inline std::string format_report(const EvalReport& r) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "PSDS1=%.4f PSDS2=%.4f CBF1=%.3f", r.psds1.score, r.psds2.score, r.cbf1.macro_f1);
  return buf;
}

/// Reads every th_<value>.tsv under dir.
inline DetectionSets load_detection_sets(const fs::path& dir) {
  require(fs::is_directory(dir), ErrorCode::kIo, "not a directory: " + dir.string());
  DetectionSets sets;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (!entry.is_regular_file() || !name.starts_with("th_") || !name.ends_with(".tsv")) continue;
    const double th = detail::parse_number<double>(std::string_view(name).substr(3, name.size() - 7), name);
    require(sets.emplace(th, load_events(entry.path())).second, ErrorCode::kDuplicateName,
            dir.string() + ": two files for threshold " + name);
  }
  require(!sets.empty(), ErrorCode::kInvalidArgument, dir.string() + ": no th_<value>.tsv detection files");
  return sets;
}

inline EvalReport evaluate(const DetectionSets& sets, const std::vector<Event>& gts,
                           const std::map<std::string, double>& durations, const std::vector<Event>& cbf1_dets,
                           const PipelineConfig& cfg, const WarnSink& warn = {}) {
  const auto& classes = cfg.postproc.classes.names;
  auto check_clips = [&](const std::vector<Event>& events, const char* what) {
    for (const auto& e : events)
      require(durations.count(e.clip), ErrorCode::kInvalidArgument,
              std::string(what) + " clip " + e.clip + " missing from the duration table");
  };
  check_clips(gts, "ground-truth");
  for (const auto& [th, dets] : sets) check_clips(dets, "detection");
  double total = 0.0;
  for (const auto& [clip, d] : durations) total += d;

  EvalReport r;
  r.psds1 = evaluate_psds(sets, gts, classes, cfg.eval.psds1, total);
  r.psds2 = evaluate_psds(sets, gts, classes, cfg.eval.psds2, total);
  for (const auto& c : r.psds1.curve.excluded_classes)
    detail::warn_to(warn, "class " + c + " has no ground truth; excluded from PSDS");
  std::size_t unknown = 0;
  for (const auto& op : r.psds1.operating_points) unknown += op.counts.unknown_label_detections;
  if (unknown) detail::warn_to(warn, std::to_string(unknown) + " detections carry labels outside the class table");
  r.cbf1 = collar_f1(cbf1_dets, gts, classes, cfg.eval.collar);
  return r;
}

inline EvalReport run_eval(const EvalInputs& in, const PipelineConfig& cfg, const WarnSink& warn = {}) {
  cfg.validate();
  const auto sets = load_detection_sets(in.detections_dir);
  const auto gts = load_events(in.ground_truth);
  const auto durations = load_durations(in.durations);
  std::vector<Event> cbf1_dets;
  double cbf1_th = 0.0;
  if (!in.cbf1_detections.empty()) {
    cbf1_dets = load_events(in.cbf1_detections);
  } else {
    auto best = sets.begin();
    for (auto it = sets.begin(); it != sets.end(); ++it)
      if (std::abs(it->first - 0.5) < std::abs(best->first - 0.5)) best = it;
    cbf1_dets = best->second;
    cbf1_th = best->first;
  }
  auto r = evaluate(sets, gts, durations, cbf1_dets, cfg, warn);
  r.cbf1_threshold = cbf1_th;

  OutputGuard guard;
  if (!in.per_class_out.empty()) {
    std::string t = "event_label\tn_gt\ttp\tfp\tfn\tf1\n";
    for (const auto& c : r.cbf1.per_class)
      t += c.label + '\t' + std::to_string(c.n_gt) + '\t' + std::to_string(c.tp) + '\t' + std::to_string(c.fp) + '\t' +
           std::to_string(c.fn) + '\t' + detail::fixed3(c.f1) + '\n';
    guard.write(in.per_class_out, t);
  }
  if (!in.roc_out.empty()) {
    std::string t = "metric\tefpr\tetpr\n";
    char buf[96];
    for (auto [name, res] : {std::pair{"psds1", &r.psds1}, std::pair{"psds2", &r.psds2}})
      for (const auto& p : res->curve.points) {
        std::snprintf(buf, sizeof buf, "%s\t%.6f\t%.6f\n", name, p.efpr, p.etpr);
        t += buf;
      }
    guard.write(in.roc_out, t);
  }
  guard.commit();
  return r;
}

}  // namespace sedkit

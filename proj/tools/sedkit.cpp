// sedkit command-line tool.
//
//   sedkit [--config FILE] [--seed N] [--jobs N] [overrides] <command> ...
//
// Overrides may appear before or after the command name. Values starting with
// '-' need the '=' form, e.g. --db-range=-4.5:6.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "sedkit/sedkit.hpp"

namespace fs = std::filesystem;

namespace {

struct Override {
  const char* flag;
  const char* key;
  const char* help;
};

// Flag -> config key. Flags win over the config file.
const Override kOverrides[] = {
    {"--psds1-dtc", "eval.psds1.dtc", "PSDS1 detection tolerance criterion"},
    {"--psds1-gtc", "eval.psds1.gtc", "PSDS1 ground-truth intersection criterion"},
    {"--psds1-cttc", "eval.psds1.cttc", "PSDS1 cross-trigger tolerance criterion"},
    {"--psds1-alpha-ct", "eval.psds1.alpha_ct", "PSDS1 cross-trigger weight"},
    {"--psds1-alpha-st", "eval.psds1.alpha_st", "PSDS1 class-instability weight"},
    {"--psds2-dtc", "eval.psds2.dtc", "PSDS2 detection tolerance criterion"},
    {"--psds2-gtc", "eval.psds2.gtc", "PSDS2 ground-truth intersection criterion"},
    {"--psds2-cttc", "eval.psds2.cttc", "PSDS2 cross-trigger tolerance criterion"},
    {"--psds2-alpha-ct", "eval.psds2.alpha_ct", "PSDS2 cross-trigger weight"},
    {"--psds2-alpha-st", "eval.psds2.alpha_st", "PSDS2 class-instability weight"},
    {"--e-max", "eval.e_max", "maximum effective false positives per hour"},
    {"--n-thresholds", "eval.n_thresholds", "operating thresholds for PSDS"},
    {"--attention-dim", "model.attention_dim", "weak-head attention axis: class|time"},
    {"--weights", "model.weights", "SEDW weights file (default: seeded random init)"},
    {"--batch-size", "model.batch_size", "clips min-max normalized together"},
    {"--filter-kind", "augment.kind", "FilterAugment kind: step|linear"},
    {"--db-range", "augment.db_range", "FilterAugment gain range low:high in dB"},
    {"--bands", "augment.bands", "FilterAugment band count range min:max"},
    {"--min-bandwidth", "augment.min_bandwidth", "FilterAugment minimum band width in mel bins"},
    {"--mode", "postproc.mode", "post-processing: mask|weaksed"},
    {"--threshold", "postproc.threshold", "threshold for events.tsv"},
};

void setup_logging() {
  auto logger = spdlog::stderr_logger_mt("sedkit");
  logger->set_pattern("sedkit: %l: %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("SEDKIT_LOG")) {
    const std::string v = env;
    if (v == "error" || v == "warn" || v == "info" || v == "debug")
      spdlog::set_level(spdlog::level::from_str(v));
    else
      spdlog::warn("ignoring SEDKIT_LOG={} (expected error, warn, info or debug)", v);
  }
}

void warn(const std::string& msg) { spdlog::warn("{}", msg); }

std::vector<fs::path> to_paths(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }

}  // namespace

int main(int argc, char** argv) {
  setup_logging();

  CLI::App app{"Sound event detection toolkit: features, CRNN inference with frequency dynamic convolution, "
               "post-processing and PSDS evaluation."};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::string seed, jobs;
  app.add_option("--config", config_path, "INI-style configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "seed for weight init and augmentation (default 0)");
  app.add_option("--jobs", jobs, "worker threads for file-level work (default 1)");
  std::map<std::string, std::string> override_values;
  for (const auto& o : kOverrides) app.add_option(o.flag, override_values[o.key], o.help);

  // extract
  auto* extract = app.add_subcommand("extract", "WAV files or directories -> SEDF log-mel features");
  std::vector<std::string> ex_in;
  std::string ex_out;
  extract->add_option("inputs", ex_in, "WAV files or directories")->required();
  extract->add_option("-o,--out", ex_out, "output directory")->required();

  // augment
  auto* augment = app.add_subcommand("augment", "apply one sampled FilterAugment config to a clip's features");
  std::string au_in, au_out;
  augment->add_option("input", au_in, ".wav or .sedf input")->required()->check(CLI::ExistingFile);
  augment->add_option("-o,--out", au_out, "output .sedf (config text goes to <out>.filter.txt)")->required();

  // infer
  auto* infer = app.add_subcommand("infer", "features or WAVs -> SEDP scores and event tables");
  std::vector<std::string> in_in;
  std::string in_out, in_save;
  infer->add_option("inputs", in_in, ".wav/.sedf files or directories")->required();
  infer->add_option("-o,--out", in_out, "output directory")->required();
  infer->add_option("--save-weights", in_save, "also write the weights used (SEDW)");

  // postprocess
  auto* post = app.add_subcommand("postprocess", "SEDP scores -> event tables per threshold");
  std::vector<std::string> pp_in;
  std::string pp_out, pp_dur;
  post->add_option("inputs", pp_in, ".sedp files or directories")->required();
  post->add_option("-o,--out", pp_out, "output directory")->required();
  post->add_option("--durations", pp_dur, "filename<TAB>duration table for offset clipping")->check(CLI::ExistingFile);

  // ensemble
  auto* ens = app.add_subcommand("ensemble", "average SEDP score dumps");
  std::vector<std::string> en_in;
  std::string en_out;
  ens->add_option("inputs", en_in, ".sedp files, or directories of them")->required();
  ens->add_option("-o,--out", en_out, "output file (or directory for directory inputs)")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "event tables -> PSDS1, PSDS2 and collar-based F1");
  sedkit::EvalInputs ev;
  std::string ev_det, ev_gt, ev_dur, ev_cb, ev_pc, ev_roc;
  eval->add_option("--detections", ev_det, "directory of th_<value>.tsv files")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--ground-truth", ev_gt, "ground-truth event table")->required()->check(CLI::ExistingFile);
  eval->add_option("--durations", ev_dur, "filename<TAB>duration table")->required()->check(CLI::ExistingFile);
  eval->add_option("--cbf1-detections", ev_cb, "event table for CB-F1 (default: threshold closest to 0.5)")
      ->check(CLI::ExistingFile);
  eval->add_option("--per-class", ev_pc, "write per-class CB-F1 table");
  eval->add_option("--roc", ev_roc, "write effective ROC points");

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of the FDY convolution gradients");
  std::size_t gc_trials = 100;
  double gc_tol = 1e-4, gc_step = 1e-4;
  grad->add_option("--trials", gc_trials, "random instances")->check(CLI::PositiveNumber);
  grad->add_option("--tol", gc_tol, "maximum relative error")->check(CLI::PositiveNumber);
  grad->add_option("--step", gc_step, "central-difference step")->check(CLI::PositiveNumber);

  auto* self = app.add_subcommand("selftest", "run the built-in acceptance checks");

  CLI11_PARSE(app, argc, argv);

  try {
    sedkit::ConfigEntries entries;
    if (!config_path.empty()) entries = sedkit::load_config_file(config_path);
    if (!seed.empty()) sedkit::set_config(entries, "seed", seed, "--seed");
    if (!jobs.empty()) sedkit::set_config(entries, "jobs", jobs, "--jobs");
    for (const auto& o : kOverrides)
      if (app.count(o.flag)) sedkit::set_config(entries, o.key, override_values[o.key], o.flag);
    const auto cfg = sedkit::resolve_config(entries);
    spdlog::debug("seed {} jobs {} mode {}", cfg.seed, cfg.jobs, sedkit::to_string(cfg.postproc.mode));

    if (*extract) {
      const auto written = sedkit::run_extract(sedkit::collect_inputs(to_paths(ex_in), {".wav"}), ex_out, cfg, warn);
      spdlog::info("wrote {} feature files to {}", written.size(), ex_out);
    } else if (*augment) {
      const auto r = sedkit::run_augment(au_in, au_out, cfg, warn);
      spdlog::info("{} -> {} ({})", au_in, r.features.string(), sedkit::to_string(r.filter));
    } else if (*infer) {
      const auto inputs = sedkit::collect_inputs(to_paths(in_in), {".wav", ".sedf"});
      const auto s = sedkit::run_infer(inputs, in_out, cfg, warn, in_save);
      spdlog::info("scored {} clips into {}", s.clips, in_out);
    } else if (*post) {
      std::map<std::string, double> durations;
      if (!pp_dur.empty()) durations = sedkit::load_durations(pp_dur);
      const auto inputs = sedkit::collect_inputs(to_paths(pp_in), {".sedp"});
      sedkit::run_postprocess(inputs, pp_out, cfg, durations);
      spdlog::info("post-processed {} score files into {}", inputs.size(), pp_out);
    } else if (*ens) {
      const auto written = sedkit::run_ensemble(to_paths(en_in), en_out);
      spdlog::info("averaged {} inputs into {} file(s)", en_in.size(), written.size());
    } else if (*eval) {
      ev = {ev_det, ev_gt, ev_dur, ev_cb, ev_pc, ev_roc};
      const auto r = sedkit::run_eval(ev, cfg, warn);
      std::printf("%s\n", sedkit::format_report(r).c_str());
    } else if (*grad) {
      const auto r = sedkit::gradcheck_suite(cfg.seed, gc_trials, gc_tol, gc_step, cfg.model.n_basis,
                                             cfg.model.temperature);
      std::printf("gradcheck: %zu instances, %zu failed, worst relative error %.3g (tol %.3g)\n", r.trials,
                  r.failures, r.worst_rel_err, gc_tol);
      if (!r.passed()) {
        spdlog::error("{}", r.first_failure);
        return 1;
      }
    } else if (*self) {
      bool ok = true;
      sedkit::run_selftest(seed.empty() ? 2022 : cfg.seed, [&](const sedkit::CriterionResult& r) {
        std::printf("%s\n", sedkit::format_criterion(r).c_str());
        std::fflush(stdout);
        ok = ok && r.passed;
      });
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}

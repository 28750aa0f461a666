#pragma once

// Pipeline configuration: INI-style `key = value` lines under `[section]`
// headers. Entries are collected first (file, then command-line overrides)
// and resolved into a PipelineConfig in one pass, so every error can name the
// line or flag it came from.

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "sedkit/audio.hpp"
#include "sedkit/augment.hpp"
#include "sedkit/binary_io.hpp"
#include "sedkit/error.hpp"
#include "sedkit/model.hpp"
#include "sedkit/postproc.hpp"
#include "sedkit/psds.hpp"

namespace sedkit {

struct PostprocConfig {
  PostprocMode mode = PostprocMode::kMask;
  float threshold = 0.5f;       // single operating point for events.tsv
  float mask_threshold = 0.5f;  // clip-level cut for weak prediction masking
  ClassTable classes = ClassTable::dcase();
};

struct EvalConfig {
  PsdsParams psds1 = PsdsParams::psds1();
  PsdsParams psds2 = PsdsParams::psds2();
  std::size_t n_thresholds = 50;
  double threshold_min = 0.01;
  double threshold_max = 0.99;
  CollarParams collar;

  /// Evenly spaced operating thresholds, inclusive of both ends.
  std::vector<double> thresholds() const {
    std::vector<double> t;
    if (n_thresholds == 1) return {threshold_min};
    for (std::size_t i = 0; i < n_thresholds; ++i)
      t.push_back(threshold_min + (threshold_max - threshold_min) * static_cast<double>(i) /
                                      static_cast<double>(n_thresholds - 1));
    return t;
  }
};

struct PipelineConfig {
  FrontendConfig frontend;
  ModelConfig model;
  std::string weights;          // empty: seeded random initialization
  std::size_t batch_size = 1;   // clips normalized together
  FilterAugParams augment = FilterAugParams::step_default();
  PostprocConfig postproc;
  EvalConfig eval;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;

  void validate() const {
    frontend.validate();
    model.validate();
    require(model.n_mels == frontend.n_mels, ErrorCode::kInvalidArgument,
            "model.n_mels must equal frontend.n_mels");
    require(model.n_classes == postproc.classes.size(), ErrorCode::kInvalidArgument,
            "model class count must match the postproc class table");
    augment.validate(frontend.n_mels);
    postproc.classes.validate();
    require(postproc.threshold > 0.f && postproc.threshold < 1.f, ErrorCode::kInvalidArgument,
            "postproc.threshold must lie in (0, 1)");
    eval.psds1.validate();
    eval.psds2.validate();
    require(eval.n_thresholds >= 1 && eval.threshold_min > 0.0 && eval.threshold_max < 1.0 &&
                eval.threshold_min <= eval.threshold_max,
            ErrorCode::kInvalidArgument, "eval: thresholds must satisfy 0 < min <= max < 1");
    require(eval.n_thresholds == 1 || eval.threshold_min < eval.threshold_max, ErrorCode::kInvalidArgument,
            "eval: several thresholds need min < max");
    require(batch_size >= 1 && jobs >= 1, ErrorCode::kInvalidArgument, "batch_size and jobs must be >= 1");
  }
};

struct ConfigValue {
  std::string value;
  std::string origin;  // "file:line" or "--flag"
};

/// Raw `section.key` -> value map. Later sets win.
using ConfigEntries = std::map<std::string, ConfigValue>;

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> keys{
      "seed", "jobs",
      "frontend.n_fft", "frontend.hop", "frontend.n_mels", "frontend.sample_rate", "frontend.log_floor",
      "model.channels", "model.pooling", "model.gru_hidden", "model.gru_layers", "model.attention_dim",
      "model.n_basis", "model.temperature", "model.squeeze_ratio", "model.weights", "model.batch_size",
      "augment.kind", "augment.db_range", "augment.bands", "augment.min_bandwidth",
      "postproc.mode", "postproc.threshold", "postproc.mask_threshold", "postproc.classes",
      "postproc.median_lengths",
      "eval.psds1.dtc", "eval.psds1.gtc", "eval.psds1.cttc", "eval.psds1.alpha_ct", "eval.psds1.alpha_st",
      "eval.psds2.dtc", "eval.psds2.gtc", "eval.psds2.cttc", "eval.psds2.alpha_ct", "eval.psds2.alpha_st",
      "eval.e_max", "eval.n_thresholds", "eval.threshold_min", "eval.threshold_max",
      "eval.onset_collar", "eval.offset_collar", "eval.offset_collar_rate"};
  return keys;
}

// postproc.median.<Class> overrides one entry of the table.
inline bool is_known_config_key(const std::string& key) {
  return known_config_keys().count(key) || (key.starts_with("postproc.median.") && key.size() > 16);
}

}  // namespace detail

/// Adds one entry, rejecting unknown keys.
inline void set_config(ConfigEntries& entries, const std::string& key, std::string value, std::string origin) {
  require(detail::is_known_config_key(key), ErrorCode::kParse, origin + ": unknown key '" + key + "'");
  entries[key] = {std::move(value), std::move(origin)};
}

inline ConfigEntries parse_config_text(std::string_view text, const std::string& name = "config",
                                       ConfigEntries entries = {}) {
  std::string section;
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = detail::trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    const auto origin = name + ":" + std::to_string(line_no);
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    if (line.front() == '[') {
      require(line.back() == ']' && line.size() > 2, ErrorCode::kParse, origin + ": malformed section header");
      section = std::string(detail::trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    require(eq != std::string_view::npos, ErrorCode::kParse, origin + ": expected key = value");
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    require(!key.empty(), ErrorCode::kParse, origin + ": empty key");
    set_config(entries, section.empty() ? std::string(key) : section + "." + std::string(key), std::string(value),
               origin);
  }
  return entries;
}

inline ConfigEntries load_config_file(const std::filesystem::path& path, ConfigEntries entries = {}) {
  return parse_config_text(read_file(path), path.string(), std::move(entries));
}

namespace detail {

class ConfigResolver {
 public:
  explicit ConfigResolver(const ConfigEntries& e) : e_(e) {}

  const ConfigValue* find(const std::string& key) const {
    auto it = e_.find(key);
    return it == e_.end() ? nullptr : &it->second;
  }

  template <typename T>
  void number(const std::string& key, T& out) const {
    if (auto v = find(key)) out = parse_number<T>(v->value, where(key, *v));
  }

  void text(const std::string& key, std::string& out) const {
    if (auto v = find(key)) out = v->value;
  }

  template <typename T>
  std::vector<T> list(const std::string& key, const ConfigValue& v) const {
    std::vector<T> out;
    for (auto item : split(v.value, ',')) out.push_back(parse_number<T>(trim(item), where(key, v)));
    return out;
  }

  template <typename T>
  bool range(const std::string& key, T& lo, T& hi) const {
    auto v = find(key);
    if (!v) return false;
    const auto parts = split(v->value, ':');
    require(parts.size() == 2, ErrorCode::kParse, where(key, *v) + ": expected low:high");
    lo = parse_number<T>(trim(parts[0]), where(key, *v));
    hi = parse_number<T>(trim(parts[1]), where(key, *v));
    return true;
  }

  static std::string where(const std::string& key, const ConfigValue& v) { return v.origin + ": " + key; }

  // Runs f, prefixing any error with the key path and origin.
  template <typename F>
  void with_context(const std::string& key, F&& f) const {
    auto v = find(key);
    if (!v) return;
    try {
      f(*v);
    } catch (const Error& err) {
      fail(err.code(), where(key, *v) + ": " + err.what());
    }
  }

 private:
  const ConfigEntries& e_;
};

}  // namespace detail

/// Every default filled, file values applied, then validated.
inline PipelineConfig resolve_config(const ConfigEntries& entries) {
  PipelineConfig cfg;
  const detail::ConfigResolver r(entries);

  r.number("seed", cfg.seed);
  r.number("jobs", cfg.jobs);

  auto& fe = cfg.frontend;
  r.number("frontend.n_fft", fe.n_fft);
  r.number("frontend.hop", fe.hop);
  r.number("frontend.n_mels", fe.n_mels);
  r.number("frontend.sample_rate", fe.sample_rate);
  r.number("frontend.log_floor", fe.log_floor);

  auto& m = cfg.model;
  m.n_mels = fe.n_mels;
  if (auto v = r.find("model.channels")) m.channels = r.list<std::size_t>("model.channels", *v);
  r.with_context("model.pooling", [&](const ConfigValue& v) {
    m.pooling.clear();
    for (auto item : detail::split(v.value, ',')) {
      const auto fx = detail::split(detail::trim(item), 'x');
      require(fx.size() == 2, ErrorCode::kParse, "pooling entries look like 2x1 (freq x time)");
      m.pooling.push_back({detail::parse_number<std::size_t>(fx[0], "pooling"),
                           detail::parse_number<std::size_t>(fx[1], "pooling")});
    }
  });
  r.number("model.gru_hidden", m.gru_hidden);
  r.number("model.gru_layers", m.gru_layers);
  r.with_context("model.attention_dim", [&](const ConfigValue& v) { m.attention_dim = parse_attention_dim(v.value); });
  r.number("model.n_basis", m.n_basis);
  r.number("model.temperature", m.temperature);
  r.number("model.squeeze_ratio", m.squeeze_ratio);
  r.text("model.weights", cfg.weights);
  r.number("model.batch_size", cfg.batch_size);

  // Choosing a kind switches to that kind's defaults before explicit overrides.
  r.with_context("augment.kind",
                 [&](const ConfigValue& v) { cfg.augment = FilterAugParams::defaults_for(parse_filter_kind(v.value)); });
  r.range("augment.db_range", cfg.augment.db_low, cfg.augment.db_high);
  r.range("augment.bands", cfg.augment.min_bands, cfg.augment.max_bands);
  r.number("augment.min_bandwidth", cfg.augment.min_bandwidth);

  auto& pp = cfg.postproc;
  r.with_context("postproc.mode", [&](const ConfigValue& v) { pp.mode = parse_postproc_mode(v.value); });
  r.number("postproc.threshold", pp.threshold);
  r.number("postproc.mask_threshold", pp.mask_threshold);
  r.with_context("postproc.classes", [&](const ConfigValue& v) {
    pp.classes.names.clear();
    for (auto item : detail::split(v.value, ',')) pp.classes.names.emplace_back(detail::trim(item));
    // Unlisted lengths default to 5 unless median_lengths follows.
    pp.classes.median_lengths.assign(pp.classes.names.size(), 5);
  });
  if (auto v = r.find("postproc.median_lengths"))
    pp.classes.median_lengths = r.list<std::size_t>("postproc.median_lengths", *v);
  for (const auto& [key, v] : entries) {
    if (!key.starts_with("postproc.median.")) continue;
    r.with_context(key, [&](const ConfigValue& val) {
      const auto idx = pp.classes.index_of(key.substr(16));
      pp.classes.median_lengths.at(idx) = detail::parse_number<std::size_t>(val.value, "median length");
    });
  }
  m.n_classes = pp.classes.size();

  auto& ev = cfg.eval;
  for (auto [prefix, params] : {std::pair{"eval.psds1.", &ev.psds1}, std::pair{"eval.psds2.", &ev.psds2}}) {
    const std::string p = prefix;
    r.number(p + "dtc", params->dtc);
    r.number(p + "gtc", params->gtc);
    r.number(p + "cttc", params->cttc);
    r.number(p + "alpha_ct", params->alpha_ct);
    r.number(p + "alpha_st", params->alpha_st);
  }
  if (auto v = r.find("eval.e_max")) ev.psds1.e_max = ev.psds2.e_max = detail::parse_number<double>(v->value, r.where("eval.e_max", *v));
  r.number("eval.n_thresholds", ev.n_thresholds);
  r.number("eval.threshold_min", ev.threshold_min);
  r.number("eval.threshold_max", ev.threshold_max);
  r.number("eval.onset_collar", ev.collar.onset_collar);
  r.number("eval.offset_collar", ev.collar.offset_collar);
  r.number("eval.offset_collar_rate", ev.collar.offset_collar_rate);

  cfg.validate();
  return cfg;
}

inline PipelineConfig parse_config(std::string_view text, const std::string& name = "config") {
  return resolve_config(parse_config_text(text, name));
}

}  // namespace sedkit

#pragma once

// Event and duration tables (tab separated) and the SEDP score dump.

#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "sedkit/augment.hpp"
#include "sedkit/binary_io.hpp"
#include "sedkit/error.hpp"
#include "sedkit/model.hpp"
#include "sedkit/postproc.hpp"

namespace sedkit {

namespace detail {

inline std::vector<std::string_view> tsv_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    pos = nl + 1;
  }
  return lines;
}

inline double tsv_number(std::string_view s, const std::string& where) {
  return parse_number<double>(s, where);
}

inline std::string fixed3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

}  // namespace detail

inline constexpr std::string_view kEventHeader = "filename\tonset\toffset\tevent_label";

inline std::string format_events(const std::vector<Event>& events) {
  std::string out(kEventHeader);
  out += '\n';
  for (const auto& e : events)
    out += e.clip + '\t' + detail::fixed3(e.onset) + '\t' + detail::fixed3(e.offset) + '\t' + e.label + '\n';
  return out;
}

/// Header line optional. Rows with an empty label (weak-only annotations) are skipped.
inline std::vector<Event> parse_events(std::string_view text, const std::string& name = "events") {
  std::vector<Event> events;
  const auto lines = detail::tsv_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = lines[i];
    if (line.empty()) continue;
    if (i == 0 && line.substr(0, 8) == "filename") continue;
    const auto where = name + ":" + std::to_string(i + 1);
    const auto f = detail::split(line, '\t');
    if (f.size() == 4 && f[1].empty() && f[2].empty()) continue;
    require(f.size() == 4, ErrorCode::kParse, where + ": expected 4 tab-separated fields, got " + std::to_string(f.size()));
    Event e{std::string(f[0]), std::string(f[3]), detail::tsv_number(f[1], where), detail::tsv_number(f[2], where)};
    require(!e.label.empty(), ErrorCode::kParse, where + ": empty event label");
    require(e.offset > e.onset, ErrorCode::kParse, where + ": offset must exceed onset");
    events.push_back(std::move(e));
  }
  return events;
}

inline std::vector<Event> load_events(const std::filesystem::path& path) {
  return parse_events(read_file(path), path.string());
}

inline void save_events(const std::filesystem::path& path, const std::vector<Event>& events) {
  write_file_atomic(path, format_events(events));
}

/// filename -> duration in seconds.
inline std::map<std::string, double> parse_durations(std::string_view text, const std::string& name = "durations") {
  std::map<std::string, double> out;
  const auto lines = detail::tsv_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = lines[i];
    if (line.empty()) continue;
    if (i == 0 && line.substr(0, 8) == "filename") continue;
    const auto where = name + ":" + std::to_string(i + 1);
    const auto f = detail::split(line, '\t');
    require(f.size() == 2, ErrorCode::kParse, where + ": expected filename<TAB>duration");
    const double d = detail::tsv_number(f[1], where);
    require(d > 0.0, ErrorCode::kParse, where + ": duration must be > 0");
    require(out.emplace(std::string(f[0]), d).second, ErrorCode::kDuplicateName,
            where + ": " + std::string(f[0]) + " listed twice");
  }
  return out;
}

inline std::string format_durations(const std::map<std::string, double>& d) {
  std::string out = "filename\tduration\n";
  for (const auto& [k, v] : d) out += k + '\t' + detail::fixed3(v) + '\n';
  return out;
}

inline std::map<std::string, double> load_durations(const std::filesystem::path& path) {
  return parse_durations(read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// SEDP score dump: "SEDP", u32 version, u32 n_frames, u32 n_classes,
// f32 frame_duration_s, strong f32 [n_frames * n_classes], weak f32 [n_classes].

inline constexpr std::uint32_t kSedpVersion = 1;

inline std::string encode_predictions(const FramePredictions& p) {
  detail::check_rank(p.strong.shape(), 2, "encode_predictions", "strong");
  detail::check_axis(p.weak.size(), p.strong.dim(1), "encode_predictions", "weak length vs classes");
  ByteWriter out;
  out.bytes("SEDP");
  out.u32(kSedpVersion);
  out.u32(static_cast<std::uint32_t>(p.strong.dim(0)));
  out.u32(static_cast<std::uint32_t>(p.strong.dim(1)));
  out.f32(p.frame_duration_s);
  for (float v : p.strong.data()) out.f32(v);
  for (float v : p.weak.data()) out.f32(v);
  return out.take();
}

inline FramePredictions decode_predictions(std::string_view bytes, const std::string& name = "scores") {
  ByteReader rd(bytes, name);
  if (rd.remaining() < 4 || rd.bytes(4) != "SEDP") fail(ErrorCode::kBadMagic, name + ": expected SEDP magic");
  const auto version = rd.u32();
  if (version != kSedpVersion) fail(ErrorCode::kUnknownVersion, name + ": SEDP version " + std::to_string(version));
  const std::size_t T = rd.u32(), C = rd.u32();
  const float dt = rd.f32();
  require(T >= 1 && C >= 1, ErrorCode::kParse, name + ": zero extent");
  rd.need((T * C + C) * 4);
  FramePredictions p{Tensor<float>({T, C}), Tensor<float>({C}), dt};
  for (float& v : p.strong.data()) v = rd.f32();
  for (float& v : p.weak.data()) v = rd.f32();
  if (rd.remaining() != 0) fail(ErrorCode::kParse, name + ": trailing bytes");
  return p;
}

inline void save_predictions(const std::filesystem::path& path, const FramePredictions& p) {
  write_file_atomic(path, encode_predictions(p));
}

inline FramePredictions load_predictions(const std::filesystem::path& path) {
  return decode_predictions(read_file(path), path.string());
}

}  // namespace sedkit

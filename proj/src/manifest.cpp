#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "hlnet/data.hpp"
#include "hlnet/error.hpp"

namespace hlnet {

namespace fs = std::filesystem;
using nlohmann::json;

const char* split_name(Split s) { return s == Split::train ? "train" : "test"; }

namespace {

FormatError line_error(const std::string& what, std::size_t line) {
  return FormatError(what, line, FormatError::Where::line);
}

std::vector<Interval> parse_intervals(const json& j, std::size_t line) {
  if (!j.is_array()) throw line_error("\"intervals\" must be an array", line);
  std::vector<Interval> out;
  for (const json& item : j) {
    if (!item.is_array() || item.size() != 2 || !item[0].is_number_unsigned() ||
        !item[1].is_number_unsigned()) {
      throw line_error("each interval must be [start, end] with non-negative integers", line);
    }
    Interval iv{item[0].get<std::uint64_t>(), item[1].get<std::uint64_t>()};
    if (iv.end <= iv.start) throw line_error("empty or reversed interval", line);
    if (!out.empty() && iv.start < out.back().end) {
      throw line_error("intervals must be sorted and non-overlapping", line);
    }
    out.push_back(iv);
  }
  return out;
}

std::string resolve(const fs::path& base, const std::string& rel) {
  fs::path p(rel);
  return (p.is_absolute() ? p : base / p).lexically_normal().string();
}

ManifestEntry parse_entry(const nlohmann::json& j, const fs::path& base, std::size_t line);

}  // namespace

std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path + "'");
  const fs::path base = fs::path(path).parent_path();
  std::vector<ManifestEntry> entries;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw line_error(std::string("malformed JSON: ") + e.what(), line);
    }
    if (!j.is_object()) throw line_error("manifest line must be a JSON object", line);
    try {
      entries.push_back(parse_entry(j, base, line));
    } catch (const json::exception& err) {
      throw line_error(std::string("bad field type: ") + err.what(), line);
    }
  }
  return entries;
}

namespace {

ManifestEntry parse_entry(const json& j, const fs::path& base, std::size_t line) {
  ManifestEntry e;
  e.line = line;
  if (!j.contains("id") || !j["id"].is_string() || j["id"].get<std::string>().empty())
    throw line_error("missing string \"id\"", line);
  e.id = j["id"].get<std::string>();
  if (!j.contains("label") || !j["label"].is_number_integer())
    throw line_error("missing integer \"label\"", line);
  const auto label = j["label"].get<long long>();
  if (label != 0 && label != 1) throw line_error("\"label\" must be 0 or 1", line);
  e.label = static_cast<int>(label);
  const std::string split = j.value("split", std::string("train"));
  if (split == "train") {
    e.split = Split::train;
  } else if (split == "test") {
    e.split = Split::test;
  } else {
    throw line_error("\"split\" must be train or test", line);
  }
  for (const char* key : {"visual", "audio"}) {
    if (!j.contains(key)) continue;
    if (!j[key].is_string()) throw line_error(std::string("\"") + key + "\" must be a path", line);
    (std::string(key) == "visual" ? e.visual_path : e.audio_path) =
        resolve(base, j[key].get<std::string>());
  }
  if (e.visual_path.empty() && e.audio_path.empty())
    throw line_error("record names no feature file", line);
  if (j.contains("intervals")) e.intervals = parse_intervals(j["intervals"], line);

  std::uint32_t snippet_len = 0;
  for (const std::string* p : {&e.visual_path, &e.audio_path}) {
    if (p->empty()) continue;
    if (!fs::exists(*p)) throw line_error("missing feature file '" + *p + "'", line);
    FeatureHeader h{};
    try {
      h = read_feature_header(*p);
    } catch (const FormatError& err) {
      throw line_error("bad feature file '" + *p + "': " + err.what(), line);
    }
    if (e.t_prime != 0 && h.t_prime != e.t_prime) {
      throw line_error("visual and audio features disagree on T' (" + std::to_string(e.t_prime) +
                           " vs " + std::to_string(h.t_prime) + ")",
                       line);
    }
    e.t_prime = h.t_prime;
    snippet_len = h.snippet_len;
  }
  if (j.contains("frames")) {
    if (!j["frames"].is_number_unsigned()) throw line_error("\"frames\" must be a count", line);
    e.total_frames = j["frames"].get<std::uint64_t>();
  } else {
    e.total_frames = static_cast<std::uint64_t>(e.t_prime) * snippet_len;
  }
  if (!e.intervals.empty() && e.intervals.back().end > e.total_frames)
    throw line_error("interval extends past the last frame", line);
  return e;
}

}  // namespace

VideoRecord load_video(const ManifestEntry& entry) {
  VideoRecord v;
  v.id = entry.id;
  v.weak_label = entry.label;
  v.split = entry.split;
  v.total_frames = entry.total_frames;
  // Weak supervision: training records never expose frame-level truth.
  if (entry.split == Split::test) v.gt_intervals = entry.intervals;
  if (!entry.visual_path.empty()) v.visual = read_features(entry.visual_path);
  if (!entry.audio_path.empty()) v.audio = read_features(entry.audio_path);
  v.visual.modality = FeatureModality::visual;
  v.audio.modality = FeatureModality::audio;
  return v;
}

std::vector<VideoRecord> load_split(const std::vector<ManifestEntry>& entries, Split split) {
  std::vector<VideoRecord> out;
  for (const auto& e : entries)
    if (e.split == split) out.push_back(load_video(e));
  return out;
}

std::string manifest_line(const VideoRecord& video, const std::string& visual_rel,
                          const std::string& audio_rel) {
  json j;
  j["id"] = video.id;
  if (!visual_rel.empty()) j["visual"] = visual_rel;
  if (!audio_rel.empty()) j["audio"] = audio_rel;
  j["label"] = video.weak_label;
  j["split"] = split_name(video.split);
  json iv = json::array();
  for (const Interval& i : video.gt_intervals) iv.push_back({i.start, i.end});
  j["intervals"] = iv;
  j["frames"] = video.total_frames;
  return j.dump();
}

}  // namespace hlnet

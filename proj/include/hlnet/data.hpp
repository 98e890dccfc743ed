#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "hlnet/tensor.hpp"

namespace hlnet {

enum class FeatureModality : std::uint8_t { visual = 0, audio = 1 };

struct FeatureSequence {
  FeatureModality modality = FeatureModality::visual;
  Matrix values;  // t_prime × dim
  std::uint32_t fps = 24;
  std::uint32_t snippet_len = 16;

  std::size_t t_prime() const { return values.rows(); }
  std::size_t dim() const { return values.cols(); }
};

/// Half-open frame range [start, end).
struct Interval {
  std::uint64_t start = 0;
  std::uint64_t end = 0;
  friend bool operator==(const Interval&, const Interval&) = default;
};

enum class Split { train, test };
const char* split_name(Split s);

struct VideoRecord {
  std::string id;
  FeatureSequence visual;
  FeatureSequence audio;
  int weak_label = 0;
  std::vector<Interval> gt_intervals;  // frame-level truth; meaningful for the test split
  Split split = Split::train;
  std::uint64_t total_frames = 0;

  std::size_t t_prime() const {
    return visual.t_prime() != 0 ? visual.t_prime() : audio.t_prime();
  }
};

// --- XDVF container --------------------------------------------------------
// magic "XDVF", u32 version, u8 modality, u32 t_prime, u32 dim, u32 fps,
// u32 snippet_len, then t_prime×dim little-endian f32 values (row-major).

inline constexpr std::uint32_t kFeatureVersion = 1;
inline constexpr std::size_t kFeatureHeaderSize = 25;

struct FeatureHeader {
  FeatureModality modality;
  std::uint32_t t_prime;
  std::uint32_t dim;
  std::uint32_t fps;
  std::uint32_t snippet_len;
};

std::string encode_features(const FeatureSequence& fs);
/// Validates the header and the declared payload size before allocating.
FeatureSequence decode_features(std::string_view bytes);
FeatureHeader decode_feature_header(std::string_view bytes);

void write_features(const FeatureSequence& fs, const std::string& path);
FeatureSequence read_features(const std::string& path);
/// Header only; also checks the file size matches the declared payload.
FeatureHeader read_feature_header(const std::string& path);

// --- Manifest --------------------------------------------------------------
// One JSON object per line:
//   {"id": "...", "visual": "rel/path.xdvf", "audio": "rel/path.xdvf",
//    "label": 0|1, "split": "train"|"test", "intervals": [[s, e], ...],
//    "frames": N}
// Paths are relative to the manifest's directory. "visual" or "audio" may be
// omitted for unimodal corpora; "intervals" and "frames" are optional.

struct ManifestEntry {
  std::string id;
  std::string visual_path;  // resolved; empty when absent
  std::string audio_path;
  int label = 0;
  Split split = Split::train;
  std::vector<Interval> intervals;
  std::uint64_t total_frames = 0;
  std::size_t t_prime = 0;
  std::size_t line = 0;
};

/// Parses and verifies every line: referenced files exist and agree on T'.
/// Errors are FormatError carrying the 1-based line number.
std::vector<ManifestEntry> load_manifest(const std::string& path);
VideoRecord load_video(const ManifestEntry& entry);
std::vector<VideoRecord> load_split(const std::vector<ManifestEntry>& entries, Split split);

/// One JSON line for a record whose features live at the given relative paths.
std::string manifest_line(const VideoRecord& video, const std::string& visual_rel,
                          const std::string& audio_rel);

// --- Synthetic corpus ------------------------------------------------------

struct CorpusSpec {
  std::size_t train_videos = 300;
  std::size_t test_videos = 100;
  double positive_fraction = 0.5;
  std::size_t min_snippets = 24;
  std::size_t max_snippets = 64;
  std::size_t visual_dim = 64;
  std::size_t audio_dim = 32;
  /// Fraction of events whose signal is present only in the audio block.
  double audio_dominant = 0.4;
  /// Fraction of events whose signal is present only in the visual block.
  double visual_dominant = 0.3;
  std::size_t min_event_snippets = 4;
  std::size_t max_event_snippets = 16;
  std::size_t max_events = 3;
  double signal = 1.6;
  std::uint32_t fps = 24;
  std::uint32_t snippet_len = 16;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Number of distinct event signatures planted by the generator.
inline constexpr std::size_t kEventClasses = 4;

/// Deterministic per (spec, seed): each video draws from its own stream keyed
/// by (seed, index), so videos are independent of generation order.
std::vector<VideoRecord> generate_corpus(const CorpusSpec& spec);
VideoRecord generate_video(const CorpusSpec& spec, std::size_t index);

/// Per-snippet 0/1 truth derived from frame intervals (a snippet counts when
/// its first frame lies inside an interval).
std::vector<int> snippet_labels(const VideoRecord& video);

/// Writes features/<id>.{visual,audio}.xdvf and manifest.jsonl under dir.
void write_corpus(const std::vector<VideoRecord>& videos, const std::string& dir);

}  // namespace hlnet

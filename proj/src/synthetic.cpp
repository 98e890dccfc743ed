#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "hlnet/data.hpp"
#include "hlnet/error.hpp"

namespace hlnet {

namespace {

// Each event class lights up a fixed sparse set of channels in each block.
constexpr std::size_t kVisualSignatureDims = 8;
constexpr std::size_t kAudioSignatureDims = 6;
constexpr double kSceneWeight = 0.5;
constexpr double kNoiseMean = 0.6;
constexpr double kDistractorRate = 0.3;
constexpr double kDistractorScale = 0.45;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double exponential(std::mt19937_64& rng, double mean) {
  return -std::log1p(-uniform01(rng)) * mean;
}

std::size_t uniform_int(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(hi - lo + 1));
}

struct Signatures {
  std::array<std::vector<std::size_t>, kEventClasses> visual;
  std::array<std::vector<std::size_t>, kEventClasses> audio;
};

std::vector<std::size_t> pick_dims(std::mt19937_64& rng, std::size_t dim, std::size_t count) {
  std::vector<std::size_t> all(dim);
  std::iota(all.begin(), all.end(), std::size_t{0});
  count = std::min(count, dim);
  for (std::size_t i = 0; i < count; ++i) std::swap(all[i], all[uniform_int(rng, i, dim - 1)]);
  all.resize(count);
  std::sort(all.begin(), all.end());
  return all;
}

Signatures make_signatures(const CorpusSpec& spec) {
  std::mt19937_64 rng(splitmix(spec.seed ^ 0x5167a7u));
  Signatures s;
  for (std::size_t c = 0; c < kEventClasses; ++c) {
    s.visual[c] = pick_dims(rng, spec.visual_dim, kVisualSignatureDims);
    s.audio[c] = pick_dims(rng, spec.audio_dim, kAudioSignatureDims);
  }
  return s;
}

enum class Dominance { audio, visual, both };

void add_bump(Matrix& block, const std::vector<std::size_t>& dims, std::size_t from,
              std::size_t to, double amplitude, std::mt19937_64& rng) {
  const std::size_t len = to - from;
  for (std::size_t t = from; t < to; ++t) {
    // Soft onset and offset; interior snippets jitter around full strength.
    double envelope = 0.7 + 0.6 * uniform01(rng);
    if (len > 2 && (t == from || t + 1 == to)) envelope *= 0.6;
    for (std::size_t d : dims) block(t, d) += amplitude * envelope;
  }
}

bool is_positive(std::size_t index_in_split, double fraction) {
  const auto j = static_cast<double>(index_in_split);
  return std::floor((j + 1.0) * fraction) > std::floor(j * fraction);
}

}  // namespace

void CorpusSpec::validate() const {
  if (train_videos + test_videos == 0) throw ArgumentError("corpus: zero videos requested");
  if (!(positive_fraction >= 0.0 && positive_fraction <= 1.0))
    throw ArgumentError("corpus: positive fraction must lie in [0, 1]");
  if (min_snippets == 0 || max_snippets < min_snippets)
    throw ArgumentError("corpus: invalid snippet length range");
  if (visual_dim < 2 || audio_dim < 2) throw ArgumentError("corpus: feature dims must be >= 2");
  if (audio_dominant < 0.0 || visual_dominant < 0.0 || audio_dominant + visual_dominant > 1.0)
    throw ArgumentError("corpus: dominance fractions must be non-negative and sum to <= 1");
  if (min_event_snippets == 0 || max_event_snippets < min_event_snippets)
    throw ArgumentError("corpus: invalid event length range");
  if (positive_fraction > 0.0 && (max_events == 0 || !(signal > 0.0)))
    throw ArgumentError("corpus: positives requested but no event can be planted");
  if (fps == 0 || snippet_len == 0) throw ArgumentError("corpus: fps and snippet_len must be positive");
}

VideoRecord generate_video(const CorpusSpec& spec, std::size_t index) {
  const Signatures sig = make_signatures(spec);

  std::mt19937_64 rng(splitmix(spec.seed * 0x100000001b3ULL + index));
  VideoRecord v;
  char id[32];
  std::snprintf(id, sizeof id, "vid%05zu", index);
  v.id = id;
  const bool train = index < spec.train_videos;
  v.split = train ? Split::train : Split::test;
  const std::size_t index_in_split = train ? index : index - spec.train_videos;
  v.weak_label = is_positive(index_in_split, spec.positive_fraction) ? 1 : 0;

  const std::size_t len = uniform_int(rng, spec.min_snippets, spec.max_snippets);
  v.total_frames = static_cast<std::uint64_t>(len) * spec.snippet_len;

  Matrix visual(len, spec.visual_dim);
  Matrix audio(len, spec.audio_dim);
  std::vector<double> scene_v(spec.visual_dim), scene_a(spec.audio_dim);
  for (double& s : scene_v) s = exponential(rng, 1.0);
  for (double& s : scene_a) s = exponential(rng, 1.0);
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t d = 0; d < spec.visual_dim; ++d)
      visual(t, d) = kSceneWeight * scene_v[d] + exponential(rng, kNoiseMean);
    for (std::size_t d = 0; d < spec.audio_dim; ++d)
      audio(t, d) = kSceneWeight * scene_a[d] + exponential(rng, kNoiseMean);
  }

  // Distractors: weak single-block bumps present in either class.
  if (uniform01(rng) < kDistractorRate) {
    const std::size_t c = uniform_int(rng, 0, kEventClasses - 1);
    const std::size_t dlen = std::min(len, uniform_int(rng, 2, 6));
    const std::size_t start = uniform_int(rng, 0, len - dlen);
    const double amp = kDistractorScale * spec.signal;
    if (uniform01(rng) < 0.5) {
      add_bump(visual, sig.visual[c], start, start + dlen, amp, rng);
    } else {
      add_bump(audio, sig.audio[c], start, start + dlen, amp, rng);
    }
  }

  if (v.weak_label == 1) {
    // Top-K needs at least floor(T'/16)+1 event snippets.
    const std::size_t k_needed = std::min(len, len / 16 + 1);
    std::size_t n_events = uniform_int(rng, 1, spec.max_events);
    std::vector<std::size_t> lengths;
    for (std::size_t e = 0; e < n_events; ++e)
      lengths.push_back(uniform_int(rng, spec.min_event_snippets, spec.max_event_snippets));
    lengths[0] = std::max(lengths[0], k_needed);
    // Drop trailing events (then shrink) until everything fits with one-snippet gaps.
    auto footprint = [&] {
      return std::accumulate(lengths.begin(), lengths.end(), std::size_t{0}) + lengths.size() - 1;
    };
    while (lengths.size() > 1 && footprint() > len) lengths.pop_back();
    lengths[0] = std::min(lengths[0], len);

    const std::size_t slack = len - footprint();
    std::vector<std::size_t> cuts(lengths.size());
    for (auto& c : cuts) c = uniform_int(rng, 0, slack);
    std::sort(cuts.begin(), cuts.end());
    std::size_t cursor = 0;
    std::size_t used_slack = 0;
    for (std::size_t e = 0; e < lengths.size(); ++e) {
      cursor += cuts[e] - used_slack;
      used_slack = cuts[e];
      const std::size_t from = cursor;
      const std::size_t to = from + lengths[e];
      cursor = to + 1;

      const std::size_t cls = uniform_int(rng, 0, kEventClasses - 1);
      const double u = uniform01(rng);
      const Dominance dom = u < spec.audio_dominant ? Dominance::audio
                            : u < spec.audio_dominant + spec.visual_dominant
                                ? Dominance::visual
                                : Dominance::both;
      const double amp = spec.signal * (0.6 + 0.8 * uniform01(rng));
      if (dom != Dominance::audio) add_bump(visual, sig.visual[cls], from, to, amp, rng);
      if (dom != Dominance::visual) add_bump(audio, sig.audio[cls], from, to, amp, rng);
      v.gt_intervals.push_back(
          {static_cast<std::uint64_t>(from) * spec.snippet_len,
           static_cast<std::uint64_t>(to) * spec.snippet_len});
    }
  }

  // Store exactly what the f32 container can hold.
  for (double& x : visual.data()) x = static_cast<float>(x);
  for (double& x : audio.data()) x = static_cast<float>(x);
  v.visual = FeatureSequence{FeatureModality::visual, std::move(visual), spec.fps, spec.snippet_len};
  v.audio = FeatureSequence{FeatureModality::audio, std::move(audio), spec.fps, spec.snippet_len};
  return v;
}

std::vector<VideoRecord> generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  std::vector<VideoRecord> out;
  const std::size_t n = spec.train_videos + spec.test_videos;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_video(spec, i));
  return out;
}

std::vector<int> snippet_labels(const VideoRecord& video) {
  const std::size_t len = video.t_prime();
  const std::uint32_t snippet =
      video.visual.t_prime() != 0 ? video.visual.snippet_len : video.audio.snippet_len;
  std::vector<int> labels(len, 0);
  for (const Interval& iv : video.gt_intervals) {
    for (std::size_t t = 0; t < len; ++t) {
      const std::uint64_t first = static_cast<std::uint64_t>(t) * snippet;
      if (first >= iv.start && first < iv.end) labels[t] = 1;
    }
  }
  return labels;
}

void write_corpus(const std::vector<VideoRecord>& videos, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "features");
  std::ofstream manifest(fs::path(dir) / "manifest.jsonl", std::ios::binary | std::ios::trunc);
  if (!manifest) throw IoError("cannot write manifest under '" + dir + "'");
  for (const VideoRecord& v : videos) {
    const std::string vrel = "features/" + v.id + ".visual.xdvf";
    const std::string arel = "features/" + v.id + ".audio.xdvf";
    write_features(v.visual, (fs::path(dir) / vrel).string());
    write_features(v.audio, (fs::path(dir) / arel).string());
    manifest << manifest_line(v, vrel, arel) << '\n';
  }
  if (!manifest) throw IoError("short write to manifest under '" + dir + "'");
}

}  // namespace hlnet

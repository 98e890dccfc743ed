#include "hlnet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "hlnet/error.hpp"

namespace hlnet {

void FrameScores::append(const FrameScores& other) {
  scores.insert(scores.end(), other.scores.begin(), other.scores.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
}

std::size_t FrameScores::positives() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
}

namespace {

void check(const FrameScores& fs) {
  if (fs.scores.size() != fs.labels.size()) {
    throw ShapeError("frame scores and labels differ in length");
  }
  for (double s : fs.scores)
    if (!std::isfinite(s)) throw ArgumentError("non-finite frame score");
  for (int l : fs.labels)
    if (l != 0 && l != 1) throw ArgumentError("frame labels must be 0 or 1");
}

std::vector<std::size_t> descending_order(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

std::vector<double> expand_to_frames(std::span<const double> snippet_scores,
                                     std::uint32_t snippet_len, std::uint64_t total_frames) {
  const std::uint64_t t = snippet_scores.size();
  if (t == 0) throw ArgumentError("expand_to_frames: no snippets");
  if (snippet_len == 0) throw ArgumentError("expand_to_frames: snippet_len must be positive");
  if (total_frames <= (t - 1) * snippet_len || total_frames >= (t + 1) * snippet_len) {
    throw ArgumentError("expand_to_frames: " + std::to_string(total_frames) +
                        " frames cannot be covered by " + std::to_string(t) + " snippets of " +
                        std::to_string(snippet_len));
  }
  std::vector<double> out(total_frames);
  for (std::uint64_t f = 0; f < total_frames; ++f) {
    out[f] = snippet_scores[std::min<std::uint64_t>(f / snippet_len, t - 1)];
  }
  return out;
}

std::vector<int> frame_labels(const std::vector<Interval>& intervals, std::uint64_t total_frames) {
  std::vector<int> out(total_frames, 0);
  for (const Interval& iv : intervals) {
    for (std::uint64_t f = iv.start; f < std::min(iv.end, total_frames); ++f) out[f] = 1;
  }
  return out;
}

CurveReport average_precision(const FrameScores& fs) {
  check(fs);
  CurveReport r;
  r.n_frames = fs.scores.size();
  r.n_positive = fs.positives();
  if (r.n_positive == 0) throw ArgumentError("average_precision: no positive frames");

  const auto order = descending_order(fs.scores);
  const double p = static_cast<double>(r.n_positive);
  std::size_t tp = 0;
  double sum = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const std::size_t i = order[rank];
    if (fs.labels[i] == 1) {
      ++tp;
      sum += static_cast<double>(tp) / static_cast<double>(rank + 1);
    }
    const bool group_end =
        rank + 1 == order.size() || fs.scores[order[rank + 1]] != fs.scores[i];
    if (group_end) {
      r.points.push_back({fs.scores[i], static_cast<double>(tp) / static_cast<double>(rank + 1),
                          static_cast<double>(tp) / p});
    }
  }
  r.ap = sum / p;
  if (r.n_positive < r.n_frames) r.auc = roc_auc(fs);
  return r;
}

double roc_auc(const FrameScores& fs) {
  check(fs);
  const std::size_t n = fs.scores.size();
  const std::size_t pos = fs.positives();
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw ArgumentError("roc_auc: needs both positive and negative frames");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return fs.scores[a] < fs.scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t lo = 0; lo < n;) {
    std::size_t hi = lo + 1;
    while (hi < n && fs.scores[order[hi]] == fs.scores[order[lo]]) ++hi;
    // Ranks lo+1..hi share their average.
    const double midrank = 0.5 * static_cast<double>(lo + 1 + hi);
    for (std::size_t k = lo; k < hi; ++k)
      if (fs.labels[order[k]] == 1) rank_sum += midrank;
    lo = hi;
  }
  const double p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

const char* head_name(Head h) { return h == Head::offline ? "offline" : "online"; }

FrameScores collect_frame_scores(const HLNetParams& params, std::span<const VideoRecord> videos,
                                 Head head, std::size_t threads) {
  if (head == Head::offline && !params.has_offline_head()) {
    throw ArgumentError("offline evaluation needs the full set of weights");
  }
  if (head == Head::online && !params.has_online_head()) {
    throw ArgumentError("online evaluation needs fusion and approximator weights");
  }
  for (const VideoRecord& v : videos) {
    if (v.split != Split::test) {
      throw ArgumentError("video '" + v.id + "' has no frame-level ground truth (train split)");
    }
    if (v.total_frames == 0) throw ArgumentError("video '" + v.id + "' has no frame count");
  }

  std::vector<FrameScores> per_video(videos.size());
  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const VideoRecord& v = videos[i];
      const Scores s = predict(params, v.visual.values, v.audio.values, head == Head::offline);
      const std::uint32_t snippet =
          v.visual.t_prime() != 0 ? v.visual.snippet_len : v.audio.snippet_len;
      per_video[i].scores = expand_to_frames(head == Head::offline ? s.offline : s.online,
                                             snippet, v.total_frames);
      per_video[i].labels = frame_labels(v.gt_intervals, v.total_frames);
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, videos.size()));
  if (workers == 1) {
    work(0, videos.size());
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          work(videos.size() * w / workers, videos.size() * (w + 1) / workers);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  FrameScores pooled;
  for (const auto& fs : per_video) pooled.append(fs);
  return pooled;
}

CurveReport evaluate(const HLNetParams& params, std::span<const VideoRecord> videos, Head head,
                     std::size_t threads) {
  return average_precision(collect_frame_scores(params, videos, head, threads));
}

double mean_head_gap(const HLNetParams& params, std::span<const VideoRecord> videos) {
  double total = 0.0;
  std::size_t count = 0;
  for (const VideoRecord& v : videos) {
    const Scores s = predict(params, v.visual.values, v.audio.values, true);
    for (std::size_t i = 0; i < s.online.size(); ++i) total += std::abs(s.offline[i] - s.online[i]);
    count += s.online.size();
  }
  if (count == 0) throw ArgumentError("mean_head_gap: empty test set");
  return total / static_cast<double>(count);
}

std::string curve_csv(const CurveReport& report) {
  std::string out = "threshold,precision,recall\n";
  char buf[96];
  for (const CurvePoint& p : report.points) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", p.threshold, p.precision, p.recall);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "# ap=%.17g auc=", report.ap);
  out += buf;
  if (report.auc) {
    std::snprintf(buf, sizeof buf, "%.17g", *report.auc);
    out += buf;
  } else {
    out += "nan";
  }
  out += " n_frames=" + std::to_string(report.n_frames) +
         " n_positive=" + std::to_string(report.n_positive) + "\n";
  return out;
}

std::string curve_json(const CurveReport& report) {
  nlohmann::json j;
  j["ap"] = report.ap;
  j["auc"] = report.auc ? nlohmann::json(*report.auc) : nlohmann::json(nullptr);
  j["n_frames"] = report.n_frames;
  j["n_positive"] = report.n_positive;
  return j.dump(2) + "\n";
}

}  // namespace hlnet

#pragma once

// Frame-level metrics: snippet-to-frame expansion, step-interpolated AP,
// rank-statistic ROC-AUC and the pooled offline/online evaluation.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hlnet/data.hpp"
#include "hlnet/model.hpp"

namespace hlnet {

struct FrameScores {
  std::vector<double> scores;
  std::vector<int> labels;

  void append(const FrameScores& other);
  std::size_t positives() const;
};

struct CurvePoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

struct CurveReport {
  /// One point per distinct score, highest threshold first.
  std::vector<CurvePoint> points;
  double ap = 0.0;
  std::optional<double> auc;
  std::size_t n_frames = 0;
  std::size_t n_positive = 0;
};

/// Each frame takes the score of the snippet covering it. total_frames may
/// exceed T'·snippet_len by less than one snippet (a trailing partial window)
/// or fall short of it by less than one snippet.
std::vector<double> expand_to_frames(std::span<const double> snippet_scores,
                                     std::uint32_t snippet_len, std::uint64_t total_frames);

/// 0/1 per frame from half-open frame intervals.
std::vector<int> frame_labels(const std::vector<Interval>& intervals, std::uint64_t total_frames);

/// Step-interpolated AP over a descending sort (ties keep index order).
/// Throws ArgumentError without positives.
CurveReport average_precision(const FrameScores& fs);

/// Mann-Whitney statistic with midranks. Throws ArgumentError unless both
/// classes are present.
double roc_auc(const FrameScores& fs);

enum class Head { offline, online };
const char* head_name(Head h);

/// Pooled frame scores of one head over a labelled test set (eval mode).
FrameScores collect_frame_scores(const HLNetParams& params, std::span<const VideoRecord> videos,
                                 Head head, std::size_t threads = 1);

/// AP (and AUC when both classes occur) of one head over the pooled test set.
CurveReport evaluate(const HLNetParams& params, std::span<const VideoRecord> videos, Head head,
                     std::size_t threads = 1);

/// Mean |s(C^P) - s(C^S)| over every test snippet.
double mean_head_gap(const HLNetParams& params, std::span<const VideoRecord> videos);

std::string curve_csv(const CurveReport& report);
std::string curve_json(const CurveReport& report);

}  // namespace hlnet

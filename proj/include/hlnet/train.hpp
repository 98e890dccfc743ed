#pragma once

// Multiple-instance training: top-K bag scores, the three losses, Adam with a
// step schedule, and the epoch/batch loop.

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hlnet/data.hpp"
#include "hlnet/model.hpp"

namespace hlnet {

inline constexpr double kProbabilityClamp = 1e-7;

struct TrainConfig {
  std::size_t q = 16;
  double lambda = 5.0;
  std::size_t gamma_len = 200;
  std::size_t batch_size = 128;
  std::size_t epochs = 50;
  double lr = 1e-3;
  std::vector<std::size_t> lr_drop_epochs = {10, 30};
  double dropout_rate = 0.7;
  std::uint64_t seed = 0;
  /// Sum the distillation term over the batch instead of averaging it.
  bool distill_sum = false;
  /// When false the approximator is frozen and only L_BCE drives training.
  bool train_approximator = true;
  /// Worker threads for per-video forward/backward within a batch.
  std::size_t threads = 1;

  void validate() const;
};

/// Everything a run needs besides data: optimisation and architecture knobs.
struct RunConfig {
  TrainConfig train;
  ModelConfig model;
};

/// `key = value` lines; '#' starts a comment. Unknown keys and malformed values
/// raise FormatError with the line number.
RunConfig parse_run_config(const std::string& text, RunConfig base = {});
std::string format_run_config(const RunConfig& config);

struct LossReport {
  double l_bce = 0.0;
  double l_bce2 = 0.0;
  double l_distill = 0.0;
  double l_total = 0.0;
};

/// K = floor(T'/q) + 1, capped at T'.
std::size_t k_of(std::size_t t_prime, std::size_t q);

/// Mean of the K largest activations (the bag logit).
Var bag_logit(Var activations, std::size_t q);
/// sigmoid(bag_logit).
Var bag_score(Var activations, std::size_t q);

/// Binary cross-entropy of a 1×1 probability against y ∈ {0,1}; the
/// probability is clamped to [1e-7, 1-1e-7].
Var bce(Var probability, int label);

/// Same value as bce(sigmoid(logit), label), computed from the logit. The
/// clamp bounds the value only: a saturated logit still gets the gradient
/// of the unclamped loss, so it can recover.
Var bce_with_logits(Var logit, int label);

/// -Σ s(c_p) ln s(c_s) for one video, s(c_s) clamped like bce_with_logits.
/// The teacher s(c_p) is a constant.
Var distill_loss(Var online_activations, const Matrix& offline_activations);

LossReport total_loss(double l_bce, double l_bce2, double l_distill, double lambda);

/// Uniform-stride subsample positions floor(j·T'/Γ), j < Γ; identity when T' ≤ Γ.
std::vector<std::size_t> sample_indices(std::size_t t_prime, std::size_t gamma_len);
Matrix take_rows(const Matrix& x, std::span<const std::size_t> rows);

/// Learning rate for a 1-based epoch: lr · 10^-(number of drops ≤ epoch).
double lr_at(std::size_t epoch, const TrainConfig& config);

class Adam {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  /// Updates every parameter that has an entry in grads.
  void step(HLNetParams& params, const ParamGrads& grads, double lr);
  std::size_t steps() const { return t_; }

 private:
  struct Moments {
    Matrix m;
    Matrix v;
  };
  std::map<std::string, Moments> moments_;
  std::size_t t_ = 0;
};

/// One video's loss graph.
struct VideoLoss {
  Var l_bce;
  Var l_bce2;
  Var l_distill;
  ForwardResult forward;
};

VideoLoss video_loss(BoundParams& p, const Matrix& visual, const Matrix& audio, int label,
                     std::size_t q, Mode mode, std::mt19937_64& rng);

/// The scalar one video contributes to the batch objective (already divided
/// by the batch size).
Var video_objective(const VideoLoss& loss, const TrainConfig& config, std::size_t batch_size);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  LossReport loss;
};

struct FitResult {
  HLNetParams params;
  std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&, const HLNetParams&)>;

/// Trains from scratch. Only weak labels of the given videos are read.
FitResult fit(std::span<const VideoRecord> videos, const RunConfig& config,
              const EpochCallback& on_epoch = {});

/// Continues from existing parameters.
FitResult fit_from(HLNetParams params, std::span<const VideoRecord> videos,
                   const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Reads HLNET_THREADS; falls back to `fallback` when unset or invalid.
std::size_t threads_from_env(std::size_t fallback);

}  // namespace hlnet

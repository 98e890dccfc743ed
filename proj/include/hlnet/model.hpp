#pragma once

// The detection network: a fusion MLP shared by an offline head (three
// relation branches + linear projection) and an online head (a causal
// approximator that sees only past snippets).

#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hlnet/relation.hpp"
#include "hlnet/tensor.hpp"

namespace hlnet {

inline constexpr std::size_t kFusionHidden = 512;
inline constexpr std::size_t kFusionWidth = 128;
inline constexpr std::size_t kBranchWidth = 32;
inline constexpr std::size_t kApproxHidden = 512;
inline constexpr std::size_t kConvTaps = 5;

enum class Branch { holistic, localized, score };
inline constexpr std::array<Branch, 3> kAllBranches = {Branch::holistic, Branch::localized,
                                                       Branch::score};
const char* branch_name(Branch b);

struct BranchSet {
  bool holistic = true;
  bool localized = true;
  bool score = true;

  bool contains(Branch b) const;
  std::size_t count() const { return holistic + localized + score; }
  std::vector<Branch> enabled() const;
  /// "H,L,S" style list; any non-empty subset, any order.
  static BranchSet parse(const std::string& text);
  std::string to_string() const;
};

enum class Modality { both, visual, audio };
Modality parse_modality(const std::string& text);
const char* modality_name(Modality m);

struct ModelConfig {
  std::size_t visual_dim = 64;
  std::size_t audio_dim = 32;
  Modality modality = Modality::both;
  BranchSet branches;
  RelationConfig relation;
  double dropout_rate = 0.7;

  std::size_t input_dim() const;
  void validate() const;
};

/// Named weight matrices plus the configuration that shapes them. Names are
/// dotted paths, e.g. "fusion.fc1.w" or "branch.score.layer2.w".
class HLNetParams {
 public:
  HLNetParams() = default;
  explicit HLNetParams(ModelConfig config) : config_(std::move(config)) {}

  /// Fresh weights: uniform in ±1/sqrt(fan_in), layer-1 shortcuts start as an
  /// identity slice plus a small perturbation.
  static HLNetParams initialize(const ModelConfig& config, std::uint64_t seed);

  /// Every (name, shape) the configuration calls for, in canonical order.
  static std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> layout(
      const ModelConfig& config);
  static std::size_t expected_count(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  bool has(const std::string& name) const { return weights_.contains(name); }
  const Matrix& at(const std::string& name) const;
  Matrix& at(const std::string& name);
  void set(const std::string& name, Matrix value) { weights_[name] = std::move(value); }
  std::size_t erase_prefix(const std::string& prefix);
  const std::map<std::string, Matrix>& weights() const { return weights_; }
  std::size_t count() const;

  bool has_offline_head() const;
  bool has_online_head() const;

 private:
  ModelConfig config_;
  std::map<std::string, Matrix> weights_;
};

using ParamGrads = std::map<std::string, Matrix>;

/// Parameters bound to one tape on first use. Training binds them as gradient
/// leaves; evaluation binds them as constants.
class BoundParams {
 public:
  BoundParams(Tape& tape, const HLNetParams& params, bool track_gradients)
      : tape_(tape), params_(params), track_(track_gradients) {}

  Var operator[](const std::string& name);
  Tape& tape() { return tape_; }
  const ModelConfig& config() const { return params_.config(); }

  /// Adds this tape's gradients into grads (allocating entries as needed).
  void collect_gradients(ParamGrads& grads) const;

 private:
  Tape& tape_;
  const HLNetParams& params_;
  bool track_;
  std::map<std::string, Var> bound_;
};

struct ForwardResult {
  Var fused;                         // X^F, T'×128
  Var offline;                       // C^P, T'×1 (invalid when the offline head is skipped)
  Var online;                        // C^S, T'×1
  std::map<Branch, Var> branch_out;  // T'×32 each
};

/// Channel concatenation of the modalities the configuration uses.
Matrix input_features(const ModelConfig& config, const Matrix& visual, const Matrix& audio);

Var fuse(BoundParams& p, const Matrix& visual, const Matrix& audio, Mode mode,
         std::mt19937_64& rng);

Var branch_forward(BoundParams& p, Branch branch, Var fused, const RelationMatrix& relation,
                   Mode mode, std::mt19937_64& rng);

Var approximator_forward(BoundParams& p, Var fused, Mode mode, std::mt19937_64& rng);

/// Relation matrix for one branch. The score branch needs the online
/// activations of the same pass; the holistic branch needs the raw features.
RelationMatrix branch_relation(Branch branch, const ModelConfig& config, const Matrix& raw,
                               std::span<const double> online_activations);

/// Full pass. With offline=false only the fusion MLP and approximator run,
/// so branch weights need not exist.
ForwardResult hl_net_forward(BoundParams& p, const Matrix& visual, const Matrix& audio, Mode mode,
                             std::mt19937_64& rng, bool offline = true);

struct Scores {
  std::vector<double> offline;  // s(C^P); empty when not requested
  std::vector<double> online;   // s(C^S)
};

/// Evaluation-mode probabilities for one video.
Scores predict(const HLNetParams& params, const Matrix& visual, const Matrix& audio,
               bool offline = true);

/// Snippet-at-a-time online scoring with the approximator alone. Memory is
/// bounded by the causal window; outputs match the batch online scores bit
/// for bit.
class OnlineScorer {
 public:
  explicit OnlineScorer(const HLNetParams& params);

  /// Raw activation C^S for the next snippet.
  double push_activation(std::span<const double> visual_row, std::span<const double> audio_row);
  /// Probability s(C^S) for the next snippet.
  double push(std::span<const double> visual_row, std::span<const double> audio_row);
  std::size_t steps() const { return steps_; }

 private:
  Matrix dense_relu(const Matrix& x, const std::string& prefix) const;

  const HLNetParams& params_;
  std::deque<std::vector<double>> history_;
  std::size_t steps_ = 0;
};

}  // namespace hlnet

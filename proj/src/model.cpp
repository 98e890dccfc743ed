#include "hlnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "hlnet/error.hpp"

namespace hlnet {

namespace {

std::string branch_prefix(Branch b) { return std::string("branch.") + branch_name(b); }

Var dense(BoundParams& p, Var x, const std::string& prefix) {
  return add_row_bias(matmul(x, p[prefix + ".w"]), p[prefix + ".b"]);
}

void fill_uniform(Matrix& m, double bound, std::mt19937_64& rng) {
  for (double& v : m.data()) v = (2.0 * uniform01(rng) - 1.0) * bound;
}

}  // namespace

const char* branch_name(Branch b) {
  switch (b) {
    case Branch::holistic:
      return "holistic";
    case Branch::localized:
      return "localized";
    case Branch::score:
      return "score";
  }
  return "?";
}

bool BranchSet::contains(Branch b) const {
  switch (b) {
    case Branch::holistic:
      return holistic;
    case Branch::localized:
      return localized;
    case Branch::score:
      return score;
  }
  return false;
}

std::vector<Branch> BranchSet::enabled() const {
  std::vector<Branch> out;
  for (Branch b : kAllBranches)
    if (contains(b)) out.push_back(b);
  return out;
}

BranchSet BranchSet::parse(const std::string& text) {
  BranchSet set{false, false, false};
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(std::remove_if(item.begin(), item.end(), ::isspace), item.end());
    bool* slot = nullptr;
    if (item == "H" || item == "h" || item == "holistic") slot = &set.holistic;
    if (item == "L" || item == "l" || item == "localized") slot = &set.localized;
    if (item == "S" || item == "s" || item == "score") slot = &set.score;
    if (slot == nullptr) throw ArgumentError("unknown branch '" + item + "' (expected H, L or S)");
    if (*slot) throw ArgumentError("branch '" + item + "' listed twice");
    *slot = true;
  }
  if (set.count() == 0) throw ArgumentError("at least one branch is required");
  return set;
}

std::string BranchSet::to_string() const {
  std::string out;
  for (Branch b : enabled()) {
    if (!out.empty()) out += ',';
    out += static_cast<char>(std::toupper(branch_name(b)[0]));
  }
  return out;
}

Modality parse_modality(const std::string& text) {
  if (text == "both") return Modality::both;
  if (text == "visual") return Modality::visual;
  if (text == "audio") return Modality::audio;
  throw ArgumentError("unknown modality '" + text + "' (expected audio, visual or both)");
}

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::both:
      return "both";
    case Modality::visual:
      return "visual";
    case Modality::audio:
      return "audio";
  }
  return "?";
}

std::size_t ModelConfig::input_dim() const {
  switch (modality) {
    case Modality::both:
      return visual_dim + audio_dim;
    case Modality::visual:
      return visual_dim;
    case Modality::audio:
      return audio_dim;
  }
  return 0;
}

void ModelConfig::validate() const {
  relation.validate();
  if (branches.count() == 0) throw ArgumentError("model: no branch enabled");
  if (input_dim() == 0) throw ArgumentError("model: input width is zero");
  if (modality != Modality::audio && visual_dim == 0)
    throw ArgumentError("model: visual modality selected but visual_dim is 0");
  if (modality != Modality::visual && audio_dim == 0)
    throw ArgumentError("model: audio modality selected but audio_dim is 0");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
    throw ArgumentError("model: dropout rate must lie in [0, 1)");
}

// ---------------------------------------------------------------------------

std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> HLNetParams::layout(
    const ModelConfig& config) {
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> out;
  const std::size_t din = config.input_dim();
  out.push_back({"fusion.fc1.w", {din, kFusionHidden}});
  out.push_back({"fusion.fc1.b", {1, kFusionHidden}});
  out.push_back({"fusion.fc2.w", {kFusionHidden, kFusionWidth}});
  out.push_back({"fusion.fc2.b", {1, kFusionWidth}});
  for (Branch b : config.branches.enabled()) {
    const std::string p = branch_prefix(b);
    out.push_back({p + ".layer1.w", {kFusionWidth, kBranchWidth}});
    out.push_back({p + ".layer1.shortcut", {kFusionWidth, kBranchWidth}});
    out.push_back({p + ".layer2.w", {kBranchWidth, kBranchWidth}});
  }
  out.push_back({"head.w", {kBranchWidth * config.branches.count(), 1}});
  out.push_back({"head.b", {1, 1}});
  out.push_back({"approx.fc1.w", {kFusionWidth, kApproxHidden}});
  out.push_back({"approx.fc1.b", {1, kApproxHidden}});
  out.push_back({"approx.fc2.w", {kApproxHidden, kFusionWidth}});
  out.push_back({"approx.fc2.b", {1, kFusionWidth}});
  out.push_back({"approx.conv.w", {kConvTaps, kFusionWidth}});
  out.push_back({"approx.conv.b", {1, 1}});
  return out;
}

std::size_t HLNetParams::expected_count(const ModelConfig& config) {
  std::size_t n = 0;
  for (const auto& [name, shape] : layout(config)) n += shape.first * shape.second;
  return n;
}

HLNetParams HLNetParams::initialize(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  HLNetParams params(config);
  std::mt19937_64 rng(seed);
  const auto shapes = layout(config);
  std::map<std::string, std::pair<std::size_t, std::size_t>> by_name(shapes.begin(), shapes.end());
  for (const auto& [name, shape] : shapes) {
    Matrix m(shape.first, shape.second);
    // A bias shares the fan-in of its weight; the conv kernel spans taps × channels.
    const std::string weight = name.ends_with(".b") ? name.substr(0, name.size() - 2) + ".w" : name;
    const auto& ws = by_name.at(weight);
    const std::size_t fan_in = weight == "approx.conv.w" ? ws.first * ws.second : ws.first;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    fill_uniform(m, bound, rng);
    if (name.ends_with(".layer1.shortcut")) {
      for (double& v : m.data()) v *= 0.1;
      for (std::size_t i = 0; i < std::min(m.rows(), m.cols()); ++i) m(i, i) += 1.0;
    }
    params.set(name, std::move(m));
  }
  return params;
}

const Matrix& HLNetParams::at(const std::string& name) const {
  auto it = weights_.find(name);
  if (it == weights_.end()) throw ArgumentError("missing parameter '" + name + "'");
  return it->second;
}

Matrix& HLNetParams::at(const std::string& name) {
  auto it = weights_.find(name);
  if (it == weights_.end()) throw ArgumentError("missing parameter '" + name + "'");
  return it->second;
}

std::size_t HLNetParams::erase_prefix(const std::string& prefix) {
  return std::erase_if(weights_, [&](const auto& kv) { return kv.first.starts_with(prefix); });
}

std::size_t HLNetParams::count() const {
  std::size_t n = 0;
  for (const auto& [name, m] : weights_) n += m.size();
  return n;
}

bool HLNetParams::has_offline_head() const {
  // The offline pass also runs the approximator (the score branch reads C^S).
  for (const auto& [name, shape] : layout(config_))
    if (!has(name)) return false;
  return true;
}

bool HLNetParams::has_online_head() const {
  for (const auto& [name, shape] : layout(config_))
    if ((name.starts_with("approx.") || name.starts_with("fusion.")) && !has(name)) return false;
  return true;
}

// ---------------------------------------------------------------------------

Var BoundParams::operator[](const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const Matrix& value = params_.at(name);
  Var v = track_ ? tape_.param(value) : tape_.constant(value);
  bound_.emplace(name, v);
  return v;
}

void BoundParams::collect_gradients(ParamGrads& grads) const {
  for (const auto& [name, var] : bound_) {
    Matrix g = tape_.grad(var);
    auto it = grads.find(name);
    if (it == grads.end()) {
      grads.emplace(name, std::move(g));
      continue;
    }
    auto dst = it->second.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
}

// ---------------------------------------------------------------------------

Matrix input_features(const ModelConfig& config, const Matrix& visual, const Matrix& audio) {
  switch (config.modality) {
    case Modality::visual:
      if (visual.cols() != config.visual_dim)
        throw ShapeError("visual features have width " + std::to_string(visual.cols()) +
                         ", model expects " + std::to_string(config.visual_dim));
      return visual;
    case Modality::audio:
      if (audio.cols() != config.audio_dim)
        throw ShapeError("audio features have width " + std::to_string(audio.cols()) +
                         ", model expects " + std::to_string(config.audio_dim));
      return audio;
    case Modality::both:
      break;
  }
  if (visual.rows() != audio.rows()) {
    throw ShapeError("visual and audio sequences differ in length (" +
                     std::to_string(visual.rows()) + " vs " + std::to_string(audio.rows()) + ")");
  }
  if (visual.cols() != config.visual_dim || audio.cols() != config.audio_dim) {
    throw ShapeError("feature widths " + std::to_string(visual.cols()) + "+" +
                     std::to_string(audio.cols()) + " do not match model " +
                     std::to_string(config.visual_dim) + "+" + std::to_string(config.audio_dim));
  }
  Matrix out(visual.rows(), visual.cols() + audio.cols());
  for (std::size_t i = 0; i < visual.rows(); ++i) {
    auto dst = out.row(i);
    std::copy(visual.row(i).begin(), visual.row(i).end(), dst.begin());
    std::copy(audio.row(i).begin(), audio.row(i).end(), dst.begin() + visual.cols());
  }
  return out;
}

Var fuse(BoundParams& p, const Matrix& visual, const Matrix& audio, Mode mode,
         std::mt19937_64& rng) {
  const double rate = p.config().dropout_rate;
  Var x = p.tape().constant(input_features(p.config(), visual, audio));
  Var h = dropout(relu(dense(p, x, "fusion.fc1")), rate, mode, rng);
  return dropout(relu(dense(p, h, "fusion.fc2")), rate, mode, rng);
}

Var branch_forward(BoundParams& p, Branch branch, Var fused, const RelationMatrix& relation,
                   Mode mode, std::mt19937_64& rng) {
  const double rate = p.config().dropout_rate;
  if (relation.size() != fused.rows()) {
    throw ShapeError("branch_forward: relation size " + std::to_string(relation.size()) +
                     " does not match sequence length " + std::to_string(fused.rows()));
  }
  const std::string prefix = branch_prefix(branch);
  Var adj = p.tape().constant(relation.weights);
  // A·X·W evaluated as A·(X·W): the narrow side goes through the T'×T' product.
  Var h1 = dropout(relu(matmul(adj, matmul(fused, p[prefix + ".layer1.w"]))), rate, mode, rng);
  Var x1 = add(h1, matmul(fused, p[prefix + ".layer1.shortcut"]));
  Var h2 = dropout(relu(matmul(adj, matmul(x1, p[prefix + ".layer2.w"]))), rate, mode, rng);
  return add(h2, x1);
}

Var approximator_forward(BoundParams& p, Var fused, Mode mode, std::mt19937_64& rng) {
  const double rate = p.config().dropout_rate;
  Var h = dropout(relu(dense(p, fused, "approx.fc1")), rate, mode, rng);
  h = dropout(relu(dense(p, h, "approx.fc2")), rate, mode, rng);
  return causal_conv1d(h, p["approx.conv.w"], p["approx.conv.b"]);
}

RelationMatrix branch_relation(Branch branch, const ModelConfig& config, const Matrix& raw,
                               std::span<const double> online_activations) {
  switch (branch) {
    case Branch::holistic:
      return holistic_matrix(raw, config.relation);
    case Branch::localized:
      return proximity_matrix(raw.rows(), config.relation.gamma, config.relation.sigma,
                              config.relation.proximity_norm);
    case Branch::score:
      return score_relation_matrix(online_activations);
  }
  throw ArgumentError("unknown branch");
}

ForwardResult hl_net_forward(BoundParams& p, const Matrix& visual, const Matrix& audio, Mode mode,
                             std::mt19937_64& rng, bool offline) {
  const ModelConfig& cfg = p.config();
  ForwardResult out;
  out.fused = fuse(p, visual, audio, mode, rng);
  out.online = approximator_forward(p, out.fused, mode, rng);
  if (!offline) return out;

  const Matrix raw = input_features(cfg, visual, audio);
  // Copy: later tape records may reallocate node storage.
  const Matrix online_values = out.online.value();
  std::vector<Var> parts;
  for (Branch b : cfg.branches.enabled()) {
    const RelationMatrix rel = branch_relation(b, cfg, raw, online_values.data());
    Var y = branch_forward(p, b, out.fused, rel, mode, rng);
    out.branch_out.emplace(b, y);
    parts.push_back(y);
  }
  Var joined = concat_cols(parts);
  out.offline = add_row_bias(matmul(joined, p["head.w"]), p["head.b"]);
  return out;
}

Scores predict(const HLNetParams& params, const Matrix& visual, const Matrix& audio,
               bool offline) {
  Tape tape;
  BoundParams bound(tape, params, false);
  std::mt19937_64 unused(0);
  ForwardResult r = hl_net_forward(bound, visual, audio, Mode::eval, unused, offline);
  Scores s;
  for (double c : r.online.value().data()) s.online.push_back(stable_sigmoid(c));
  if (offline)
    for (double c : r.offline.value().data()) s.offline.push_back(stable_sigmoid(c));
  return s;
}

// ---------------------------------------------------------------------------

OnlineScorer::OnlineScorer(const HLNetParams& params) : params_(params) {
  if (!params.has_online_head()) {
    throw ArgumentError("online scoring needs fusion and approximator weights");
  }
}

Matrix OnlineScorer::dense_relu(const Matrix& x, const std::string& prefix) const {
  Matrix y = matmul(x, params_.at(prefix + ".w"));
  const Matrix& b = params_.at(prefix + ".b");
  auto r = y.row(0);
  for (std::size_t j = 0; j < r.size(); ++j) r[j] += b[j];
  for (double& v : r) v = v > 0.0 ? v : 0.0;
  return y;
}

double OnlineScorer::push_activation(std::span<const double> visual_row,
                                     std::span<const double> audio_row) {
  const ModelConfig& cfg = params_.config();
  const Matrix v(1, visual_row.size(), std::vector<double>(visual_row.begin(), visual_row.end()));
  const Matrix a(1, audio_row.size(), std::vector<double>(audio_row.begin(), audio_row.end()));
  Matrix h = dense_relu(input_features(cfg, v, a), "fusion.fc1");
  h = dense_relu(h, "fusion.fc2");
  h = dense_relu(h, "approx.fc1");
  h = dense_relu(h, "approx.fc2");

  history_.emplace_back(h.data().begin(), h.data().end());
  if (history_.size() > kConvTaps) history_.pop_front();

  const Matrix& kernel = params_.at("approx.conv.w");
  std::array<const double*, kConvTaps> window{};
  const std::size_t missing = kConvTaps - history_.size();
  for (std::size_t k = 0; k < kConvTaps; ++k)
    window[k] = k < missing ? nullptr : history_[k - missing].data();
  ++steps_;
  return causal_conv_tap(window, kernel, params_.at("approx.conv.b")[0]);
}

double OnlineScorer::push(std::span<const double> visual_row, std::span<const double> audio_row) {
  return stable_sigmoid(push_activation(visual_row, audio_row));
}

}  // namespace hlnet

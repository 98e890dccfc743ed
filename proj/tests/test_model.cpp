#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numeric>

#include "hlnet/error.hpp"
#include "hlnet/model.hpp"
#include "oracles.hpp"

using namespace hlnet;

namespace {

// Independent count: fusion d→512→128, per branch 128→32 (+128→32 shortcut)
// and 32→32, head 32·|B|→1, approximator 128→512→128 plus a 5×128 kernel.
std::size_t hand_count(std::size_t din, std::size_t branches) {
  const std::size_t fusion = din * 512 + 512 + 512 * 128 + 128;
  const std::size_t per_branch = 128 * 32 + 128 * 32 + 32 * 32;
  const std::size_t head = 32 * branches + 1;
  const std::size_t approx = 128 * 512 + 512 + 512 * 128 + 128 + 5 * 128 + 1;
  return fusion + branches * per_branch + head + approx;
}

struct Pair {
  Matrix visual;
  Matrix audio;
};

Pair random_inputs(std::mt19937_64& rng, std::size_t t, const ModelConfig& c) {
  return {oracle::random_matrix(rng, t, c.visual_dim, 0.0, 2.0),
          oracle::random_matrix(rng, t, c.audio_dim, 0.0, 2.0)};
}

Matrix slice_rows(const Matrix& m, std::size_t n) {
  Matrix out(n, m.cols());
  std::copy(m.data().begin(), m.data().begin() + static_cast<long>(n * m.cols()), out.data().begin());
  return out;
}

}  // namespace

TEST_CASE("parameter counts are a pure function of widths and branches") {
  ModelConfig c;
  CHECK(HLNetParams::expected_count(c) == 275426);
  CHECK(HLNetParams::expected_count(c) == hand_count(96, 3));
  CHECK(HLNetParams::initialize(c, 1).count() == 275426);
  for (const char* set : {"H", "L", "S", "H,L", "H,S", "L,S"}) {
    c.branches = BranchSet::parse(set);
    CHECK(HLNetParams::initialize(c, 2).count() == hand_count(96, c.branches.count()));
  }
  c = {};
  c.modality = Modality::visual;
  CHECK(HLNetParams::expected_count(c) == hand_count(64, 3));
  c.modality = Modality::audio;
  CHECK(HLNetParams::expected_count(c) == hand_count(32, 3));
}

TEST_CASE("branch sets and modalities parse and print") {
  CHECK(BranchSet::parse("S,H").to_string() == "H,S");
  CHECK(BranchSet::parse("h, l ,s").count() == 3);
  CHECK_THROWS_AS(BranchSet::parse(""), ArgumentError);
  CHECK_THROWS_AS(BranchSet::parse("H,H"), ArgumentError);
  CHECK_THROWS_AS(BranchSet::parse("X"), ArgumentError);
  CHECK(parse_modality("visual") == Modality::visual);
  CHECK_THROWS_AS(parse_modality("rgb"), ArgumentError);
}

TEST_CASE("initialization is seeded and bounded") {
  const ModelConfig c;
  const HLNetParams a = HLNetParams::initialize(c, 7);
  const HLNetParams b = HLNetParams::initialize(c, 7);
  const HLNetParams d = HLNetParams::initialize(c, 8);
  CHECK(a.weights() == b.weights());
  CHECK_FALSE(a.weights() == d.weights());
  const double bound = 1.0 / std::sqrt(96.0);
  for (double v : a.at("fusion.fc1.w").data()) CHECK(std::abs(v) <= bound);
  for (double v : a.at("approx.conv.w").data()) CHECK(std::abs(v) <= 1.0 / std::sqrt(640.0));
  CHECK(a.has_offline_head());
  CHECK(a.has_online_head());
}

TEST_CASE("fusion output shape and degeneracies") {
  std::mt19937_64 rng(31);
  ModelConfig c;
  HLNetParams p = HLNetParams::initialize(c, 1);
  const Pair in = random_inputs(rng, 6, c);
  {
    Tape t;
    BoundParams bp(t, p, false);
    CHECK(fuse(bp, in.visual, in.audio, Mode::eval, rng).value().rows() == 6);
    CHECK(fuse(bp, in.visual, in.audio, Mode::eval, rng).value().cols() == 128);
  }
  for (const char* n : {"fusion.fc1.w", "fusion.fc1.b", "fusion.fc2.w", "fusion.fc2.b"})
    p.set(n, Matrix(p.at(n).rows(), p.at(n).cols()));
  Tape t;
  BoundParams bp(t, p, false);
  CHECK(fuse(bp, in.visual, in.audio, Mode::eval, rng).value() == Matrix(6, 128));
  CHECK_THROWS_AS(fuse(bp, in.visual, slice_rows(in.audio, 5), Mode::eval, rng), ShapeError);
  CHECK_THROWS_AS(fuse(bp, in.audio, in.audio, Mode::eval, rng), ShapeError);
}

TEST_CASE("unimodal configurations keep the fusion MLP with one input block") {
  std::mt19937_64 rng(32);
  ModelConfig c;
  c.modality = Modality::visual;
  const HLNetParams p = HLNetParams::initialize(c, 3);
  CHECK(p.at("fusion.fc1.w").rows() == 64);
  const Matrix visual = oracle::random_matrix(rng, 5, 64, 0, 1);
  const Scores s = predict(p, visual, Matrix{}, true);
  CHECK(s.offline.size() == 5);
  c.modality = Modality::audio;
  CHECK(HLNetParams::initialize(c, 3).at("fusion.fc1.w").rows() == 32);
}

TEST_CASE("branch with zero weights reduces to its shortcut") {
  std::mt19937_64 rng(33);
  const ModelConfig c;
  HLNetParams p = HLNetParams::initialize(c, 4);
  p.set("branch.localized.layer1.w", Matrix(128, 32));
  p.set("branch.localized.layer2.w", Matrix(32, 32));
  Tape t;
  BoundParams bp(t, p, false);
  Var xf = t.constant(oracle::random_matrix(rng, 7, 128, 0, 1));
  const Matrix y =
      branch_forward(bp, Branch::localized, xf, proximity_matrix(7, 1, 1), Mode::eval, rng).value();
  const Matrix expect = matmul(xf.value(), p.at("branch.localized.layer1.shortcut"));
  CHECK(y == expect);
  CHECK_THROWS_AS(branch_forward(bp, Branch::localized, xf, proximity_matrix(6, 1, 1), Mode::eval, rng),
                  ShapeError);
}

TEST_CASE("offline activations: shape, T'=1 and projection bias") {
  std::mt19937_64 rng(34);
  const ModelConfig c;
  HLNetParams p = HLNetParams::initialize(c, 5);
  const Pair one = random_inputs(rng, 1, c);
  CHECK(predict(p, one.visual, one.audio).offline.size() == 1);

  for (Branch b : kAllBranches) {
    const std::string pre = std::string("branch.") + branch_name(b);
    p.set(pre + ".layer1.w", Matrix(128, 32));
    p.set(pre + ".layer1.shortcut", Matrix(128, 32));
    p.set(pre + ".layer2.w", Matrix(32, 32));
  }
  p.set("head.b", Matrix(1, 1, 0.37));
  const Pair in = random_inputs(rng, 9, c);
  Tape t;
  BoundParams bp(t, p, false);
  const ForwardResult r = hl_net_forward(bp, in.visual, in.audio, Mode::eval, rng);
  for (double v : r.offline.value().data()) CHECK(v == 0.37);
  CHECK(r.branch_out.size() == 3);
}

TEST_CASE("branch subsets project from 32 per enabled branch") {
  std::mt19937_64 rng(35);
  ModelConfig c;
  c.branches = BranchSet::parse("H,S");
  const HLNetParams p = HLNetParams::initialize(c, 6);
  CHECK(p.at("head.w").rows() == 64);
  CHECK_FALSE(p.has("branch.localized.layer1.w"));
  const Pair in = random_inputs(rng, 4, c);
  CHECK(predict(p, in.visual, in.audio).offline.size() == 4);
}

TEST_CASE("approximator: zero kernel, causality and streaming equivalence") {
  std::mt19937_64 rng(36);
  const ModelConfig c;
  HLNetParams p = HLNetParams::initialize(c, 9);
  const Pair in = random_inputs(rng, 23, c);
  const Scores full = predict(p, in.visual, in.audio, false);
  CHECK(full.offline.empty());

  // Prefix evaluation and snippet-at-a-time streaming reproduce full-run bits.
  OnlineScorer stream(p);
  for (std::size_t t = 0; t < 23; ++t) {
    const double s = stream.push(in.visual.row(t), in.audio.row(t));
    CHECK(oracle::same_bits(s, full.online[t]));
  }
  CHECK(stream.steps() == 23);
  for (std::size_t cut : {1u, 4u, 5u, 11u}) {
    const Scores pre = predict(p, slice_rows(in.visual, cut), slice_rows(in.audio, cut), false);
    for (std::size_t t = 0; t < cut; ++t) CHECK(oracle::same_bits(pre.online[t], full.online[t]));
  }

  // Perturbing the future never changes the past.
  Pair altered = in;
  for (std::size_t t = 15; t < 23; ++t)
    for (double& v : altered.visual.row(t)) v += 3.0;
  const Scores alt = predict(p, altered.visual, altered.audio, false);
  for (std::size_t t = 0; t < 15; ++t) CHECK(oracle::same_bits(alt.online[t], full.online[t]));

  p.set("approx.conv.w", Matrix(5, 128));
  p.set("approx.conv.b", Matrix(1, 1, -0.25));
  Tape t;
  BoundParams bp(t, p, false);
  const ForwardResult r = hl_net_forward(bp, in.visual, in.audio, Mode::eval, rng, false);
  for (double v : r.online.value().data()) CHECK(v == -0.25);
}

TEST_CASE("online scoring works without any relation-branch weights") {
  std::mt19937_64 rng(37);
  const ModelConfig c;
  const HLNetParams full = HLNetParams::initialize(c, 10);
  HLNetParams online = full;
  CHECK(online.erase_prefix("branch.") == 9);
  online.erase_prefix("head.");
  CHECK(online.has_online_head());
  CHECK_FALSE(online.has_offline_head());
  const Pair in = random_inputs(rng, 12, c);
  const Scores a = predict(full, in.visual, in.audio, false);
  const Scores b = predict(online, in.visual, in.audio, false);
  CHECK(a.online == b.online);
  CHECK_THROWS_AS(predict(online, in.visual, in.audio, true), ArgumentError);
  HLNetParams none = full;
  none.erase_prefix("approx.");
  CHECK_THROWS_AS(OnlineScorer{none}, ArgumentError);
}

TEST_CASE("evaluation-mode passes are deterministic") {
  std::mt19937_64 rng(38);
  const ModelConfig c;
  const HLNetParams p = HLNetParams::initialize(c, 11);
  const Pair in = random_inputs(rng, 17, c);
  const Scores a = predict(p, in.visual, in.audio);
  const Scores b = predict(p, in.visual, in.audio);
  CHECK(a.offline == b.offline);
  CHECK(a.online == b.online);
  for (double v : a.offline) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("holistic branch is permutation equivariant") {
  std::mt19937_64 rng(39);
  const ModelConfig c;
  const HLNetParams p = HLNetParams::initialize(c, 12);
  const std::size_t n = 10;
  const Matrix raw = oracle::random_matrix(rng, n, 96, 0.0, 1.0);
  const Matrix xf = oracle::random_matrix(rng, n, 128, 0.0, 1.0);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix praw(n, 96), pxf(n, 128);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(raw.row(i).begin(), raw.row(i).end(), praw.row(perm[i]).begin());
    std::copy(xf.row(i).begin(), xf.row(i).end(), pxf.row(perm[i]).begin());
  }
  Tape t;
  BoundParams bp(t, p, false);
  const Matrix y = branch_forward(bp, Branch::holistic, t.constant(xf),
                                  holistic_matrix(raw, c.relation), Mode::eval, rng)
                       .value();
  const Matrix py = branch_forward(bp, Branch::holistic, t.constant(pxf),
                                   holistic_matrix(praw, c.relation), Mode::eval, rng)
                        .value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < 32; ++j)
      CHECK(py(perm[i], j) == doctest::Approx(y(i, j)).epsilon(1e-12));
}

TEST_CASE("model config validation") {
  ModelConfig c;
  c.dropout_rate = 1.0;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = {};
  c.branches = {false, false, false};
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = {};
  c.modality = Modality::visual;
  c.visual_dim = 0;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
}

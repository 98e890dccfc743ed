#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numeric>

#include "hlnet/error.hpp"
#include "hlnet/tensor.hpp"
#include "oracles.hpp"

using namespace hlnet;

namespace {

constexpr int kInstances = 20;
constexpr double kGradTol = 1e-4;

// Scalar loss Σ w ⊙ y with fixed random weights, so every output entry
// carries a distinct upstream gradient.
Var weighted_sum(Var y, std::mt19937_64& rng) {
  return sum(hadamard_const(y, oracle::random_matrix(rng, y.rows(), y.cols())));
}

}  // namespace

TEST_CASE("matrix construction and access") {
  const Matrix m = Matrix::from_rows({{1, 2, 3}, {4, 5, 6}});
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m(1, 2) == 6);
  CHECK(m.sum() == 21);
  CHECK(Matrix::identity(3)(1, 1) == 1.0);
  CHECK(Matrix::identity(3)(0, 1) == 0.0);
  CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Matrix::from_rows({{1, 2}, {3}}), ShapeError);
  Matrix bad(1, 2);
  bad(0, 1) = NAN;
  CHECK_FALSE(bad.all_finite());
}

TEST_CASE("matmul closed forms and shape errors") {
  const Matrix m = Matrix::from_rows({{1, 2}, {3, 4}});
  CHECK(matmul(Matrix::identity(2), m) == m);
  CHECK(matmul(m, Matrix::from_rows({{1}, {1}})) == Matrix::from_rows({{3}, {7}}));
  CHECK_THROWS_AS(matmul(m, Matrix(3, 1)), ShapeError);
  CHECK_THROWS_AS(matmul_tn(m, Matrix(3, 1)), ShapeError);
  CHECK_THROWS_AS(matmul_nt(m, Matrix(1, 3)), ShapeError);
}

TEST_CASE("matmul kernels agree with a naive triple loop") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < kInstances; ++i) {
    const std::size_t r = 1 + rng() % 7, k = 1 + rng() % 9, c = 1 + rng() % 6;
    Matrix a = oracle::random_matrix(rng, r, k);
    // Sparse operands exercise the zero-skipping path.
    for (double& v : a.data())
      if (oracle::uniform(rng, 0, 1) < 0.3) v = 0.0;
    const Matrix b = oracle::random_matrix(rng, k, c);
    const Matrix ref = oracle::naive_matmul(a, b);
    const Matrix got = matmul(a, b);
    const Matrix tn = matmul_tn(transpose(a), b);
    const Matrix nt = matmul_nt(a, transpose(b));
    for (std::size_t j = 0; j < ref.size(); ++j) {
      CHECK(got[j] == doctest::Approx(ref[j]).epsilon(1e-12));
      CHECK(tn[j] == doctest::Approx(ref[j]).epsilon(1e-12));
      CHECK(nt[j] == doctest::Approx(ref[j]).epsilon(1e-12));
    }
  }
}

TEST_CASE("a single row product is bit-identical to the batched row") {
  std::mt19937_64 rng(12);
  const Matrix a = oracle::random_matrix(rng, 9, 17);
  const Matrix b = oracle::random_matrix(rng, 17, 5);
  const Matrix full = matmul(a, b);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    Matrix row(1, a.cols());
    std::copy(a.row(r).begin(), a.row(r).end(), row.data().begin());
    const Matrix one = matmul(row, b);
    for (std::size_t c = 0; c < b.cols(); ++c)
      CHECK(oracle::same_bits(one(0, c), full(r, c)));
  }
}

TEST_CASE("row_softmax closed forms") {
  const Matrix y = row_softmax(Matrix::from_rows({{0, 0, 0}, {2.5, 2.5 + std::log(2.0), -1e9}}));
  CHECK(y(0, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(y(1, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(y(1, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  std::mt19937_64 rng(13);
  for (int i = 0; i < kInstances; ++i) {
    const Matrix s = row_softmax(oracle::random_matrix(rng, 4, 4, -30, 30));
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0.0;
      for (double v : s.row(r)) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        total += v;
      }
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("unary closed forms") {
  Tape t;
  Var x = t.constant(Matrix::from_rows({{-1, 0, 2}}));
  CHECK(relu(x).value() == Matrix::from_rows({{0, 0, 2}}));
  CHECK(sigmoid(t.constant(Matrix(1, 1, 0.0))).value()[0] == 0.5);
  CHECK(sigmoid(t.constant(Matrix(1, 1, 5.0))).value()[0] == doctest::Approx(0.993307).epsilon(1e-6));
  CHECK(exp(t.constant(Matrix(1, 1, 1.0))).value()[0] == doctest::Approx(std::exp(1.0)));
  CHECK_THROWS_AS(log(t.constant(Matrix(1, 1, 0.0))), ArgumentError);
  CHECK(stable_sigmoid(-800.0) >= 0.0);
  CHECK(stable_sigmoid(800.0) == 1.0);
}

TEST_CASE("gradients of every differentiable op match central differences") {
  std::mt19937_64 rng(14);
  using V = std::vector<Var>;
  for (int i = 0; i < kInstances; ++i) {
    const std::size_t r = 2 + rng() % 4, k = 2 + rng() % 4, c = 1 + rng() % 4;
    const std::uint64_t seed = rng();
    auto wrap = [seed](auto body) {
      return [seed, body](Tape& t, const V& v) {
        std::mt19937_64 w(seed);
        return weighted_sum(body(t, v), w);
      };
    };
    CAPTURE(i);
    CHECK(oracle::gradient_check(wrap([](Tape&, const V& v) { return matmul(v[0], v[1]); }),
                                 {oracle::random_matrix(rng, r, k), oracle::random_matrix(rng, k, c)}) <
          kGradTol);
    CHECK(oracle::gradient_check(wrap([](Tape&, const V& v) { return add(v[0], v[1]); }),
                                 {oracle::random_matrix(rng, r, c), oracle::random_matrix(rng, r, c)}) <
          kGradTol);
    CHECK(oracle::gradient_check(wrap([](Tape&, const V& v) { return sub(v[0], v[1]); }),
                                 {oracle::random_matrix(rng, r, c), oracle::random_matrix(rng, r, c)}) <
          kGradTol);
    CHECK(oracle::gradient_check(wrap([](Tape&, const V& v) { return add_row_bias(v[0], v[1]); }),
                                 {oracle::random_matrix(rng, r, c), oracle::random_matrix(rng, 1, c)}) <
          kGradTol);
    CHECK(oracle::gradient_check(wrap([](Tape&, const V& v) { return relu(v[0]); }),
                                 {oracle::away_from_zero(rng, r, c)}) < kGradTol);
    CHECK(oracle::gradient_check(wrap([](Tape&, const V& v) { return sigmoid(v[0]); }),
                                 {oracle::random_matrix(rng, r, c, -4, 4)}) < kGradTol);
    CHECK(oracle::gradient_check(wrap([](Tape&, const V& v) { return exp(v[0]); }),
                                 {oracle::random_matrix(rng, r, c, -2, 2)}) < kGradTol);
    CHECK(oracle::gradient_check(wrap([](Tape&, const V& v) { return log(v[0]); }),
                                 {oracle::random_matrix(rng, r, c, 0.2, 3)}) < kGradTol);
    CHECK(oracle::gradient_check(wrap([](Tape&, const V& v) { return clamp(v[0], -0.5, 0.5); }),
                                 {oracle::away_from_zero(rng, r, c)}) < kGradTol);
    CHECK(oracle::gradient_check(
              wrap([](Tape&, const V& v) { return log_sigmoid(v[0], -1e300, 0.0); }),
              {oracle::random_matrix(rng, r, c, -6, 6)}) < kGradTol);
    CHECK(oracle::gradient_check(wrap([](Tape&, const V& v) { return scale(v[0], -1.7); }),
                                 {oracle::random_matrix(rng, r, c)}) < kGradTol);
    CHECK(oracle::gradient_check([](Tape&, const V& v) { return sum(v[0]); },
                                 {oracle::random_matrix(rng, r, c)}) < kGradTol);
    CHECK(oracle::gradient_check(wrap([](Tape&, const V& v) { return row_softmax(v[0]); }),
                                 {oracle::random_matrix(rng, r, c + 1, -3, 3)}) < kGradTol);
    CHECK(oracle::gradient_check(
              wrap([](Tape&, const V& v) {
                std::mt19937_64 mask(99);
                return dropout(v[0], 0.4, Mode::train, mask);
              }),
              {oracle::random_matrix(rng, r, c)}) < kGradTol);
    CHECK(oracle::gradient_check(
              wrap([](Tape&, const V& v) { return concat_cols(std::span<const Var>(v)); }),
              {oracle::random_matrix(rng, r, 2), oracle::random_matrix(rng, r, c)}) < kGradTol);
    CHECK(oracle::gradient_check(
              wrap([](Tape&, const V& v) { return causal_conv1d(v[0], v[1], v[2]); }),
              {oracle::random_matrix(rng, r + 5, c), oracle::random_matrix(rng, 5, c),
               oracle::random_matrix(rng, 1, 1)}) < kGradTol);
    // Distinct, well separated values keep the top-k selection stable under the step.
    Matrix spread(r + 4, 1);
    std::vector<double> levels(spread.size());
    std::iota(levels.begin(), levels.end(), 0.0);
    std::shuffle(levels.begin(), levels.end(), rng);
    for (std::size_t j = 0; j < spread.size(); ++j) spread[j] = 0.1 * levels[j];
    CHECK(oracle::gradient_check([](Tape&, const V& v) { return topk_mean(v[0], 3); }, {spread}) <
          kGradTol);
    const Matrix fixed = oracle::random_matrix(rng, r, c);
    CHECK(oracle::gradient_check(
              [fixed](Tape&, const V& v) { return sum(hadamard_const(v[0], fixed)); },
              {oracle::random_matrix(rng, r, c)}) < kGradTol);
  }
}

TEST_CASE("composite backward: sum(sigmoid(W x)) and linear leaves") {
  std::mt19937_64 rng(15);
  for (int i = 0; i < kInstances; ++i) {
    const Matrix x = oracle::random_matrix(rng, 4, 1);
    CHECK(oracle::gradient_check(
              [x](Tape& t, const std::vector<Var>& v) { return sum(sigmoid(matmul(v[0], t.constant(x)))); },
              {oracle::random_matrix(rng, 3, 4)}) < kGradTol);
  }
  Tape t;
  Var w = t.param(oracle::random_matrix(rng, 2, 3));
  Var unused = t.param(Matrix(2, 2, 1.0));
  t.backward(sum(w));
  CHECK(t.grad(w) == Matrix(2, 3, 1.0));
  CHECK(t.grad(unused) == Matrix(2, 2, 0.0));
}

TEST_CASE("backward rejects a non-scalar loss") {
  Tape t;
  Var w = t.param(Matrix(2, 2, 1.0));
  CHECK_THROWS_AS(t.backward(w), ShapeError);
  Tape other;
  Var foreign = other.param(Matrix(1, 1, 1.0));
  CHECK_THROWS_AS(t.backward(foreign), ArgumentError);
  CHECK_THROWS_AS(add(w, other.param(Matrix(2, 2))), ArgumentError);
}

TEST_CASE("dropout modes and statistics") {
  std::mt19937_64 rng(16);
  Tape t;
  const Matrix x = oracle::random_matrix(rng, 5, 7);
  Var xv = t.constant(x);
  CHECK(bit_equal(dropout(xv, 0.7, Mode::eval, rng).value(), x));
  CHECK(bit_equal(dropout(xv, 0.0, Mode::train, rng).value(), x));
  CHECK_THROWS_AS(dropout(xv, 1.0, Mode::train, rng), ArgumentError);
  CHECK_THROWS_AS(dropout(xv, -0.1, Mode::train, rng), ArgumentError);

  const std::size_t n = 100000;
  Var ones = t.constant(Matrix(1, n, 1.0));
  const Matrix y = dropout(ones, 0.7, Mode::train, rng).value();
  std::size_t kept = 0;
  for (double v : y.data()) {
    if (v != 0.0) {
      ++kept;
      CHECK(v == doctest::Approx(1.0 / 0.3).epsilon(1e-15));
    }
  }
  const double p = 0.3;
  const double frac = static_cast<double>(kept) / n;
  const double sd_frac = std::sqrt(p * (1 - p) / n);
  CHECK(std::abs(frac - p) < 3 * sd_frac);
  // The mean is frac / p, so its deviation is the kept-fraction deviation scaled by 1/p.
  CHECK(std::abs(y.sum() / n - 1.0) < 3 * sd_frac / p);

  std::mt19937_64 a(5), b(5);
  const Matrix da = dropout(xv, 0.5, Mode::train, a).value();
  CHECK(bit_equal(da, dropout(xv, 0.5, Mode::train, b).value()));
}

TEST_CASE("concat_cols construction and errors") {
  Tape t;
  Var a = t.param(Matrix::from_rows({{1}, {2}}));
  Var b = t.param(Matrix::from_rows({{3}, {4}}));
  const std::vector<Var> both = {a, b};
  Var c = concat_cols(both);
  CHECK(c.value() == Matrix::from_rows({{1, 3}, {2, 4}}));
  const std::vector<Var> single = {a};
  CHECK(concat_cols(single).value() == a.value());
  t.backward(sum(c));
  CHECK(t.grad(a) == Matrix(2, 1, 1.0));
  CHECK(t.grad(b) == Matrix(2, 1, 1.0));
  const std::vector<Var> ragged = {a, t.param(Matrix(3, 1))};
  CHECK_THROWS_AS(concat_cols(ragged), ShapeError);
}

TEST_CASE("causal_conv1d: delta kernels, naive oracle, causality") {
  Tape t;
  std::vector<double> seq(20);
  std::mt19937_64 rng(17);
  for (double& v : seq) v = oracle::uniform(rng, -1, 1);
  Var x = t.constant(Matrix::column(seq));
  Var zero = t.constant(Matrix(1, 1, 0.0));
  Var identity = t.constant(Matrix::column(std::vector<double>{0, 0, 0, 0, 1}));
  Var delay = t.constant(Matrix::column(std::vector<double>{1, 0, 0, 0, 0}));
  CHECK(causal_conv1d(x, identity, zero).value() == Matrix::column(seq));
  const Matrix delayed = causal_conv1d(x, delay, zero).value();
  for (std::size_t i = 0; i < 4; ++i) CHECK(delayed[i] == 0.0);
  for (std::size_t i = 4; i < seq.size(); ++i) CHECK(delayed[i] == seq[i - 4]);

  for (int i = 0; i < kInstances; ++i) {
    const std::size_t channels = 1 + rng() % 6;
    const Matrix xs = oracle::random_matrix(rng, 20, channels);
    const Matrix k = oracle::random_matrix(rng, 5, channels);
    const double bias = oracle::uniform(rng, -1, 1);
    const Matrix y = causal_conv1d(t.constant(xs), t.constant(k), t.constant(Matrix(1, 1, bias))).value();
    const auto ref = oracle::naive_causal_conv(xs, k, bias);
    for (std::size_t j = 0; j < ref.size(); ++j) CHECK(std::abs(y[j] - ref[j]) <= 1e-12);

    // Altering every future position leaves the prefix bit-identical.
    const std::size_t cut = rng() % 19;
    Matrix altered = xs;
    for (std::size_t r = cut + 1; r < altered.rows(); ++r)
      for (double& v : altered.row(r)) v += 10.0;
    const Matrix y2 =
        causal_conv1d(t.constant(altered), t.constant(k), t.constant(Matrix(1, 1, bias))).value();
    for (std::size_t j = 0; j <= cut; ++j) CHECK(oracle::same_bits(y[j], y2[j]));
  }
}

TEST_CASE("topk_mean: closed forms, sort oracle, routing and ties") {
  Tape t;
  CHECK(topk_mean(t.constant(Matrix::column(std::vector<double>{3, 1, 2})), 2).value()[0] == 2.5);
  const std::vector<double> four = {1, 2, 3, 6};
  CHECK(topk_mean(t.constant(Matrix::column(four)), 4).value()[0] == 3.0);
  CHECK_THROWS_AS(topk_mean(t.constant(Matrix::column(four)), 0), ArgumentError);
  CHECK_THROWS_AS(topk_mean(t.constant(Matrix::column(four)), 5), ArgumentError);

  std::mt19937_64 rng(18);
  for (int i = 0; i < kInstances; ++i) {
    std::vector<double> xs(50);
    for (double& v : xs) v = oracle::uniform(rng, -5, 5);
    Tape tape;
    Var x = tape.param(Matrix::column(xs));
    Var m = topk_mean(x, 7);
    CHECK(std::abs(m.value()[0] - oracle::sorted_topk_mean(xs, 7)) <= 1e-12);
    tape.backward(m);
    const Matrix g = tape.grad(x);
    std::size_t nonzero = 0;
    for (double v : g.data())
      if (v != 0.0) {
        ++nonzero;
        CHECK(v == doctest::Approx(1.0 / 7.0).epsilon(1e-15));
      }
    CHECK(nonzero == 7);
  }
  const std::vector<double> ties = {1, 5, 5, 5, 0};
  CHECK(topk_indices(ties, 2) == std::vector<std::size_t>{1, 2});
}

TEST_CASE("log_sigmoid clamps the value but not the gradient") {
  Tape t;
  Var x = t.param(Matrix::from_rows({{-40.0, 0.0, 40.0}}));
  Var y = log_sigmoid(x, std::log(1e-7), std::log1p(-1e-7));
  CHECK(y.value()[0] == doctest::Approx(std::log(1e-7)).epsilon(1e-15));
  CHECK(y.value()[1] == doctest::Approx(-std::log(2.0)).epsilon(1e-15));
  CHECK(y.value()[2] == doctest::Approx(std::log1p(-1e-7)).epsilon(1e-15));
  t.backward(sum(y));
  const Matrix g = t.grad(x);
  CHECK(g[0] == doctest::Approx(1.0));
  CHECK(g[1] == doctest::Approx(0.5));
  CHECK(g[2] > 0.0);
}

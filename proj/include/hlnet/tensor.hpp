#pragma once

// Dense row-major matrices and a define-by-run reverse-mode tape.
//
// Every Var lives on exactly one Tape. Operations append a node holding the
// forward value and a closure that pushes the node's gradient to its inputs.
// A fresh Tape is built for every forward pass; tapes share no state, so
// independent tapes may be used from different threads.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

namespace hlnet {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix column(std::span<const double> values);
  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  bool all_finite() const;
  double sum() const;

  // Value equality (0.0 == -0.0). Use bit_equal for byte identity.
  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

bool bit_equal(const Matrix& a, const Matrix& b);

// Plain (untracked) kernels. Each output element accumulates its products in
// ascending inner-index order, independent of how many rows are processed, so
// a single-row product is bit-identical to the same row of a batched product.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // aᵀ·b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a·bᵀ
Matrix transpose(const Matrix& a);
Matrix row_softmax(const Matrix& x);

/// Logistic function, evaluated without overflow for any finite x.
double stable_sigmoid(double x);

/// Uniform double in [0,1) from the top 53 bits of one generator draw.
double uniform01(std::mt19937_64& rng);

/// One causal output: bias + Σ_k Σ_c kernel(k,c)·window[k][c], where window
/// holds the kernel.rows() most recent input rows (oldest first; nullptr rows
/// are the zero padding before the sequence start).
double causal_conv_tap(std::span<const double* const> window, const Matrix& kernel,
                       double bias);

enum class Mode { train, eval };
enum class UnaryKind { relu, sigmoid, exp, log };

class Tape;

class Var {
 public:
  Var() = default;
  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backprop = std::function<void(Tape&, const Matrix& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// A value that receives a gradient (a parameter leaf).
  Var param(Matrix value);
  /// A value that never receives a gradient.
  Var constant(Matrix value);

  const Matrix& value(Var v) const { return nodes_[v.id()].value; }
  const Matrix& value_at(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }

  /// Reverse accumulation from a 1×1 loss. Leaves the loss gradient at 1 and
  /// every reachable gradient populated; call at most once per tape.
  void backward(Var loss);

  /// Gradient of the last backward loss w.r.t. v; zeros when v was unreachable.
  Matrix grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }

  // Used by operations to record nodes.
  Var record(Matrix value, bool requires_grad, Backprop backprop);
  void accumulate(Var v, const Matrix& g);
  void accumulate_scaled(Var v, const Matrix& g, double scale);
  Matrix& grad_slot(Var v);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backprop backprop;
  };
  std::vector<Node> nodes_;
};

// Tracked operations. All operands must live on the same tape.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var add_row_bias(Var x, Var bias);  // bias is 1×cols, added to every row
Var unary(Var x, UnaryKind kind);
inline Var relu(Var x) { return unary(x, UnaryKind::relu); }
inline Var sigmoid(Var x) { return unary(x, UnaryKind::sigmoid); }
inline Var exp(Var x) { return unary(x, UnaryKind::exp); }
inline Var log(Var x) { return unary(x, UnaryKind::log); }
Var clamp(Var x, double lo, double hi);
/// ln sigmoid(x), with the value clamped to [lo, hi]. The gradient sigmoid(-x)
/// passes through the clamp so saturated inputs still receive a signal.
Var log_sigmoid(Var x, double lo, double hi);
Var scale(Var x, double factor);
Var hadamard_const(Var x, const Matrix& weights);
Var sum(Var x);
Var row_softmax(Var x);
Var dropout(Var x, double rate, Mode mode, std::mt19937_64& rng);
Var concat_cols(std::span<const Var> parts);
/// x: T×C sequence, kernel: K×C taps (row K-1 multiplies the current step),
/// bias: 1×1. Output T×1 with left zero padding only.
Var causal_conv1d(Var x, Var kernel, Var bias);
/// Mean of the k largest entries; ties broken toward the lower index.
Var topk_mean(Var x, std::size_t k);

/// Indices selected by topk_mean (descending value, ties by lower index).
std::vector<std::size_t> topk_indices(std::span<const double> values, std::size_t k);

}  // namespace hlnet

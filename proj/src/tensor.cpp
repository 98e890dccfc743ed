#include "hlnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <string>

#include "hlnet/error.hpp"

namespace hlnet {

namespace {

std::string dims(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + dims(a) + " vs " + dims(b));
  }
}

void require_same_tape(Var a, Var b, const char* op) {
  if (!a.valid() || a.tape() != b.tape()) {
    throw ArgumentError(std::string(op) + ": operands live on different tapes");
  }
}

// c(i,:) += a(i,k) * b(k,:) for k ascending. Zero multipliers are skipped;
// for finite b this leaves every sum unchanged.
void gemm_accumulate(const double* a, const double* b, double* c, std::size_t m,
                     std::size_t n, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * p;
    const double* ai = a + i * n;
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = ai[k];
      if (aik == 0.0) continue;
      const double* bk = b + k * p;
      for (std::size_t j = 0; j < p; ++j) ci[j] += aik * bk[j];
    }
  }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("Matrix: data length " + std::to_string(data_.size()) +
                     " does not match " + std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("Matrix::from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::column(std::span<const double> values) {
  return Matrix(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Matrix::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

bool bit_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         (a.size() == 0 ||
          std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ (" + dims(a) + " x " + dims(b) + ")");
  }
  Matrix c(a.rows(), b.cols());
  gemm_accumulate(a.data().data(), b.data().data(), c.data().data(), a.rows(), a.cols(),
                  b.cols());
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: row counts differ (" + dims(a) + " vs " + dims(b) + ")");
  }
  const std::size_t n = a.cols();
  const std::size_t p = b.cols();
  Matrix c(n, p);
  double* cd = c.data().data();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* ak = a.data().data() + k * n;
    const double* bk = b.data().data() + k * p;
    for (std::size_t i = 0; i < n; ++i) {
      const double aki = ak[i];
      if (aki == 0.0) continue;
      double* ci = cd + i * p;
      for (std::size_t j = 0; j < p; ++j) ci[j] += aki * bk[j];
    }
  }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: column counts differ (" + dims(a) + " vs " + dims(b) + ")");
  }
  return matmul(a, transpose(b));
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Matrix row_softmax(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto in = x.row(i);
    auto out = y.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      out[j] = std::exp(in[j] - mx);
      z += out[j];
    }
    for (double& v : out) v /= z;
  }
  return y;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double causal_conv_tap(std::span<const double* const> window, const Matrix& kernel,
                       double bias) {
  double acc = 0.0;
  for (std::size_t k = 0; k < kernel.rows(); ++k) {
    const double* x = window[k];
    if (x == nullptr) continue;
    const auto w = kernel.row(k);
    for (std::size_t c = 0; c < w.size(); ++c) acc += w[c] * x[c];
  }
  return acc + bias;
}

// ---------------------------------------------------------------------------

const Matrix& Var::value() const { return tape_->value(*this); }

Var Tape::param(Matrix value) { return record(std::move(value), true, nullptr); }

Var Tape::constant(Matrix value) { return record(std::move(value), false, nullptr); }

Var Tape::record(Matrix value, bool requires_grad, Backprop backprop) {
  nodes_.push_back(Node{std::move(value), Matrix{}, requires_grad, std::move(backprop)});
  return Var(this, nodes_.size() - 1);
}

Matrix& Tape::grad_slot(Var v) {
  Node& n = nodes_[v.id()];
  if (n.grad.empty() && n.value.size() != 0) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(Var v, const Matrix& g) {
  if (!nodes_[v.id()].requires_grad) return;
  Matrix& slot = grad_slot(v);
  auto dst = slot.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Tape::accumulate_scaled(Var v, const Matrix& g, double scale) {
  if (!nodes_[v.id()].requires_grad) return;
  Matrix& slot = grad_slot(v);
  auto dst = slot.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw ArgumentError("backward: loss belongs to another tape");
  const Matrix& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ShapeError("backward: loss must be 1x1, got " + dims(lv));
  }
  for (Node& n : nodes_) n.grad = Matrix{};
  grad_slot(loss)[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backprop || n.grad.empty()) continue;
    n.backprop(*this, n.grad);
  }
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.empty()) return Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  require_same_tape(a, b, "matmul");
  Tape& t = *a.tape();
  Matrix out = matmul(a.value(), b.value());
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.record(std::move(out), rg, [a, b](Tape& tape, const Matrix& g) {
    if (tape.requires_grad(a)) tape.accumulate(a, matmul_nt(g, b.value()));
    if (tape.requires_grad(b)) tape.accumulate(b, matmul_tn(a.value(), g));
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b, "add");
  require_same_shape(a.value(), b.value(), "add");
  Tape& t = *a.tape();
  Matrix out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.record(std::move(out), rg, [a, b](Tape& tape, const Matrix& g) {
    tape.accumulate(a, g);
    tape.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b, "sub");
  require_same_shape(a.value(), b.value(), "sub");
  Tape& t = *a.tape();
  Matrix out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.record(std::move(out), rg, [a, b](Tape& tape, const Matrix& g) {
    tape.accumulate(a, g);
    tape.accumulate_scaled(b, g, -1.0);
  });
}

Var add_row_bias(Var x, Var bias) {
  require_same_tape(x, bias, "add_row_bias");
  const Matrix& xv = x.value();
  const Matrix& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != xv.cols()) {
    throw ShapeError("add_row_bias: bias " + dims(bv) + " does not fit " + dims(xv));
  }
  Tape& t = *x.tape();
  Matrix out = xv;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bv[j];
  }
  const bool rg = t.requires_grad(x) || t.requires_grad(bias);
  return t.record(std::move(out), rg, [x, bias](Tape& tape, const Matrix& g) {
    tape.accumulate(x, g);
    if (tape.requires_grad(bias)) {
      Matrix gb(1, g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i) {
        auto r = g.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) gb[j] += r[j];
      }
      tape.accumulate(bias, gb);
    }
  });
}

Var unary(Var x, UnaryKind kind) {
  Tape& t = *x.tape();
  const Matrix& xv = x.value();
  Matrix out(xv.rows(), xv.cols());
  auto in = xv.data();
  auto o = out.data();
  switch (kind) {
    case UnaryKind::relu:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] > 0.0 ? in[i] : 0.0;
      break;
    case UnaryKind::sigmoid:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = stable_sigmoid(in[i]);
      break;
    case UnaryKind::exp:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::exp(in[i]);
      break;
    case UnaryKind::log:
      for (std::size_t i = 0; i < o.size(); ++i) {
        if (!(in[i] > 0.0)) throw ArgumentError("log: non-positive input");
        o[i] = std::log(in[i]);
      }
      break;
  }
  const std::size_t self = t.size();
  return t.record(std::move(out), t.requires_grad(x), [x, kind, self](Tape& tape, const Matrix& g) {
    const auto in = x.value().data();
    const auto y = tape.value_at(self).data();
    Matrix dx(g.rows(), g.cols());
    auto d = dx.data();
    auto gd = g.data();
    switch (kind) {
      case UnaryKind::relu:
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = in[i] > 0.0 ? gd[i] : 0.0;
        break;
      case UnaryKind::sigmoid:
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = gd[i] * y[i] * (1.0 - y[i]);
        break;
      case UnaryKind::exp:
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = gd[i] * y[i];
        break;
      case UnaryKind::log:
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = gd[i] / in[i];
        break;
    }
    tape.accumulate(x, dx);
  });
}

Var clamp(Var x, double lo, double hi) {
  Tape& t = *x.tape();
  Matrix out = x.value();
  for (double& v : out.data()) v = std::clamp(v, lo, hi);
  return t.record(std::move(out), t.requires_grad(x), [x, lo, hi](Tape& tape, const Matrix& g) {
    const auto in = x.value().data();
    Matrix dx(g.rows(), g.cols());
    auto d = dx.data();
    auto gd = g.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = (in[i] > lo && in[i] < hi) ? gd[i] : 0.0;
    tape.accumulate(x, dx);
  });
}

Var log_sigmoid(Var x, double lo, double hi) {
  Tape& t = *x.tape();
  Matrix out = x.value();
  for (double& v : out.data()) {
    const double ls = v >= 0.0 ? -std::log1p(std::exp(-v)) : v - std::log1p(std::exp(v));
    v = std::clamp(ls, lo, hi);
  }
  return t.record(std::move(out), t.requires_grad(x), [x](Tape& tape, const Matrix& g) {
    const auto in = x.value().data();
    Matrix dx(g.rows(), g.cols());
    auto d = dx.data();
    auto gd = g.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = gd[i] * stable_sigmoid(-in[i]);
    tape.accumulate(x, dx);
  });
}

Var scale(Var x, double factor) {
  Tape& t = *x.tape();
  Matrix out = x.value();
  for (double& v : out.data()) v *= factor;
  return t.record(std::move(out), t.requires_grad(x), [x, factor](Tape& tape, const Matrix& g) {
    tape.accumulate_scaled(x, g, factor);
  });
}

Var hadamard_const(Var x, const Matrix& weights) {
  require_same_shape(x.value(), weights, "hadamard_const");
  Tape& t = *x.tape();
  Matrix out = x.value();
  auto o = out.data();
  auto w = weights.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= w[i];
  return t.record(std::move(out), t.requires_grad(x), [x, weights](Tape& tape, const Matrix& g) {
    Matrix dx = g;
    auto d = dx.data();
    auto wd = weights.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] *= wd[i];
    tape.accumulate(x, dx);
  });
}

Var sum(Var x) {
  Tape& t = *x.tape();
  Matrix out(1, 1, x.value().sum());
  return t.record(std::move(out), t.requires_grad(x), [x](Tape& tape, const Matrix& g) {
    tape.accumulate(x, Matrix(x.rows(), x.cols(), g[0]));
  });
}

Var row_softmax(Var x) {
  Tape& t = *x.tape();
  const std::size_t self = t.size();
  return t.record(row_softmax(x.value()), t.requires_grad(x), [x, self](Tape& tape, const Matrix& g) {
    const Matrix& y = tape.value_at(self);
    Matrix dx(y.rows(), y.cols());
    for (std::size_t i = 0; i < y.rows(); ++i) {
      const auto yr = y.row(i);
      const auto gr = g.row(i);
      double dot = 0.0;
      for (std::size_t j = 0; j < yr.size(); ++j) dot += gr[j] * yr[j];
      auto dr = dx.row(i);
      for (std::size_t j = 0; j < yr.size(); ++j) dr[j] = yr[j] * (gr[j] - dot);
    }
    tape.accumulate(x, dx);
  });
}

Var dropout(Var x, double rate, Mode mode, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ArgumentError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::eval || rate == 0.0) return x;
  Tape& t = *x.tape();
  const double keep_scale = 1.0 / (1.0 - rate);
  Matrix mask(x.rows(), x.cols());
  for (double& m : mask.data()) m = uniform01(rng) < rate ? 0.0 : keep_scale;
  Matrix out = x.value();
  auto o = out.data();
  auto md = mask.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= md[i];
  return t.record(std::move(out), t.requires_grad(x),
                  [x, mask = std::move(mask)](Tape& tape, const Matrix& g) {
                    Matrix dx = g;
                    auto d = dx.data();
                    auto m = mask.data();
                    for (std::size_t i = 0; i < d.size(); ++i) d[i] *= m[i];
                    tape.accumulate(x, dx);
                  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ArgumentError("concat_cols: no parts");
  Tape& t = *parts.front().tape();
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  bool rg = false;
  for (const Var& p : parts) {
    require_same_tape(parts.front(), p, "concat_cols");
    if (p.rows() != rows) {
      throw ShapeError("concat_cols: row count " + std::to_string(p.rows()) + " differs from " +
                       std::to_string(rows));
    }
    cols += p.cols();
    rg = rg || t.requires_grad(p);
  }
  Matrix out(rows, cols);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Matrix& v = p.value();
    for (std::size_t i = 0; i < rows; ++i) {
      std::copy(v.row(i).begin(), v.row(i).end(), out.row(i).begin() + offset);
    }
    offset += v.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.record(std::move(out), rg, [inputs = std::move(inputs)](Tape& tape, const Matrix& g) {
    std::size_t off = 0;
    for (const Var& p : inputs) {
      const std::size_t c = p.cols();
      if (tape.requires_grad(p)) {
        Matrix gp(g.rows(), c);
        for (std::size_t i = 0; i < g.rows(); ++i) {
          auto src = g.row(i).subspan(off, c);
          std::copy(src.begin(), src.end(), gp.row(i).begin());
        }
        tape.accumulate(p, gp);
      }
      off += c;
    }
  });
}

Var causal_conv1d(Var x, Var kernel, Var bias) {
  require_same_tape(x, kernel, "causal_conv1d");
  require_same_tape(x, bias, "causal_conv1d");
  const Matrix& xv = x.value();
  const Matrix& kv = kernel.value();
  if (kv.cols() != xv.cols()) {
    throw ShapeError("causal_conv1d: kernel " + dims(kv) + " does not fit input " + dims(xv));
  }
  if (bias.value().size() != 1) throw ShapeError("causal_conv1d: bias must be 1x1");
  if (kv.rows() == 0) throw ShapeError("causal_conv1d: empty kernel");
  Tape& t = *x.tape();
  const std::size_t len = xv.rows();
  const std::size_t width = kv.rows();
  const double b = bias.value()[0];
  Matrix out(len, 1);
  std::vector<const double*> window(width);
  for (std::size_t s = 0; s < len; ++s) {
    for (std::size_t k = 0; k < width; ++k) {
      // Input step feeding tap k is s - (width - 1) + k.
      const std::size_t back = width - 1 - k;
      window[k] = s >= back ? xv.row(s - back).data() : nullptr;
    }
    out[s] = causal_conv_tap(window, kv, b);
  }
  const bool rg = t.requires_grad(x) || t.requires_grad(kernel) || t.requires_grad(bias);
  return t.record(std::move(out), rg, [x, kernel, bias](Tape& tape, const Matrix& g) {
    const Matrix& xv = x.value();
    const Matrix& kv = kernel.value();
    const std::size_t width = kv.rows();
    const std::size_t channels = kv.cols();
    Matrix dx(xv.rows(), channels);
    Matrix dk(width, channels);
    double db = 0.0;
    for (std::size_t s = 0; s < xv.rows(); ++s) {
      const double gs = g[s];
      db += gs;
      if (gs == 0.0) continue;
      for (std::size_t k = 0; k < width; ++k) {
        const std::size_t back = width - 1 - k;
        if (s < back) continue;
        const auto xr = xv.row(s - back);
        auto dxr = dx.row(s - back);
        const auto kr = kv.row(k);
        auto dkr = dk.row(k);
        for (std::size_t c = 0; c < channels; ++c) {
          dxr[c] += gs * kr[c];
          dkr[c] += gs * xr[c];
        }
      }
    }
    tape.accumulate(x, dx);
    tape.accumulate(kernel, dk);
    tape.accumulate(bias, Matrix(1, 1, db));
  });
}

std::vector<std::size_t> topk_indices(std::span<const double> values, std::size_t k) {
  if (k < 1 || k > values.size()) {
    throw ArgumentError("topk: k=" + std::to_string(k) + " outside [1, " +
                        std::to_string(values.size()) + "]");
  }
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      return values[a] > values[b] || (values[a] == values[b] && a < b);
                    });
  idx.resize(k);
  return idx;
}

Var topk_mean(Var x, std::size_t k) {
  Tape& t = *x.tape();
  auto chosen = topk_indices(x.value().data(), k);
  double total = 0.0;
  for (std::size_t i : chosen) total += x.value()[i];
  Matrix out(1, 1, total / static_cast<double>(k));
  return t.record(std::move(out), t.requires_grad(x),
                  [x, chosen = std::move(chosen)](Tape& tape, const Matrix& g) {
                    Matrix dx(x.rows(), x.cols());
                    const double share = g[0] / static_cast<double>(chosen.size());
                    for (std::size_t i : chosen) dx[i] = share;
                    tape.accumulate(x, dx);
                  });
}

}  // namespace hlnet

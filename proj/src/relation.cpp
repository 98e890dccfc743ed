#include "hlnet/relation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "hlnet/error.hpp"

namespace hlnet {

void RelationConfig::validate() const {
  if (!(tau >= 0.0 && tau < 1.0)) {
    throw ArgumentError("relation: tau must lie in [0, 1), got " + std::to_string(tau));
  }
  if (!(gamma > 0.0)) throw ArgumentError("relation: gamma must be positive");
  if (!(sigma > 0.0)) throw ArgumentError("relation: sigma must be positive");
}

Matrix similarity_matrix(const Matrix& features, SimilarityKind kind) {
  const std::size_t n = features.rows();
  if (n == 0) throw ShapeError("similarity_matrix: empty feature matrix");
  Matrix gram = matmul_nt(features, features);
  if (kind == SimilarityKind::cosine_v1) {
    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
      norms[i] = std::sqrt(gram(i, i));
      if (norms[i] == 0.0) {
        throw ArgumentError("similarity_matrix: snippet " + std::to_string(i) +
                            " has a zero feature vector; cosine similarity is undefined");
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) gram(i, j) /= norms[i] * norms[j];
      gram(i, i) = 1.0;
    }
    return gram;
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto r = gram.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    for (double& v : r) v = std::exp(v - mx);
  }
  return gram;
}

Matrix threshold_filter(const Matrix& s, double tau) {
  Matrix out = s;
  for (double& v : out.data()) {
    if (v <= tau) v = 0.0;
  }
  return out;
}

RelationMatrix normalize(const Matrix& a, ZeroHandling zeros) {
  if (a.rows() != a.cols()) throw ShapeError("normalize: relation matrix must be square");
  if (zeros == ZeroHandling::literal) return {row_softmax(a)};
  Matrix masked = a;
  for (double& v : masked.data()) {
    if (v == 0.0) v = -std::numeric_limits<double>::infinity();
  }
  // A fully masked row has no surviving relation; fall back to uniform.
  for (std::size_t i = 0; i < masked.rows(); ++i) {
    auto r = masked.row(i);
    if (std::all_of(r.begin(), r.end(), [](double v) { return std::isinf(v); })) {
      std::fill(r.begin(), r.end(), 0.0);
    }
  }
  return {row_softmax(masked)};
}

Matrix proximity_raw(std::size_t length, double gamma, double sigma) {
  if (length == 0) throw ArgumentError("proximity_matrix: length must be positive");
  Matrix a(length, length);
  for (std::size_t i = 0; i < length; ++i) {
    for (std::size_t j = 0; j < length; ++j) {
      const double d = std::abs(static_cast<double>(i) - static_cast<double>(j));
      a(i, j) = std::exp(-std::pow(d, gamma) / sigma);
    }
  }
  return a;
}

RelationMatrix proximity_matrix(std::size_t length, double gamma, double sigma,
                                ProximityNorm norm) {
  Matrix raw = proximity_raw(length, gamma, sigma);
  if (norm == ProximityNorm::raw) return {std::move(raw)};
  return {row_softmax(raw)};
}

double rho(double closeness) { return 1.0 / (1.0 + std::exp(-(closeness - 0.5) / 0.1)); }

Matrix score_relation_raw(std::span<const double> activations) {
  const std::size_t n = activations.size();
  if (n == 0) throw ArgumentError("score_relation_matrix: empty activation sequence");
  std::vector<double> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = stable_sigmoid(activations[i]);
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) = rho(1.0 - std::abs(p[i] - p[j]));
  return a;
}

RelationMatrix score_relation_matrix(std::span<const double> activations) {
  return {row_softmax(score_relation_raw(activations))};
}

RelationMatrix holistic_matrix(const Matrix& raw_features, const RelationConfig& config) {
  config.validate();
  return normalize(threshold_filter(similarity_matrix(raw_features, config.similarity),
                                    config.tau),
                   config.zero_handling);
}

}  // namespace hlnet

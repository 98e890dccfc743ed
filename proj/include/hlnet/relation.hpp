#pragma once

// Snippet-to-snippet aggregation weights for the three relation branches.
// All matrices here are plain values: none of them carries a gradient.

#include <cstddef>
#include <span>

#include "hlnet/tensor.hpp"

namespace hlnet {

enum class SimilarityKind { cosine_v1, exp_v3 };

/// How thresholded-away entries enter the row softmax.
enum class ZeroHandling {
  literal,  // zero stays zero and still receives exp(0) mass
  masked,   // zero becomes -inf and receives no mass
};

/// Whether the proximity prior is row-softmax normalized or used raw.
enum class ProximityNorm { softmax, raw };

struct RelationConfig {
  double tau = 0.7;
  double gamma = 1.0;
  double sigma = 1.0;
  SimilarityKind similarity = SimilarityKind::cosine_v1;
  ZeroHandling zero_handling = ZeroHandling::literal;
  ProximityNorm proximity_norm = ProximityNorm::softmax;

  /// Throws ArgumentError when tau ∉ [0,1), gamma ≤ 0 or sigma ≤ 0.
  void validate() const;
};

/// T'×T' aggregation weights.
struct RelationMatrix {
  Matrix weights;
  std::size_t size() const { return weights.rows(); }
};

/// Pairwise similarity of the raw (pre-fusion) concatenated features.
/// cosine_v1 rejects all-zero rows.
Matrix similarity_matrix(const Matrix& features, SimilarityKind kind);

/// Entries ≤ tau become 0; the rest are kept unchanged.
Matrix threshold_filter(const Matrix& s, double tau);

/// Row softmax of a square matrix. Under ZeroHandling::masked, exact zeros are
/// excluded from the normalization.
RelationMatrix normalize(const Matrix& a, ZeroHandling zeros = ZeroHandling::literal);

/// exp(-|i-j|^gamma / sigma) before normalization.
Matrix proximity_raw(std::size_t length, double gamma, double sigma);
RelationMatrix proximity_matrix(std::size_t length, double gamma, double sigma,
                                ProximityNorm norm = ProximityNorm::softmax);

/// Logistic sharpening of score closeness around 0.5.
double rho(double closeness);

/// rho(1 - |sigmoid(c_i) - sigmoid(c_j)|) before normalization.
Matrix score_relation_raw(std::span<const double> activations);
RelationMatrix score_relation_matrix(std::span<const double> activations);

/// Holistic weights from raw features: similarity, threshold, normalize.
RelationMatrix holistic_matrix(const Matrix& raw_features, const RelationConfig& config);

}  // namespace hlnet

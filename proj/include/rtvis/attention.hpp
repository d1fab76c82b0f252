#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "rtvis/pyramid.hpp"
#include "rtvis/tensor.hpp"

namespace rtvis {

/// Instrumented operation counts. One unit is one multiply-add, so the
/// Q·Kᵀ product of an L1×d by d×L2 pair counts L1·L2·d, the same unit the
/// analytic cost model uses.
struct FlopReport {
  // cross-attention
  std::uint64_t score = 0;              // Q·Kᵀ
  std::uint64_t weighted_sum = 0;       // A·V
  std::uint64_t query_projection = 0;   // L1·d²
  std::uint64_t key_projection = 0;     // L2·d²
  std::uint64_t value_projection = 0;   // L2·d²
  std::uint64_t output_projection = 0;  // L1·d²
  std::uint64_t score_elems = 0;        // attention matrix entries, L1·L2
  std::uint64_t sequence_elems = 0;     // projected sequences held, (L1+L2)·d
  std::uint64_t cross_calls = 0;

  // deformable scale attention
  std::uint64_t scale_projection = 0;   // fused value·output projection
  std::uint64_t scale_heads = 0;        // offset and weight heads
  std::uint64_t scale_sampling = 0;     // bilinear taps × d
  std::uint64_t scale_layers = 0;

  /// Quadratic part of the time complexity: 2·L1·L2·d.
  std::uint64_t attention_matrix_terms() const noexcept { return score + weighted_sum; }
  /// Time complexity in the analytic model's accounting, which charges one
  /// d×d projection per input sequence: 2·L1·L2·d + (L1+L2)·d².
  std::uint64_t analytic_time() const noexcept { return score + weighted_sum + query_projection + key_projection; }
  /// L1·L2 + (L1+L2)·d.
  std::uint64_t analytic_space() const noexcept { return score_elems + sequence_elems; }

  FlopReport& operator+=(const FlopReport& o) noexcept;
  friend bool operator==(const FlopReport&, const FlopReport&) = default;
};

/// Query/key/value/output projections, each d×d and applied on the right (x·W).
struct ProjectionWeights {
  Matrix query, key, value, output;

  static ProjectionWeights zeros(std::size_t dim);
  static ProjectionWeights identity(std::size_t dim);
  static ProjectionWeights uniform(std::size_t dim, std::uint64_t seed, float bound = 0.1f);
  std::size_t dim() const noexcept { return static_cast<std::size_t>(query.rows()); }
  void validate(std::size_t dim) const;
};

/// One deformable encoder layer used as scale attention.
struct ScaleAttentionLayer {
  Matrix offset_head;  // d × (levels·points·2), (dy, dx) in pixels of the sampled level
  Vector offset_bias;
  Matrix weight_head;  // d × (levels·points)
  Vector weight_bias;
  Matrix value;        // d×d
  Matrix output;       // d×d

  static ScaleAttentionLayer zeros(std::size_t dim, std::size_t points);
  static ScaleAttentionLayer uniform(std::size_t dim, std::size_t points, std::uint64_t seed, float bound = 0.1f);
};

struct AttentionParams {
  std::size_t dim = 0;
  std::size_t heads = 1;
  std::size_t points = 4;  // sampling points per level
  ProjectionWeights fusion;
  std::vector<ScaleAttentionLayer> scale_layers;

  static constexpr std::size_t kDefaultScaleLayers = 3;

  static AttentionParams zeros(std::size_t dim, std::size_t scale_layers = kDefaultScaleLayers);
  /// Seeded uniform [-0.1, 0.1] weights everywhere, zero biases.
  static AttentionParams uniform(std::size_t dim, std::uint64_t seed,
                                 std::size_t scale_layers = kDefaultScaleLayers);
  void validate() const;
};

/// Per-head attention matrices softmax((q·Wq)(kv·Wk)ᵀ/√d_head).
std::vector<Matrix> attention_weights(const Matrix& q_seq, const Matrix& kv_seq, const ProjectionWeights& w,
                                      std::size_t heads = 1);

/// softmax((q·Wq)(kv·Wk)ᵀ/√d)·(kv·Wv)·Wo, without residual.
Matrix cross_attention(const Matrix& q_seq, const Matrix& kv_seq, const ProjectionWeights& w,
                       std::size_t heads = 1, FlopReport* report = nullptr);

using EnhancedFeatures = std::pair<FeaturePyramid, TextTokenBatch>;

/// Baseline fusion: every token of every level attends to the text, with residual.
EnhancedFeatures hybrid_modality_scale_attention(const FeaturePyramid& pyr, const TextTokenBatch& text,
                                                 const AttentionParams& params, FlopReport* report = nullptr);

/// Only the stride-64 level attends to the text; finer levels pass through untouched.
EnhancedFeatures modality_attention(const FeaturePyramid& pyr, const TextTokenBatch& text,
                                    const AttentionParams& params, FlopReport* report = nullptr);

/// Convex sampling aggregate of one deformable layer before projection and
/// residual: for every token (stacked fine to coarse), the softmax-weighted
/// sum of bilinear samples taken around its reference point on all levels.
Matrix scale_attention_samples(const FeaturePyramid& pyr, const ScaleAttentionLayer& layer,
                               std::size_t points, FlopReport* report = nullptr);

FeaturePyramid scale_attention_layer(const FeaturePyramid& pyr, const ScaleAttentionLayer& layer,
                                     std::size_t points, FlopReport* report = nullptr);

/// All configured deformable layers in sequence.
FeaturePyramid scale_attention(const FeaturePyramid& pyr, const AttentionParams& params,
                               FlopReport* report = nullptr);

/// modality_attention followed by scale_attention.
EnhancedFeatures decoupled_feature_enhancer(const FeaturePyramid& pyr, const TextTokenBatch& text,
                                            const AttentionParams& params, FlopReport* report = nullptr);

}  // namespace rtvis

#include "rtvis/attention.hpp"

#include <cmath>
#include <random>
#include <string>

namespace rtvis {
namespace {

using Index = Eigen::Index;

Matrix uniform_matrix(Index rows, Index cols, std::mt19937_64& rng, float bound) {
  std::uniform_real_distribution<float> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

void require_square(const Matrix& m, std::size_t dim, const char* name) {
  if (static_cast<std::size_t>(m.rows()) != dim || static_cast<std::size_t>(m.cols()) != dim) {
    throw ShapeError(std::string("projection '") + name + "' must be " + std::to_string(dim) + "x" +
                     std::to_string(dim));
  }
}

std::uint64_t u64(Index v) { return static_cast<std::uint64_t>(v); }

}  // namespace

FlopReport& FlopReport::operator+=(const FlopReport& o) noexcept {
  score += o.score;
  weighted_sum += o.weighted_sum;
  query_projection += o.query_projection;
  key_projection += o.key_projection;
  value_projection += o.value_projection;
  output_projection += o.output_projection;
  score_elems += o.score_elems;
  sequence_elems += o.sequence_elems;
  cross_calls += o.cross_calls;
  scale_projection += o.scale_projection;
  scale_heads += o.scale_heads;
  scale_sampling += o.scale_sampling;
  scale_layers += o.scale_layers;
  return *this;
}

ProjectionWeights ProjectionWeights::zeros(std::size_t dim) {
  const auto d = static_cast<Index>(dim);
  return {Matrix::Zero(d, d), Matrix::Zero(d, d), Matrix::Zero(d, d), Matrix::Zero(d, d)};
}

ProjectionWeights ProjectionWeights::identity(std::size_t dim) {
  const auto d = static_cast<Index>(dim);
  return {Matrix::Identity(d, d), Matrix::Identity(d, d), Matrix::Identity(d, d), Matrix::Identity(d, d)};
}

ProjectionWeights ProjectionWeights::uniform(std::size_t dim, std::uint64_t seed, float bound) {
  std::mt19937_64 rng(seed);
  const auto d = static_cast<Index>(dim);
  ProjectionWeights w;
  w.query = uniform_matrix(d, d, rng, bound);
  w.key = uniform_matrix(d, d, rng, bound);
  w.value = uniform_matrix(d, d, rng, bound);
  w.output = uniform_matrix(d, d, rng, bound);
  return w;
}

void ProjectionWeights::validate(std::size_t dim) const {
  require_square(query, dim, "query");
  require_square(key, dim, "key");
  require_square(value, dim, "value");
  require_square(output, dim, "output");
}

ScaleAttentionLayer ScaleAttentionLayer::zeros(std::size_t dim, std::size_t points) {
  const auto d = static_cast<Index>(dim);
  const auto samples = static_cast<Index>(kPyramidLevels * points);
  return {Matrix::Zero(d, 2 * samples), Vector::Zero(2 * samples), Matrix::Zero(d, samples),
          Vector::Zero(samples),        Matrix::Zero(d, d),         Matrix::Zero(d, d)};
}

ScaleAttentionLayer ScaleAttentionLayer::uniform(std::size_t dim, std::size_t points, std::uint64_t seed,
                                                 float bound) {
  std::mt19937_64 rng(seed);
  const auto d = static_cast<Index>(dim);
  const auto samples = static_cast<Index>(kPyramidLevels * points);
  ScaleAttentionLayer layer = zeros(dim, points);
  layer.offset_head = uniform_matrix(d, 2 * samples, rng, bound);
  layer.weight_head = uniform_matrix(d, samples, rng, bound);
  layer.value = uniform_matrix(d, d, rng, bound);
  layer.output = uniform_matrix(d, d, rng, bound);
  return layer;
}

AttentionParams AttentionParams::zeros(std::size_t dim, std::size_t scale_layers) {
  AttentionParams p;
  p.dim = dim;
  p.fusion = ProjectionWeights::zeros(dim);
  p.scale_layers.assign(scale_layers, ScaleAttentionLayer::zeros(dim, p.points));
  return p;
}

AttentionParams AttentionParams::uniform(std::size_t dim, std::uint64_t seed, std::size_t scale_layers) {
  AttentionParams p;
  p.dim = dim;
  p.fusion = ProjectionWeights::uniform(dim, seed);
  for (std::size_t i = 0; i < scale_layers; ++i) {
    p.scale_layers.push_back(ScaleAttentionLayer::uniform(dim, p.points, seed + 1 + i));
  }
  return p;
}

void AttentionParams::validate() const {
  if (dim == 0) throw ShapeError("AttentionParams: dim must be positive");
  if (heads == 0 || dim % heads != 0) throw ShapeError("AttentionParams: heads must divide dim");
  if (points == 0) throw ShapeError("AttentionParams: points must be positive");
  fusion.validate(dim);
  const auto samples = static_cast<Index>(kPyramidLevels * points);
  for (const auto& layer : scale_layers) {
    require_square(layer.value, dim, "scale value");
    require_square(layer.output, dim, "scale output");
    if (layer.offset_head.rows() != static_cast<Index>(dim) || layer.offset_head.cols() != 2 * samples ||
        layer.offset_bias.size() != 2 * samples || layer.weight_head.rows() != static_cast<Index>(dim) ||
        layer.weight_head.cols() != samples || layer.weight_bias.size() != samples) {
      throw ShapeError("AttentionParams: scale-attention heads do not match dim/points");
    }
  }
}

std::vector<Matrix> attention_weights(const Matrix& q_seq, const Matrix& kv_seq, const ProjectionWeights& w,
                                      std::size_t heads) {
  const Index d = q_seq.cols();
  if (kv_seq.cols() != d) throw ShapeError("attention_weights: query and key widths differ");
  if (q_seq.rows() < 1 || kv_seq.rows() < 1) throw ShapeError("attention_weights: empty sequence");
  w.validate(static_cast<std::size_t>(d));
  if (heads == 0 || d % static_cast<Index>(heads) != 0) throw ShapeError("attention_weights: heads must divide d");
  const Index dh = d / static_cast<Index>(heads);
  const Matrix q = q_seq * w.query;
  const Matrix k = kv_seq * w.key;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  std::vector<Matrix> out;
  for (Index h = 0; h < static_cast<Index>(heads); ++h) {
    Matrix s = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * scale;
    out.push_back(softmax_rows(s));
  }
  return out;
}

Matrix cross_attention(const Matrix& q_seq, const Matrix& kv_seq, const ProjectionWeights& w, std::size_t heads,
                       FlopReport* report) {
  const Index d = q_seq.cols();
  if (kv_seq.cols() != d) {
    throw ShapeError("cross_attention: query width " + std::to_string(d) + " != key width " +
                     std::to_string(kv_seq.cols()));
  }
  if (q_seq.rows() < 1 || kv_seq.rows() < 1) throw ShapeError("cross_attention: empty sequence");
  w.validate(static_cast<std::size_t>(d));
  if (heads == 0 || d % static_cast<Index>(heads) != 0) throw ShapeError("cross_attention: heads must divide d");

  const Index l1 = q_seq.rows(), l2 = kv_seq.rows();
  const Index dh = d / static_cast<Index>(heads);
  const Matrix q = q_seq * w.query;
  const Matrix k = kv_seq * w.key;
  const Matrix v = kv_seq * w.value;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

  Matrix mixed(l1, d);
  Matrix scores(l1, l2);
  for (Index h = 0; h < static_cast<Index>(heads); ++h) {
    scores.noalias() = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose();
    scores *= scale;
    for (Index r = 0; r < l1; ++r) {
      auto row = scores.row(r);
      row = (row.array() - row.maxCoeff()).exp().matrix();
      row /= row.sum();
    }
    mixed.middleCols(h * dh, dh).noalias() = scores * v.middleCols(h * dh, dh);
  }
  Matrix out = mixed * w.output;

  if (report) {
    const std::uint64_t dd = u64(d) * u64(d);
    report->score += u64(l1) * u64(l2) * u64(d);
    report->weighted_sum += u64(l1) * u64(l2) * u64(d);
    report->query_projection += u64(l1) * dd;
    report->key_projection += u64(l2) * dd;
    report->value_projection += u64(l2) * dd;
    report->output_projection += u64(l1) * dd;
    report->score_elems += u64(l1) * u64(l2);
    report->sequence_elems += (u64(l1) + u64(l2)) * u64(d);
    report->cross_calls += 1;
  }
  return out;
}

namespace {

void check_fusion_inputs(const FeaturePyramid& pyr, const TextTokenBatch& text, const AttentionParams& params) {
  params.validate();
  if (pyr.dim() != params.dim || text.dim() != params.dim) {
    throw ShapeError("feature enhancer: pyramid d=" + std::to_string(pyr.dim()) + ", text d=" +
                     std::to_string(text.dim()) + ", params d=" + std::to_string(params.dim));
  }
}

}  // namespace

EnhancedFeatures hybrid_modality_scale_attention(const FeaturePyramid& pyr, const TextTokenBatch& text,
                                                 const AttentionParams& params, FlopReport* report) {
  check_fusion_inputs(pyr, text, params);
  Matrix visual = pyr.flatten();
  visual += cross_attention(visual, text.tokens(), params.fusion, params.heads, report);
  FeaturePyramid out = pyr;
  out.assign_flat(visual);
  return {std::move(out), text};
}

EnhancedFeatures modality_attention(const FeaturePyramid& pyr, const TextTokenBatch& text,
                                    const AttentionParams& params, FlopReport* report) {
  check_fusion_inputs(pyr, text, params);
  FeaturePyramid out = pyr;
  const std::size_t top = kPyramidLevels - 1;
  out.tokens(top) += cross_attention(pyr.tokens(top), text.tokens(), params.fusion, params.heads, report);
  return {std::move(out), text};
}

Matrix scale_attention_samples(const FeaturePyramid& pyr, const ScaleAttentionLayer& layer, std::size_t points,
                               FlopReport* report) {
  const Index d = static_cast<Index>(pyr.dim());
  const Index samples = static_cast<Index>(kPyramidLevels * points);
  if (layer.offset_head.rows() != d || layer.offset_head.cols() != 2 * samples || layer.weight_head.rows() != d ||
      layer.weight_head.cols() != samples || layer.offset_bias.size() != 2 * samples ||
      layer.weight_bias.size() != samples) {
    throw ShapeError("scale_attention: layer heads do not match pyramid d=" + std::to_string(d));
  }

  const Matrix queries = pyr.flatten();
  const Index total = queries.rows();
  const Matrix offsets = (queries * layer.offset_head).rowwise() + layer.offset_bias.transpose();
  const Matrix weights = softmax_rows((queries * layer.weight_head).rowwise() + layer.weight_bias.transpose());

  Matrix agg = Matrix::Zero(total, d);
  Index t = 0;
  for (std::size_t lq = 0; lq < kPyramidLevels; ++lq) {
    const LevelExtent& qe = pyr.level(lq).extent;
    for (std::size_t y = 0; y < qe.height; ++y) {
      for (std::size_t x = 0; x < qe.width; ++x, ++t) {
        // normalized reference point of this token, shared by all levels
        const double ry = (static_cast<double>(y) + 0.5) / static_cast<double>(qe.height);
        const double rx = (static_cast<double>(x) + 0.5) / static_cast<double>(qe.width);
        auto acc = agg.row(t);
        for (std::size_t l = 0; l < kPyramidLevels; ++l) {
          const LevelExtent& se = pyr.level(l).extent;
          const Matrix& level = pyr.tokens(l);
          for (std::size_t p = 0; p < points; ++p) {
            const Index s = static_cast<Index>(l * points + p);
            const double sy = ry * static_cast<double>(se.height) - 0.5 + offsets(t, 2 * s);
            const double sx = rx * static_cast<double>(se.width) - 0.5 + offsets(t, 2 * s + 1);
            const BilinearTaps taps = bilinear_taps(se.height, se.width, sy, sx);
            const double w = weights(t, s);
            for (int k = 0; k < 4; ++k) {
              const double tw = w * taps.weight[k];
              if (tw == 0.0) continue;
              acc += static_cast<float>(tw) * level.row(static_cast<Index>(taps.index[k]));
            }
          }
        }
      }
    }
  }

  if (report) {
    report->scale_heads += u64(total) * u64(d) * u64(3 * samples);
    report->scale_sampling += u64(total) * u64(samples) * 4 * u64(d);
  }
  return agg;
}

FeaturePyramid scale_attention_layer(const FeaturePyramid& pyr, const ScaleAttentionLayer& layer,
                                     std::size_t points, FlopReport* report) {
  const Index d = static_cast<Index>(pyr.dim());
  if (layer.value.rows() != d || layer.value.cols() != d || layer.output.rows() != d || layer.output.cols() != d) {
    throw ShapeError("scale_attention: value/output projections do not match pyramid d=" + std::to_string(d));
  }
  // Sampling is linear in the values, so sampling raw tokens and applying
  // value·output once equals projecting every level before sampling.
  const Matrix projection = layer.value * layer.output;
  Matrix tokens = pyr.flatten();
  tokens += scale_attention_samples(pyr, layer, points, report) * projection;
  if (report) {
    report->scale_projection += u64(d) * u64(d) * u64(d) + u64(tokens.rows()) * u64(d) * u64(d);
    report->scale_layers += 1;
  }
  FeaturePyramid out = pyr;
  out.assign_flat(tokens);
  return out;
}

FeaturePyramid scale_attention(const FeaturePyramid& pyr, const AttentionParams& params, FlopReport* report) {
  params.validate();
  if (pyr.dim() != params.dim) throw ShapeError("scale_attention: pyramid d does not match params");
  FeaturePyramid cur = pyr;
  for (const auto& layer : params.scale_layers) cur = scale_attention_layer(cur, layer, params.points, report);
  return cur;
}

EnhancedFeatures decoupled_feature_enhancer(const FeaturePyramid& pyr, const TextTokenBatch& text,
                                            const AttentionParams& params, FlopReport* report) {
  auto [fused, tokens] = modality_attention(pyr, text, params, report);
  return {scale_attention(fused, params, report), std::move(tokens)};
}

}  // namespace rtvis

#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "rtvis/attention.hpp"
#include "rtvis/cost_model.hpp"

using namespace rtvis;

namespace {

using Grid = std::vector<std::vector<double>>;

Grid to_grid(const Matrix& m) {
  Grid g(m.rows(), std::vector<double>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) g[i][j] = m(i, j);
  return g;
}

Grid product(const Grid& a, const Grid& b) {
  Grid out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) out[i][j] += a[i][k] * b[k][j];
  return out;
}

// Straight loops in double precision, one head at a time.
Grid reference_attention(const Matrix& q_seq, const Matrix& kv_seq, const ProjectionWeights& w, std::size_t heads) {
  const Grid q = product(to_grid(q_seq), to_grid(w.query));
  const Grid k = product(to_grid(kv_seq), to_grid(w.key));
  const Grid v = product(to_grid(kv_seq), to_grid(w.value));
  const std::size_t l1 = q.size(), l2 = k.size(), d = q[0].size(), dh = d / heads;
  Grid mixed(l1, std::vector<double>(d, 0.0));
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < l1; ++i) {
      std::vector<double> logits(l2, 0.0);
      for (std::size_t j = 0; j < l2; ++j) {
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) logits[j] += q[i][c] * k[j][c];
        logits[j] /= std::sqrt(double(dh));
      }
      double peak = logits[0];
      for (double x : logits) peak = std::max(peak, x);
      double total = 0.0;
      for (double& x : logits) total += (x = std::exp(x - peak));
      for (std::size_t j = 0; j < l2; ++j)
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) mixed[i][c] += logits[j] / total * v[j][c];
    }
  }
  return product(mixed, to_grid(w.output));
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, float bound = 1.0f) {
  std::uniform_real_distribution<float> dist(-bound, bound);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

FeaturePyramid random_pyramid(std::size_t h, std::size_t w, std::size_t d, std::mt19937_64& rng,
                              PyramidLayout layout = PyramidLayout::padded) {
  FeaturePyramid p = FeaturePyramid::zeros(h, w, d, layout);
  for (std::size_t i = 0; i < kPyramidLevels; ++i) {
    p.tokens(i) = random_matrix(p.tokens(i).rows(), p.tokens(i).cols(), rng);
  }
  return p;
}

TextTokenBatch random_text(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  return TextTokenBatch(random_matrix(Eigen::Index(n), Eigen::Index(d), rng));
}

}  // namespace

TEST_CASE("cross_attention matches the loop reference") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> len(1, 8), width(1, 8), pick(0, 3);
  int checked = 0;
  for (int inst = 0; inst < 150; ++inst) {
    const int d = width(rng);
    std::size_t heads = 1;
    if (d % 2 == 0 && pick(rng) == 0) heads = 2;
    const Matrix q = random_matrix(len(rng), d, rng);
    const Matrix kv = random_matrix(len(rng), d, rng);
    const ProjectionWeights w = pick(rng) == 0 ? ProjectionWeights::identity(d)
                                                : ProjectionWeights::uniform(d, 100 + inst, 1.0f);
    const Matrix got = cross_attention(q, kv, w, heads);
    const Grid want = reference_attention(q, kv, w, heads);
    for (Eigen::Index i = 0; i < got.rows(); ++i) {
      for (Eigen::Index j = 0; j < got.cols(); ++j) {
        CHECK(std::abs(got(i, j) - want[i][j]) <= 1e-5 * std::max(1.0, std::abs(want[i][j])));
      }
    }
    for (const Matrix& a : attention_weights(q, kv, w, heads)) {
      for (Eigen::Index i = 0; i < a.rows(); ++i) CHECK(std::abs(a.row(i).sum() - 1.0f) <= 1e-6f);
    }
    ++checked;
  }
  CHECK(checked >= 100);
}

TEST_CASE("cross_attention degenerate cases") {
  std::mt19937_64 rng(4);
  const ProjectionWeights w = ProjectionWeights::uniform(4, 8);

  const Matrix q = random_matrix(5, 4, rng);
  const Matrix single = random_matrix(1, 4, rng);
  const Matrix out = cross_attention(q, single, w);
  const Matrix expected = single * w.value * w.output;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    CHECK((out.row(i) - expected.row(0)).cwiseAbs().maxCoeff() <= 1e-6f);
  }

  Matrix twins(2, 4);
  twins.row(0) = single.row(0);
  twins.row(1) = single.row(0);
  const Matrix a = attention_weights(q, twins, w).front();
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    CHECK(a(i, 0) == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(a(i, 1) == doctest::Approx(0.5).epsilon(1e-6));
  }

  CHECK_THROWS_AS(cross_attention(q, random_matrix(2, 3, rng), w), ShapeError);
  CHECK_THROWS_AS(cross_attention(q, single, ProjectionWeights::identity(3)), ShapeError);
  CHECK_THROWS_AS(cross_attention(q, single, w, 3), ShapeError);
}

TEST_CASE("hybrid attention") {
  std::mt19937_64 rng(6);
  const FeaturePyramid pyr = random_pyramid(128, 192, 8, rng);
  const TextTokenBatch text = random_text(5, 8, rng);

  const auto [same, text_out] = hybrid_modality_scale_attention(pyr, text, AttentionParams::zeros(8));
  CHECK(same == pyr);
  CHECK(text_out == text);

  AttentionParams ident = AttentionParams::zeros(8);
  ident.fusion = ProjectionWeights::identity(8);
  const TextTokenBatch one = random_text(1, 8, rng);
  const FeaturePyramid shifted = hybrid_modality_scale_attention(pyr, one, ident).first;
  for (std::size_t l = 0; l < kPyramidLevels; ++l) {
    const Matrix delta = shifted.tokens(l) - pyr.tokens(l);
    for (Eigen::Index r = 0; r < delta.rows(); ++r) {
      CHECK((delta.row(r) - one.tokens().row(0)).cwiseAbs().maxCoeff() <= 1e-6f);
    }
  }

  FlopReport flops;
  hybrid_modality_scale_attention(pyr, text, AttentionParams::uniform(8, 1), &flops);
  const Complexity want = attention_cost({85 * pyr.coarsest_tokens(), text.size(), 8});
  CHECK(flops.analytic_time() == want.time);
  CHECK(flops.analytic_space() == want.space);
}

TEST_CASE("modality attention") {
  std::mt19937_64 rng(8);
  const FeaturePyramid pyr = random_pyramid(192, 256, 8, rng);
  const TextTokenBatch text = random_text(7, 8, rng);
  const AttentionParams params = AttentionParams::uniform(8, 3);

  FlopReport flops;
  const auto [out, text_out] = modality_attention(pyr, text, params, &flops);
  for (std::size_t l = 0; l + 1 < kPyramidLevels; ++l) CHECK(out.tokens(l) == pyr.tokens(l));
  CHECK(out.coarsest().tokens != pyr.coarsest().tokens);
  CHECK(text_out == text);
  const Complexity want = attention_cost({pyr.coarsest_tokens(), text.size(), 8});
  CHECK(flops.analytic_time() == want.time);
  CHECK(flops.analytic_space() == want.space);

  CHECK(modality_attention(pyr, text, AttentionParams::zeros(8)).first == pyr);

  FlopReport hybrid;
  hybrid_modality_scale_attention(pyr, text, params, &hybrid);
  CHECK(hybrid.attention_matrix_terms() == 85 * flops.attention_matrix_terms());
  CHECK(hybrid.score_elems == 85 * flops.score_elems);
}

TEST_CASE("scale attention with zero heads averages the reference points") {
  std::mt19937_64 rng(10);
  const FeaturePyramid pyr = random_pyramid(128, 192, 4, rng);
  ScaleAttentionLayer layer = ScaleAttentionLayer::zeros(4, 4);
  layer.value = Matrix::Identity(4, 4);
  layer.output = Matrix::Identity(4, 4);

  const FeaturePyramid out = scale_attention_layer(pyr, layer, 4);
  for (std::size_t lq = 0; lq < kPyramidLevels; ++lq) {
    const LevelExtent& qe = pyr.level(lq).extent;
    for (std::size_t y = 0; y < qe.height; ++y) {
      for (std::size_t x = 0; x < qe.width; ++x) {
        Vector mean = Vector::Zero(4);
        for (std::size_t l = 0; l < kPyramidLevels; ++l) {
          const LevelExtent& se = pyr.level(l).extent;
          const double sy = (y + 0.5) / qe.height * se.height - 0.5;
          const double sx = (x + 0.5) / qe.width * se.width - 0.5;
          mean += bilinear_sample_tokens(pyr.tokens(l), se.height, se.width, sy, sx) / 4.0f;
        }
        const Eigen::Index row = Eigen::Index(y * qe.width + x);
        const Vector expected = pyr.tokens(lq).row(row).transpose() + mean;
        CHECK((out.tokens(lq).row(row).transpose() - expected).cwiseAbs().maxCoeff() <= 1e-5f);
      }
    }
  }
}

TEST_CASE("scale attention with one dominant logit copies that sample") {
  std::mt19937_64 rng(12);
  const FeaturePyramid pyr = random_pyramid(8, 8, 3, rng, PyramidLayout::ceil);
  for (std::size_t l = 0; l < kPyramidLevels; ++l) REQUIRE(pyr.level(l).extent.tokens() == 1);

  ScaleAttentionLayer layer = ScaleAttentionLayer::uniform(3, 4, 77);
  layer.value = Matrix::Identity(3, 3);
  layer.output = Matrix::Identity(3, 3);
  layer.weight_head.setZero();
  layer.weight_bias.setZero();
  layer.weight_bias[2 * 4 + 1] = 1e4f;  // level 2, point 1

  const FeaturePyramid out = scale_attention_layer(pyr, layer, 4);
  for (std::size_t l = 0; l < kPyramidLevels; ++l) {
    const Vector expected = pyr.tokens(l).row(0).transpose() + pyr.tokens(2).row(0).transpose();
    CHECK((out.tokens(l).row(0).transpose() - expected).cwiseAbs().maxCoeff() <= 1e-6f);
  }
}

TEST_CASE("scale attention keeps constant pyramids constant per channel") {
  const FeaturePyramid pyr = FeaturePyramid::constant(100, 140, 6, 0.75f);
  const FeaturePyramid out = scale_attention(pyr, AttentionParams::uniform(6, 5));
  const Matrix flat = out.flatten();
  for (Eigen::Index r = 1; r < flat.rows(); ++r) {
    CHECK((flat.row(r) - flat.row(0)).cwiseAbs().maxCoeff() <= 1e-6f);
  }
}

TEST_CASE("scale attention samples are convex combinations") {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 5; ++trial) {
    const FeaturePyramid pyr = random_pyramid(64 + 40 * trial, 100 + 30 * trial, 5, rng);
    ScaleAttentionLayer layer = ScaleAttentionLayer::uniform(5, 4, 300 + trial, 2.0f);
    if (trial == 0) {
      layer.offset_head.setZero();
      layer.value = Matrix::Identity(5, 5);
      layer.output = Matrix::Identity(5, 5);
    }
    const Matrix flat = pyr.flatten();
    const Vector lo = flat.colwise().minCoeff();
    const Vector hi = flat.colwise().maxCoeff();
    const Matrix samples = scale_attention_samples(pyr, layer, 4);
    REQUIRE(samples.rows() == flat.rows());
    for (Eigen::Index r = 0; r < samples.rows(); ++r) {
      for (Eigen::Index c = 0; c < samples.cols(); ++c) {
        CHECK(samples(r, c) >= lo[c] - 1e-5f);
        CHECK(samples(r, c) <= hi[c] + 1e-5f);
      }
    }
  }
}

TEST_CASE("decoupled enhancer") {
  std::mt19937_64 rng(16);
  const FeaturePyramid pyr = random_pyramid(150, 210, 8, rng);
  const TextTokenBatch text = random_text(9, 8, rng);

  CHECK(decoupled_feature_enhancer(pyr, text, AttentionParams::zeros(8)).first == pyr);

  FlopReport flops;
  const AttentionParams params = AttentionParams::uniform(8, 21);
  CHECK(params.scale_layers.size() == 3);
  const auto [out, text_out] = decoupled_feature_enhancer(pyr, text, params, &flops);
  CHECK(out.same_shape(pyr));
  CHECK(out.flatten().allFinite());
  CHECK(text_out == text);
  CHECK(flops.scale_layers == 3);
  CHECK(flops.cross_calls == 1);
  CHECK(flops.analytic_time() == attention_cost({pyr.coarsest_tokens(), text.size(), 8}).time);

  AttentionParams bad = params;
  bad.fusion.key = Matrix::Identity(4, 4);
  CHECK_THROWS_AS(decoupled_feature_enhancer(pyr, text, bad), ShapeError);
  CHECK_THROWS_AS(modality_attention(pyr, random_text(2, 4, rng), params), ShapeError);
}

TEST_CASE("ratio of attention-matrix terms is 85 on concrete runs") {
  std::mt19937_64 rng(18);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{128, 128}, {64, 64 * 16}, {480, 854}}) {
    const FeaturePyramid pyr = random_pyramid(h, w, 4, rng);
    const TextTokenBatch text = random_text(10, 4, rng);
    const AttentionParams params = AttentionParams::uniform(4, 2, 0);
    FlopReport hybrid, modality;
    hybrid_modality_scale_attention(pyr, text, params, &hybrid);
    modality_attention(pyr, text, params, &modality);
    CHECK(hybrid.attention_matrix_terms() == 85 * modality.attention_matrix_terms());
  }
}

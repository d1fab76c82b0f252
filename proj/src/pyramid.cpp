#include "rtvis/pyramid.hpp"

namespace rtvis {
namespace {

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace

std::array<LevelExtent, kPyramidLevels> pyramid_extents(std::size_t height, std::size_t width,
                                                        PyramidLayout layout) {
  if (height == 0 || width == 0) throw ShapeError("pyramid_extents: input extents must be positive");
  std::array<LevelExtent, kPyramidLevels> out{};
  const std::size_t coarse_stride = kPyramidStrides.back();
  for (std::size_t i = 0; i < kPyramidLevels; ++i) {
    const std::size_t s = kPyramidStrides[i];
    if (layout == PyramidLayout::ceil) {
      out[i] = {s, ceil_div(height, s), ceil_div(width, s)};
    } else {
      const std::size_t scale = coarse_stride / s;
      out[i] = {s, ceil_div(height, coarse_stride) * scale, ceil_div(width, coarse_stride) * scale};
    }
  }
  return out;
}

FeaturePyramid::FeaturePyramid(std::array<FeatureLevel, kPyramidLevels> levels) : levels_(std::move(levels)) {
  validate();
}

FeaturePyramid FeaturePyramid::zeros(std::size_t height, std::size_t width, std::size_t dim,
                                     PyramidLayout layout) {
  return constant(height, width, dim, 0.0f, layout);
}

FeaturePyramid FeaturePyramid::constant(std::size_t height, std::size_t width, std::size_t dim, float value,
                                        PyramidLayout layout) {
  if (dim == 0) throw ShapeError("FeaturePyramid: dim must be positive");
  const auto extents = pyramid_extents(height, width, layout);
  std::array<FeatureLevel, kPyramidLevels> levels;
  for (std::size_t i = 0; i < kPyramidLevels; ++i) {
    levels[i].extent = extents[i];
    levels[i].tokens = Matrix::Constant(static_cast<Eigen::Index>(extents[i].tokens()),
                                        static_cast<Eigen::Index>(dim), value);
  }
  return FeaturePyramid(std::move(levels));
}

void FeaturePyramid::validate() const {
  const auto d = levels_.front().tokens.cols();
  if (d == 0) throw ShapeError("FeaturePyramid: dim must be positive");
  for (std::size_t i = 0; i < kPyramidLevels; ++i) {
    const auto& lv = levels_[i];
    if (lv.extent.stride != kPyramidStrides[i]) {
      throw ShapeError("FeaturePyramid: level " + std::to_string(i) + " has stride " +
                       std::to_string(lv.extent.stride) + ", expected " + std::to_string(kPyramidStrides[i]));
    }
    if (lv.extent.height == 0 || lv.extent.width == 0) throw ShapeError("FeaturePyramid: empty level");
    if (static_cast<std::size_t>(lv.tokens.rows()) != lv.extent.tokens() || lv.tokens.cols() != d) {
      throw ShapeError("FeaturePyramid: level " + std::to_string(i) + " token matrix does not match its extent");
    }
  }
}

std::size_t FeaturePyramid::total_tokens() const noexcept {
  std::size_t n = 0;
  for (const auto& lv : levels_) n += lv.extent.tokens();
  return n;
}

bool FeaturePyramid::same_shape(const FeaturePyramid& other) const noexcept {
  if (dim() != other.dim()) return false;
  for (std::size_t i = 0; i < kPyramidLevels; ++i) {
    if (levels_[i].extent.height != other.levels_[i].extent.height ||
        levels_[i].extent.width != other.levels_[i].extent.width) {
      return false;
    }
  }
  return true;
}

Matrix FeaturePyramid::flatten() const {
  Matrix out(static_cast<Eigen::Index>(total_tokens()), static_cast<Eigen::Index>(dim()));
  Eigen::Index row = 0;
  for (const auto& lv : levels_) {
    out.middleRows(row, lv.tokens.rows()) = lv.tokens;
    row += lv.tokens.rows();
  }
  return out;
}

void FeaturePyramid::assign_flat(const Matrix& stacked) {
  if (static_cast<std::size_t>(stacked.rows()) != total_tokens() ||
      static_cast<std::size_t>(stacked.cols()) != dim()) {
    throw ShapeError("FeaturePyramid::assign_flat: expected " + std::to_string(total_tokens()) + "x" +
                     std::to_string(dim()) + " tokens");
  }
  Eigen::Index row = 0;
  for (auto& lv : levels_) {
    lv.tokens = stacked.middleRows(row, lv.tokens.rows());
    row += lv.tokens.rows();
  }
}

Tensor FeaturePyramid::level_tensor(std::size_t i) const {
  const auto& lv = levels_.at(i);
  Tensor t({dim(), lv.extent.height, lv.extent.width});
  t.matrix() = lv.tokens.transpose();
  return t;
}

bool operator==(const FeaturePyramid& a, const FeaturePyramid& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < kPyramidLevels; ++i) {
    if (a.levels_[i].tokens != b.levels_[i].tokens) return false;
  }
  return true;
}

TextTokenBatch::TextTokenBatch(Matrix tokens) : tokens_(std::move(tokens)) {
  if (tokens_.rows() < 1) throw ShapeError("TextTokenBatch: at least one text token is required");
  if (tokens_.cols() < 1) throw ShapeError("TextTokenBatch: dim must be positive");
}

}  // namespace rtvis

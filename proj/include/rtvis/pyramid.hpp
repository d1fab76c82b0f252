#pragma once

#include <array>
#include <cstddef>

#include "rtvis/tensor.hpp"

namespace rtvis {

inline constexpr std::size_t kPyramidLevels = 4;
inline constexpr std::array<std::size_t, kPyramidLevels> kPyramidStrides = {8, 16, 32, 64};

// How level extents follow from the input resolution.
//   ceil:   each level is ceil(H/s) × ceil(W/s), no padding.
//   padded: the input is padded to a multiple of 64, so every finer level has
//           exactly twice the extents of the next coarser one and the token
//           total is 85 × the coarsest count.
enum class PyramidLayout { ceil, padded };

struct LevelExtent {
  std::size_t stride;
  std::size_t height;
  std::size_t width;
  std::size_t tokens() const noexcept { return height * width; }
};

std::array<LevelExtent, kPyramidLevels> pyramid_extents(std::size_t height, std::size_t width,
                                                        PyramidLayout layout = PyramidLayout::padded);

struct FeatureLevel {
  LevelExtent extent;
  Matrix tokens;  // (height·width) × d, row y*width + x
};

/// Four-level visual feature pyramid, finest (stride 8) first.
class FeaturePyramid {
 public:
  explicit FeaturePyramid(std::array<FeatureLevel, kPyramidLevels> levels);

  static FeaturePyramid zeros(std::size_t height, std::size_t width, std::size_t dim,
                              PyramidLayout layout = PyramidLayout::padded);
  static FeaturePyramid constant(std::size_t height, std::size_t width, std::size_t dim, float value,
                                 PyramidLayout layout = PyramidLayout::padded);

  const FeatureLevel& level(std::size_t i) const { return levels_.at(i); }
  // Callers may rewrite token values but must keep the shape.
  Matrix& tokens(std::size_t i) { return levels_.at(i).tokens; }
  const Matrix& tokens(std::size_t i) const { return levels_.at(i).tokens; }
  const FeatureLevel& coarsest() const { return levels_.back(); }

  std::size_t dim() const noexcept { return static_cast<std::size_t>(levels_.front().tokens.cols()); }
  std::size_t total_tokens() const noexcept;
  std::size_t coarsest_tokens() const noexcept { return levels_.back().extent.tokens(); }
  bool same_shape(const FeaturePyramid& other) const noexcept;

  /// All tokens stacked fine to coarse: total_tokens() × d.
  Matrix flatten() const;
  void assign_flat(const Matrix& stacked);

  /// Channel-major d×H×W view of one level, as a copy.
  Tensor level_tensor(std::size_t i) const;

  friend bool operator==(const FeaturePyramid& a, const FeaturePyramid& b);

 private:
  void validate() const;
  std::array<FeatureLevel, kPyramidLevels> levels_;
};

/// L_t text tokens of width d; one row per category embedding.
class TextTokenBatch {
 public:
  explicit TextTokenBatch(Matrix tokens);
  const Matrix& tokens() const noexcept { return tokens_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(tokens_.rows()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(tokens_.cols()); }

  friend bool operator==(const TextTokenBatch& a, const TextTokenBatch& b) { return a.tokens_ == b.tokens_; }

 private:
  Matrix tokens_;
};

}  // namespace rtvis

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rtvis/errors.hpp"

namespace rtvis {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using ColVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = RowMatrix<float>;
using Vector = ColVector<float>;

// Dense row-major tensor of arbitrary rank. Every op that needs a matrix view
// goes through Eigen::Map, so the tensor itself stays a plain value type.
template <typename Scalar = float>
class DenseTensor {
 public:
  using Storage = ColVector<Scalar>;
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  explicit DenseTensor(std::vector<std::size_t> dims)
      : dims_(std::move(dims)), data_(Storage::Zero(checked_size(dims_))) {}

  DenseTensor(std::vector<std::size_t> dims, Storage data) : dims_(std::move(dims)), data_(std::move(data)) {
    if (static_cast<std::size_t>(data_.size()) != checked_size(dims_)) {
      throw ShapeError("DenseTensor: data length " + std::to_string(data_.size()) +
                       " does not match product of dims " + std::to_string(checked_size(dims_)));
    }
  }

  template <typename Derived>
  static DenseTensor from_matrix(const Eigen::MatrixBase<Derived>& m) {
    DenseTensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
    t.matrix() = m;
    return t;
  }

  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return static_cast<std::size_t>(data_.size()); }
  std::size_t extent(std::size_t axis) const { return dims_.at(axis); }

  Scalar* data() noexcept { return data_.data(); }
  const Scalar* data() const noexcept { return data_.data(); }
  std::span<const Scalar> values() const noexcept { return {data_.data(), size()}; }
  Storage& storage() noexcept { return data_; }
  const Storage& storage() const noexcept { return data_; }

  // Leading axis as rows, remaining axes flattened into columns.
  MatrixMap matrix() { return MatrixMap(data_.data(), rows(), cols()); }
  ConstMatrixMap matrix() const { return ConstMatrixMap(data_.data(), rows(), cols()); }

  Scalar& operator()(std::size_t i, std::size_t j) { return data_[offset({i, j})]; }
  Scalar operator()(std::size_t i, std::size_t j) const { return data_[offset({i, j})]; }
  Scalar& operator()(std::size_t c, std::size_t y, std::size_t x) { return data_[offset({c, y, x})]; }
  Scalar operator()(std::size_t c, std::size_t y, std::size_t x) const { return data_[offset({c, y, x})]; }

  bool all_finite() const { return data_.allFinite(); }

  friend bool operator==(const DenseTensor& a, const DenseTensor& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 private:
  static std::size_t checked_size(const std::vector<std::size_t>& dims) {
    if (dims.empty()) throw ShapeError("DenseTensor: zero-dimensional tensors are not allowed");
    std::size_t n = 1;
    for (std::size_t e : dims) {
      if (e == 0) throw ShapeError("DenseTensor: extents must be positive");
      n *= e;
    }
    return n;
  }

  Eigen::Index rows() const { return static_cast<Eigen::Index>(dims_.front()); }
  Eigen::Index cols() const { return static_cast<Eigen::Index>(size() / dims_.front()); }

  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != dims_.size()) throw ShapeError("DenseTensor: index rank mismatch");
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) {
      if (i >= dims_[axis]) throw ShapeError("DenseTensor: index out of range");
      off = off * dims_[axis] + i;
      ++axis;
    }
    return off;
  }

  std::vector<std::size_t> dims_;
  Storage data_;
};

using Tensor = DenseTensor<float>;

inline std::string shape_string(const std::vector<std::size_t>& dims) {
  std::string s;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(dims[i]);
  }
  return s;
}

template <typename Scalar>
DenseTensor<Scalar> matmul(const DenseTensor<Scalar>& a, const DenseTensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw ShapeError("matmul: cannot multiply " + shape_string(a.dims()) + " by " + shape_string(b.dims()));
  }
  DenseTensor<Scalar> out({a.extent(0), b.extent(1)});
  out.matrix().noalias() = a.matrix() * b.matrix();
  return out;
}

/// Row-wise softmax with max subtraction; each output row sums to one.
template <typename Derived>
RowMatrix<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  RowMatrix<Scalar> out = logits;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const Scalar peak = row.maxCoeff();
    row = (row.array() - peak).exp().matrix();
    row /= row.sum();
  }
  return out;
}

template <typename Scalar>
DenseTensor<Scalar> softmax_rows(const DenseTensor<Scalar>& t) {
  if (t.rank() != 2) throw ShapeError("softmax_rows: expected a matrix, got " + shape_string(t.dims()));
  DenseTensor<Scalar> out(t.dims());
  out.matrix() = softmax_rows(t.matrix());
  return out;
}

// Branch on sign so neither exp() argument can be large and positive.
template <std::floating_point Scalar>
Scalar sigmoid(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

template <typename Derived>
auto sigmoid(const Eigen::ArrayBase<Derived>& x) {
  return x.unaryExpr([](typename Derived::Scalar v) { return sigmoid(v); });
}

template <typename Scalar>
DenseTensor<Scalar> sigmoid(const DenseTensor<Scalar>& t) {
  DenseTensor<Scalar> out(t.dims());
  out.storage() = sigmoid(t.storage().array()).matrix();
  return out;
}

/// Four grid taps of a border-clamped bilinear lookup on an H×W grid.
struct BilinearTaps {
  std::array<std::size_t, 4> index;  // flattened y*W + x
  std::array<double, 4> weight;
};

inline BilinearTaps bilinear_taps(std::size_t height, std::size_t width, double y, double x) {
  const double yc = std::clamp(y, 0.0, static_cast<double>(height - 1));
  const double xc = std::clamp(x, 0.0, static_cast<double>(width - 1));
  const auto y0 = static_cast<std::size_t>(std::floor(yc));
  const auto x0 = static_cast<std::size_t>(std::floor(xc));
  const std::size_t y1 = std::min(y0 + 1, height - 1);
  const std::size_t x1 = std::min(x0 + 1, width - 1);
  const double wy = yc - static_cast<double>(y0);
  const double wx = xc - static_cast<double>(x0);
  return {{y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1},
          {(1 - wy) * (1 - wx), (1 - wy) * wx, wy * (1 - wx), wy * wx}};
}

/// Samples a channel-major d×H×W map at (y, x), clamping to the border.
template <typename Scalar>
ColVector<Scalar> bilinear_sample(const DenseTensor<Scalar>& map, double y, double x) {
  if (map.rank() != 3) throw ShapeError("bilinear_sample: expected d×H×W, got " + shape_string(map.dims()));
  const std::size_t h = map.extent(1), w = map.extent(2);
  const BilinearTaps taps = bilinear_taps(h, w, y, x);
  const auto plane = map.matrix();  // d × (H·W)
  ColVector<Scalar> out = ColVector<Scalar>::Zero(plane.rows());
  for (int k = 0; k < 4; ++k) {
    if (taps.weight[k] == 0.0) continue;
    out += static_cast<Scalar>(taps.weight[k]) * plane.col(static_cast<Eigen::Index>(taps.index[k]));
  }
  return out;
}

/// Token-major counterpart: `tokens` is (H·W)×d with row y*W + x holding one cell.
template <typename Derived>
ColVector<typename Derived::Scalar> bilinear_sample_tokens(const Eigen::MatrixBase<Derived>& tokens,
                                                           std::size_t height, std::size_t width,
                                                           double y, double x) {
  using Scalar = typename Derived::Scalar;
  const BilinearTaps taps = bilinear_taps(height, width, y, x);
  ColVector<Scalar> out = ColVector<Scalar>::Zero(tokens.cols());
  for (int k = 0; k < 4; ++k) {
    if (taps.weight[k] == 0.0) continue;
    out += static_cast<Scalar>(taps.weight[k]) * tokens.row(static_cast<Eigen::Index>(taps.index[k])).transpose();
  }
  return out;
}

}  // namespace rtvis

#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "wildnet/errors.hpp"

namespace wildnet {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Per-pixel class ids, [H, W].
using LabelGrid = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr std::int32_t kIgnoreId = 255;

/// A [C, H, W] activation grid. Storage is a row-major C x (H*W) matrix so
/// each channel plane is contiguous and a 1x1 convolution is a single GEMM.
template <typename Scalar>
class FeatureMap {
 public:
  using MatrixType = Matrix<Scalar>;

  FeatureMap() = default;

  FeatureMap(Index channels, Index height, Index width)
      : height_(height), width_(width), values_(MatrixType::Zero(channels, height * width)) {
    check_dims(channels, height, width);
  }

  FeatureMap(Index height, Index width, MatrixType values)
      : height_(height), width_(width), values_(std::move(values)) {
    check_dims(values_.rows(), height, width);
    if (values_.cols() != height * width) {
      throw ShapeError("featstats", "feature map storage does not match H*W");
    }
  }

  Index channels() const { return values_.rows(); }
  Index height() const { return height_; }
  Index width() const { return width_; }
  Index pixels() const { return height_ * width_; }
  bool empty() const { return values_.size() == 0; }

  Scalar& operator()(Index c, Index row, Index col) { return values_(c, row * width_ + col); }
  Scalar operator()(Index c, Index row, Index col) const { return values_(c, row * width_ + col); }

  MatrixType& values() { return values_; }
  const MatrixType& values() const { return values_; }

  /// One channel viewed as an H x W row-major plane.
  auto plane(Index c) {
    return Eigen::Map<MatrixType>(values_.row(c).data(), height_, width_);
  }
  auto plane(Index c) const {
    return Eigen::Map<const MatrixType>(values_.row(c).data(), height_, width_);
  }

  bool all_finite() const { return values_.allFinite(); }

  bool same_shape(const FeatureMap& other) const {
    return channels() == other.channels() && height_ == other.height_ && width_ == other.width_;
  }

  template <typename Other>
  FeatureMap<Other> cast() const {
    return FeatureMap<Other>(height_, width_, values_.template cast<Other>());
  }

 private:
  static void check_dims(Index c, Index h, Index w) {
    if (c < 1 || h < 1 || w < 1) {
      throw ShapeError("featstats", "feature map dimensions must be positive");
    }
  }

  Index height_ = 0;
  Index width_ = 0;
  MatrixType values_;
};

/// Argmax over channels at every pixel.
template <typename Scalar>
LabelGrid argmax_labels(const FeatureMap<Scalar>& scores) {
  LabelGrid out(scores.height(), scores.width());
  const auto& v = scores.values();
  for (Index p = 0; p < scores.pixels(); ++p) {
    Index best = 0;
    v.col(p).maxCoeff(&best);
    out.data()[p] = static_cast<std::int32_t>(best);
  }
  return out;
}

}  // namespace wildnet

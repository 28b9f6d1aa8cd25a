#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "atalp/errors.hpp"

namespace atalp {

using Index = Eigen::Index;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// A batch of feature maps with logical shape B x C x H x W.
///
/// Storage is a C x (B*H*W) column-major matrix: every spatial position of every
/// example is one column, so the channels of a pixel are contiguous. This makes a
/// 3x3 convolution a single GEMM against an im2col matrix and lets channel-wise
/// operations use Eigen's rowwise/colwise reductions directly.
template <typename Scalar>
class Tensor {
 public:
  using scalar_type = Scalar;

  Tensor() = default;
  Tensor(Index batch, Index channels, Index height, Index width)
      : batch_(batch), channels_(channels), height_(height), width_(width),
        data_(MatrixX<Scalar>::Zero(channels, batch * height * width)) {}

  static Tensor zeros_like(const Tensor& other) {
    return Tensor(other.batch_, other.channels_, other.height_, other.width_);
  }

  Index batch() const { return batch_; }
  Index channels() const { return channels_; }
  Index height() const { return height_; }
  Index width() const { return width_; }
  Index pixels_per_example() const { return height_ * width_; }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  bool same_shape(const Tensor& other) const {
    return batch_ == other.batch_ && channels_ == other.channels_ && height_ == other.height_ &&
           width_ == other.width_;
  }

  Scalar& operator()(Index b, Index c, Index h, Index w) { return data_(c, (b * height_ + h) * width_ + w); }
  Scalar operator()(Index b, Index c, Index h, Index w) const {
    return data_(c, (b * height_ + h) * width_ + w);
  }

  MatrixX<Scalar>& matrix() { return data_; }
  const MatrixX<Scalar>& matrix() const { return data_; }

  /// Columns holding example `b` (C x H*W).
  auto example(Index b) { return data_.middleCols(b * pixels_per_example(), pixels_per_example()); }
  auto example(Index b) const { return data_.middleCols(b * pixels_per_example(), pixels_per_example()); }

  /// Copy of examples [first, first + count).
  Tensor slice(Index first, Index count) const {
    Tensor out(count, channels_, height_, width_);
    out.data_ = data_.middleCols(first * pixels_per_example(), count * pixels_per_example());
    return out;
  }

  /// Copy of the listed examples, in order.
  Tensor gather(std::span<const Index> indices) const {
    Tensor out(static_cast<Index>(indices.size()), channels_, height_, width_);
    for (std::size_t i = 0; i < indices.size(); ++i) out.example(static_cast<Index>(i)) = example(indices[i]);
    return out;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(batch_, channels_, height_, width_);
    out.matrix() = data_.template cast<Other>();
    return out;
  }

  bool operator==(const Tensor& other) const { return same_shape(other) && data_ == other.data_; }

  std::string shape_string() const {
    return std::to_string(batch_) + "x" + std::to_string(channels_) + "x" + std::to_string(height_) + "x" +
           std::to_string(width_);
  }

 private:
  Index batch_ = 0;
  Index channels_ = 0;
  Index height_ = 0;
  Index width_ = 0;
  MatrixX<Scalar> data_;
};

/// Images in [0,1] with one integer label per example.
template <typename Scalar>
struct ImageBatch {
  Tensor<Scalar> pixels;
  std::vector<int> labels;

  Index size() const { return pixels.batch(); }

  /// Throws InputError unless pixel values lie in [0,1], labels are in
  /// [0, num_classes) and there is one label per example.
  void validate(Index num_classes) const {
    if (static_cast<Index>(labels.size()) != pixels.batch())
      throw InputError("batch has " + std::to_string(pixels.batch()) + " images but " +
                       std::to_string(labels.size()) + " labels");
    if (pixels.size() > 0 && (pixels.matrix().minCoeff() < Scalar(0) || pixels.matrix().maxCoeff() > Scalar(1)))
      throw InputError("pixel values outside [0,1]");
    for (int y : labels)
      if (y < 0 || y >= num_classes) throw InputError("label " + std::to_string(y) + " out of range");
  }
};

}  // namespace atalp

#pragma once

#include "atalp/tensor.hpp"

namespace atalp {

/// Affine classifier on flattened images: logits = W * vec(x) + b.
///
/// Exposes the same trace/vjp surface as Model so the attack engine can run on it;
/// its loss landscape has a closed-form worst case, which makes it the reference
/// target for checking PGD.
template <typename Scalar>
class LinearClassifier {
 public:
  using scalar_type = Scalar;

  struct Trace {
    MatrixX<Scalar> logits;
  };

  LinearClassifier(Index channels, Index height, Index width, MatrixX<Scalar> weight, VectorX<Scalar> bias)
      : channels_(channels), height_(height), width_(width), weight_(std::move(weight)), bias_(std::move(bias)) {
    if (weight_.cols() != channels * height * width || weight_.rows() != bias_.size())
      throw InputError("linear classifier weight/bias shape mismatch");
  }

  Index num_classes() const { return weight_.rows(); }
  const MatrixX<Scalar>& weight() const { return weight_; }
  const VectorX<Scalar>& bias() const { return bias_; }

  Trace forward_trace(const Tensor<Scalar>& x) const {
    check(x);
    MatrixX<Scalar> logits(x.batch(), num_classes());
    for (Index b = 0; b < x.batch(); ++b)
      logits.row(b) = (weight_ * x.example(b).reshaped() + bias_).transpose();
    return {std::move(logits)};
  }

  MatrixX<Scalar> logits(const Tensor<Scalar>& x) const { return forward_trace(x).logits; }

  Tensor<Scalar> input_vjp(const Trace& trace, const MatrixX<Scalar>& logit_grad) const {
    Tensor<Scalar> grad(trace.logits.rows(), channels_, height_, width_);
    for (Index b = 0; b < grad.batch(); ++b)
      grad.example(b).reshaped() = weight_.transpose() * logit_grad.row(b).transpose();
    return grad;
  }

 private:
  void check(const Tensor<Scalar>& x) const {
    if (x.channels() != channels_ || x.height() != height_ || x.width() != width_)
      throw InputError("linear classifier input shape mismatch: " + x.shape_string());
  }

  Index channels_, height_, width_;
  MatrixX<Scalar> weight_;
  VectorX<Scalar> bias_;
};

}  // namespace atalp

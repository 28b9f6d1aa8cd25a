#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "atalp/backbone.hpp"
#include "atalp/tensor.hpp"

namespace atalp {

/// Which batch the cross-entropy term is measured on.
enum class CeTarget { adversarial_only, clean_only, both_averaged };

CeTarget parse_ce_target(std::string_view name);
std::string_view to_string(CeTarget target);

/// Weights and shape of the paired objective ce + alpha*alp + beta*at.
struct PairingConfig {
  double alpha = 0.5;
  double beta = 10.0;
  std::vector<int> attention_layers{0, 1, 2, 3};
  int attention_power = 2;
  int norm_p = 2;
  CeTarget ce_target = CeTarget::adversarial_only;

  void validate() const;
};

/// Channel-collapsed spatial saliency, one column per example: values(h*W + w, b).
template <typename Scalar>
struct AttentionMap {
  Index batch = 0;
  Index height = 0;
  Index width = 0;
  MatrixX<Scalar> values;

  Scalar operator()(Index b, Index h, Index w) const { return values(h * width + w, b); }
  /// Example `b` as an H x W matrix.
  MatrixX<Scalar> image(Index b) const {
    return values.col(b).reshaped(width, height).transpose();
  }
};

/// F(A)[b,h,w] = sum_c |A[b,c,h,w]|^power.
template <typename Scalar>
AttentionMap<Scalar> attention_map(const Tensor<Scalar>& activations, int power);

/// Attention pairing loss. For each layer in config.attention_layers, each example's
/// attention maps are flattened, divided by their own L2 norm (floored at 1e-12),
/// and the p-norm of the difference is taken; layers are summed and examples averaged.
/// A layer-example where both maps have norm below 1e-12 contributes 0.
template <typename Scalar>
Scalar at_loss(std::span<const Tensor<Scalar>> clean_acts, std::span<const Tensor<Scalar>> adv_acts,
               const PairingConfig& config);

/// Same value as at_loss; also fills gradients with respect to every group
/// activation (empty tensors for layers not in the set).
template <typename Scalar>
Scalar at_loss_with_grad(std::span<const Tensor<Scalar>> clean_acts, std::span<const Tensor<Scalar>> adv_acts,
                         const PairingConfig& config, std::vector<Tensor<Scalar>>* clean_grads,
                         std::vector<Tensor<Scalar>>* adv_grads);

/// Batch mean of the squared L2 distance between logit rows.
template <typename Scalar>
Scalar alp_loss(const MatrixX<Scalar>& clean_logits, const MatrixX<Scalar>& adv_logits);

/// Mean cross-entropy of raw logits against integer labels.
template <typename Scalar>
Scalar cross_entropy(const MatrixX<Scalar>& logits, std::span<const int> labels);

template <typename Scalar>
struct LossComponents {
  Scalar ce = 0;
  Scalar alp = 0;
  Scalar at = 0;
};

template <typename Scalar>
struct CombinedLoss {
  Scalar total = 0;
  LossComponents<Scalar> components;
};

template <typename Scalar>
struct CombinedGradient {
  CombinedLoss<Scalar> loss;
  std::vector<MatrixX<Scalar>> parameters;  // aligned with Model::parameters()
  Tensor<Scalar> clean_input;               // only when inputs were requested
  Tensor<Scalar> adv_input;
  MatrixX<Scalar> clean_logits;
  MatrixX<Scalar> adv_logits;
};

/// total = ce + alpha*alp + beta*at on a (clean, adversarial) pair with equal labels.
template <typename Scalar>
CombinedLoss<Scalar> combined_loss(const Model<Scalar>& model, const ImageBatch<Scalar>& clean,
                                   const ImageBatch<Scalar>& adv, const PairingConfig& config);

/// combined_loss plus its gradient. Both branches receive gradient (no stop-gradient
/// on the clean side). A branch whose upstream gradient is identically zero is not
/// back-propagated.
template <typename Scalar>
CombinedGradient<Scalar> combined_loss_gradient(const Model<Scalar>& model, const ImageBatch<Scalar>& clean,
                                                const ImageBatch<Scalar>& adv, const PairingConfig& config,
                                                GradientRequest request = {.parameters = true, .input = false});

}  // namespace atalp

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "atalp/tensor.hpp"

namespace atalp {

inline constexpr int kNumGroups = 4;

/// Shape of a registered grouped CNN.
///
/// Every group is `convs_per_group` units of same-size 3x3 conv -> per-channel
/// affine -> ReLU, followed by a 2x2 max pool, so the four tapped activations
/// halve in spatial size from group to group.
struct ArchitectureSpec {
  std::string id;
  Index input_channels = 3;
  std::array<Index, kNumGroups> widths{};
  int convs_per_group = 1;
};

/// Throws ConfigError for unknown ids.
const ArchitectureSpec& find_architecture(std::string_view id);
std::vector<std::string> registered_architectures();

const std::array<std::string, kNumGroups>& default_group_names();

template <typename Scalar>
struct NamedArray {
  std::string name;
  std::vector<Index> shape;  // values is shape[0] x prod(shape[1:])
  MatrixX<Scalar> values;
};

template <typename Scalar>
struct ForwardResult {
  MatrixX<Scalar> logits;  // B x num_classes, pre-softmax
  std::vector<Tensor<Scalar>> group_activations;
};

/// Intermediate state of one conv unit, kept for the backward pass.
template <typename Scalar>
struct UnitCache {
  MatrixX<Scalar> columns;   // im2col of the unit input
  MatrixX<Scalar> conv_out;  // before the affine
  MatrixX<Scalar> affine_out;  // before the ReLU
  Index in_channels = 0, in_height = 0, in_width = 0;
};

using PoolIndex = Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
struct ForwardTrace : ForwardResult<Scalar> {
  Index batch = 0;
  std::vector<UnitCache<Scalar>> units;
  std::vector<PoolIndex> pool_argmax;  // per group, source column of each pooled element
  MatrixX<Scalar> pooled;  // C3 x B global average pool feeding the head
};

struct GradientRequest {
  bool parameters = true;
  bool input = true;
};

template <typename Scalar>
struct Gradients {
  std::vector<MatrixX<Scalar>> parameters;  // aligned with Model::parameters(); empty if not requested
  Tensor<Scalar> input;                     // empty if not requested
};

/// A differentiable grouped classifier: logits plus one activation tap per group.
///
/// Parameters are stored as a flat list of named arrays in a fixed order
/// (per unit: conv weight, affine scale, affine shift; then head weight and bias).
/// Conv weights are Cout x (9*Cin) with column index (ky*3 + kx)*Cin + c, matching
/// the row order of the im2col matrix.
///
/// All const members are reentrant; mutation through parameters() must be
/// serialized with readers by the caller.
template <typename Scalar>
class Model {
 public:
  using scalar_type = Scalar;
  using Trace = ForwardTrace<Scalar>;

  /// Zero-initialized parameters.
  Model(const ArchitectureSpec& spec, Index num_classes);

  const std::string& architecture_id() const { return spec_.id; }
  const ArchitectureSpec& spec() const { return spec_; }
  Index num_classes() const { return num_classes_; }
  const std::array<std::string, kNumGroups>& group_names() const { return group_names_; }

  std::vector<NamedArray<Scalar>>& parameters() { return params_; }
  const std::vector<NamedArray<Scalar>>& parameters() const { return params_; }
  Index parameter_count() const;

  std::map<std::string, std::string>& metadata() { return metadata_; }
  const std::map<std::string, std::string>& metadata() const { return metadata_; }

  /// Throws InputError if `x` cannot be fed to this architecture.
  void check_input(const Tensor<Scalar>& x) const;

  ForwardResult<Scalar> forward(const Tensor<Scalar>& x) const;
  Trace forward_trace(const Tensor<Scalar>& x) const;
  MatrixX<Scalar> logits(const Tensor<Scalar>& x) const { return forward(x).logits; }

  /// Vector-Jacobian product of the trace's outputs. `group_grads` may be empty
  /// (no gradient on the taps) or hold one tensor per group; empty tensors inside
  /// it are treated as zero.
  Gradients<Scalar> backward(const Trace& trace, const MatrixX<Scalar>& logit_grad,
                             std::span<const Tensor<Scalar>> group_grads = {},
                             GradientRequest request = {}) const;

  Tensor<Scalar> input_vjp(const Trace& trace, const MatrixX<Scalar>& logit_grad) const {
    return backward(trace, logit_grad, {}, {.parameters = false, .input = true}).input;
  }

  /// Group `group` applied to its input (the image for group 0, else the previous tap).
  Tensor<Scalar> run_group(int group, const Tensor<Scalar>& in) const;
  /// Global average pool + linear head applied to the last tap.
  MatrixX<Scalar> head(const Tensor<Scalar>& last_group) const;

  template <typename Other>
  Model<Other> cast() const {
    Model<Other> out(spec_, num_classes_);
    for (std::size_t i = 0; i < params_.size(); ++i)
      out.parameters()[i].values = params_[i].values.template cast<Other>();
    out.metadata() = metadata_;
    return out;
  }

 private:
  int unit_count() const { return kNumGroups * spec_.convs_per_group; }
  std::size_t head_weight_index() const { return static_cast<std::size_t>(3 * unit_count()); }

  ArchitectureSpec spec_;
  Index num_classes_ = 0;
  std::array<std::string, kNumGroups> group_names_;
  std::vector<NamedArray<Scalar>> params_;
  std::map<std::string, std::string> metadata_;
};

/// Registered architecture with He-initialized convolutions. Identical seeds give
/// bit-identical parameters. Throws ConfigError on unknown id or num_classes < 2.
template <typename Scalar>
Model<Scalar> build_model(std::string_view architecture_id, Index num_classes, std::uint64_t seed);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace atalp

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <map>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "atalp/tensor.hpp"

namespace atalp {

/// Anything PGD can attack: batched logits plus the input vector-Jacobian product.
template <typename M>
concept Classifier = requires(const M& m, const Tensor<typename M::scalar_type>& x,
                              const MatrixX<typename M::scalar_type>& g) {
  { m.forward_trace(x).logits } -> std::convertible_to<MatrixX<typename M::scalar_type>>;
  { m.input_vjp(m.forward_trace(x), g) } -> std::same_as<Tensor<typename M::scalar_type>>;
};

/// Untargeted L-infinity PGD settings. Pixel scale is [0,1].
struct AttackConfig {
  double epsilon = 0.25;
  double step_size = 1.0 / 256.0;
  int num_iterations = 200;
  bool random_start = false;
  bool targeted = false;

  /// Throws ConfigError on a negative budget, non-positive step, negative
  /// iteration count or a targeted request.
  void validate() const {
    if (!(epsilon >= 0.0) || epsilon > 1.0) throw ConfigError("attack epsilon must lie in [0,1]");
    if (!(step_size > 0.0)) throw ConfigError("attack step_size must be > 0");
    if (num_iterations < 0) throw ConfigError("attack num_iterations must be >= 0");
    if (targeted) throw ConfigError("targeted attacks are not supported");
  }

  /// Training-time budget: 10 steps of 2.5*epsilon/10 from a random start.
  static AttackConfig training(double epsilon, int iterations = 10) {
    return {epsilon, epsilon > 0.0 ? 2.5 * epsilon / iterations : 1.0 / 256.0, iterations, true, false};
  }
};

/// Elementwise clip onto {z : |z - x| <= epsilon} intersected with [0,1]^d.
template <typename Scalar>
void project_linf(Tensor<Scalar>& x_adv, const Tensor<Scalar>& x, Scalar epsilon) {
  auto a = x_adv.matrix().array();
  const auto c = x.matrix().array();
  x_adv.matrix() = a.min(c + epsilon).max(c - epsilon).max(Scalar(0)).min(Scalar(1)).matrix();
}

/// Per-example cross-entropy gradient with respect to the logits (softmax - onehot).
template <typename Scalar>
MatrixX<Scalar> cross_entropy_logit_grad(const MatrixX<Scalar>& logits, std::span<const int> labels) {
  MatrixX<Scalar> grad(logits.rows(), logits.cols());
  for (Index b = 0; b < logits.rows(); ++b) {
    const Scalar top = logits.row(b).maxCoeff();
    const auto e = (logits.row(b).array() - top).exp();
    grad.row(b) = e / e.sum();
    grad(b, labels[static_cast<std::size_t>(b)]) -= Scalar(1);
  }
  return grad;
}

/// Gradient of the summed (not averaged) cross-entropy with respect to the input.
/// Summing keeps each example's gradient independent of the batch size.
template <Classifier M>
Tensor<typename M::scalar_type> cross_entropy_input_grad(const M& model, const Tensor<typename M::scalar_type>& x,
                                                         std::span<const int> labels) {
  const auto trace = model.forward_trace(x);
  return model.input_vjp(trace, cross_entropy_logit_grad(trace.logits, labels));
}

namespace detail {

template <typename Scalar>
Scalar sign_or_zero(Scalar v) {
  return static_cast<Scalar>((Scalar(0) < v) - (v < Scalar(0)));
}

}  // namespace detail

/// PGD returning the iterate after each count in `snapshots` (any order, may include 0).
///
/// Runs max(snapshots) iterations once. Snapshot k is bit-identical to a separate
/// pgd_attack run with num_iterations = k, since the trajectory does not depend on
/// the total length. `config.num_iterations` is ignored.
template <Classifier M, typename Rng>
std::vector<ImageBatch<typename M::scalar_type>> pgd_trajectory(const M& model,
                                                                const ImageBatch<typename M::scalar_type>& batch,
                                                                const AttackConfig& config,
                                                                std::span<const int> snapshots, Rng* rng) {
  using Scalar = typename M::scalar_type;
  AttackConfig checked = config;
  checked.num_iterations = 0;
  checked.validate();
  for (int s : snapshots)
    if (s < 0) throw ConfigError("attack iteration counts must be >= 0");
  if (config.random_start && config.epsilon > 0.0 && rng == nullptr)
    throw ConfigError("random_start requires a seeded generator");

  const Tensor<Scalar>& x = batch.pixels;
  const Scalar eps = static_cast<Scalar>(config.epsilon);
  const Scalar step = static_cast<Scalar>(config.step_size);
  const int total = snapshots.empty() ? 0 : *std::max_element(snapshots.begin(), snapshots.end());

  std::vector<ImageBatch<Scalar>> out(snapshots.size());
  auto record = [&](int iteration, const Tensor<Scalar>& current) {
    for (std::size_t i = 0; i < snapshots.size(); ++i)
      if (snapshots[i] == iteration) out[i] = {current, batch.labels};
  };

  Tensor<Scalar> x_adv = x;
  if (config.epsilon == 0.0) {
    for (auto& o : out) o = batch;
    return out;
  }
  if (config.random_start) {
    std::uniform_real_distribution<double> noise(-config.epsilon, config.epsilon);
    auto& m = x_adv.matrix();
    for (Index i = 0; i < m.size(); ++i) m(i) += static_cast<Scalar>(noise(*rng));
    project_linf(x_adv, x, eps);
  }
  record(0, x_adv);
  for (int it = 1; it <= total; ++it) {
    const Tensor<Scalar> grad = cross_entropy_input_grad(model, x_adv, batch.labels);
    x_adv.matrix() += step * grad.matrix().unaryExpr([](Scalar v) { return detail::sign_or_zero(v); });
    project_linf(x_adv, x, eps);
    record(it, x_adv);
  }
  return out;
}

/// Untargeted L-infinity PGD: optional uniform start in the epsilon-ball, then
/// `num_iterations` signed-gradient ascent steps on cross-entropy, each followed by
/// projection onto the ball and clipping to [0,1]. Sign of an exactly-zero
/// gradient component is 0. Labels pass through unchanged.
template <Classifier M, typename Rng>
ImageBatch<typename M::scalar_type> pgd_attack(const M& model, const ImageBatch<typename M::scalar_type>& batch,
                                              const AttackConfig& config, Rng& rng) {
  config.validate();
  const int counts[] = {config.num_iterations};
  return std::move(pgd_trajectory(model, batch, config, counts, &rng).front());
}

/// Deterministic PGD; throws ConfigError if the config asks for a random start.
template <Classifier M>
ImageBatch<typename M::scalar_type> pgd_attack(const M& model, const ImageBatch<typename M::scalar_type>& batch,
                                              const AttackConfig& config) {
  config.validate();
  const int counts[] = {config.num_iterations};
  return std::move(pgd_trajectory<M, std::mt19937_64>(model, batch, config, counts, nullptr).front());
}

using SweepKey = std::pair<double, int>;  // (epsilon, iterations)

/// Deterministic PGD (no random start) for every (epsilon, iterations) cell over
/// a list of batches. Cell values are the attacked batches, in input order.
template <Classifier M>
std::map<SweepKey, std::vector<ImageBatch<typename M::scalar_type>>> attack_sweep(
    const M& model, std::span<const ImageBatch<typename M::scalar_type>> batches, std::span<const double> epsilons,
    std::span<const int> iteration_counts, double step_size) {
  for (double e : epsilons)
    if (!(e >= 0.0)) throw ConfigError("sweep epsilons must be >= 0");
  std::map<SweepKey, std::vector<ImageBatch<typename M::scalar_type>>> cells;
  for (double eps : epsilons) {
    const AttackConfig config{eps, step_size, 0, false, false};
    for (const auto& batch : batches) {
      auto snaps = pgd_trajectory<M, std::mt19937_64>(model, batch, config, iteration_counts, nullptr);
      for (std::size_t i = 0; i < iteration_counts.size(); ++i)
        cells[{eps, iteration_counts[i]}].push_back(std::move(snaps[i]));
    }
  }
  return cells;
}

}  // namespace atalp

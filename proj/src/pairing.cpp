#include "atalp/pairing.hpp"

#include <cmath>

#include "atalp/attack.hpp"

namespace atalp {

namespace {

constexpr double kNormFloor = 1e-12;

template <typename Scalar>
Scalar p_norm(const VectorX<Scalar>& v, int p) {
  if (p == 2) return v.norm();
  if (p == 1) return v.template lpNorm<1>();
  return std::pow(v.array().abs().pow(Scalar(p)).sum(), Scalar(1) / Scalar(p));
}

// d||v||_p / dv, zero at v == 0.
template <typename Scalar>
VectorX<Scalar> p_norm_grad(const VectorX<Scalar>& v, Scalar norm, int p) {
  if (norm == Scalar(0)) return VectorX<Scalar>::Zero(v.size());
  if (p == 2) return v / norm;
  if (p == 1) return v.unaryExpr([](Scalar x) { return detail::sign_or_zero(x); });
  return (v.array().sign() * v.array().abs().pow(Scalar(p - 1)) / std::pow(norm, Scalar(p - 1))).matrix();
}

// Gradient of u = q / max(||q||, floor) pulled back to q.
template <typename Scalar>
VectorX<Scalar> normalize_grad(const VectorX<Scalar>& u, Scalar norm, const VectorX<Scalar>& grad_u) {
  const Scalar floor = static_cast<Scalar>(kNormFloor);
  if (norm < floor) return grad_u / floor;
  return (grad_u - u * u.dot(grad_u)) / norm;
}

// Pull an attention-map gradient (HW x B) back to the activation tensor.
template <typename Scalar>
Tensor<Scalar> attention_map_vjp(const Tensor<Scalar>& acts, const MatrixX<Scalar>& map_grad, int power) {
  Tensor<Scalar> grad = Tensor<Scalar>::zeros_like(acts);
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> upstream = map_grad.reshaped().transpose();  // n = b*HW + s
  const auto a = acts.matrix().array();
  MatrixX<Scalar> local;
  if (power == 1) {
    local = a.sign().matrix();
  } else if (power == 2) {
    local = (Scalar(2) * a).matrix();
  } else {
    local = (Scalar(power) * a.sign() * a.abs().pow(Scalar(power - 1))).matrix();
  }
  grad.matrix() = local.array().rowwise() * upstream.array();
  return grad;
}

void check_group_lists(std::size_t clean, std::size_t adv, const PairingConfig& config) {
  if (clean != adv) throw InputError("clean and adversarial activation lists differ in length");
  for (int j : config.attention_layers)
    if (j < 0 || static_cast<std::size_t>(j) >= clean)
      throw InputError("attention layer " + std::to_string(j) + " not present in activation list");
}

}  // namespace

CeTarget parse_ce_target(std::string_view name) {
  if (name == "adversarial_only") return CeTarget::adversarial_only;
  if (name == "clean_only") return CeTarget::clean_only;
  if (name == "both_averaged") return CeTarget::both_averaged;
  throw ConfigError("unknown ce_target '" + std::string(name) + "'");
}

std::string_view to_string(CeTarget target) {
  switch (target) {
    case CeTarget::adversarial_only: return "adversarial_only";
    case CeTarget::clean_only: return "clean_only";
    case CeTarget::both_averaged: return "both_averaged";
  }
  return "adversarial_only";
}

void PairingConfig::validate() const {
  if (!(alpha >= 0.0)) throw ConfigError("pairing alpha must be >= 0");
  if (!(beta >= 0.0)) throw ConfigError("pairing beta must be >= 0");
  if (beta > 0.0 && attention_layers.empty()) throw ConfigError("attention_layers must be non-empty when beta > 0");
  for (int j : attention_layers)
    if (j < 0 || j >= kNumGroups) throw ConfigError("attention layer index " + std::to_string(j) + " out of range");
  if (attention_power < 1) throw ConfigError("attention_power must be >= 1");
  if (norm_p < 1) throw ConfigError("norm_p must be >= 1");
}

template <typename Scalar>
AttentionMap<Scalar> attention_map(const Tensor<Scalar>& activations, int power) {
  if (power < 1) throw InputError("attention power must be >= 1");
  AttentionMap<Scalar> map;
  map.batch = activations.batch();
  map.height = activations.height();
  map.width = activations.width();
  const auto a = activations.matrix().array();
  MatrixX<Scalar> summed;
  if (power == 2)
    summed = a.square().colwise().sum();
  else if (power == 1)
    summed = a.abs().colwise().sum();
  else
    summed = a.abs().pow(Scalar(power)).colwise().sum();
  map.values = summed.reshaped(activations.pixels_per_example(), activations.batch());
  return map;
}

template <typename Scalar>
Scalar at_loss_with_grad(std::span<const Tensor<Scalar>> clean_acts, std::span<const Tensor<Scalar>> adv_acts,
                         const PairingConfig& config, std::vector<Tensor<Scalar>>* clean_grads,
                         std::vector<Tensor<Scalar>>* adv_grads) {
  check_group_lists(clean_acts.size(), adv_acts.size(), config);
  if (clean_grads) clean_grads->assign(clean_acts.size(), Tensor<Scalar>());
  if (adv_grads) adv_grads->assign(adv_acts.size(), Tensor<Scalar>());
  const bool want_grad = clean_grads != nullptr || adv_grads != nullptr;
  const Scalar floor = static_cast<Scalar>(kNormFloor);

  Scalar total = 0;
  Index batch = 0;
  for (int j : config.attention_layers) {
    const auto& clean = clean_acts[static_cast<std::size_t>(j)];
    const auto& adv = adv_acts[static_cast<std::size_t>(j)];
    if (!clean.same_shape(adv))
      throw InputError("group " + std::to_string(j) + " shape mismatch: " + clean.shape_string() + " vs " +
                       adv.shape_string());
    batch = clean.batch();
    const auto q_clean = attention_map(clean, config.attention_power);
    const auto q_adv = attention_map(adv, config.attention_power);
    MatrixX<Scalar> g_clean, g_adv;
    if (want_grad) {
      g_clean = MatrixX<Scalar>::Zero(q_clean.values.rows(), batch);
      g_adv = MatrixX<Scalar>::Zero(q_adv.values.rows(), batch);
    }
    for (Index b = 0; b < batch; ++b) {
      const VectorX<Scalar> qo = q_clean.values.col(b);
      const VectorX<Scalar> qa = q_adv.values.col(b);
      const Scalar no = qo.norm();
      const Scalar na = qa.norm();
      if (no < floor && na < floor) continue;
      const VectorX<Scalar> uo = qo / std::max(no, floor);
      const VectorX<Scalar> ua = qa / std::max(na, floor);
      const VectorX<Scalar> diff = ua - uo;
      const Scalar dist = p_norm(diff, config.norm_p);
      total += dist;
      if (want_grad) {
        const VectorX<Scalar> gd = p_norm_grad(diff, dist, config.norm_p);
        g_adv.col(b) = normalize_grad(ua, na, gd);
        g_clean.col(b) = normalize_grad(uo, no, VectorX<Scalar>(-gd));
      }
    }
    if (want_grad && batch > 0) {
      const Scalar inv_b = Scalar(1) / Scalar(batch);
      auto accumulate = [&](std::vector<Tensor<Scalar>>* out, const Tensor<Scalar>& acts, const MatrixX<Scalar>& g) {
        if (!out) return;
        Tensor<Scalar> contrib = attention_map_vjp(acts, MatrixX<Scalar>(g * inv_b), config.attention_power);
        auto& slot = (*out)[static_cast<std::size_t>(j)];
        if (slot.empty())
          slot = std::move(contrib);
        else
          slot.matrix() += contrib.matrix();
      };
      accumulate(clean_grads, clean, g_clean);
      accumulate(adv_grads, adv, g_adv);
    }
  }
  return batch > 0 ? total / Scalar(batch) : Scalar(0);
}

template <typename Scalar>
Scalar at_loss(std::span<const Tensor<Scalar>> clean_acts, std::span<const Tensor<Scalar>> adv_acts,
               const PairingConfig& config) {
  return at_loss_with_grad<Scalar>(clean_acts, adv_acts, config, nullptr, nullptr);
}

template <typename Scalar>
Scalar alp_loss(const MatrixX<Scalar>& clean_logits, const MatrixX<Scalar>& adv_logits) {
  if (clean_logits.rows() != adv_logits.rows() || clean_logits.cols() != adv_logits.cols())
    throw InputError("logit shapes differ");
  if (clean_logits.rows() == 0) return Scalar(0);
  return (clean_logits - adv_logits).squaredNorm() / Scalar(clean_logits.rows());
}

template <typename Scalar>
Scalar cross_entropy(const MatrixX<Scalar>& logits, std::span<const int> labels) {
  if (static_cast<Index>(labels.size()) != logits.rows()) throw InputError("label count differs from logit rows");
  Scalar sum = 0;
  for (Index b = 0; b < logits.rows(); ++b) {
    const Scalar top = logits.row(b).maxCoeff();
    const Scalar lse = top + std::log((logits.row(b).array() - top).exp().sum());
    sum += lse - logits(b, labels[static_cast<std::size_t>(b)]);
  }
  return logits.rows() > 0 ? sum / Scalar(logits.rows()) : Scalar(0);
}

namespace {

template <typename Scalar>
void check_pair(const Model<Scalar>& model, const ImageBatch<Scalar>& clean, const ImageBatch<Scalar>& adv) {
  if (!clean.pixels.same_shape(adv.pixels))
    throw InputError("clean and adversarial batches differ in shape: " + clean.pixels.shape_string() + " vs " +
                     adv.pixels.shape_string());
  if (clean.labels != adv.labels) throw InputError("clean and adversarial labels differ");
  clean.validate(model.num_classes());
}

struct CeWeights {
  double clean = 0.0;
  double adv = 0.0;
};

CeWeights ce_weights(CeTarget target) {
  switch (target) {
    case CeTarget::adversarial_only: return {0.0, 1.0};
    case CeTarget::clean_only: return {1.0, 0.0};
    case CeTarget::both_averaged: return {0.5, 0.5};
  }
  return {0.0, 1.0};
}

template <typename Scalar>
Scalar weighted_ce(const MatrixX<Scalar>& clean_logits, const MatrixX<Scalar>& adv_logits,
                   std::span<const int> labels, CeWeights w) {
  Scalar ce = 0;
  if (w.clean != 0.0) ce += Scalar(w.clean) * cross_entropy(clean_logits, labels);
  if (w.adv != 0.0) ce += Scalar(w.adv) * cross_entropy(adv_logits, labels);
  return ce;
}

}  // namespace

template <typename Scalar>
CombinedLoss<Scalar> combined_loss(const Model<Scalar>& model, const ImageBatch<Scalar>& clean,
                                   const ImageBatch<Scalar>& adv, const PairingConfig& config) {
  config.validate();
  check_pair(model, clean, adv);
  const auto fc = model.forward(clean.pixels);
  const auto fa = model.forward(adv.pixels);
  CombinedLoss<Scalar> out;
  out.components.ce = weighted_ce(fc.logits, fa.logits, clean.labels, ce_weights(config.ce_target));
  out.components.alp = alp_loss(fc.logits, fa.logits);
  out.components.at = at_loss<Scalar>(fc.group_activations, fa.group_activations, config);
  out.total = out.components.ce + Scalar(config.alpha) * out.components.alp + Scalar(config.beta) * out.components.at;
  return out;
}

template <typename Scalar>
CombinedGradient<Scalar> combined_loss_gradient(const Model<Scalar>& model, const ImageBatch<Scalar>& clean,
                                                const ImageBatch<Scalar>& adv, const PairingConfig& config,
                                                GradientRequest request) {
  config.validate();
  check_pair(model, clean, adv);
  const auto tc = model.forward_trace(clean.pixels);
  const auto ta = model.forward_trace(adv.pixels);
  const Index batch = clean.size();
  const Scalar inv_b = Scalar(1) / Scalar(batch);
  const CeWeights w = ce_weights(config.ce_target);
  const Scalar alpha = Scalar(config.alpha);
  const Scalar beta = Scalar(config.beta);

  CombinedGradient<Scalar> out;
  auto& comp = out.loss.components;
  comp.ce = weighted_ce(tc.logits, ta.logits, clean.labels, w);
  comp.alp = alp_loss(tc.logits, ta.logits);

  MatrixX<Scalar> dclean = MatrixX<Scalar>::Zero(batch, model.num_classes());
  MatrixX<Scalar> dadv = MatrixX<Scalar>::Zero(batch, model.num_classes());
  if (w.clean != 0.0) dclean += (Scalar(w.clean) * inv_b) * cross_entropy_logit_grad(tc.logits, clean.labels);
  if (w.adv != 0.0) dadv += (Scalar(w.adv) * inv_b) * cross_entropy_logit_grad(ta.logits, clean.labels);
  if (alpha != Scalar(0)) {
    const MatrixX<Scalar> diff = (Scalar(2) * alpha * inv_b) * (tc.logits - ta.logits);
    dclean += diff;
    dadv -= diff;
  }

  std::vector<Tensor<Scalar>> gclean, gadv;
  if (beta != Scalar(0)) {
    comp.at = at_loss_with_grad<Scalar>(tc.group_activations, ta.group_activations, config, &gclean, &gadv);
    for (auto& g : gclean)
      if (!g.empty()) g.matrix() *= beta;
    for (auto& g : gadv)
      if (!g.empty()) g.matrix() *= beta;
  } else {
    comp.at = at_loss<Scalar>(tc.group_activations, ta.group_activations, config);
  }
  out.loss.total = comp.ce + alpha * comp.alp + beta * comp.at;

  const bool clean_active = w.clean != 0.0 || alpha != Scalar(0) || beta != Scalar(0);
  if (request.parameters) {
    auto ga = model.backward(ta, dadv, gadv, request);
    out.parameters = std::move(ga.parameters);
    if (request.input) out.adv_input = std::move(ga.input);
    if (clean_active || request.input) {
      auto gc = model.backward(tc, dclean, gclean, request);
      for (std::size_t i = 0; i < out.parameters.size(); ++i) out.parameters[i] += gc.parameters[i];
      if (request.input) out.clean_input = std::move(gc.input);
    }
  } else if (request.input) {
    out.adv_input = model.backward(ta, dadv, gadv, request).input;
    out.clean_input = model.backward(tc, dclean, gclean, request).input;
  }
  out.clean_logits = tc.logits;
  out.adv_logits = ta.logits;
  return out;
}

#define ATALP_INSTANTIATE_PAIRING(S)                                                                               \
  template AttentionMap<S> attention_map<S>(const Tensor<S>&, int);                                               \
  template S at_loss<S>(std::span<const Tensor<S>>, std::span<const Tensor<S>>, const PairingConfig&);            \
  template S at_loss_with_grad<S>(std::span<const Tensor<S>>, std::span<const Tensor<S>>, const PairingConfig&,   \
                                  std::vector<Tensor<S>>*, std::vector<Tensor<S>>*);                              \
  template S alp_loss<S>(const MatrixX<S>&, const MatrixX<S>&);                                                   \
  template S cross_entropy<S>(const MatrixX<S>&, std::span<const int>);                                           \
  template CombinedLoss<S> combined_loss<S>(const Model<S>&, const ImageBatch<S>&, const ImageBatch<S>&,          \
                                            const PairingConfig&);                                                \
  template CombinedGradient<S> combined_loss_gradient<S>(const Model<S>&, const ImageBatch<S>&,                   \
                                                         const ImageBatch<S>&, const PairingConfig&, GradientRequest);

ATALP_INSTANTIATE_PAIRING(float)
ATALP_INSTANTIATE_PAIRING(double)

}  // namespace atalp

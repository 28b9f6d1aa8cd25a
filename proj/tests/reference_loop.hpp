#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "atalp/trainer.hpp"

namespace atalp::test {

inline double reference_ce(const MatrixX<double>& logits, const std::vector<int>& labels) {
  double sum = 0;
  for (Index b = 0; b < logits.rows(); ++b) {
    double z = 0;
    for (Index k = 0; k < logits.cols(); ++k) z += std::exp(logits(b, k));
    sum += std::log(z) - logits(b, labels[static_cast<std::size_t>(b)]);
  }
  return sum / static_cast<double>(logits.rows());
}

// Plain cross-entropy training written directly against the model's backward pass.
// Returns the per-step loss trace.
inline std::vector<double> reference_loop(Model<double> model, const Dataset& data, const TrainConfig& cfg) {
  std::vector<double> losses;
  std::vector<MatrixX<double>> m, v;
  for (const auto& p : model.parameters()) {
    m.push_back(MatrixX<double>::Zero(p.values.rows(), p.values.cols()));
    v.push_back(m.back());
  }
  std::mt19937_64 shuffle(cfg.seed);
  long t = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.learning_rate_at(epoch);
    for (const auto& idx : data.batch_order(cfg.batch_size, true, shuffle())) {
      const auto batch = data.batch<double>(idx);
      const auto trace = model.forward_trace(batch.pixels);
      losses.push_back(reference_ce(trace.logits, batch.labels));
      MatrixX<double> g(trace.logits.rows(), trace.logits.cols());
      for (Index b = 0; b < g.rows(); ++b) {
        const Eigen::RowVectorXd e = trace.logits.row(b).array().exp();
        g.row(b) = e / e.sum();
        g(b, batch.labels[static_cast<std::size_t>(b)]) -= 1;
      }
      g /= static_cast<double>(g.rows());
      const auto grads = model.backward(trace, g, {}, {.parameters = true, .input = false});
      ++t;
      for (std::size_t i = 0; i < grads.parameters.size(); ++i) {
        auto& w = model.parameters()[i].values;
        if (cfg.optimizer == Optimizer::sgd) {
          m[i] = cfg.momentum * m[i] + grads.parameters[i];
          w -= lr * m[i];
        } else {
          m[i] = 0.9 * m[i] + 0.1 * grads.parameters[i];
          v[i] = 0.999 * v[i] + 0.001 * grads.parameters[i].cwiseAbs2();
          const double c1 = 1 - std::pow(0.9, t), c2 = 1 - std::pow(0.999, t);
          w.array() -= lr * (m[i].array() / c1) / ((v[i].array() / c2).sqrt() + 1e-8);
        }
      }
    }
  }
  return losses;
}

}  // namespace atalp::test

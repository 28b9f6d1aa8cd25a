#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "atalp/attack.hpp"
#include "atalp/backbone.hpp"
#include "atalp/dataio.hpp"
#include "atalp/pairing.hpp"

namespace atalp {

enum class LrSchedule { constant, step_decay };

LrSchedule parse_lr_schedule(std::string_view name);
std::string_view to_string(LrSchedule schedule);

/// sgd: v = momentum*v + g, theta -= lr*v. adam: standard bias-corrected Adam
/// with beta1 = 0.9, beta2 = 0.999, eps = 1e-8 (momentum is ignored).
enum class Optimizer { sgd, adam };

Optimizer parse_optimizer(std::string_view name);
std::string_view to_string(Optimizer optimizer);

struct TrainConfig {
  int epochs = 12;
  int batch_size = 50;
  double learning_rate = 0.001;
  double momentum = 0.9;
  Optimizer optimizer = Optimizer::adam;
  LrSchedule lr_schedule = LrSchedule::constant;
  AttackConfig train_attack = AttackConfig::training(0.25);
  PairingConfig pairing;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // epochs; 0 writes only the final checkpoint

  void validate() const;
  /// Learning rate for a 0-based epoch. step_decay divides by 10 at 50% and 75% of training.
  double learning_rate_at(int epoch) const;
};

struct TrainLogRow {
  long step = 0;
  int epoch = 0;
  double ce = 0, alp = 0, at = 0, total = 0;
  double clean_acc = 0;
};

struct TrainingLog {
  std::vector<TrainLogRow> rows;

  /// CSV with header step,epoch,ce,alp,at,total,clean_acc.
  std::string to_csv() const;
  /// Mean of `total` over the rows of a 1-based epoch.
  double epoch_mean_total(int epoch) const;
};

template <typename Scalar>
struct TrainResult {
  Model<Scalar> model;
  TrainingLog log;
  std::vector<std::filesystem::path> checkpoints;
};

struct TrainOutput {
  std::filesystem::path dir;  // empty: no files written
  std::function<void(const TrainLogRow&)> on_step;
};

/// Adversarial training with the paired objective. Each step attacks the current
/// parameters with `train_attack`, evaluates combined_loss on (clean, adversarial)
/// and applies one optimizer update. Data order is reshuffled every epoch
/// from `seed`. With a non-empty output dir, writes epoch_<n>.ckpt every
/// `checkpoint_every` epochs, final.ckpt and train_log.csv.
///
/// Throws NumericError (naming the step and loss components) on a non-finite loss.
template <typename Scalar>
TrainResult<Scalar> train(Model<Scalar> model, const Dataset& data, const TrainConfig& config,
                          const TrainOutput& output = {});

inline const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names{"plain", "pgd_at", "alp_only", "at_only", "at_alp"};
  return names;
}

/// Base config rewritten for one ablation variant. Throws ConfigError on unknown names.
TrainConfig variant_config(std::string_view variant, const TrainConfig& base);

template <typename Scalar>
struct VariantResult {
  Model<Scalar> model;
  TrainingLog log;
  std::filesystem::path checkpoint;
};

/// Trains each requested variant from the same initialization and data order;
/// checkpoints land in out_dir/<variant>/final.ckpt when out_dir is non-empty.
template <typename Scalar>
std::map<std::string, VariantResult<Scalar>> train_variants(const Dataset& data, std::string_view architecture_id,
                                                            const TrainConfig& base,
                                                            const std::filesystem::path& out_dir,
                                                            const std::vector<std::string>& variants = variant_names());

}  // namespace atalp

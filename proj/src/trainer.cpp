#include "atalp/trainer.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace atalp {

namespace fs = std::filesystem;

LrSchedule parse_lr_schedule(std::string_view name) {
  if (name == "constant") return LrSchedule::constant;
  if (name == "step_decay") return LrSchedule::step_decay;
  throw ConfigError("unknown lr_schedule '" + std::string(name) + "'");
}

std::string_view to_string(LrSchedule schedule) {
  return schedule == LrSchedule::constant ? "constant" : "step_decay";
}

Optimizer parse_optimizer(std::string_view name) {
  if (name == "sgd") return Optimizer::sgd;
  if (name == "adam") return Optimizer::adam;
  throw ConfigError("unknown optimizer '" + std::string(name) + "'");
}

std::string_view to_string(Optimizer optimizer) { return optimizer == Optimizer::sgd ? "sgd" : "adam"; }

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train momentum must lie in [0,1)");
  if (checkpoint_every < 0) throw ConfigError("train checkpoint_every must be >= 0");
  train_attack.validate();
  pairing.validate();
}

double TrainConfig::learning_rate_at(int epoch) const {
  if (lr_schedule == LrSchedule::constant) return learning_rate;
  double lr = learning_rate;
  if (2 * epoch >= epochs) lr *= 0.1;
  if (4 * epoch >= 3 * epochs) lr *= 0.1;
  return lr;
}

std::string TrainingLog::to_csv() const {
  std::ostringstream out;
  out << "step,epoch,ce,alp,at,total,clean_acc\n";
  for (const auto& r : rows)
    out << r.step << ',' << r.epoch << ',' << format_real(r.ce) << ',' << format_real(r.alp) << ','
        << format_real(r.at) << ',' << format_real(r.total) << ',' << format_real(r.clean_acc) << '\n';
  return out.str();
}

double TrainingLog::epoch_mean_total(int epoch) const {
  double sum = 0.0;
  int n = 0;
  for (const auto& r : rows)
    if (r.epoch == epoch) {
      sum += r.total;
      ++n;
    }
  if (n == 0) throw InputError("no log rows for epoch " + std::to_string(epoch));
  return sum / n;
}

namespace {

template <typename Scalar>
double batch_accuracy(const MatrixX<Scalar>& logits, const std::vector<int>& labels) {
  long correct = 0;
  for (Index b = 0; b < logits.rows(); ++b) {
    Index arg;
    logits.row(b).maxCoeff(&arg);
    correct += arg == labels[static_cast<std::size_t>(b)];
  }
  return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

std::string describe(const TrainLogRow& r) {
  std::ostringstream s;
  s << "non-finite loss at step " << r.step << " (epoch " << r.epoch << "): ce=" << r.ce << " alp=" << r.alp
    << " at=" << r.at << " total=" << r.total;
  return s.str();
}

}  // namespace

template <typename Scalar>
TrainResult<Scalar> train(Model<Scalar> model, const Dataset& data, const TrainConfig& config,
                          const TrainOutput& output) {
  config.validate();
  data.validate();
  if (data.num_classes() != model.num_classes())
    throw InputError("model has " + std::to_string(model.num_classes()) + " classes, dataset has " +
                     std::to_string(data.num_classes()));
  if (!output.dir.empty()) fs::create_directories(output.dir);

  TrainResult<Scalar> result{std::move(model), {}, {}};
  auto& net = result.model;
  std::vector<MatrixX<Scalar>> velocity, second;
  for (const auto& p : net.parameters()) velocity.push_back(MatrixX<Scalar>::Zero(p.values.rows(), p.values.cols()));
  if (config.optimizer == Optimizer::adam) second = velocity;

  std::mt19937_64 shuffle_rng(config.seed);
  std::mt19937_64 attack_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  const Scalar momentum = static_cast<Scalar>(config.momentum);
  long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const Scalar lr = static_cast<Scalar>(config.learning_rate_at(epoch));
    for (const auto& indices : data.batch_order(config.batch_size, true, shuffle_rng())) {
      const ImageBatch<Scalar> clean = data.batch<Scalar>(indices);
      const ImageBatch<Scalar> adv = pgd_attack(net, clean, config.train_attack, attack_rng);
      const auto grad = combined_loss_gradient(net, clean, adv, config.pairing);

      TrainLogRow row;
      row.step = ++step;
      row.epoch = epoch + 1;
      row.ce = static_cast<double>(grad.loss.components.ce);
      row.alp = static_cast<double>(grad.loss.components.alp);
      row.at = static_cast<double>(grad.loss.components.at);
      row.total = static_cast<double>(grad.loss.total);
      row.clean_acc = batch_accuracy(grad.clean_logits, clean.labels);
      if (!std::isfinite(row.total) || !std::isfinite(row.ce) || !std::isfinite(row.alp) || !std::isfinite(row.at))
        throw NumericError(describe(row));

      auto& params = net.parameters();
      if (config.optimizer == Optimizer::sgd) {
        for (std::size_t i = 0; i < params.size(); ++i) {
          velocity[i] = momentum * velocity[i] + grad.parameters[i];
          params[i].values -= lr * velocity[i];
        }
      } else {
        const Scalar b1 = Scalar(0.9), b2 = Scalar(0.999), tiny = Scalar(1e-8);
        const Scalar c1 = Scalar(1) - std::pow(b1, Scalar(step));
        const Scalar c2 = Scalar(1) - std::pow(b2, Scalar(step));
        for (std::size_t i = 0; i < params.size(); ++i) {
          const auto& g = grad.parameters[i];
          velocity[i] = b1 * velocity[i] + (Scalar(1) - b1) * g;
          second[i] = b2 * second[i] + (Scalar(1) - b2) * g.cwiseAbs2();
          params[i].values.array() -=
              lr * (velocity[i].array() / c1) / ((second[i].array() / c2).sqrt() + tiny);
        }
      }
      result.log.rows.push_back(row);
      if (output.on_step) output.on_step(row);
    }
    if (!output.dir.empty() && config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0) {
      const fs::path path = output.dir / ("epoch_" + std::to_string(epoch + 1) + ".ckpt");
      net.metadata()["epochs_completed"] = std::to_string(epoch + 1);
      save_checkpoint(net, path);
      result.checkpoints.push_back(path);
    }
  }

  net.metadata()["epochs_completed"] = std::to_string(config.epochs);
  net.metadata()["train_seed"] = std::to_string(config.seed);
  net.metadata()["train_epsilon"] = format_real(config.train_attack.epsilon);
  net.metadata()["pairing_alpha"] = format_real(config.pairing.alpha);
  net.metadata()["pairing_beta"] = format_real(config.pairing.beta);
  if (!output.dir.empty()) {
    const fs::path path = output.dir / "final.ckpt";
    save_checkpoint(net, path);
    result.checkpoints.push_back(path);
    write_file_atomic(output.dir / "train_log.csv", result.log.to_csv());
  }
  return result;
}

TrainConfig variant_config(std::string_view variant, const TrainConfig& base) {
  TrainConfig cfg = base;
  if (variant == "plain") {
    cfg.train_attack.epsilon = 0.0;
    cfg.pairing.alpha = 0.0;
    cfg.pairing.beta = 0.0;
  } else if (variant == "pgd_at") {
    cfg.pairing.alpha = 0.0;
    cfg.pairing.beta = 0.0;
  } else if (variant == "alp_only") {
    cfg.pairing.beta = 0.0;
  } else if (variant == "at_only") {
    cfg.pairing.alpha = 0.0;
  } else if (variant != "at_alp") {
    throw ConfigError("unknown training variant '" + std::string(variant) + "'");
  }
  return cfg;
}

template <typename Scalar>
std::map<std::string, VariantResult<Scalar>> train_variants(const Dataset& data, std::string_view architecture_id,
                                                            const TrainConfig& base, const fs::path& out_dir,
                                                            const std::vector<std::string>& variants) {
  base.validate();
  std::map<std::string, VariantResult<Scalar>> out;
  for (const auto& name : variants) {
    const TrainConfig cfg = variant_config(name, base);
    Model<Scalar> init = build_model<Scalar>(architecture_id, data.num_classes(), base.seed);
    init.metadata()["variant"] = name;
    TrainOutput output;
    if (!out_dir.empty()) output.dir = out_dir / name;
    auto trained = train(std::move(init), data, cfg, output);
    fs::path ckpt = trained.checkpoints.empty() ? fs::path{} : trained.checkpoints.back();
    out.emplace(name, VariantResult<Scalar>{std::move(trained.model), std::move(trained.log), std::move(ckpt)});
  }
  return out;
}

template TrainResult<float> train<float>(Model<float>, const Dataset&, const TrainConfig&, const TrainOutput&);
template TrainResult<double> train<double>(Model<double>, const Dataset&, const TrainConfig&, const TrainOutput&);
template std::map<std::string, VariantResult<float>> train_variants<float>(const Dataset&, std::string_view,
                                                                           const TrainConfig&, const fs::path&,
                                                                           const std::vector<std::string>&);
template std::map<std::string, VariantResult<double>> train_variants<double>(const Dataset&, std::string_view,
                                                                             const TrainConfig&, const fs::path&,
                                                                             const std::vector<std::string>&);

}  // namespace atalp

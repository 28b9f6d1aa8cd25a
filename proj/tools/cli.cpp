#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "atalp/attack.hpp"
#include "atalp/backbone.hpp"
#include "atalp/config.hpp"
#include "atalp/dataio.hpp"
#include "atalp/evalharness.hpp"
#include "atalp/image_io.hpp"
#include "atalp/trainer.hpp"

namespace atalp::cli {

namespace fs = std::filesystem;
// Training and attacks run in single precision; checkpoints store float64.
using Scalar = float;

namespace {

struct CommonOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
  std::string surrogate;
};

struct Extra {
  std::string image;
  std::optional<double> epsilon;
  std::optional<int> iterations;
  std::optional<int> label;
  std::optional<int> group;
  std::optional<Index> limit;
  std::vector<std::string> variants;
};

void add_common(CLI::App* sub, CommonOptions& opts) {
  sub->add_option("--config", opts.config, "Run config file (key = value lines)");
  sub->add_option("--override", opts.overrides, "key=value applied after the config file (repeatable)")
      ->take_all()
      ->allow_extra_args(false);
  sub->add_option("--seed", opts.seed, "Sets train.seed and eval.seed");
  sub->add_option("--out", opts.out, "Output directory (output.dir)");
}

RunConfig resolve(const CommonOptions& opts) {
  std::vector<std::string> overrides = opts.overrides;
  if (opts.seed) {
    overrides.push_back("train.seed=" + std::to_string(*opts.seed));
    overrides.push_back("eval.seed=" + std::to_string(*opts.seed));
  }
  if (!opts.out.empty()) overrides.push_back("output.dir=" + opts.out);
  if (!opts.checkpoint.empty()) overrides.push_back("model.checkpoint=" + opts.checkpoint);
  if (!opts.surrogate.empty()) overrides.push_back("model.surrogate_checkpoint=" + opts.surrogate);
  const ConfigTable table = load_config_table(opts.config, overrides);
  return RunConfig::from_table(table);
}

void echo_config(const RunConfig& rc) {
  fs::create_directories(rc.output_dir);
  write_file_atomic(rc.output_dir / "run.cfg", rc.to_table().to_text());
}

Dataset load_split(const RunConfig& rc, Split split) {
  return load_dataset(rc.dataset_id, split, rc.dataset_root, rc.dataset);
}

Model<Scalar> require_model(const RunConfig& rc) {
  if (rc.checkpoint.empty()) throw ConfigError("this command needs model.checkpoint (or --checkpoint)");
  return load_checkpoint<Scalar>(rc.checkpoint);
}

void log_epochs(const TrainLogRow& row, long steps_per_epoch) {
  if (row.step % steps_per_epoch == 0)
    std::cerr << "epoch " << row.epoch << " step " << row.step << " total " << row.total << " ce " << row.ce
              << " alp " << row.alp << " at " << row.at << " clean_acc " << row.clean_acc << "\n";
}

long steps_per_epoch(const Dataset& data, const TrainConfig& cfg) {
  return static_cast<long>((data.size() + cfg.batch_size - 1) / cfg.batch_size);
}

int cmd_train(const RunConfig& rc) {
  const Dataset train_set = load_split(rc, Split::train);
  auto model = build_model<Scalar>(rc.model_arch, train_set.num_classes(), rc.train.seed);
  const long spe = steps_per_epoch(train_set, rc.train);
  TrainOutput output{rc.output_dir, [spe](const TrainLogRow& r) { log_epochs(r, spe); }};
  const auto result = train(std::move(model), train_set, rc.train, output);
  for (const auto& p : result.checkpoints) std::cout << "checkpoint " << p.string() << "\n";
  return kExitOk;
}

Model<Scalar> surrogate_for(const RunConfig& rc, const Dataset& train_set) {
  if (!rc.surrogate_checkpoint.empty()) return load_checkpoint<Scalar>(rc.surrogate_checkpoint);
  std::cerr << "training black-box surrogate " << rc.surrogate_arch << "\n";
  TrainConfig cfg = variant_config("plain", rc.train);
  cfg.seed = rc.train.seed + 1;
  auto init = build_model<Scalar>(rc.surrogate_arch, train_set.num_classes(), cfg.seed);
  init.metadata()["variant"] = "surrogate";
  return train(std::move(init), train_set, cfg, {rc.output_dir / "surrogate", {}}).model;
}

EvalReport evaluate_all(const RunConfig& rc, const Model<Scalar>& defended, const Dataset& test_set,
                        const Model<Scalar>* surrogate) {
  EvalReport report;
  for (ThreatMode mode : rc.eval.modes()) {
    if (mode == ThreatMode::black_box && surrogate == nullptr)
      throw ConfigError("black-box evaluation needs model.surrogate_checkpoint (or --surrogate)");
    const auto threat =
        mode == ThreatMode::gray_box ? ThreatModel<Scalar>::gray_box() : ThreatModel<Scalar>::black_box(*surrogate);
    report.merge(evaluate_robustness(defended, threat, test_set, rc.eval.epsilons, rc.eval.iterations,
                                     rc.eval.step_size, rc.eval.batch_size));
  }
  report.metadata["seed"] = std::to_string(rc.eval.seed);
  return report;
}

int cmd_eval(const RunConfig& rc) {
  const Dataset test_set = load_split(rc, Split::test);
  const auto defended = require_model(rc);
  std::optional<Model<Scalar>> surrogate;
  if (!rc.surrogate_checkpoint.empty()) surrogate = load_checkpoint<Scalar>(rc.surrogate_checkpoint);
  const auto report = evaluate_all(rc, defended, test_set, surrogate ? &*surrogate : nullptr);
  const fs::path path = rc.output_dir / "eval.csv";
  save_report(report, path);
  std::cout << report.to_csv();
  std::cerr << "wrote " << path.string() << "\n";
  return kExitOk;
}

int cmd_ablate(const RunConfig& rc, const std::vector<std::string>& requested) {
  const Dataset train_set = load_split(rc, Split::train);
  const Dataset test_set = load_split(rc, Split::test);
  const std::vector<std::string> variants = requested.empty() ? variant_names() : requested;
  for (const auto& v : variants) variant_config(v, rc.train);

  std::map<std::string, VariantResult<Scalar>> trained;
  for (const auto& v : variants) {
    std::cerr << "training variant " << v << "\n";
    auto one = train_variants<Scalar>(train_set, rc.model_arch, rc.train, rc.output_dir, {v});
    trained.insert(std::make_move_iterator(one.begin()), std::make_move_iterator(one.end()));
  }
  std::optional<Model<Scalar>> surrogate;
  const auto modes = rc.eval.modes();
  if (std::find(modes.begin(), modes.end(), ThreatMode::black_box) != modes.end())
    surrogate = surrogate_for(rc, train_set);

  std::ostringstream csv;
  csv << "variant,mode,epsilon,iterations,top1,n\n";
  for (const auto& v : variants) {
    const auto& result = trained.at(v);
    const auto report = evaluate_all(rc, result.model, test_set, surrogate ? &*surrogate : nullptr);
    save_report(report, rc.output_dir / v / "eval.csv");
    for (const auto& r : report.rows)
      csv << v << ',' << to_string(r.mode) << ',' << format_real(r.epsilon) << ',' << r.iterations << ','
          << format_real(r.top1) << ',' << r.n << '\n';
    std::cout << v << " checkpoint " << result.checkpoint.string() << "\n";
  }
  write_file_atomic(rc.output_dir / "ablation_eval.csv", csv.str());
  std::cout << csv.str();
  return kExitOk;
}

std::string cell_dir_name(double eps, int iterations) {
  return "eps" + format_real(eps) + "_it" + std::to_string(iterations);
}

int cmd_attack(const RunConfig& rc, std::optional<Index> limit) {
  Dataset test_set = load_split(rc, Split::test);
  const auto model = require_model(rc);
  const Index n = limit ? std::min(*limit, test_set.size()) : test_set.size();
  if (n < 1) throw ConfigError("--limit must be >= 1");
  std::vector<ImageBatch<Scalar>> batches;
  for (Index first = 0; first < n; first += rc.eval.batch_size)
    batches.push_back(test_set.range<Scalar>(first, std::min(rc.eval.batch_size, n - first)));
  const auto cells = attack_sweep(model, std::span<const ImageBatch<Scalar>>(batches), rc.eval.epsilons,
                                  rc.eval.iterations, rc.eval.step_size);
  std::ostringstream csv;
  csv << "epsilon,iterations,top1,n\n";
  for (const auto& [key, cell] : cells) {
    const fs::path dir = rc.output_dir / "adv" / cell_dir_name(key.first, key.second);
    fs::create_directories(dir);
    Index offset = 0;
    long correct = 0;
    for (const auto& batch : cell) {
      const MatrixX<Scalar> logits = model.logits(batch.pixels);
      const Tensor<double> pixels = batch.pixels.template cast<double>();
      for (Index b = 0; b < batch.size(); ++b) {
        write_png(dir / (test_set.ids[static_cast<std::size_t>(offset + b)] + ".png"), to_raster(pixels, b));
        Index arg;
        logits.row(b).maxCoeff(&arg);
        correct += arg == batch.labels[static_cast<std::size_t>(b)];
      }
      offset += batch.size();
    }
    csv << format_real(key.first) << ',' << key.second << ',' << format_real(static_cast<double>(correct) / n) << ','
        << n << '\n';
  }
  write_file_atomic(rc.output_dir / "attack_sweep.csv", csv.str());
  std::cout << csv.str();
  return kExitOk;
}

int cmd_heatmap(const RunConfig& rc, const Extra& extra) {
  if (extra.image.empty()) throw ConfigError("heatmap needs --image");
  const auto model = require_model(rc);
  Raster raster = read_png(extra.image, 3);
  Tensor<double> pixels = to_tensor(raster);
  if (pixels.height() != rc.dataset.image_size || pixels.width() != rc.dataset.image_size) {
    Tensor<double> resized(1, 3, rc.dataset.image_size, rc.dataset.image_size);
    for (Index c = 0; c < 3; ++c) {
      MatrixX<double> plane(pixels.height(), pixels.width());
      for (Index h = 0; h < pixels.height(); ++h)
        for (Index w = 0; w < pixels.width(); ++w) plane(h, w) = pixels(0, c, h, w);
      const auto r = bilinear_resize(plane, rc.dataset.image_size, rc.dataset.image_size);
      for (Index h = 0; h < resized.height(); ++h)
        for (Index w = 0; w < resized.width(); ++w) resized(0, c, h, w) = std::clamp(r(h, w), 0.0, 1.0);
    }
    pixels = std::move(resized);
  }
  ImageBatch<Scalar> image{pixels.cast<Scalar>(), {0}};
  if (extra.label) {
    image.labels[0] = *extra.label;
  } else {
    Index arg;
    model.logits(image.pixels).row(0).maxCoeff(&arg);
    image.labels[0] = static_cast<int>(arg);
  }
  image.validate(model.num_classes());
  const AttackConfig attack{extra.epsilon.value_or(rc.eval.epsilons.front()), rc.eval.step_size,
                            extra.iterations.value_or(*std::max_element(rc.eval.iterations.begin(),
                                                                        rc.eval.iterations.end())),
                            false, false};
  for (const auto& p : export_attention_heatmaps(model, image, attack, rc.output_dir, rc.eval.seed))
    std::cout << p.string() << "\n";
  return kExitOk;
}

int cmd_regionstat(const RunConfig& rc, const Extra& extra) {
  const Dataset test_set = load_split(rc, Split::test);
  const auto masks = load_masks(rc.dataset_id, Split::test, rc.dataset_root, rc.dataset);
  const auto model = require_model(rc);
  const AttackConfig attack{extra.epsilon.value_or(rc.eval.epsilons.front()), rc.eval.step_size,
                            extra.iterations.value_or(*std::max_element(rc.eval.iterations.begin(),
                                                                        rc.eval.iterations.end())),
                            false, false};
  const double score =
      key_region_activation(model, test_set, masks, attack, rc.eval.region_group, rc.eval.seed, rc.eval.batch_size);
  std::ostringstream csv;
  csv << "group,epsilon,iterations,score\n"
      << rc.eval.region_group << ',' << format_real(attack.epsilon) << ',' << attack.num_iterations << ','
      << format_real(score) << '\n';
  write_file_atomic(rc.output_dir / "regionstat.csv", csv.str());
  std::cout << csv.str();
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Attention and logit pairing adversarial training toolkit"};
  app.require_subcommand(1);

  CommonOptions opts;
  Extra extra;
  auto* train_cmd = app.add_subcommand("train", "Adversarially train a model");
  auto* ablate_cmd = app.add_subcommand("ablate", "Train the ablation variants and evaluate them");
  auto* eval_cmd = app.add_subcommand("eval", "Gray-/black-box robustness sweep of a checkpoint");
  auto* attack_cmd = app.add_subcommand("attack", "Write PGD adversarial test images for every sweep cell");
  auto* heatmap_cmd = app.add_subcommand("heatmap", "Export clean/adversarial attention heatmaps for one image");
  auto* region_cmd = app.add_subcommand("regionstat", "Key-region attention concentration under attack");
  for (auto* sub : {train_cmd, ablate_cmd, eval_cmd, attack_cmd, heatmap_cmd, region_cmd}) add_common(sub, opts);
  for (auto* sub : {eval_cmd, attack_cmd, heatmap_cmd, region_cmd})
    sub->add_option("--checkpoint", opts.checkpoint, "Model checkpoint (model.checkpoint)");
  for (auto* sub : {eval_cmd, ablate_cmd})
    sub->add_option("--surrogate", opts.surrogate, "Black-box surrogate checkpoint (model.surrogate_checkpoint)");
  ablate_cmd->add_option("--variants", extra.variants, "Subset of plain,pgd_at,alp_only,at_only,at_alp")
      ->delimiter(',');
  attack_cmd->add_option("--limit", extra.limit, "Attack only the first N test images");
  heatmap_cmd->add_option("--image", extra.image, "Input PNG")->required();
  heatmap_cmd->add_option("--label", extra.label, "True label (default: clean prediction)");
  for (auto* sub : {heatmap_cmd, region_cmd}) {
    sub->add_option("--epsilon", extra.epsilon, "Attack budget (default: first eval.epsilons entry)");
    sub->add_option("--iterations", extra.iterations, "Attack iterations (default: largest eval.iterations)");
  }
  region_cmd->add_option("--group", extra.group, "Activation group 0-3 (eval.region_group)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return kExitValidation;
  }

  try {
    if (extra.group) opts.overrides.push_back("eval.region_group=" + std::to_string(*extra.group));
    const RunConfig rc = resolve(opts);
    echo_config(rc);
    if (*train_cmd) return cmd_train(rc);
    if (*ablate_cmd) return cmd_ablate(rc, extra.variants);
    if (*eval_cmd) return cmd_eval(rc);
    if (*attack_cmd) return cmd_attack(rc, extra.limit);
    if (*heatmap_cmd) return cmd_heatmap(rc, extra);
    if (*region_cmd) return cmd_regionstat(rc, extra);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace atalp::cli

#include "doctest.h"

#include <cmath>

#include "atalp/trainer.hpp"
#include "reference_loop.hpp"
#include "test_support.hpp"

using namespace atalp;

namespace {

Dataset small_blobs(Index n) {
  DatasetOptions options;
  options.train_size = n;
  return make_blobs2(Split::train, options);
}

}  // namespace

TEST_CASE("step decay schedule") {
  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.learning_rate = 1.0;
  cfg.lr_schedule = LrSchedule::step_decay;
  CHECK(cfg.learning_rate_at(0) == 1.0);
  CHECK(cfg.learning_rate_at(3) == 1.0);
  CHECK(cfg.learning_rate_at(4) == doctest::Approx(0.1));
  CHECK(cfg.learning_rate_at(6) == doctest::Approx(0.01));
  cfg.lr_schedule = LrSchedule::constant;
  CHECK(cfg.learning_rate_at(7) == 1.0);
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.learning_rate = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(parse_optimizer("rmsprop"), ConfigError);
}

TEST_CASE("no budget and no pairing collapses to plain cross-entropy training") {
  const Dataset data = small_blobs(60);
  for (const Optimizer opt : {Optimizer::sgd, Optimizer::adam}) {
    CAPTURE(to_string(opt));
    TrainConfig cfg = variant_config("plain", TrainConfig{});
    cfg.epochs = 3;
    cfg.batch_size = 10;
    cfg.optimizer = opt;
    cfg.learning_rate = opt == Optimizer::sgd ? 0.05 : 0.001;
    const auto init = build_model<double>("tinycnn4", 2, 4);
    const auto result = train(init, data, cfg);
    const auto reference = test::reference_loop(init, data, cfg);
    REQUIRE(result.log.rows.size() == reference.size());
    double worst = 0;
    for (std::size_t i = 0; i < reference.size(); ++i)
      worst = std::max(worst, std::abs(result.log.rows[i].total - reference[i]));
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("one epoch with checkpoint_every 1 writes one checkpoint plus final") {
  const auto dir = test::scratch_dir("ckpt_schedule");
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 5;
  cfg.checkpoint_every = 1;
  cfg.train_attack = AttackConfig::training(0.1, 2);
  const auto result = train(build_model<double>("tinycnn4", 2, 0), small_blobs(50), cfg, {dir, {}});
  CHECK(result.log.rows.size() == 10);
  REQUIRE(result.checkpoints.size() == 2);
  CHECK(result.checkpoints[0].filename() == "epoch_1.ckpt");
  CHECK(result.checkpoints[1].filename() == "final.ckpt");
  CHECK(std::filesystem::exists(dir / "train_log.csv"));
  CHECK(read_file(dir / "train_log.csv").rfind("step,epoch,ce,alp,at,total,clean_acc\n", 0) == 0);
}

TEST_CASE("combined loss falls between the first and fifth epoch") {
  TrainConfig cfg;
  cfg.epochs = 5;
  const auto result = train(build_model<float>("smallcnn4", 2, 0), small_blobs(200), cfg);
  CHECK(result.log.epoch_mean_total(5) < result.log.epoch_mean_total(1));
}

TEST_CASE("identical seeds reproduce parameters and logs") {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 10;
  cfg.train_attack = AttackConfig::training(0.1, 3);
  const Dataset data = small_blobs(40);
  const auto a = train(build_model<double>("tinycnn4", 2, 1), data, cfg);
  const auto b = train(build_model<double>("tinycnn4", 2, 1), data, cfg);
  CHECK(a.log.to_csv() == b.log.to_csv());
  for (std::size_t i = 0; i < a.model.parameters().size(); ++i)
    CHECK(a.model.parameters()[i].values == b.model.parameters()[i].values);
  cfg.seed = 2;
  const auto c = train(build_model<double>("tinycnn4", 2, 1), data, cfg);
  CHECK(a.log.to_csv() != c.log.to_csv());
}

TEST_CASE("variant definitions") {
  TrainConfig base;
  base.train_attack = AttackConfig::training(0.3);
  base.pairing.alpha = 0.7;
  base.pairing.beta = 3;
  const auto plain = variant_config("plain", base);
  CHECK(plain.train_attack.epsilon == 0.0);
  CHECK(plain.pairing.alpha == 0.0);
  CHECK(plain.pairing.beta == 0.0);
  const auto pgd = variant_config("pgd_at", base);
  CHECK(pgd.train_attack.epsilon == 0.3);
  CHECK(pgd.pairing.alpha == 0.0);
  CHECK(pgd.pairing.beta == 0.0);
  CHECK(variant_config("alp_only", base).pairing.beta == 0.0);
  CHECK(variant_config("alp_only", base).pairing.alpha == 0.7);
  CHECK(variant_config("at_only", base).pairing.alpha == 0.0);
  CHECK(variant_config("at_only", base).pairing.beta == 3.0);
  const auto full = variant_config("at_alp", base);
  CHECK(full.pairing.alpha == 0.7);
  CHECK(full.pairing.beta == 3.0);
  CHECK_THROWS_AS(variant_config("fgsm", base), ConfigError);
}

TEST_CASE("all five variants train and reload exactly") {
  const auto dir = test::scratch_dir("variants");
  TrainConfig base;
  base.epochs = 1;
  base.batch_size = 10;
  base.train_attack = AttackConfig::training(0.1, 2);
  const auto results = train_variants<double>(small_blobs(20), "tinycnn4", base, dir);
  REQUIRE(results.size() == 5);
  for (const auto& [name, r] : results) {
    CAPTURE(name);
    CHECK(r.checkpoint == dir / name / "final.ckpt");
    const auto loaded = load_checkpoint<double>(r.checkpoint);
    CHECK(loaded.metadata().at("variant") == name);
    for (std::size_t i = 0; i < loaded.parameters().size(); ++i)
      CHECK(loaded.parameters()[i].values == r.model.parameters()[i].values);
  }
}

TEST_CASE("class count mismatch and non-finite loss abort") {
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 10;
  CHECK_THROWS_AS(train(build_model<double>("tinycnn4", 3, 0), small_blobs(20), cfg), InputError);
  cfg = variant_config("plain", cfg);
  cfg.optimizer = Optimizer::sgd;
  cfg.learning_rate = 1e300;
  CHECK_THROWS_AS(train(build_model<double>("tinycnn4", 2, 0), small_blobs(40), cfg), NumericError);
}

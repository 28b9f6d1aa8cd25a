#include "doctest.h"

#include <cmath>
#include <random>

#include "atalp/pairing.hpp"
#include "test_support.hpp"

using namespace atalp;

namespace {

Tensor<double> from_planes(const std::vector<std::vector<double>>& planes, Index h, Index w) {
  Tensor<double> t(1, static_cast<Index>(planes.size()), h, w);
  for (std::size_t c = 0; c < planes.size(); ++c)
    for (Index i = 0; i < h * w; ++i) t(0, static_cast<Index>(c), i / w, i % w) = planes[c][static_cast<std::size_t>(i)];
  return t;
}

std::vector<Tensor<double>> random_acts(std::uint64_t seed, Index batch = 3) {
  std::vector<Tensor<double>> acts;
  Index size = 8;
  for (int j = 0; j < 4; ++j, size /= 2) {
    Tensor<double> t = test::random_images(batch, 2 + j, size, seed * 10 + static_cast<std::uint64_t>(j));
    t.matrix() = (t.matrix().array() - 0.3).cwiseMax(0.0).matrix();  // ReLU-like with some zeros
    acts.push_back(std::move(t));
  }
  return acts;
}

ImageBatch<double> perturbed(const ImageBatch<double>& clean, double eps, std::uint64_t seed) {
  ImageBatch<double> adv = clean;
  const auto noise = test::random_images(clean.size(), 3, clean.pixels.height(), seed);
  adv.pixels.matrix() =
      (clean.pixels.matrix().array() + eps * (2.0 * noise.matrix().array() - 1.0)).max(0.0).min(1.0).matrix();
  return adv;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

}  // namespace

TEST_CASE("attention map of one channel squares it") {
  const auto map = attention_map(from_planes({{1, 2, 3, 4}}, 2, 2), 2);
  CHECK(map.image(0) == (MatrixX<double>(2, 2) << 1, 4, 9, 16).finished());
}

TEST_CASE("attention map sums powers over channels") {
  const auto map = attention_map(from_planes({{1, 0, 0, 1}, {2, 0, 0, 2}}, 2, 2), 2);
  CHECK(map.image(0) == (MatrixX<double>(2, 2) << 5, 0, 0, 5).finished());
  CHECK(attention_map(Tensor<double>(2, 3, 4, 4), 2).values.isZero(0.0));
  const auto cubed = attention_map(from_planes({{-1, 2}, {1, 1}}, 1, 2), 3);
  CHECK(cubed(0, 0, 0) == 2.0);
  CHECK(cubed(0, 0, 1) == 9.0);
  CHECK_THROWS_AS(attention_map(Tensor<double>(1, 1, 2, 2), 0), InputError);
}

TEST_CASE("attention map ignores channel order") {
  const auto acts = random_acts(3)[1];
  Tensor<double> perm = acts;
  const Index c = acts.channels();
  for (Index k = 0; k < c; ++k) perm.matrix().row(k) = acts.matrix().row(c - 1 - k);
  CHECK((attention_map(perm, 2).values - attention_map(acts, 2).values).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("at_loss of orthogonal unit maps is sqrt 2") {
  PairingConfig config;
  config.attention_layers = {0};
  const std::vector<Tensor<double>> clean{from_planes({{1, 0}}, 1, 2)};
  const std::vector<Tensor<double>> adv{from_planes({{0, 1}}, 1, 2)};
  CHECK(at_loss<double>(clean, adv, config) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
}

TEST_CASE("at_loss identities") {
  const PairingConfig config;
  const auto clean = random_acts(1);
  const auto adv = random_acts(2);
  CHECK(at_loss<double>(clean, clean, config) == 0.0);
  const double base = at_loss<double>(clean, adv, config);
  CHECK(base > 0.0);
  CHECK(at_loss<double>(adv, clean, config) == doctest::Approx(base).epsilon(1e-14));
  CHECK(base <= 2.0 * 4);

  // Scaling activations by s scales a power-2 map by s^2.
  auto scaled = adv;
  scaled[2].matrix() *= 3.7;
  CHECK(at_loss<double>(clean, scaled, config) == doctest::Approx(base).epsilon(1e-12));
  auto scaled_self = clean;
  scaled_self[1].matrix() *= 0.25;
  CHECK(at_loss<double>(clean, scaled_self, config) <= 1e-12);

  auto permuted = adv;
  for (auto& t : permuted) {
    const MatrixX<double> rows = t.matrix();
    for (Index k = 0; k < rows.rows(); ++k) t.matrix().row(k) = rows.row((k + 1) % rows.rows());
  }
  CHECK(at_loss<double>(clean, permuted, config) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("at_loss per layer and example stays within [0, 2]") {
  PairingConfig config;
  config.attention_layers = {2};
  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Tensor<double>> a(4), b(4);
    a[2] = Tensor<double>(1, 3, 2, 2);
    b[2] = Tensor<double>(1, 3, 2, 2);
    for (Index i = 0; i < 12; ++i) {
      a[2].matrix()(i) = normal(rng);
      b[2].matrix()(i) = normal(rng);
    }
    const double v = at_loss<double>(a, b, config);
    CHECK(v >= 0.0);
    CHECK(v <= 2.0);
  }
}

TEST_CASE("at_loss zero-norm safeguard") {
  PairingConfig config;
  config.attention_layers = {0};
  const std::vector<Tensor<double>> zero{Tensor<double>(1, 2, 2, 2)};
  const std::vector<Tensor<double>> live{from_planes({{1, 0, 0, 0}, {0, 0, 0, 0}}, 2, 2)};
  CHECK(at_loss<double>(zero, zero, config) == 0.0);
  CHECK(at_loss<double>(zero, live, config) == doctest::Approx(1.0));
}

TEST_CASE("at_loss rejects mismatched shapes and missing layers") {
  const PairingConfig config;
  auto clean = random_acts(1);
  auto adv = random_acts(1, 2);
  CHECK_THROWS_AS(at_loss<double>(clean, adv, config), InputError);
  clean.pop_back();
  CHECK_THROWS_AS(at_loss<double>(clean, clean, config), InputError);
}

TEST_CASE("alp_loss is the batch mean squared distance") {
  MatrixX<double> a(1, 2), b(1, 2);
  a << 1, 2;
  b << 1, 4;
  CHECK(alp_loss(a, b) == 4.0);
  CHECK(alp_loss(a, a) == 0.0);
  CHECK(alp_loss(b, a) == alp_loss(a, b));
  MatrixX<double> c(2, 2), d(2, 2);
  c << 0, 0, 0, 0;
  d << 2, 0, 0, 4;
  CHECK(alp_loss(c, d) == 10.0);
  CHECK_THROWS_AS(alp_loss(a, c), InputError);
}

TEST_CASE("pairing config validation") {
  PairingConfig config;
  CHECK_NOTHROW(config.validate());
  config.attention_layers.clear();
  CHECK_THROWS_AS(config.validate(), ConfigError);
  config.beta = 0;
  CHECK_NOTHROW(config.validate());
  config.alpha = -1;
  CHECK_THROWS_AS(config.validate(), ConfigError);
  CHECK(parse_ce_target("both_averaged") == CeTarget::both_averaged);
  CHECK_THROWS_AS(parse_ce_target("adv"), ConfigError);
}

TEST_CASE("combined loss degenerate cases reduce to cross-entropy") {
  const auto model = build_model<double>("tinycnn4", 2, 3);
  const auto clean = test::random_batch(4, 16, 2, 3);
  const auto adv = perturbed(clean, 0.1, 7);
  PairingConfig off;
  off.alpha = 0;
  off.beta = 0;
  const auto l = combined_loss(model, clean, adv, off);
  CHECK(l.total == l.components.ce);
  CHECK(l.components.ce == cross_entropy(model.logits(adv.pixels), adv.labels));

  const PairingConfig on;
  const auto same = combined_loss(model, clean, clean, on);
  CHECK(same.components.alp == 0.0);
  CHECK(same.components.at == 0.0);
  CHECK(same.total == same.components.ce);

  const auto full = combined_loss(model, clean, adv, on);
  CHECK(full.total == doctest::Approx(full.components.ce + 0.5 * full.components.alp + 10.0 * full.components.at));
}

TEST_CASE("combined loss rejects unpaired batches") {
  const auto model = build_model<double>("tinycnn4", 2, 3);
  const auto clean = test::random_batch(4, 16, 2, 3);
  auto adv = clean;
  adv.labels[0] = 1 - adv.labels[0];
  CHECK_THROWS_AS(combined_loss(model, clean, adv, PairingConfig{}), InputError);
}

TEST_CASE("combined loss gradient matches central differences") {
  for (const CeTarget target : {CeTarget::adversarial_only, CeTarget::both_averaged}) {
    CAPTURE(to_string(target));
    auto model = build_model<double>("tinycnn4", 2, 17);
    const auto clean = test::random_batch(3, 16, 2, 11);
    const auto adv = perturbed(clean, 0.1, 12);
    PairingConfig config;
    config.ce_target = target;
    const auto grad = combined_loss_gradient(model, clean, adv, config, {.parameters = true, .input = true});
    CHECK(grad.loss.total == doctest::Approx(combined_loss(model, clean, adv, config).total).epsilon(1e-12));

    std::mt19937_64 rng(5);
    const double h = 1e-6;
    auto& params = model.parameters();
    for (int trial = 0; trial < 20; ++trial) {
      auto& p = params[rng() % params.size()];
      const Index i = static_cast<Index>(rng() % static_cast<std::uint64_t>(p.values.size()));
      const double saved = p.values(i);
      p.values(i) = saved + h;
      const double up = combined_loss(model, clean, adv, config).total;
      p.values(i) = saved - h;
      const double down = combined_loss(model, clean, adv, config).total;
      p.values(i) = saved;
      const double numeric = (up - down) / (2 * h);
      const auto idx = static_cast<std::size_t>(&p - params.data());
      CAPTURE(p.name);
      CHECK(rel_err(numeric, grad.parameters[idx](i)) <= 1e-3);
    }

    for (int branch = 0; branch < 2; ++branch) {
      for (int trial = 0; trial < 10; ++trial) {
        const Index i = static_cast<Index>(rng() % static_cast<std::uint64_t>(clean.pixels.size()));
        auto c_up = clean, c_down = clean, a_up = adv, a_down = adv;
        auto& up = branch == 0 ? c_up : a_up;
        auto& down = branch == 0 ? c_down : a_down;
        up.pixels.matrix()(i) += h;
        down.pixels.matrix()(i) -= h;
        if (up.pixels.matrix()(i) > 1.0 || down.pixels.matrix()(i) < 0.0) continue;
        const double numeric = (combined_loss(model, c_up, a_up, config).total -
                                combined_loss(model, c_down, a_down, config).total) /
                               (2 * h);
        const auto& g = branch == 0 ? grad.clean_input : grad.adv_input;
        CAPTURE(branch);
        CHECK(rel_err(numeric, g.matrix()(i)) <= 1e-3);
      }
    }
  }
}

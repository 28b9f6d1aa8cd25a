#include "doctest.h"

#include <random>

#include "atalp/backbone.hpp"
#include "test_support.hpp"

using namespace atalp;

TEST_CASE("build_model gives four shrinking taps and K logits") {
  const auto model = build_model<double>("smallcnn4", 2, 7);
  CHECK(model.num_classes() == 2);
  CHECK(model.group_names().size() == 4);
  const auto x = test::random_images(8, 3, 32, 1);
  const auto out = model.forward(x);
  CHECK(out.logits.rows() == 8);
  CHECK(out.logits.cols() == 2);
  REQUIRE(out.group_activations.size() == 4);
  const Index widths[] = {16, 32, 64, 128};
  Index prev = 32;
  for (int j = 0; j < 4; ++j) {
    const auto& a = out.group_activations[static_cast<std::size_t>(j)];
    CHECK(a.batch() == 8);
    CHECK(a.channels() == widths[j]);
    CHECK(a.height() < prev);
    CHECK(a.width() == a.height());
    CHECK(a.matrix().minCoeff() >= 0.0);
    prev = a.height();
  }
}

TEST_CASE("identical seeds give identical parameters") {
  const auto a = build_model<double>("smallcnn4", 10, 7);
  const auto b = build_model<double>("smallcnn4", 10, 7);
  const auto c = build_model<double>("smallcnn4", 10, 8);
  REQUIRE(a.parameters().size() == b.parameters().size());
  bool differs = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    CHECK(a.parameters()[i].name == b.parameters()[i].name);
    CHECK(a.parameters()[i].values == b.parameters()[i].values);
    differs = differs || a.parameters()[i].values != c.parameters()[i].values;
  }
  CHECK(differs);
}

TEST_CASE("unknown architecture and bad class count are configuration errors") {
  CHECK_THROWS_AS(build_model<double>("resnet101", 2, 0), ConfigError);
  CHECK_THROWS_AS(build_model<double>("smallcnn4", 1, 0), ConfigError);
}

TEST_CASE("forward rejects mismatched input shapes") {
  const auto model = build_model<double>("tinycnn4", 2, 0);
  CHECK_THROWS_AS(model.forward(test::random_images(2, 1, 32, 0)), InputError);
  CHECK_THROWS_AS(model.forward(test::random_images(2, 3, 24, 0)), InputError);
}

TEST_CASE("forward is deterministic and leaves parameters alone") {
  const auto model = build_model<double>("smallcnn4", 2, 3);
  const auto before = model.parameters();
  const auto x = test::random_images(4, 3, 32, 2);
  const auto r1 = model.forward(x);
  const auto r2 = model.forward(x);
  CHECK(r1.logits == r2.logits);
  for (int j = 0; j < 4; ++j)
    CHECK(r1.group_activations[static_cast<std::size_t>(j)] == r2.group_activations[static_cast<std::size_t>(j)]);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i].values == model.parameters()[i].values);
}

TEST_CASE("zero images through a zero head give zero logits") {
  auto model = build_model<double>("smallcnn4", 2, 5);
  auto& params = model.parameters();
  params[params.size() - 2].values.setZero();
  params[params.size() - 1].values.setZero();
  const Tensor<double> zeros(3, 3, 32, 32);
  CHECK(model.logits(zeros).isZero(0.0));
}

TEST_CASE("taps feed the next group and the head reproduces the logits") {
  for (const char* arch : {"smallcnn4", "smallcnn4_deep"}) {
    CAPTURE(arch);
    const auto model = build_model<double>(arch, 3, 11);
    const auto x = test::random_images(3, 3, 32, 4);
    const auto out = model.forward(x);
    Tensor<double> current = x;
    for (int j = 0; j < 4; ++j) {
      current = model.run_group(j, current);
      CHECK((current.matrix() - out.group_activations[static_cast<std::size_t>(j)].matrix()).cwiseAbs().maxCoeff() <=
            1e-12);
    }
    CHECK((model.head(out.group_activations.back()) - out.logits).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("input gradient of a random logit projection matches central differences") {
  const auto model = build_model<double>("smallcnn4", 3, 21);
  const auto x = test::random_images(2, 3, 32, 6);
  std::mt19937_64 rng(99);
  std::normal_distribution<double> normal;
  MatrixX<double> r(2, 3);
  for (Index i = 0; i < r.size(); ++i) r(i) = normal(rng);
  const auto f = [&](const Tensor<double>& in) { return model.logits(in).cwiseProduct(r).sum(); };
  const Tensor<double> grad = model.input_vjp(model.forward_trace(x), r);

  std::uniform_int_distribution<Index> pick(0, x.matrix().size() - 1);
  const double h = 1e-6;
  for (int trial = 0; trial < 10; ++trial) {
    const Index i = pick(rng);
    Tensor<double> up = x, down = x;
    up.matrix()(i) += h;
    down.matrix()(i) -= h;
    const double numeric = (f(up) - f(down)) / (2 * h);
    const double analytic = grad.matrix()(i);
    CAPTURE(i);
    CAPTURE(numeric);
    CAPTURE(analytic);
    CHECK(std::abs(numeric - analytic) <= 1e-3 * std::max({std::abs(numeric), std::abs(analytic), 1e-6}));
  }
}

TEST_CASE("parameter gradient of the logits matches central differences") {
  auto model = build_model<double>("tinycnn4", 2, 2);
  // Zero-initialized shifts put zero-input pixels exactly on the ReLU kink.
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0.0, 0.1);
  for (auto& p : model.parameters())
    if (p.name.ends_with(".shift"))
      for (Index i = 0; i < p.values.size(); ++i) p.values(i) = normal(rng);
  const auto x = test::random_images(2, 3, 16, 8);
  MatrixX<double> r(2, 2);
  r << 0.3, -1.1, 0.7, 0.2;
  const auto grads = model.backward(model.forward_trace(x), r);
  const double h = 1e-6;
  const auto base = test::activation_pattern(model, x);
  for (std::size_t p = 0; p < model.parameters().size(); ++p) {
    auto& values = model.parameters()[p].values;
    CAPTURE(model.parameters()[p].name);
    // First coordinate from the middle on whose probes stay on the base pattern.
    bool checked = false;
    for (Index i = values.size() / 2; i < values.size() + values.size() / 2 && !checked; ++i) {
      const Index k = i % values.size();
      const double saved = values(k);
      values(k) = saved + h;
      const double fu = model.logits(x).cwiseProduct(r).sum();
      const bool smooth_up = test::activation_pattern(model, x) == base;
      values(k) = saved - h;
      const double fd = model.logits(x).cwiseProduct(r).sum();
      const bool smooth_down = test::activation_pattern(model, x) == base;
      values(k) = saved;
      if (!smooth_up || !smooth_down) continue;
      const double numeric = (fu - fd) / (2 * h);
      const double analytic = grads.parameters[p](k);
      CHECK(std::abs(numeric - analytic) <= 1e-3 * std::max({std::abs(numeric), std::abs(analytic), 1e-6}));
      checked = true;
    }
    CHECK(checked);
  }
}

TEST_CASE("float and double forward agree") {
  const auto md = build_model<double>("smallcnn4", 2, 4);
  const auto mf = md.cast<float>();
  const auto x = test::random_images(2, 3, 32, 9);
  const MatrixX<double> lf = mf.logits(x.cast<float>()).cast<double>();
  CHECK((lf - md.logits(x)).cwiseAbs().maxCoeff() < 1e-3);
}

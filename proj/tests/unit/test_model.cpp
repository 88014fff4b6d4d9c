#include <cmath>

#include "doctest.h"
#include "patchssl/error.hpp"
#include "patchssl/grad_check.hpp"
#include "patchssl/losses.hpp"
#include "patchssl/model.hpp"
#include "unit/test_util.hpp"

using namespace patchssl;
using patchssl::testing::random_tensor;

TEST_CASE("reduction strides close the spatial chain") {
  CHECK(reduction_strides(8, 2) == std::vector<std::size_t>{2, 2});
  CHECK(reduction_strides(5, 2) == std::vector<std::size_t>{1, 2});
  CHECK(reduction_strides(4, 1) == std::vector<std::size_t>{2});
  CHECK(reduction_strides(3, 1) == std::vector<std::size_t>{2});
  CHECK_THROWS_AS(reduction_strides(4, 2), GeometryError);
  CHECK_THROWS_AS(reduction_strides(2, 1), GeometryError);
}

TEST_CASE("paper discriminator shapes and parameter layout") {
  const auto params = init_discriminator(2, 7);
  const Discriminator<float> disc(DiscriminatorArch::paper());
  CHECK(disc.feature_dim() == 192);
  CHECK(params.at("block0.conv0.v").shape() == Shape{96, 3, 3, 3});
  CHECK(params.at("block1.conv2.v").shape() == Shape{192, 192, 3, 3});
  CHECK(params.at("reduce1.v").shape() == Shape{192, 192, 3, 3});
  CHECK(params.at("nin1.v").shape() == Shape{192, 192, 1, 1});
  CHECK(params.at("head.v").shape() == Shape{2, 192});
  for (const auto& [name, t] : params) {
    if (name.ends_with(".b")) {
      for (float v : t) CHECK(v == 0.0f);
    }
    if (name.ends_with(".g")) {
      for (float v : t) CHECK(v == 1.0f);
    }
  }
  CHECK(init_discriminator(2, 7) == params);
  CHECK_THROWS_AS(init_discriminator(1, 7), ArgumentError);

  Rng rng(1);
  const auto x = random_tensor<float>({2, 3, 32, 32}, rng);
  const auto out = discriminator_forward(params, x, Mode::eval);
  CHECK(out.logits.shape() == Shape{2, 2});
  CHECK(out.features.shape() == Shape{2, 192});
  CHECK(discriminator_forward(params, x, Mode::eval).logits == out.logits);
  CHECK_THROWS_AS(discriminator_forward(params, random_tensor<float>({2, 3, 16, 16}, rng),
                                        Mode::eval),
                  ShapeError);
}

TEST_CASE("initial weights have the requested spread") {
  const auto params = init_discriminator(2, 11);
  const auto& v = params.at("block1.conv1.v");
  double mean = 0.0;
  double sq = 0.0;
  for (float x : v) {
    mean += x;
    sq += static_cast<double>(x) * x;
  }
  const double n = static_cast<double>(v.size());
  mean /= n;
  const double sd = std::sqrt(sq / n - mean * mean);
  CHECK(std::abs(mean) < 3.0 * 0.05 / std::sqrt(n));
  CHECK(std::abs(sd - 0.05) < 0.002);
}

TEST_CASE("train-mode dropout replays with the same seed") {
  const Discriminator<float> disc(DiscriminatorArch::desk(16));
  const auto params = disc.init(3);
  Rng rng(2);
  const auto x = random_tensor<float>({4, 3, 16, 16}, rng);
  Rng a(5), b(5), c(6);
  const auto ya = disc.forward(params, x, Mode::train, &a);
  const auto yb = disc.forward(params, x, Mode::train, &b);
  const auto yc = disc.forward(params, x, Mode::train, &c);
  CHECK(ya.logits == yb.logits);
  CHECK_FALSE(ya.logits == yc.logits);
}

TEST_CASE("paper generator output shape and range") {
  auto gp = init_generator(4);
  CHECK(gp.learned.at("project.w").shape() == Shape{4 * 4 * 512, 100});
  Rng rng(9);
  const Generator<float> gen(GeneratorArch::paper());
  const auto z = gen.sample_latent(3, rng);
  for (float v : z) {
    CHECK(v >= -1.0f);
    CHECK(v <= 1.0f);
  }
  const auto img = generator_forward(gp, z, Mode::train);
  CHECK(img.shape() == Shape{3, 3, 32, 32});
  for (float v : img) {
    CHECK(v > -1.0f);
    CHECK(v < 1.0f);
  }
  CHECK(generator_forward(gp, z, Mode::eval) == generator_forward(gp, z, Mode::eval));
  CHECK_THROWS_AS(generator_forward(gp, random_tensor<float>({3, 99}, rng), Mode::eval),
                  ShapeError);
}

TEST_CASE("desk networks match the patch size") {
  const Discriminator<float> disc(DiscriminatorArch::desk(16));
  const Generator<float> gen(GeneratorArch::desk(16));
  auto gp = gen.init(1);
  Rng rng(1);
  const auto img = gen.forward_eval(gp, gen.sample_latent(2, rng));
  CHECK(img.shape() == Shape{2, 3, 16, 16});
  const auto out = disc.forward(disc.init(2), img, Mode::eval);
  CHECK(out.logits.shape() == Shape{2, 2});
  CHECK(parameter_count(disc.init(2)) < 150000);
}

TEST_CASE("gradient checks on a tiny network") {
  const auto setup = GradCheckSetup::tiny(17);
  for (auto kind : {LossKind::supervised, LossKind::unsupervised, LossKind::feature_matching}) {
    const auto report = grad_check(kind, setup, 1e-5);
    INFO("loss kind " << static_cast<int>(kind) << " max " << report.max_rel_error);
    CHECK(report.coordinates > 0);
    CHECK(report.max_rel_error < 1e-4);
  }
}

TEST_CASE("zero-scale network gives symmetric gradients on symmetric input") {
  auto setup = GradCheckSetup::tiny(3);
  for (auto& [name, t] : setup.disc_params) {
    if (name.ends_with(".g") || name.ends_with(".b")) t.fill(0.0);
  }
  const Discriminator<double> disc(setup.disc);
  // One sample of each class; the logits are identical so class gradients mirror.
  Tensor<double> x({2, 3, 6, 6}, 0.25);
  const std::vector<int> labels{0, 1};
  DiscriminatorTape<double> tape;
  const auto out = disc.forward(setup.disc_params, x, Mode::eval, nullptr, tape);
  const auto l = loss_supervised<double>(out.logits, labels);
  CHECK(l.value == doctest::Approx(std::log(2.0)));
  ParamSet<double> grads;
  disc.backward(setup.disc_params, tape, &l.grad, nullptr, &grads);
  const auto& hb = grads.at("head.b");
  CHECK(hb[0] == doctest::Approx(-hb[1]));
  CHECK(hb[0] == doctest::Approx(0.0));
  for (const auto& [name, t] : grads) {
    if (name.ends_with(".v")) {
      for (double g : t) CHECK(g == 0.0);
    }
  }
}

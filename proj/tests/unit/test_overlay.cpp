#include <cmath>

#include "doctest.h"
#include "patchssl/error.hpp"
#include "patchssl/image_io.hpp"
#include "patchssl/overlay.hpp"
#include "unit/test_util.hpp"

using namespace patchssl;

TEST_CASE("score map block fill") {
  Tensor<double> s({2, 2});
  s[0] = 0.1;
  s[1] = 0.2;
  s[2] = 0.3;
  s[3] = 0.4;
  const auto m = score_map("a", s, 4);
  REQUIRE(m.map.shape() == Shape{4, 4});
  const double want[16] = {0.1, 0.1, 0.2, 0.2, 0.1, 0.1, 0.2, 0.2,
                           0.3, 0.3, 0.4, 0.4, 0.3, 0.3, 0.4, 0.4};
  for (std::size_t i = 0; i < 16; ++i) CHECK(m.map[i] == want[i]);
  CHECK_THROWS_AS(score_map("a", s, 5), GeometryError);
  s[0] = 1.5;
  CHECK_THROWS_AS(score_map("a", s, 4), ArgumentError);

  // Blocks line up with tile(): the mean of each tile recovers its score.
  Rng rng(1);
  Tensor<double> g({4, 4});
  for (auto& v : g) v = rng.uniform();
  const auto big = score_map("b", g, 64);
  RawImage img;
  img.pixels = Tensor<float>({64, 64, 3});
  for (std::size_t i = 0; i < 64 * 64; ++i) {
    for (int c = 0; c < 3; ++c) img.pixels[3 * i + c] = static_cast<float>(big.map[i]);
  }
  for (const auto& block : tile(img, 4, 16)) {
    double sum = 0.0;
    for (std::size_t i = 0; i < 16 * 16; ++i) sum += block.pixels[3 * i];
    CHECK(std::abs(sum / 256.0 - static_cast<float>(g[block.row * 4 + block.col])) < 1e-6);
  }
}

TEST_CASE("gaussian blur") {
  ScoreMap c{"c", Tensor<double>({40, 30}, 0.37)};
  for (double sigma : {0.5, 2.0, 8.0, 25.0}) {
    const auto b = gaussian_blur(c, sigma);
    for (double v : b.map) CHECK(std::abs(v - 0.37) < 1e-6);
  }
  CHECK_THROWS_AS(gaussian_blur(c, 0.0), ArgumentError);
  CHECK_THROWS_AS(gaussian_blur(c, -1.0), ArgumentError);

  // A unit impulse returns the centre weight of the 2-D kernel, computed directly.
  const double sigma = 2.0;
  ScoreMap impulse{"i", Tensor<double>({41, 41})};
  impulse.map[20 * 41 + 20] = 1.0;
  const auto b = gaussian_blur(impulse, sigma);
  const int r = static_cast<int>(std::floor(3.0 * sigma));
  double z = 0.0;
  for (int i = -r; i <= r; ++i) {
    for (int j = -r; j <= r; ++j) z += std::exp(-(i * i + j * j) / (2.0 * sigma * sigma));
  }
  CHECK(std::abs(b.map[20 * 41 + 20] - 1.0 / z) < 1e-12);

  double total = 0.0;
  for (double v : b.map) total += v;
  CHECK(std::abs(total - 1.0) < 1e-6);

  // No new extremes.
  Rng rng(2);
  ScoreMap noisy{"n", Tensor<double>({32, 32})};
  for (auto& v : noisy.map) v = rng.uniform(0.2, 0.7);
  for (double v : gaussian_blur(noisy, 3.0).map) {
    CHECK(v >= 0.2 - 1e-12);
    CHECK(v <= 0.7 + 1e-12);
  }
}

TEST_CASE("overlay rendering") {
  RawImage img;
  img.pixels = Tensor<float>({8, 6, 3});
  Rng rng(3);
  for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
  ScoreMap m{"x", Tensor<double>({8, 6}, 0.6)};
  const auto gray = blend_overlay(img, m, 0.0);
  for (std::size_t i = 0; i < 48; ++i) {
    const double g = 0.299 * img.pixels[3 * i] + 0.587 * img.pixels[3 * i + 1] + 0.114 * img.pixels[3 * i + 2];
    for (int c = 0; c < 3; ++c) CHECK(std::abs(gray[3 * i + c] - g) < 1e-6);
  }
  ScoreMap hot{"x", Tensor<double>({8, 6}, 1.0)};
  const auto full = blend_overlay(img, hot, 1.0);
  const auto top = heat_color(1.0);
  for (std::size_t i = 0; i < 48; ++i) {
    for (int c = 0; c < 3; ++c) CHECK(std::abs(full[3 * i + c] - top[c]) < 1e-6);
  }
  // The ramp brightens monotonically.
  double prev = -1.0;
  for (int k = 0; k <= 100; ++k) {
    const auto c = heat_color(k / 100.0);
    const double lum = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
    CHECK(lum > prev);
    prev = lum;
  }
  CHECK_THROWS_AS(blend_overlay(img, m, 1.5), ArgumentError);
  ScoreMap wrong{"x", Tensor<double>({6, 8})};
  CHECK_THROWS_AS(blend_overlay(img, wrong, 0.5), GeometryError);

  patchssl::testing::TempDir dir("overlay");
  render_overlay(img, m, 0.5, dir.path() / "o.png");
  CHECK(read_png_rgb(dir.path() / "o.png").shape() == Shape{8, 6, 3});
}

TEST_CASE("localization auc") {
  SegMask mask{"m", Tensor<std::uint8_t>({16, 16})};
  for (std::size_t y = 3; y < 7; ++y) {
    for (std::size_t x = 5; x < 9; ++x) mask.mask[y * 16 + x] = 1;
  }
  ScoreMap same{"m", Tensor<double>({16, 16})};
  for (std::size_t i = 0; i < 256; ++i) same.map[i] = mask.mask[i];
  CHECK(localization_auc(same, mask) == 1.0);
  CHECK(localization_auc(ScoreMap{"m", Tensor<double>({16, 16}, 0.4)}, mask) == 0.5);
  CHECK_THROWS_AS(localization_auc(same, SegMask{"e", Tensor<std::uint8_t>({16, 16})}),
                  UndefinedAucError);

  Rng rng(4);
  SegMask big{"b", Tensor<std::uint8_t>({320, 320})};
  ScoreMap random{"b", Tensor<double>({320, 320})};
  for (std::size_t i = 0; i < big.mask.size(); ++i) {
    big.mask[i] = rng.bernoulli(0.1);
    random.map[i] = rng.uniform();
  }
  CHECK(std::abs(localization_auc(random, big) - 0.5) < 0.05);
}

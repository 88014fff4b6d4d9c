#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "doctest.h"
#include "patchssl/dataset.hpp"
#include "patchssl/error.hpp"
#include "patchssl/image_io.hpp"
#include "patchssl/patch_store.hpp"
#include "patchssl/synth.hpp"
#include "unit/test_util.hpp"

using namespace patchssl;
using patchssl::testing::TempDir;

namespace {

RawImage image_from(Tensor<float> pixels) {
  RawImage img;
  img.image_id = "x";
  img.pixels = std::move(pixels);
  return img;
}

std::vector<std::string> make_ids(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("id" + std::to_string(i));
  return ids;
}

}  // namespace

TEST_CASE("png round trip and format checks") {
  TempDir dir("png");
  Tensor<std::uint8_t> rgb({5, 7, 3});
  for (std::size_t i = 0; i < rgb.size(); ++i) rgb[i] = static_cast<std::uint8_t>(i * 7);
  write_png(dir.path() / "a.png", rgb);
  const auto back = read_png_rgb(dir.path() / "a.png");
  REQUIRE(back.shape() == Shape{5, 7, 3});
  for (std::size_t i = 0; i < rgb.size(); ++i) CHECK(back[i] == rgb[i] / 255.0f);

  Tensor<std::uint8_t> gray({4, 4});
  gray[5] = 9;
  write_png(dir.path() / "g.png", gray);
  CHECK_THROWS_AS(read_png_rgb(dir.path() / "g.png"), FormatError);
  const auto m = read_png_mask(dir.path() / "g.png");
  CHECK(m[5] == 1);
  CHECK(std::count(m.begin(), m.end(), 1) == 1);
  CHECK_THROWS_AS(read_png_rgb(dir.path() / "missing.png"), IoError);
}

TEST_CASE("load_and_normalize divides by the image maximum") {
  TempDir dir("norm");
  Tensor<std::uint8_t> ramp({64, 64, 3});
  for (std::size_t y = 0; y < 64; ++y) {
    for (std::size_t x = 0; x < 64; ++x) {
      for (std::size_t c = 0; c < 3; ++c) ramp[(y * 64 + x) * 3 + c] = static_cast<std::uint8_t>(x * 3 + c);
    }
  }
  write_png(dir.path() / "ramp.png", ramp);
  const auto img = load_and_normalize(dir.path() / "ramp.png", 64);
  const float peak = (63 * 3 + 2) / 255.0f;
  CHECK(img.image_id == "ramp");
  for (std::size_t i = 0; i < ramp.size(); ++i) {
    CHECK(img.pixels[i] == doctest::Approx((ramp[i] / 255.0f) / peak).epsilon(1e-6));
  }
  CHECK(*std::max_element(img.pixels.begin(), img.pixels.end()) == 1.0f);

  Tensor<std::uint8_t> half({40, 48, 3}, 128);
  write_png(dir.path() / "half.png", half);
  const auto h = load_and_normalize(dir.path() / "half.png", 32);
  CHECK(h.pixels.shape() == Shape{32, 32, 3});
  for (float v : h.pixels) CHECK(v == 1.0f);

  Tensor<std::uint8_t> zero({32, 32, 3});
  write_png(dir.path() / "zero.png", zero);
  const auto z = load_and_normalize(dir.path() / "zero.png", 32);
  CHECK(z.all_zero);
  CHECK_THROWS_AS(load_and_normalize(dir.path() / "half.png", 16), ArgumentError);
}

TEST_CASE("bilinear resize keeps constants and resizes a large source") {
  Tensor<float> src({2848, 4288, 3}, 0.25f);
  src[0] = 0.5f;
  const auto out = resize_bilinear(src, 1024, 1024);
  CHECK(out.shape() == Shape{1024, 1024, 3});
  CHECK(out[1024 * 3 * 512 + 3 * 512] == 0.25f);
}

TEST_CASE("tile produces row-major non-overlapping blocks") {
  Tensor<float> px({64, 64, 3});
  for (std::size_t y = 0; y < 64; ++y) {
    for (std::size_t x = 0; x < 64; ++x) {
      for (std::size_t c = 0; c < 3; ++c) px[(y * 64 + x) * 3 + c] = static_cast<float>(((y / 8 + x / 8) % 2) + c * 10 + y * 1000 + x);
    }
  }
  const auto blocks = tile(image_from(px), 4, 16);
  REQUIRE(blocks.size() == 16);
  CHECK(blocks[1].row == 0);
  CHECK(blocks[1].col == 1);
  for (std::size_t y = 0; y < 16; ++y) {
    for (std::size_t x = 0; x < 16; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        CHECK(blocks[1].pixels[(y * 16 + x) * 3 + c] == px[(y * 64 + 16 + x) * 3 + c]);
      }
    }
  }
  const auto whole = tile(image_from(px), 1, 64);
  REQUIRE(whole.size() == 1);
  CHECK(whole[0].pixels == px);
  CHECK(tile(image_from(Tensor<float>({1024, 1024, 3})), 8, 128).size() == 64);
  CHECK_THROWS_AS(tile(image_from(px), 4, 15), GeometryError);
}

TEST_CASE("tiling partitions the image on random geometries") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t grid = 1 + rng.below(5);
    const std::size_t patch = 1 + rng.below(9);
    const std::size_t n = grid * patch;
    Tensor<float> px({n, n, 3});
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<float>(i);
    std::vector<float> seen;
    for (const auto& b : tile(image_from(px), grid, patch)) {
      seen.insert(seen.end(), b.pixels.begin(), b.pixels.end());
    }
    std::sort(seen.begin(), seen.end());
    CHECK(std::equal(seen.begin(), seen.end(), px.begin(), px.end()));
  }
}

TEST_CASE("patch labels follow the mask") {
  SegMask m{"m", Tensor<std::uint8_t>({1024, 1024})};
  auto r = label_patch(m, 3, 3, 8, 128);
  CHECK(r.label == PatchLabel::healthy);
  CHECK(r.overlap_pixels == 0);
  m.mask[130 * 1024 + 5] = 1;
  for (std::size_t row = 0; row < 8; ++row) {
    for (std::size_t col = 0; col < 8; ++col) {
      const auto l = label_patch(m, row, col, 8, 128);
      const bool hit = row == 1 && col == 0;
      CHECK(l.label == (hit ? PatchLabel::diseased : PatchLabel::healthy));
      CHECK(l.overlap_pixels == (hit ? 1u : 0u));
    }
  }
  m.mask.fill(1);
  r = label_patch(m, 7, 2, 8, 128);
  CHECK(r.label == PatchLabel::diseased);
  CHECK(r.overlap_pixels == 128u * 128u);
  CHECK_THROWS_AS(label_patch(m, 0, 0, 4, 16), GeometryError);
}

TEST_CASE("downsample averages cells and maps to [-1, 1]") {
  Tensor<float> constant({8, 8, 3}, 0.3f);
  for (float v : downsample_patch(constant, 2)) CHECK(v == doctest::Approx(2 * 0.3 - 1));
  Tensor<float> block({4, 4, 1});
  for (std::size_t i = 0; i < 16; ++i) block[i] = static_cast<float>(i) / 16.0f;
  const auto out = downsample_patch(block, 2);
  const double cell00 = (0 + 1 + 4 + 5) / 64.0;
  const double cell11 = (10 + 11 + 14 + 15) / 64.0;
  CHECK(out[0] == doctest::Approx(2 * cell00 - 1));
  CHECK(out[3] == doctest::Approx(2 * cell11 - 1));
  const auto same = downsample_patch(block, 4);
  for (std::size_t i = 0; i < 16; ++i) CHECK(same[i] == doctest::Approx(2 * block[i] - 1));
  CHECK_THROWS_AS(downsample_patch(block, 3), GeometryError);
}

TEST_CASE("splits are deterministic and disjoint") {
  const auto ids = make_ids(249);
  const auto s = make_split(ids, {149, 50, 50}, 4);
  CHECK(s.train.size() == 149);
  CHECK(s.val.size() == 50);
  CHECK(s.test.size() == 50);
  std::set<std::string> all(s.train.begin(), s.train.end());
  all.insert(s.val.begin(), s.val.end());
  all.insert(s.test.begin(), s.test.end());
  CHECK(all.size() == 249);
  const auto again = make_split(ids, {149, 50, 50}, 4);
  CHECK(again.train == s.train);
  CHECK(again.test == s.test);
  CHECK(make_split(ids, {0, 0, 249}, 1).test.size() == 249);
  CHECK_THROWS_AS(make_split(ids, {100, 50, 50}, 1), ArgumentError);
  const auto c = proportional_counts(249, {149, 50, 50});
  CHECK(c.train == 149);
  CHECK(c.val == 50);
}

TEST_CASE("stratified split keeps class proportions") {
  const auto ids = make_ids(60);
  std::vector<int> labels(60, 0);
  std::map<std::string, int> by_id;
  for (std::size_t i = 40; i < 60; ++i) labels[i] = 1;
  for (std::size_t i = 0; i < 60; ++i) by_id[ids[i]] = labels[i];
  const auto s = make_stratified_split(ids, labels, {40, 10, 10}, 9);
  auto diseased = [&](const std::vector<std::string>& v) {
    return std::count_if(v.begin(), v.end(), [&](const auto& id) { return by_id[id] == 1; });
  };
  CHECK(s.train.size() == 40);
  CHECK(diseased(s.train) == 13);
  CHECK(diseased(s.val) + diseased(s.test) == 7);
  CHECK(diseased(s.val) >= 3);
  CHECK(diseased(s.test) >= 3);
}

TEST_CASE("labeled subsets") {
  const auto ids = make_ids(149);
  const auto all = sample_labeled_subset(ids, 149, 3);
  CHECK(all.labeled.size() == 149);
  CHECK(all.unlabeled.empty());
  const auto ten = sample_labeled_subset(ids, 10, 3);
  CHECK(ten.labeled.size() == 10);
  CHECK(ten.unlabeled.size() == 139);
  CHECK(sample_labeled_subset(ids, 10, 3).labeled == ten.labeled);
  CHECK(sample_labeled_subset(ids, 10, 4).labeled != ten.labeled);
  CHECK_THROWS_AS(sample_labeled_subset(ids, 0, 3), ArgumentError);
  CHECK_THROWS_AS(sample_labeled_subset(ids, 150, 3), ArgumentError);

  std::map<std::string, int> labels;
  for (std::size_t i = 0; i < ids.size(); ++i) labels[ids[i]] = i < 3 ? 1 : 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto s = sample_labeled_subset(ids, labels, 2, seed);
    const auto d = std::count_if(s.labeled.begin(), s.labeled.end(),
                                 [&](const auto& id) { return labels[id] == 1; });
    CHECK(d == 1);
  }
}

TEST_CASE("synthetic dataset generation") {
  TempDir dir("synth");
  SynthConfig cfg;
  cfg.healthy = 6;
  cfg.diseased = 6;
  cfg.lesions_max = 3;
  const auto summary = synth_generate(cfg, dir.path(), 5);
  CHECK(summary.healthy == 6);
  CHECK(summary.diseased == 6);
  const auto manifest = read_dataset_manifest(dir.path());
  REQUIRE(manifest.images.size() == 12);
  const double bound = cfg.lesions_max * std::numbers::pi * cfg.radius_max * cfg.radius_max;
  for (const auto& e : manifest.images) {
    const auto mask = read_png_mask(dir.path() / "masks" / (e.id + ".png"));
    const auto count = std::count(mask.begin(), mask.end(), 1);
    if (e.label == 1) {
      CHECK(count >= 1);
      CHECK(static_cast<double>(count) <= bound);
    } else {
      CHECK(count == 0);
    }
  }
  TempDir again("synth2");
  synth_generate(cfg, again.path(), 5);
  for (const auto& e : manifest.images) {
    CHECK(read_png_rgb(dir.path() / "images" / (e.id + ".png")) ==
          read_png_rgb(again.path() / "images" / (e.id + ".png")));
  }
  SynthConfig bad = cfg;
  bad.lesions_min = 0;
  CHECK_THROWS_AS(synth_generate(bad, dir.path(), 1), ArgumentError);
}

TEST_CASE("patch store build, recount and round trip") {
  TempDir data("store_data");
  SynthConfig cfg;
  cfg.healthy = 8;
  cfg.diseased = 4;
  synth_generate(cfg, data.path(), 2);
  TileOptions opt;
  opt.geometry = {64, 4, 16, 16};
  opt.counts = SplitCounts{6, 3, 3};
  opt.seed = 1;
  const auto store = build_patch_store(data.path(), opt);
  CHECK(store.records.size() == 12 * 16);
  CHECK(store.pixels.shape() == Shape{12 * 16, 3, 16, 16});
  std::size_t diseased_in_diseased = 0;
  for (const auto& img : store.images) {
    const auto mask = read_png_mask(data.path() / "masks" / (img.id + ".png"));
    for (std::size_t k = 0; k < 16; ++k) {
      const auto& r = store.records[img.first_patch + k];
      std::size_t count = 0;
      for (std::size_t y = r.row * 16; y < r.row * 16 + 16; ++y) {
        for (std::size_t x = r.col * 16; x < r.col * 16 + 16; ++x) count += mask[y * 64 + x];
      }
      CHECK(r.overlap_pixels == count);
      CHECK((r.label == PatchLabel::diseased) == (count > 0));
    }
    if (img.label == 1) diseased_in_diseased += img.diseased_patches;
  }
  CHECK(diseased_in_diseased > 0);
  CHECK(diseased_in_diseased < 4 * 16);
  for (float v : store.pixels) {
    CHECK(v >= -1.0f);
    CHECK(v <= 1.0f);
  }

  TempDir out("store_out");
  save_patch_store(out.path(), store);
  const auto back = load_patch_store(out.path());
  CHECK(back.pixels == store.pixels);
  CHECK(back.split.train == store.split.train);
  CHECK(back.records.size() == store.records.size());
  CHECK(back.records[17].overlap_pixels == store.records[17].overlap_pixels);
  CHECK(back.images[3].split == store.images[3].split);
}

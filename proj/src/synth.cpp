#include "patchssl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "patchssl/dataset.hpp"
#include "patchssl/error.hpp"
#include "patchssl/image_io.hpp"
#include "patchssl/rng.hpp"

namespace patchssl {

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = {{"canvas", c.canvas},
       {"healthy", c.healthy},
       {"diseased", c.diseased},
       {"lesions_min", c.lesions_min},
       {"lesions_max", c.lesions_max},
       {"radius_min", c.radius_min},
       {"radius_max", c.radius_max},
       {"intensity_min", c.intensity_min},
       {"intensity_max", c.intensity_max},
       {"noise_sigma", c.noise_sigma}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  c.canvas = j.value("canvas", c.canvas);
  c.healthy = j.value("healthy", c.healthy);
  c.diseased = j.value("diseased", c.diseased);
  c.lesions_min = j.value("lesions_min", c.lesions_min);
  c.lesions_max = j.value("lesions_max", c.lesions_max);
  c.radius_min = j.value("radius_min", c.radius_min);
  c.radius_max = j.value("radius_max", c.radius_max);
  c.intensity_min = j.value("intensity_min", c.intensity_min);
  c.intensity_max = j.value("intensity_max", c.intensity_max);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
}

namespace {

void validate(const SynthConfig& c) {
  if (c.canvas < 32) throw ArgumentError("synthetic canvas must be at least 32");
  if (c.healthy + c.diseased == 0) throw ArgumentError("no images requested");
  if (c.diseased > 0 && c.lesions_min < 1) {
    throw ArgumentError("diseased images need at least one lesion");
  }
  if (c.lesions_max < c.lesions_min) throw ArgumentError("lesions_max < lesions_min");
  if (c.radius_min < 0.75 || c.radius_max < c.radius_min) {
    throw ArgumentError("lesion radii must satisfy 0.75 <= radius_min <= radius_max");
  }
  if (c.intensity_min < 0.0 || c.intensity_max > 1.0 || c.intensity_max < c.intensity_min) {
    throw ArgumentError("lesion intensity must satisfy 0 <= min <= max <= 1");
  }
}

struct Wave {
  double fy, fx, phase, amp;
};

struct Drawn {
  Tensor<float> pixels;  // [H, W, 3]
  Tensor<std::uint8_t> mask;
  std::size_t lesions = 0;
};

Drawn draw(const SynthConfig& c, bool diseased, Rng& rng) {
  const std::size_t n = c.canvas;
  const double nd = static_cast<double>(n);
  const double cy = nd / 2.0 + rng.uniform(-1.0, 1.0);
  const double cx = nd / 2.0 + rng.uniform(-1.0, 1.0);
  const double radius = 0.46 * nd * rng.uniform(0.97, 1.03);
  const double gain = rng.uniform(0.9, 1.1);
  const double base[3] = {0.72 * gain, 0.30 * gain, 0.12 * gain};
  const double lesion_colour[3] = {1.0, 0.92, 0.45};
  std::vector<Wave> waves(3);
  for (auto& w : waves) {
    w = {rng.uniform(0.5, 2.5) / nd, rng.uniform(0.5, 2.5) / nd,
         rng.uniform(0.0, 2.0 * std::numbers::pi), 0.03};
  }

  Drawn d{Tensor<float>({n, n, 3}), Tensor<std::uint8_t>({n, n}), 0};
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double py = static_cast<double>(y) + 0.5;
      const double px = static_cast<double>(x) + 0.5;
      const double r = std::hypot(py - cy, px - cx) / radius;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        double v;
        if (r <= 1.0) {
          double shade = 1.0 - 0.35 * r * r;
          for (const auto& w : waves) {
            shade += w.amp * std::sin(2.0 * std::numbers::pi * (w.fy * py + w.fx * px) + w.phase);
          }
          v = base[ch] * shade;
        } else {
          v = 0.02;
        }
        v += rng.normal(0.0, c.noise_sigma);
        d.pixels[(y * n + x) * 3 + ch] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  if (!diseased) return d;

  d.lesions = c.lesions_min + rng.below(c.lesions_max - c.lesions_min + 1);
  for (std::size_t k = 0; k < d.lesions; ++k) {
    const double r = rng.uniform(c.radius_min, c.radius_max);
    const double a = rng.uniform(c.intensity_min, c.intensity_max);
    // Lesion centre on a pixel centre well inside the fundus disc.
    std::size_t ly = 0;
    std::size_t lx = 0;
    do {
      ly = rng.below(n);
      lx = rng.below(n);
    } while (std::hypot(static_cast<double>(ly) + 0.5 - cy, static_cast<double>(lx) + 0.5 - cx) >
             0.85 * radius - c.radius_max);
    const double ccy = static_cast<double>(ly) + 0.5;
    const double ccx = static_cast<double>(lx) + 0.5;
    const auto reach = static_cast<std::ptrdiff_t>(std::ceil(r)) + 1;
    for (std::ptrdiff_t dy = -reach; dy <= reach; ++dy) {
      for (std::ptrdiff_t dx = -reach; dx <= reach; ++dx) {
        const auto y = static_cast<std::ptrdiff_t>(ly) + dy;
        const auto x = static_cast<std::ptrdiff_t>(lx) + dx;
        if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(n) ||
            x >= static_cast<std::ptrdiff_t>(n)) {
          continue;
        }
        // Farthest corner of the pixel square from the lesion centre.
        const double fy = std::max(std::abs(y - ccy), std::abs(y + 1 - ccy));
        const double fx = std::max(std::abs(x - ccx), std::abs(x + 1 - ccx));
        if (fy * fy + fx * fx > r * r) continue;
        const auto idx = static_cast<std::size_t>(y) * n + static_cast<std::size_t>(x);
        d.mask[idx] = 1;
        for (std::size_t ch = 0; ch < 3; ++ch) {
          auto& v = d.pixels[idx * 3 + ch];
          v = static_cast<float>((1.0 - a) * v + a * lesion_colour[ch]);
        }
      }
    }
  }
  return d;
}

}  // namespace

SynthSummary synth_generate(const SynthConfig& config, const std::filesystem::path& out_dir,
                            std::uint64_t seed) {
  validate(config);
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  std::filesystem::create_directories(out_dir / "masks", ec);
  if (ec || !std::filesystem::is_directory(out_dir / "masks")) {
    throw IoError("cannot create dataset directory " + out_dir.string());
  }
  SynthSummary summary;
  DatasetManifest manifest;
  const std::size_t total = config.healthy + config.diseased;
  for (std::size_t i = 0; i < total; ++i) {
    const bool diseased = i >= config.healthy;
    char id[32];
    std::snprintf(id, sizeof id, "img_%04zu", i);
    Rng rng(derive_seed(seed, SeedStream::synth, i));
    const Drawn d = draw(config, diseased, rng);
    write_png(out_dir / "images" / (std::string(id) + ".png"), to_u8(d.pixels));
    Tensor<std::uint8_t> mask_png(d.mask.shape());
    for (std::size_t p = 0; p < d.mask.size(); ++p) {
      mask_png[p] = d.mask[p] ? 255 : 0;
      summary.lesion_pixels += d.mask[p];
    }
    write_png(out_dir / "masks" / (std::string(id) + ".png"), mask_png);
    manifest.images.push_back({id, diseased ? 1 : 0});
    summary.lesions += d.lesions;
    (diseased ? summary.diseased : summary.healthy) += 1;
  }
  manifest.extra["seed"] = seed;
  manifest.extra["synth"] = config;
  write_dataset_manifest(out_dir, manifest);
  return summary;
}

}  // namespace patchssl

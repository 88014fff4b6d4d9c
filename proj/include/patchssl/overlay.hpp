#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>

#include "patchssl/dataset.hpp"
#include "patchssl/patch_store.hpp"
#include "patchssl/tensor.hpp"

namespace patchssl {

struct ScoreMap {
  std::string image_id;
  Tensor<double> map;  // [H, W] in [0, 1]
};

// Fills each P x P block of a canvas with its patch score (G x G scores, row-major).
ScoreMap score_map(const std::string& image_id, const Tensor<double>& patch_scores,
                   std::size_t canvas);

// Normalized separable Gaussian, truncated at 3 sigma, mirrored at the border
// (edge pixel repeated); the result is clipped to [0, 1].
ScoreMap gaussian_blur(const ScoreMap& map, double sigma);

// Normalized 1-D Gaussian taps for offsets -r..r.
std::vector<double> gaussian_kernel(double sigma);

// Dark-to-bright heat ramp (black, purple, red, orange, pale yellow).
std::array<double, 3> heat_color(double v);

// Heat colours of the map blended with weight alpha over the grayscale source.
// Returns [H, W, 3] in [0, 1].
Tensor<float> blend_overlay(const RawImage& image, const ScoreMap& map, double alpha);
void render_overlay(const RawImage& image, const ScoreMap& map, double alpha,
                    const std::filesystem::path& png_path);

// Pixel-level AUC of the map against the mask.
double localization_auc(const ScoreMap& map, const SegMask& mask);

struct OverlayOptions {
  std::optional<double> sigma;  // default P / 2
  double alpha = 0.5;
  bool localize_blurred = false;  // score the blurred map instead of the block map
};

struct OverlayResult {
  std::string image_id;
  std::filesystem::path png;
  std::filesystem::path scoremap;
  std::optional<double> localization_auc;  // when a two-class mask exists
};

// Scores one image of the store with the run's EMA weights and writes
// <out_dir>/<id>_overlay.png and <out_dir>/<id>_scoremap.bin.
OverlayResult overlay_image(const std::filesystem::path& run_dir,
                            const std::filesystem::path& dataset_dir, const PatchStore& store,
                            const std::string& image_id, const std::filesystem::path& out_dir,
                            const OverlayOptions& options);

}  // namespace patchssl

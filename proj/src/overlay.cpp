#include "patchssl/overlay.hpp"

#include <algorithm>
#include <cmath>

#include "patchssl/error.hpp"
#include "patchssl/evaluation.hpp"
#include "patchssl/image_io.hpp"
#include "patchssl/patch_store.hpp"
#include "patchssl/tensor_file.hpp"
#include "patchssl/training.hpp"

namespace patchssl {

ScoreMap score_map(const std::string& image_id, const Tensor<double>& patch_scores,
                   std::size_t canvas) {
  if (patch_scores.rank() != 2 || patch_scores.dim(0) != patch_scores.dim(1) ||
      patch_scores.dim(0) == 0) {
    throw GeometryError("patch scores must be a square G x G grid");
  }
  const std::size_t g = patch_scores.dim(0);
  if (canvas % g != 0) {
    throw GeometryError("canvas " + std::to_string(canvas) + " is not a multiple of grid " +
                        std::to_string(g));
  }
  for (double s : patch_scores) {
    if (!(s >= 0.0 && s <= 1.0)) throw ArgumentError("patch scores must lie in [0, 1]");
  }
  const std::size_t p = canvas / g;
  ScoreMap m{image_id, Tensor<double>({canvas, canvas})};
  for (std::size_t y = 0; y < canvas; ++y) {
    for (std::size_t x = 0; x < canvas; ++x) m.map[y * canvas + x] = patch_scores[(y / p) * g + x / p];
  }
  return m;
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw ArgumentError("blur sigma must be positive");
  const auto r = static_cast<std::ptrdiff_t>(std::max(1.0, std::floor(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double sum = 0.0;
  for (std::ptrdiff_t i = -r; i <= r; ++i) {
    const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + r)] = v;
    sum += v;
  }
  for (auto& v : k) v /= sum;
  return k;
}

namespace {

// Mirror with the edge sample repeated: -1 -> 0, n -> n - 1.
std::size_t mirror(std::ptrdiff_t i, std::size_t n) {
  const auto period = static_cast<std::ptrdiff_t>(2 * n);
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < static_cast<std::ptrdiff_t>(n) ? i : period - 1 - i);
}

}  // namespace

ScoreMap gaussian_blur(const ScoreMap& in, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const auto r = static_cast<std::ptrdiff_t>(k.size() / 2);
  if (in.map.rank() != 2) throw ShapeError("score map must be [H, W]");
  const std::size_t h = in.map.dim(0), w = in.map.dim(1);
  Tensor<double> tmp({h, w});
  ScoreMap out{in.image_id, Tensor<double>({h, w})};
#pragma omp parallel for schedule(static)
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (std::ptrdiff_t d = -r; d <= r; ++d) {
        acc += k[static_cast<std::size_t>(d + r)] *
               in.map[y * w + mirror(static_cast<std::ptrdiff_t>(x) + d, w)];
      }
      tmp[y * w + x] = acc;
    }
  }
#pragma omp parallel for schedule(static)
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (std::ptrdiff_t d = -r; d <= r; ++d) {
        acc += k[static_cast<std::size_t>(d + r)] *
               tmp[mirror(static_cast<std::ptrdiff_t>(y) + d, h) * w + x];
      }
      out.map[y * w + x] = std::clamp(acc, 0.0, 1.0);
    }
  }
  return out;
}

std::array<double, 3> heat_color(double v) {
  static constexpr double stops[5][3] = {{0.000, 0.000, 0.016},
                                         {0.341, 0.063, 0.431},
                                         {0.733, 0.216, 0.329},
                                         {0.976, 0.557, 0.035},
                                         {0.988, 1.000, 0.643}};
  v = std::clamp(v, 0.0, 1.0) * 4.0;
  const auto i = std::min<std::size_t>(3, static_cast<std::size_t>(v));
  const double t = v - static_cast<double>(i);
  std::array<double, 3> c{};
  for (int ch = 0; ch < 3; ++ch) c[ch] = stops[i][ch] + t * (stops[i + 1][ch] - stops[i][ch]);
  return c;
}

Tensor<float> blend_overlay(const RawImage& image, const ScoreMap& map, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ArgumentError("alpha must lie in [0, 1]");
  const auto& px = image.pixels;
  if (px.rank() != 3 || px.dim(2) != 3) throw ShapeError("image must be [H, W, 3]");
  const std::size_t h = px.dim(0), w = px.dim(1);
  if (map.map.shape() != Shape{h, w}) {
    throw GeometryError("score map " + shape_string(map.map.shape()) + " does not match image " +
                        shape_string(px.shape()));
  }
  Tensor<float> out({h, w, 3});
  for (std::size_t i = 0; i < h * w; ++i) {
    const double gray = 0.299 * px[3 * i] + 0.587 * px[3 * i + 1] + 0.114 * px[3 * i + 2];
    const auto c = heat_color(map.map[i]);
    for (int ch = 0; ch < 3; ++ch) {
      out[3 * i + ch] = static_cast<float>((1.0 - alpha) * gray + alpha * c[ch]);
    }
  }
  return out;
}

void render_overlay(const RawImage& image, const ScoreMap& map, double alpha,
                    const std::filesystem::path& png_path) {
  write_png(png_path, to_u8(blend_overlay(image, map, alpha)));
}

double localization_auc(const ScoreMap& map, const SegMask& mask) {
  if (map.map.shape() != mask.mask.shape()) {
    throw GeometryError("score map " + shape_string(map.map.shape()) + " does not match mask " +
                        shape_string(mask.mask.shape()));
  }
  std::vector<double> scores(map.map.begin(), map.map.end());
  std::vector<int> labels(mask.mask.size());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = mask.mask[i] ? 1 : 0;
  return roc_auc(scores, labels);
}

OverlayResult overlay_image(const std::filesystem::path& run_dir,
                            const std::filesystem::path& dataset_dir, const PatchStore& store,
                            const std::string& image_id, const std::filesystem::path& out_dir,
                            const OverlayOptions& options) {
  const auto ckpt_path = run_dir / "final.ckpt";
  if (!std::filesystem::exists(ckpt_path)) throw IoError("no final checkpoint in " + run_dir.string());
  const auto ckpt = load_checkpoint(ckpt_path);
  const Discriminator<float> disc(ckpt.config.disc_arch());
  const auto& g = store.geometry;
  if (g.downsample != ckpt.config.disc.input_size) {
    throw GeometryError("patch store does not match the checkpoint's input size");
  }
  const auto scored = score_images(disc, ckpt.state.ema.shadow, store, {image_id});
  Tensor<double> patch_scores({g.grid, g.grid});
  for (std::size_t k = 0; k < patch_scores.size(); ++k) {
    patch_scores[k] = sigmoid(scored.front().patch_logits[k]);
  }
  const ScoreMap blocks = score_map(image_id, patch_scores, g.canvas);
  const double sigma = options.sigma.value_or(static_cast<double>(g.patch) / 2.0);
  const ScoreMap blurred = gaussian_blur(blocks, sigma);

  std::filesystem::create_directories(out_dir);
  OverlayResult result;
  result.image_id = image_id;
  result.png = out_dir / (image_id + "_overlay.png");
  result.scoremap = out_dir / (image_id + "_scoremap.bin");
  const RawImage source = load_and_normalize(dataset_dir / "images" / (image_id + ".png"), g.canvas);
  render_overlay(source, blurred, options.alpha, result.png);

  const auto mask_dir = dataset_dir / "masks" / image_id;
  const auto mask_file = dataset_dir / "masks" / (image_id + ".png");
  if (std::filesystem::is_directory(mask_dir) || std::filesystem::exists(mask_file)) {
    const SegMask mask = load_mask(std::filesystem::is_directory(mask_dir) ? mask_dir : mask_file, g.canvas);
    const auto positives = std::count_if(mask.mask.begin(), mask.mask.end(), [](auto v) { return v != 0; });
    if (positives > 0 && static_cast<std::size_t>(positives) < mask.mask.size()) {
      result.localization_auc = localization_auc(options.localize_blurred ? blurred : blocks, mask);
    }
  }

  ParamSet<float> tensors{{"score_map", blocks.map.cast<float>()},
                          {"blurred", blurred.map.cast<float>()}};
  nlohmann::json meta = {{"image_id", image_id},
                         {"canvas", g.canvas},
                         {"grid", g.grid},
                         {"sigma", sigma},
                         {"patch_scores", std::vector<double>(patch_scores.begin(), patch_scores.end())},
                         {"image_score", scored.front().score},
                         {"localization_auc", nullptr},
                         {"localized_map", options.localize_blurred ? "blurred" : "score_map"}};
  if (result.localization_auc) meta["localization_auc"] = *result.localization_auc;
  save_tensor_file(result.scoremap, tensors, meta);
  return result;
}

}  // namespace patchssl

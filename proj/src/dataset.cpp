#include "patchssl/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include "patchssl/error.hpp"
#include "patchssl/image_io.hpp"
#include "patchssl/log.hpp"
#include "patchssl/rng.hpp"

namespace patchssl {

std::string to_string(PatchLabel label) {
  switch (label) {
    case PatchLabel::healthy:
      return "healthy";
    case PatchLabel::diseased:
      return "diseased";
    case PatchLabel::unlabeled:
      return "unlabeled";
  }
  return "unknown";
}

PatchLabel parse_patch_label(const std::string& text) {
  if (text == "healthy") return PatchLabel::healthy;
  if (text == "diseased") return PatchLabel::diseased;
  if (text == "unlabeled") return PatchLabel::unlabeled;
  throw FormatError("unknown label '" + text + "'");
}

RawImage load_and_normalize(const std::filesystem::path& path, std::size_t canvas) {
  if (canvas < 32) throw ArgumentError("canvas must be at least 32, got " + std::to_string(canvas));
  RawImage img;
  img.image_id = path.stem().string();
  img.source_path = path.string();
  img.pixels = resize_bilinear(read_png_rgb(path), canvas, canvas);
  const float peak = *std::max_element(img.pixels.begin(), img.pixels.end());
  if (peak <= 0.0f) {
    img.all_zero = true;
    log::warn("image ", path.string(), " is all zero; left unnormalized");
    return img;
  }
  for (auto& v : img.pixels) v /= peak;
  return img;
}

SegMask load_mask(const std::filesystem::path& path, std::size_t canvas) {
  SegMask m;
  m.image_id = path.stem().string();
  if (std::filesystem::is_directory(path)) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(path)) {
      if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    }
    if (files.empty()) throw IoError("no mask files in " + path.string());
    std::sort(files.begin(), files.end());
    m.mask = Tensor<std::uint8_t>({canvas, canvas});
    for (const auto& f : files) {
      const auto part = resize_nearest(read_png_mask(f), canvas, canvas);
      for (std::size_t i = 0; i < part.size(); ++i) m.mask[i] |= part[i];
    }
    m.image_id = path.filename().string();
    return m;
  }
  m.mask = resize_nearest(read_png_mask(path), canvas, canvas);
  return m;
}

std::vector<RawPatch> tile(const RawImage& image, std::size_t grid, std::size_t patch) {
  const auto& px = image.pixels;
  if (px.rank() != 3 || px.dim(2) != 3) throw ShapeError("tile expects [H, W, 3] pixels");
  const std::size_t h = px.dim(0);
  const std::size_t w = px.dim(1);
  if (grid == 0 || patch == 0 || grid * patch != h || grid * patch != w) {
    throw GeometryError("grid " + std::to_string(grid) + " x patch " + std::to_string(patch) +
                        " does not cover a " + std::to_string(h) + "x" + std::to_string(w) +
                        " image");
  }
  std::vector<RawPatch> out;
  out.reserve(grid * grid);
  for (std::size_t r = 0; r < grid; ++r) {
    for (std::size_t c = 0; c < grid; ++c) {
      RawPatch p{r, c, Tensor<float>({patch, patch, 3})};
      for (std::size_t y = 0; y < patch; ++y) {
        const float* src = px.data() + ((r * patch + y) * w + c * patch) * 3;
        std::copy(src, src + patch * 3, p.pixels.data() + y * patch * 3);
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

PatchLabelResult label_patch(const SegMask& mask, std::size_t row, std::size_t col,
                             std::size_t grid, std::size_t patch) {
  const auto& m = mask.mask;
  if (m.rank() != 2 || m.dim(0) != grid * patch || m.dim(1) != grid * patch) {
    throw GeometryError("mask " + shape_string(m.shape()) + " does not match grid " +
                        std::to_string(grid) + " x patch " + std::to_string(patch));
  }
  if (row >= grid || col >= grid) throw GeometryError("patch index outside the grid");
  const std::size_t w = m.dim(1);
  PatchLabelResult res;
  for (std::size_t y = row * patch; y < (row + 1) * patch; ++y) {
    for (std::size_t x = col * patch; x < (col + 1) * patch; ++x) {
      res.overlap_pixels += m[y * w + x] != 0;
    }
  }
  res.label = res.overlap_pixels >= 1 ? PatchLabel::diseased : PatchLabel::healthy;
  return res;
}

Tensor<float> downsample_patch(const Tensor<float>& block, std::size_t target) {
  if (block.rank() != 3 || block.dim(0) != block.dim(1)) {
    throw ShapeError("downsample_patch expects a square [P, P, C] block");
  }
  const std::size_t p = block.dim(0);
  const std::size_t ch = block.dim(2);
  if (target == 0 || p % target != 0) {
    throw GeometryError("patch " + std::to_string(p) + " is not divisible by " +
                        std::to_string(target));
  }
  const std::size_t f = p / target;
  const double inv = 1.0 / static_cast<double>(f * f);
  Tensor<float> out({target, target, ch});
  for (std::size_t y = 0; y < target; ++y) {
    for (std::size_t x = 0; x < target; ++x) {
      for (std::size_t c = 0; c < ch; ++c) {
        double s = 0.0;
        for (std::size_t dy = 0; dy < f; ++dy) {
          for (std::size_t dx = 0; dx < f; ++dx) {
            s += block[((y * f + dy) * p + x * f + dx) * ch + c];
          }
        }
        out[(y * target + x) * ch + c] = static_cast<float>(2.0 * (s * inv) - 1.0);
      }
    }
  }
  return out;
}

Tensor<float> to_chw(const Tensor<float>& hwc) {
  if (hwc.rank() != 3) throw ShapeError("to_chw expects [H, W, C]");
  const std::size_t h = hwc.dim(0), w = hwc.dim(1), c = hwc.dim(2);
  Tensor<float> out({c, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t k = 0; k < c; ++k) out[(k * h + y) * w + x] = hwc[(y * w + x) * c + k];
    }
  }
  return out;
}

namespace {

// Splits n into parts proportional to weights; leftover units go to the
// largest remainders, ties to the earlier part.
std::vector<std::size_t> largest_remainder(std::size_t n, const std::vector<std::size_t>& weights) {
  const std::size_t total = std::accumulate(weights.begin(), weights.end(), std::size_t{0});
  std::vector<std::size_t> out(weights.size(), 0);
  if (total == 0) return out;
  std::vector<std::size_t> rem(weights.size());
  std::size_t used = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out[i] = n * weights[i] / total;
    rem[i] = n * weights[i] % total;
    used += out[i];
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (rem[a] != rem[b]) return rem[a] > rem[b];
    return weights[a] > weights[b];
  });
  for (std::size_t k = 0; used < n; ++k, ++used) ++out[order[k % order.size()]];
  return out;
}

void check_unique(const std::vector<std::string>& ids) {
  std::set<std::string> seen(ids.begin(), ids.end());
  if (seen.size() != ids.size()) throw ArgumentError("image ids are not unique");
}

}  // namespace

SplitCounts proportional_counts(std::size_t n, const SplitCounts& ratio) {
  const auto parts = largest_remainder(n, {ratio.train, ratio.val, ratio.test});
  return {parts[0], parts[1], parts[2]};
}

SplitManifest make_split(const std::vector<std::string>& image_ids, const SplitCounts& counts,
                         std::uint64_t seed) {
  if (counts.total() != image_ids.size()) {
    throw ArgumentError("split counts sum to " + std::to_string(counts.total()) + " but there are " +
                        std::to_string(image_ids.size()) + " images");
  }
  check_unique(image_ids);
  auto ids = image_ids;
  Rng rng(seed);
  rng.shuffle(ids);
  SplitManifest s;
  s.seed = seed;
  s.train.assign(ids.begin(), ids.begin() + counts.train);
  s.val.assign(ids.begin() + counts.train, ids.begin() + counts.train + counts.val);
  s.test.assign(ids.begin() + counts.train + counts.val, ids.end());
  return s;
}

SplitManifest make_stratified_split(const std::vector<std::string>& image_ids,
                                    const std::vector<int>& labels, const SplitCounts& counts,
                                    std::uint64_t seed) {
  if (labels.size() != image_ids.size()) throw ArgumentError("one label per image id required");
  if (counts.total() != image_ids.size()) {
    throw ArgumentError("split counts sum to " + std::to_string(counts.total()) + " but there are " +
                        std::to_string(image_ids.size()) + " images");
  }
  check_unique(image_ids);
  std::vector<std::vector<std::string>> pools(2);
  for (std::size_t i = 0; i < image_ids.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ArgumentError("labels must be 0 or 1");
    pools[labels[i]].push_back(image_ids[i]);
  }
  Rng rng(seed);
  for (auto& p : pools) rng.shuffle(p);

  SplitManifest s;
  s.seed = seed;
  std::vector<std::size_t> next(2, 0);
  auto take = [&](std::size_t n, std::vector<std::string>& dst) {
    const auto parts =
        largest_remainder(n, {pools[0].size() - next[0], pools[1].size() - next[1]});
    for (std::size_t c = 0; c < 2; ++c) {
      for (std::size_t k = 0; k < parts[c]; ++k) dst.push_back(pools[c][next[c]++]);
    }
    rng.shuffle(dst);
  };
  take(counts.train, s.train);
  take(counts.val, s.val);
  take(counts.test, s.test);
  return s;
}

LabeledSubset sample_labeled_subset(const std::vector<std::string>& train_ids,
                                    std::size_t n_labeled, std::uint64_t seed) {
  return sample_labeled_subset(train_ids, {}, n_labeled, seed);
}

LabeledSubset sample_labeled_subset(const std::vector<std::string>& train_ids,
                                    const std::map<std::string, int>& image_labels,
                                    std::size_t n_labeled, std::uint64_t seed) {
  if (n_labeled < 1 || n_labeled > train_ids.size()) {
    throw ArgumentError("n_labeled must be in [1, " + std::to_string(train_ids.size()) + "], got " +
                        std::to_string(n_labeled));
  }
  check_unique(train_ids);
  Rng rng(seed);
  std::vector<bool> chosen(train_ids.size(), false);
  std::size_t picked = 0;

  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < train_ids.size(); ++i) {
    const auto it = image_labels.find(train_ids[i]);
    if (it != image_labels.end()) by_class[it->second != 0].push_back(i);
  }
  if (n_labeled >= 2 && !by_class[0].empty() && !by_class[1].empty()) {
    for (const auto& pool : by_class) {
      chosen[pool[rng.below(pool.size())]] = true;
      ++picked;
    }
  }
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < train_ids.size(); ++i) {
    if (!chosen[i]) rest.push_back(i);
  }
  rng.shuffle(rest);
  for (std::size_t k = 0; picked < n_labeled; ++k, ++picked) chosen[rest[k]] = true;

  LabeledSubset s;
  s.seed = seed;
  for (std::size_t i = 0; i < train_ids.size(); ++i) {
    (chosen[i] ? s.labeled : s.unlabeled).push_back(train_ids[i]);
  }
  return s;
}

void to_json(nlohmann::json& j, const SplitManifest& s) {
  j = {{"train", s.train}, {"val", s.val}, {"test", s.test}, {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, SplitManifest& s) {
  j.at("train").get_to(s.train);
  j.at("val").get_to(s.val);
  j.at("test").get_to(s.test);
  j.at("seed").get_to(s.seed);
}

void to_json(nlohmann::json& j, const LabeledSubset& s) {
  j = {{"labeled", s.labeled}, {"unlabeled", s.unlabeled}, {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, LabeledSubset& s) {
  j.at("labeled").get_to(s.labeled);
  j.at("unlabeled").get_to(s.unlabeled);
  j.at("seed").get_to(s.seed);
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

DatasetManifest read_dataset_manifest(const std::filesystem::path& dataset_dir) {
  const auto j = read_json_file(dataset_dir / "manifest.json");
  DatasetManifest m;
  try {
    for (const auto& e : j.at("images")) {
      const auto label = e.at("label").get<std::string>();
      if (label != "healthy" && label != "diseased") {
        throw FormatError("image label must be healthy or diseased, got " + label);
      }
      m.images.push_back({e.at("id").get<std::string>(), label == "diseased" ? 1 : 0});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed manifest in " + dataset_dir.string() + ": " + e.what());
  }
  for (const auto& [k, v] : j.items()) {
    if (k != "images") m.extra[k] = v;
  }
  return m;
}

void write_dataset_manifest(const std::filesystem::path& dataset_dir, const DatasetManifest& m) {
  nlohmann::json j = m.extra;
  nlohmann::json images = nlohmann::json::array();
  for (const auto& e : m.images) {
    images.push_back({{"id", e.id}, {"label", e.label ? "diseased" : "healthy"}});
  }
  j["images"] = images;
  write_json_file(dataset_dir / "manifest.json", j);
}

}  // namespace patchssl

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "patchssl/dataset.hpp"
#include "patchssl/tensor.hpp"

namespace patchssl {

struct PatchRecord {
  std::string image_id;
  std::size_t row = 0;
  std::size_t col = 0;
  PatchLabel label = PatchLabel::healthy;
  std::size_t overlap_pixels = 0;
};

struct ImageEntry {
  std::string id;
  int label = 0;  // 1 when any patch is diseased
  std::string split;
  std::size_t first_patch = 0;  // records [first_patch, first_patch + grid^2)
  std::size_t diseased_patches = 0;
};

struct Geometry {
  std::size_t canvas = 1024;
  std::size_t grid = 8;
  std::size_t patch = 128;
  std::size_t downsample = 32;  // network input size; equal to patch for no downsampling
  std::size_t patches_per_image() const { return grid * grid; }
  void validate() const;
};

// All patches of a tiled dataset plus the split it was tiled with.
struct PatchStore {
  Geometry geometry;
  std::vector<ImageEntry> images;
  std::vector<PatchRecord> records;
  Tensor<float> pixels;  // [N, 3, P', P'] in [-1, 1]
  SplitManifest split;

  const ImageEntry& image(const std::string& id) const;
  // Indices of all patches of the given images, in image then row-major order.
  std::vector<std::size_t> patch_indices(const std::vector<std::string>& ids) const;
  // Copies the listed patches into a [n, 3, P', P'] batch.
  Tensor<float> gather(const std::vector<std::size_t>& indices) const;
};

struct TileOptions {
  Geometry geometry;
  std::optional<SplitCounts> counts;  // default: 149:50:50 proportions of the image count
  bool stratified = true;
  std::uint64_t seed = 0;
};

// Loads every image of a dataset directory, tiles, labels and downsamples it.
PatchStore build_patch_store(const std::filesystem::path& dataset_dir, const TileOptions& options);

// patches.bin (pixel container), patches.json (records and images), split.json.
void save_patch_store(const std::filesystem::path& dir, const PatchStore& store);
PatchStore load_patch_store(const std::filesystem::path& dir);

}  // namespace patchssl

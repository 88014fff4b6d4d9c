#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "patchssl/tensor.hpp"

namespace patchssl {

enum class PatchLabel { healthy = 0, diseased = 1, unlabeled = 2 };

std::string to_string(PatchLabel label);
PatchLabel parse_patch_label(const std::string& text);

struct RawImage {
  std::string image_id;
  Tensor<float> pixels;  // [H, W, 3] in [0, 1]
  std::string source_path;
  bool all_zero = false;  // source had no signal; pixels left at 0
};

struct SegMask {
  std::string image_id;
  Tensor<std::uint8_t> mask;  // [H, W], 1 = abnormal
};

// Resizes to canvas x canvas (bilinear), then divides by the maximum over all channels.
RawImage load_and_normalize(const std::filesystem::path& path, std::size_t canvas);

// A single mask file, or a directory of per-abnormality masks combined by OR.
// Resized to canvas x canvas with nearest-neighbour sampling.
SegMask load_mask(const std::filesystem::path& path, std::size_t canvas);

struct RawPatch {
  std::size_t row = 0;
  std::size_t col = 0;
  Tensor<float> pixels;  // [P, P, 3]
};

// G*G non-overlapping P x P blocks in row-major order.
std::vector<RawPatch> tile(const RawImage& image, std::size_t grid, std::size_t patch);

struct PatchLabelResult {
  PatchLabel label = PatchLabel::healthy;
  std::size_t overlap_pixels = 0;
};

PatchLabelResult label_patch(const SegMask& mask, std::size_t row, std::size_t col,
                             std::size_t grid, std::size_t patch);

// Area-average [P, P, 3] down to [P', P', 3], then v -> 2v - 1.
Tensor<float> downsample_patch(const Tensor<float>& block, std::size_t target);

// [H, W, C] -> [C, H, W].
Tensor<float> to_chw(const Tensor<float>& hwc);

struct SplitCounts {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
  std::size_t total() const { return train + val + test; }
};

// Split sizes proportional to `ratio` that sum to n (largest remainder).
SplitCounts proportional_counts(std::size_t n, const SplitCounts& ratio);

struct SplitManifest {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
  std::uint64_t seed = 0;
};

SplitManifest make_split(const std::vector<std::string>& image_ids, const SplitCounts& counts,
                         std::uint64_t seed);

// Same split sizes, but each split's class mix follows the overall class mix as
// closely as integer counts allow. labels[i] is 0 (healthy) or 1 (diseased).
SplitManifest make_stratified_split(const std::vector<std::string>& image_ids,
                                    const std::vector<int>& labels, const SplitCounts& counts,
                                    std::uint64_t seed);

struct LabeledSubset {
  std::vector<std::string> labeled;
  std::vector<std::string> unlabeled;
  std::uint64_t seed = 0;
};

// Uniform draw of n_labeled ids; the unlabeled set keeps the input order.
LabeledSubset sample_labeled_subset(const std::vector<std::string>& train_ids,
                                    std::size_t n_labeled, std::uint64_t seed);

// As above, but one healthy and one diseased image are drawn first when both
// classes exist and n_labeled >= 2.
LabeledSubset sample_labeled_subset(const std::vector<std::string>& train_ids,
                                    const std::map<std::string, int>& image_labels,
                                    std::size_t n_labeled, std::uint64_t seed);

void to_json(nlohmann::json& j, const SplitManifest& s);
void from_json(const nlohmann::json& j, SplitManifest& s);
void to_json(nlohmann::json& j, const LabeledSubset& s);
void from_json(const nlohmann::json& j, LabeledSubset& s);

// manifest.json of a dataset directory: ids with class labels.
struct DatasetEntry {
  std::string id;
  int label = 0;  // 0 healthy, 1 diseased
};

struct DatasetManifest {
  std::vector<DatasetEntry> images;
  nlohmann::json extra = nlohmann::json::object();
};

DatasetManifest read_dataset_manifest(const std::filesystem::path& dataset_dir);
void write_dataset_manifest(const std::filesystem::path& dataset_dir, const DatasetManifest& m);

// Reads and writes JSON with IoError/FormatError reporting.
nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace patchssl

#include "patchssl/patch_store.hpp"

#include <algorithm>
#include <cstring>
#include <exception>
#include <map>

#include "patchssl/error.hpp"
#include "patchssl/log.hpp"
#include "patchssl/tensor_file.hpp"

namespace patchssl {

void Geometry::validate() const {
  if (grid == 0 || patch == 0 || grid * patch != canvas) {
    throw GeometryError("grid " + std::to_string(grid) + " x patch " + std::to_string(patch) +
                        " != canvas " + std::to_string(canvas));
  }
  if (downsample == 0 || patch % downsample != 0) {
    throw GeometryError("patch " + std::to_string(patch) + " is not divisible by downsample " +
                        std::to_string(downsample));
  }
}

const ImageEntry& PatchStore::image(const std::string& id) const {
  for (const auto& e : images) {
    if (e.id == id) return e;
  }
  throw ArgumentError("unknown image id " + id);
}

std::vector<std::size_t> PatchStore::patch_indices(const std::vector<std::string>& ids) const {
  std::map<std::string, const ImageEntry*> by_id;
  for (const auto& e : images) by_id[e.id] = &e;
  std::vector<std::size_t> out;
  const std::size_t per = geometry.patches_per_image();
  out.reserve(ids.size() * per);
  for (const auto& id : ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw ArgumentError("unknown image id " + id);
    for (std::size_t k = 0; k < per; ++k) out.push_back(it->second->first_patch + k);
  }
  return out;
}

Tensor<float> PatchStore::gather(const std::vector<std::size_t>& indices) const {
  const std::size_t stride = pixels.stride0();
  Shape shape = pixels.shape();
  shape[0] = indices.size();
  Tensor<float> out(shape);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::memcpy(out.data() + i * stride, pixels.data() + indices[i] * stride,
                stride * sizeof(float));
  }
  return out;
}

PatchStore build_patch_store(const std::filesystem::path& dataset_dir, const TileOptions& options) {
  const Geometry& g = options.geometry;
  g.validate();
  const DatasetManifest manifest = read_dataset_manifest(dataset_dir);
  if (manifest.images.empty()) throw ArgumentError("dataset " + dataset_dir.string() + " is empty");

  PatchStore store;
  store.geometry = g;
  const std::size_t per = g.patches_per_image();
  const std::size_t n_images = manifest.images.size();
  const std::size_t p = g.downsample;
  store.pixels = Tensor<float>({n_images * per, 3, p, p});
  store.records.resize(n_images * per);
  store.images.resize(n_images);

  // Images are independent; each writes only its own slots.
  std::vector<std::exception_ptr> errors(n_images);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n_images; ++i) try {
    const auto& entry = manifest.images[i];
    const RawImage img = load_and_normalize(dataset_dir / "images" / (entry.id + ".png"), g.canvas);
    const auto mask_dir = dataset_dir / "masks" / entry.id;
    const SegMask mask = std::filesystem::is_directory(mask_dir)
                             ? load_mask(mask_dir, g.canvas)
                             : load_mask(dataset_dir / "masks" / (entry.id + ".png"), g.canvas);
    ImageEntry& ie = store.images[i];
    ie.id = entry.id;
    ie.first_patch = i * per;
    const auto blocks = tile(img, g.grid, g.patch);
    for (std::size_t k = 0; k < per; ++k) {
      const auto& b = blocks[k];
      const auto lab = label_patch(mask, b.row, b.col, g.grid, g.patch);
      store.records[i * per + k] = {entry.id, b.row, b.col, lab.label, lab.overlap_pixels};
      ie.diseased_patches += lab.label == PatchLabel::diseased;
      const auto chw = to_chw(downsample_patch(b.pixels, p));
      std::copy(chw.begin(), chw.end(), store.pixels.data() + (i * per + k) * chw.size());
    }
    ie.label = ie.diseased_patches > 0 ? 1 : 0;
  } catch (...) {
    errors[i] = std::current_exception();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<std::string> ids;
  std::vector<int> labels;
  for (const auto& e : store.images) {
    ids.push_back(e.id);
    labels.push_back(e.label);
  }
  for (std::size_t i = 0; i < n_images; ++i) {
    if (store.images[i].label != manifest.images[i].label) {
      log::warn("image ", ids[i], " is listed as ", manifest.images[i].label ? "diseased" : "healthy",
                " but its mask says otherwise; using the mask");
    }
  }
  const SplitCounts counts = options.counts.value_or(proportional_counts(n_images, {149, 50, 50}));
  store.split = options.stratified ? make_stratified_split(ids, labels, counts, options.seed)
                                   : make_split(ids, counts, options.seed);
  std::map<std::string, std::string> split_of;
  for (const auto& id : store.split.train) split_of[id] = "train";
  for (const auto& id : store.split.val) split_of[id] = "val";
  for (const auto& id : store.split.test) split_of[id] = "test";
  for (auto& e : store.images) e.split = split_of.at(e.id);
  return store;
}

void save_patch_store(const std::filesystem::path& dir, const PatchStore& store) {
  std::filesystem::create_directories(dir);
  const Geometry& g = store.geometry;
  const nlohmann::json geometry = {
      {"canvas", g.canvas}, {"grid", g.grid}, {"patch", g.patch}, {"downsample", g.downsample}};
  save_tensor_file(dir / "patches.bin", {{"pixels", store.pixels}}, {{"geometry", geometry}});

  nlohmann::json images = nlohmann::json::array();
  std::size_t diseased_patches = 0;
  for (const auto& e : store.images) {
    images.push_back({{"id", e.id},
                      {"label", e.label ? "diseased" : "healthy"},
                      {"split", e.split},
                      {"first_patch", e.first_patch},
                      {"diseased_patches", e.diseased_patches}});
    diseased_patches += e.diseased_patches;
  }
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : store.records) {
    records.push_back({r.image_id, r.row, r.col, to_string(r.label), r.overlap_pixels});
  }
  write_json_file(dir / "patches.json",
                  {{"geometry", geometry},
                   {"n_images", store.images.size()},
                   {"n_patches", store.records.size()},
                   {"patches_per_image", g.patches_per_image()},
                   {"diseased_patches", diseased_patches},
                   {"healthy_patches", store.records.size() - diseased_patches},
                   {"record_fields", {"image_id", "row", "col", "label", "overlap_pixels"}},
                   {"images", images},
                   {"records", records}});
  write_json_file(dir / "split.json", store.split);
}

PatchStore load_patch_store(const std::filesystem::path& dir) {
  PatchStore store;
  const auto j = read_json_file(dir / "patches.json");
  try {
    const auto& g = j.at("geometry");
    store.geometry = {g.at("canvas").get<std::size_t>(), g.at("grid").get<std::size_t>(),
                      g.at("patch").get<std::size_t>(), g.at("downsample").get<std::size_t>()};
    for (const auto& e : j.at("images")) {
      store.images.push_back({e.at("id").get<std::string>(),
                              e.at("label").get<std::string>() == "diseased" ? 1 : 0,
                              e.at("split").get<std::string>(), e.at("first_patch").get<std::size_t>(),
                              e.at("diseased_patches").get<std::size_t>()});
    }
    for (const auto& r : j.at("records")) {
      store.records.push_back({r.at(0).get<std::string>(), r.at(1).get<std::size_t>(),
                               r.at(2).get<std::size_t>(),
                               parse_patch_label(r.at(3).get<std::string>()),
                               r.at(4).get<std::size_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed patches.json in " + dir.string() + ": " + e.what());
  }
  store.split = read_json_file(dir / "split.json").get<SplitManifest>();
  auto file = load_tensor_file(dir / "patches.bin");
  auto it = file.tensors.find("pixels");
  if (it == file.tensors.end()) throw FormatError("patches.bin has no pixels tensor");
  store.pixels = std::move(it->second);
  const std::size_t p = store.geometry.downsample;
  if (store.pixels.shape() != Shape{store.records.size(), 3, p, p}) {
    throw FormatError("patch pixels " + shape_string(store.pixels.shape()) +
                      " do not match the records");
  }
  return store;
}

}  // namespace patchssl

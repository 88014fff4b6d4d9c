#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "patchssl/experiment.hpp"
#include "patchssl/overlay.hpp"
#include "patchssl/patch_store.hpp"
#include "patchssl/synth.hpp"
#include "patchssl/training.hpp"

namespace patchssl {

// Everything a command needs, resolved from a preset, then a JSON config file,
// then command-line flags.
//
// {
//   "preset": "paper" | "desk",
//   "seed": 0,
//   "run_root": "runs",
//   "dataset": {"canvas", "grid", "patch", "downsample", "split": [train, val, test] | null,
//               "stratified"},
//   "synth": {"canvas", "healthy", "diseased", "lesions_min", "lesions_max", "radius_min",
//             "radius_max", "intensity_min", "intensity_max", "noise_sigma"},
//   "train": {...training keys..., "discriminator": {...}, "generator": {...}},
//   "experiment": {"grid": [..], "repeats", "methods": ["ssl", "convnet"], "jobs", "split"},
//   "overlay": {"sigma": null | pixels, "alpha", "localize_blurred"}
// }
struct CliConfig {
  std::string preset = "paper";
  std::uint64_t seed = 0;
  std::filesystem::path run_root = "runs";
  Geometry geometry;
  std::optional<SplitCounts> split;
  bool stratified = true;
  SynthConfig synth;
  TrainConfig train;
  std::vector<std::size_t> grid{10, 20, 40, 80, 149};
  std::size_t repeats = 5;
  std::vector<Method> methods{Method::ssl, Method::convnet};
  std::size_t jobs = 1;
  std::string eval_split = "test";
  OverlayOptions overlay;

  static CliConfig preset_config(const std::string& name);
  ExperimentSpec experiment_spec() const;
};

void to_json(nlohmann::json& j, const CliConfig& c);
// Overlays the keys present in j onto c; unknown keys raise FormatError.
void merge_json(const nlohmann::json& j, CliConfig& c);

// Preset named by `preset` (or the file's "preset" key, else paper), then the file.
CliConfig load_cli_config(const std::optional<std::filesystem::path>& file,
                          const std::optional<std::string>& preset);

// PATCHSSL_RUN_ROOT when set, else the configured run root.
std::filesystem::path default_run_root(const CliConfig& c);

}  // namespace patchssl

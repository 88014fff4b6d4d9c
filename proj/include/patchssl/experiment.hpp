#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "patchssl/patch_store.hpp"
#include "patchssl/training.hpp"

namespace patchssl {

struct ExperimentSpec {
  std::vector<std::size_t> grid{10, 20, 40, 80, 149};  // labeled image counts
  std::size_t repeats = 5;
  std::vector<Method> methods{Method::ssl, Method::convnet};
  TrainConfig train;  // its seed is replaced per cell
  std::uint64_t seed = 0;
  std::size_t jobs = 1;  // concurrent cells
  std::string split = "test";
  bool verbose = false;
};

// Seed shared by both methods of one (labeled count, repeat) cell.
std::uint64_t cell_seed(std::uint64_t master, std::size_t labeled_count, std::size_t repeat);

struct ExperimentRow {
  Method method = Method::ssl;
  std::size_t labeled_count = 0;
  std::size_t repeat = 0;
  std::uint64_t seed = 0;
  double patch_auc = 0.0;
  double image_auc = 0.0;
};

struct CellSummary {
  Method method = Method::ssl;
  std::size_t labeled_count = 0;
  std::size_t n = 0;
  double patch_mean = 0.0;
  double patch_std = 0.0;  // sample standard deviation; 0 when n == 1
  double image_mean = 0.0;
  double image_std = 0.0;
  bool single_repeat = false;
};

struct ExperimentReport {
  std::vector<ExperimentRow> rows;  // method, then count, then repeat
  std::vector<CellSummary> cells;
};

// Trains every method on every cell into <out_dir>/<method>/n<count>_r<repeat>,
// evaluates on the spec's split and writes experiment.csv and summary.json.
// Finished cells found in out_dir are reused.
ExperimentReport run_experiment(const ExperimentSpec& spec, const PatchStore& store,
                                const std::filesystem::path& out_dir);

std::vector<CellSummary> summarize(const std::vector<ExperimentRow>& rows);

void write_experiment_csv(const std::filesystem::path& path, const std::vector<ExperimentRow>& rows);
std::vector<ExperimentRow> read_experiment_csv(const std::filesystem::path& path);

// Mean +- std per (method, labeled count), one row per method.
std::string format_summary_table(const ExperimentReport& report, std::size_t train_images);

}  // namespace patchssl

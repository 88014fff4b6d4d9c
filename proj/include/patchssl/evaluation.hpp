#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "patchssl/model.hpp"
#include "patchssl/patch_store.hpp"

namespace patchssl {

// Log-odds of diseased versus healthy among the real classes: l = logit[1] - logit[0].
double patch_diseased_logit(std::span<const double> logits);
double patch_diseased_logit(std::span<const float> logits);

double sigmoid(double x);

// Sum of sigmoids of the patch logits, in [0, number of patches].
double aggregate_image_score(std::span<const double> patch_logits);

// Tie-aware Mann-Whitney statistic. Labels are 0/1; throws UndefinedAucError
// unless both classes are present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct ThresholdChoice {
  double threshold = 0.0;  // predict diseased when score > threshold
  double sensitivity = 0.0;
  double specificity = 0.0;
  double youden_j = 0.0;
};

// Maximizes Youden's J over the cuts between adjacent distinct scores (at their
// midpoints) plus the two all-or-nothing cuts; equal J goes to the lowest threshold.
ThresholdChoice choose_threshold(std::span<const double> scores, std::span<const int> labels);

// Sensitivity and specificity of the rule score > threshold.
ThresholdChoice apply_threshold(std::span<const double> scores, std::span<const int> labels,
                                double threshold);

struct ImageScore {
  std::string image_id;
  std::vector<double> patch_logits;
  double score = 0.0;
  int true_label = 0;
};

struct RocReport {
  double auc = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  std::optional<double> threshold;
  double sensitivity = 0.0;
  double specificity = 0.0;
};

struct EvalResult {
  std::string split;
  RocReport patch;
  RocReport image;
  std::vector<ImageScore> images;  // sorted by image id
};

// Eval-mode diseased logits for the given patches, in order.
std::vector<double> predict_patch_logits(const Discriminator<float>& disc,
                                         const ParamSet<float>& params, const PatchStore& store,
                                         const std::vector<std::size_t>& indices,
                                         std::size_t batch = 256);

// Image scores of the listed images, sorted by id.
std::vector<ImageScore> score_images(const Discriminator<float>& disc,
                                     const ParamSet<float>& params, const PatchStore& store,
                                     std::vector<std::string> ids);

// Patch and image AUC over a split; the image threshold is chosen on the
// validation split when it holds both classes.
EvalResult evaluate_params(const Discriminator<float>& disc, const ParamSet<float>& params,
                           const PatchStore& store, const std::string& split);

// Loads <run_dir>/final.ckpt and evaluates its EMA weights.
EvalResult evaluate_run(const std::filesystem::path& run_dir, const PatchStore& store,
                        const std::string& split);

const std::vector<std::string>& split_ids(const PatchStore& store, const std::string& split);

nlohmann::json report_json(const EvalResult& result, std::size_t patches_per_image);
void write_report(const std::filesystem::path& path, const EvalResult& result,
                  std::size_t patches_per_image);
void write_image_scores_csv(const std::filesystem::path& path, const EvalResult& result);

}  // namespace patchssl

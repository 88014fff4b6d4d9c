#include "patchssl/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "patchssl/error.hpp"
#include "patchssl/training.hpp"

namespace patchssl {

namespace {

template <typename T>
double diseased_logit(std::span<const T> logits) {
  if (logits.size() != 2) {
    throw ArgumentError("diseased logit needs exactly 2 class logits, got " +
                        std::to_string(logits.size()));
  }
  return static_cast<double>(logits[1]) - static_cast<double>(logits[0]);
}

void check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw ShapeError("got " + std::to_string(scores.size()) + " scores for " +
                     std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ArgumentError("labels must be 0 or 1");
    if (std::isnan(scores[i])) throw ArgumentError("score is NaN");
  }
}

std::pair<std::size_t, std::size_t> class_counts(std::span<const int> labels) {
  const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  return {pos, labels.size() - pos};
}

}  // namespace

double patch_diseased_logit(std::span<const double> logits) { return diseased_logit(logits); }
double patch_diseased_logit(std::span<const float> logits) { return diseased_logit(logits); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double aggregate_image_score(std::span<const double> patch_logits) {
  if (patch_logits.empty()) throw ArgumentError("image score needs at least one patch");
  double s = 0.0;
  for (double l : patch_logits) s += sigmoid(l);
  return s;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const auto [n_pos, n_neg] = class_counts(labels);
  if (n_pos == 0 || n_neg == 0) {
    throw UndefinedAucError("AUC needs both classes (" + std::to_string(n_pos) + " positive, " +
                            std::to_string(n_neg) + " negative)");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  // Twice the Mann-Whitney U, kept in integers: each positive earns 2 per
  // lower-scored negative and 1 per tied negative.
  std::uint64_t twice_u = 0;
  std::uint64_t neg_below = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::uint64_t pos = 0, neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? pos : neg) += 1;
      ++j;
    }
    twice_u += pos * (2 * neg_below + neg);
    neg_below += neg;
    i = j;
  }
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

ThresholdChoice apply_threshold(std::span<const double> scores, std::span<const int> labels,
                                double threshold) {
  check_inputs(scores, labels);
  const auto [n_pos, n_neg] = class_counts(labels);
  std::size_t tp = 0, tn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] > threshold;
    if (labels[i] == 1 && predicted) ++tp;
    if (labels[i] == 0 && !predicted) ++tn;
  }
  ThresholdChoice c;
  c.threshold = threshold;
  c.sensitivity = n_pos ? static_cast<double>(tp) / static_cast<double>(n_pos) : 0.0;
  c.specificity = n_neg ? static_cast<double>(tn) / static_cast<double>(n_neg) : 0.0;
  c.youden_j = c.sensitivity + c.specificity - 1.0;
  return c;
}

ThresholdChoice choose_threshold(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const auto [n_pos, n_neg] = class_counts(labels);
  if (n_pos == 0 || n_neg == 0) {
    throw UndefinedAucError("threshold selection needs both classes");
  }
  std::vector<double> distinct(scores.begin(), scores.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  // Cuts in ascending order: below every score, the midpoints, then the top score.
  std::vector<double> cuts{distinct.front() - 1.0};
  for (std::size_t k = 0; k + 1 < distinct.size(); ++k) {
    cuts.push_back(distinct[k] + (distinct[k + 1] - distinct[k]) / 2.0);
  }
  cuts.push_back(distinct.back());

  // J * n_pos * n_neg = tp * n_neg + tn * n_pos - n_pos * n_neg compares exactly in integers.
  const auto np = static_cast<std::int64_t>(n_pos), nn = static_cast<std::int64_t>(n_neg);
  std::int64_t best = 0;
  double best_t = cuts.front();
  bool found = false;
  for (double t : cuts) {
    std::int64_t tp = 0, tn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const bool predicted = scores[i] > t;
      tp += labels[i] == 1 && predicted;
      tn += labels[i] == 0 && !predicted;
    }
    const std::int64_t j = tp * nn + tn * np - np * nn;
    if (!found || j > best) {
      best = j;
      best_t = t;
      found = true;
    }
  }
  return apply_threshold(scores, labels, best_t);
}

const std::vector<std::string>& split_ids(const PatchStore& store, const std::string& split) {
  if (split == "train") return store.split.train;
  if (split == "val") return store.split.val;
  if (split == "test") return store.split.test;
  throw ArgumentError("unknown split '" + split + "' (expected train, val or test)");
}

std::vector<double> predict_patch_logits(const Discriminator<float>& disc,
                                         const ParamSet<float>& params, const PatchStore& store,
                                         const std::vector<std::size_t>& indices,
                                         std::size_t batch) {
  if (disc.num_classes() != 2) throw ArgumentError("evaluation supports 2-class models only");
  if (batch == 0) throw ArgumentError("batch must be positive");
  std::vector<double> out;
  out.reserve(indices.size());
  for (std::size_t start = 0; start < indices.size(); start += batch) {
    const std::vector<std::size_t> chunk(
        indices.begin() + static_cast<std::ptrdiff_t>(start),
        indices.begin() + static_cast<std::ptrdiff_t>(std::min(indices.size(), start + batch)));
    const auto logits = disc.forward(params, store.gather(chunk), Mode::eval).logits;
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      out.push_back(patch_diseased_logit(std::span<const float>(logits.data() + 2 * i, 2)));
    }
  }
  return out;
}

std::vector<ImageScore> score_images(const Discriminator<float>& disc,
                                     const ParamSet<float>& params, const PatchStore& store,
                                     std::vector<std::string> ids) {
  std::sort(ids.begin(), ids.end());
  const auto indices = store.patch_indices(ids);
  const auto logits = predict_patch_logits(disc, params, store, indices);
  const std::size_t per = store.geometry.patches_per_image();
  std::vector<ImageScore> scores;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    ImageScore s;
    s.image_id = ids[i];
    s.patch_logits.assign(logits.begin() + static_cast<std::ptrdiff_t>(i * per),
                          logits.begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
    s.score = aggregate_image_score(s.patch_logits);
    s.true_label = store.image(ids[i]).label;
    scores.push_back(std::move(s));
  }
  return scores;
}

namespace {

RocReport image_report(const std::vector<ImageScore>& images) {
  std::vector<double> s;
  std::vector<int> y;
  for (const auto& im : images) {
    s.push_back(im.score);
    y.push_back(im.true_label);
  }
  RocReport r;
  std::tie(r.n_pos, r.n_neg) = class_counts(y);
  r.auc = roc_auc(s, y);
  return r;
}

}  // namespace

EvalResult evaluate_params(const Discriminator<float>& disc, const ParamSet<float>& params,
                           const PatchStore& store, const std::string& split) {
  EvalResult result;
  result.split = split;
  result.images = score_images(disc, params, store, split_ids(store, split));
  if (result.images.empty()) throw ArgumentError("split '" + split + "' has no images");

  std::vector<double> patch_scores;
  std::vector<int> patch_labels;
  for (const auto& im : result.images) {
    const auto& entry = store.image(im.image_id);
    for (std::size_t k = 0; k < im.patch_logits.size(); ++k) {
      patch_scores.push_back(im.patch_logits[k]);
      patch_labels.push_back(store.records[entry.first_patch + k].label == PatchLabel::diseased);
    }
  }
  std::tie(result.patch.n_pos, result.patch.n_neg) = class_counts(patch_labels);
  result.patch.auc = roc_auc(patch_scores, patch_labels);
  result.image = image_report(result.images);

  const auto val = split == "val" ? result.images : score_images(disc, params, store, store.split.val);
  std::vector<double> vs;
  std::vector<int> vy;
  for (const auto& im : val) {
    vs.push_back(im.score);
    vy.push_back(im.true_label);
  }
  const auto [vp, vn] = class_counts(vy);
  if (vp > 0 && vn > 0) {
    const double t = choose_threshold(vs, vy).threshold;
    std::vector<double> s;
    std::vector<int> y;
    for (const auto& im : result.images) {
      s.push_back(im.score);
      y.push_back(im.true_label);
    }
    const auto applied = apply_threshold(s, y, t);
    result.image.threshold = t;
    result.image.sensitivity = applied.sensitivity;
    result.image.specificity = applied.specificity;
  }
  return result;
}

EvalResult evaluate_run(const std::filesystem::path& run_dir, const PatchStore& store,
                        const std::string& split) {
  const auto path = run_dir / "final.ckpt";
  if (!std::filesystem::exists(path)) throw IoError("no final checkpoint in " + run_dir.string());
  const auto ckpt = load_checkpoint(path);
  const Discriminator<float> disc(ckpt.config.disc_arch());
  if (store.geometry.downsample != ckpt.config.disc.input_size) {
    throw GeometryError("patch store does not match the checkpoint's input size");
  }
  return evaluate_params(disc, ckpt.state.ema.shadow, store, split);
}

nlohmann::json report_json(const EvalResult& r, std::size_t patches_per_image) {
  nlohmann::json j = {{"split", r.split},
                      {"patch_auc", r.patch.auc},
                      {"image_auc", r.image.auc},
                      {"n_images", r.images.size()},
                      {"n_patches", r.images.size() * patches_per_image},
                      {"n_diseased_images", r.image.n_pos},
                      {"n_diseased_patches", r.patch.n_pos},
                      {"threshold", nullptr},
                      {"sensitivity", nullptr},
                      {"specificity", nullptr}};
  if (r.image.threshold) {
    j["threshold"] = *r.image.threshold;
    j["sensitivity"] = r.image.sensitivity;
    j["specificity"] = r.image.specificity;
  }
  return j;
}

void write_report(const std::filesystem::path& path, const EvalResult& result,
                  std::size_t patches_per_image) {
  write_json_file(path, report_json(result, patches_per_image));
}

void write_image_scores_csv(const std::filesystem::path& path, const EvalResult& result) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "image_id,label,score\n";
  char buf[40];
  for (const auto& im : result.images) {
    std::snprintf(buf, sizeof buf, "%.17g", im.score);
    out << im.image_id << ',' << im.true_label << ',' << buf << '\n';
  }
}

}  // namespace patchssl

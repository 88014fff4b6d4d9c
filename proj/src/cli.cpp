#include "patchssl/cli.hpp"

#include <iostream>
#include <map>
#include <optional>

#include "CLI11.hpp"
#include "patchssl/config.hpp"
#include "patchssl/error.hpp"
#include "patchssl/evaluation.hpp"
#include "patchssl/experiment.hpp"
#include "patchssl/log.hpp"
#include "patchssl/overlay.hpp"
#include "patchssl/patch_store.hpp"
#include "patchssl/synth.hpp"
#include "patchssl/training.hpp"

namespace patchssl {

namespace {

namespace fs = std::filesystem;

// Flags shared by every subcommand; unset ones leave the config untouched.
struct Common {
  std::optional<std::string> config_file;
  std::optional<std::string> preset;
  std::optional<std::uint64_t> seed;
  bool verbose = false;
  bool quiet = false;

  CliConfig resolve() const {
    CliConfig c = load_cli_config(config_file ? std::optional<fs::path>(*config_file) : std::nullopt,
                                  preset);
    if (seed) c.seed = *seed;
    if (quiet) log::set_level(log::Level::warn);
    return c;
  }
};

struct TrainFlags {
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<std::size_t> checkpoint_every;

  void apply(TrainConfig& t) const {
    if (epochs) {
      // Keep the decay onset at the same fraction of training.
      t.lr_decay_start_epoch = t.lr_decay_start_epoch * *epochs / t.epochs;
      t.epochs = *epochs;
    }
    if (batch_size) t.batch_size = *batch_size;
    if (checkpoint_every) t.checkpoint_every = *checkpoint_every;
  }

  void add(CLI::App* app) {
    app->add_option("--epochs", epochs, "training epochs (decay onset scales with it)")->check(CLI::PositiveNumber);
    app->add_option("--batch-size", batch_size, "minibatch size")->check(CLI::PositiveNumber);
    app->add_option("--checkpoint-every", checkpoint_every, "epochs between checkpoints")
        ->check(CLI::PositiveNumber);
  }
};

std::map<std::string, int> image_labels(const PatchStore& store) {
  std::map<std::string, int> labels;
  for (const auto& e : store.images) labels[e.id] = e.label;
  return labels;
}

void add_common(CLI::App* app, Common& common) {
  app->add_option("--config", common.config_file, "JSON config file")->check(CLI::ExistingFile);
  app->add_option("--preset", common.preset, "base settings")->check(CLI::IsMember({"paper", "desk"}));
  app->add_option("--seed", common.seed, "master seed");
  app->add_flag("-v,--verbose", common.verbose, "per-epoch progress");
  app->add_flag("-q,--quiet", common.quiet, "warnings and errors only");
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Patch-based semi-supervised GAN toolkit for retinal image screening", "patchssl"};
  app.require_subcommand(1);
  Common common;

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic fundus-like dataset");
  std::string synth_out;
  std::optional<std::size_t> healthy, diseased, synth_canvas;
  synth->add_option("--out", synth_out, "dataset directory")->required();
  synth->add_option("--healthy", healthy, "healthy image count");
  synth->add_option("--diseased", diseased, "diseased image count");
  synth->add_option("--canvas", synth_canvas, "image side in pixels")->check(CLI::PositiveNumber);
  add_common(synth, common);

  // tile
  auto* tile_cmd = app.add_subcommand("tile", "tile, label and split a dataset into a patch store");
  std::string tile_data, tile_out;
  std::optional<std::size_t> canvas, grid, patch, downsample;
  std::vector<std::size_t> split_counts;
  bool no_stratify = false;
  tile_cmd->add_option("--data", tile_data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  tile_cmd->add_option("--out", tile_out, "patch store directory")->required();
  tile_cmd->add_option("--canvas", canvas, "canvas side")->check(CLI::PositiveNumber);
  tile_cmd->add_option("--grid", grid, "patches per side")->check(CLI::PositiveNumber);
  tile_cmd->add_option("--patch", patch, "patch side")->check(CLI::PositiveNumber);
  tile_cmd->add_option("--downsample", downsample, "network input side")->check(CLI::PositiveNumber);
  tile_cmd->add_option("--split", split_counts, "train,val,test image counts")->delimiter(',')->expected(3);
  tile_cmd->add_flag("--no-stratify", no_stratify, "split without preserving class ratios");
  add_common(tile_cmd, common);

  // train
  auto* train_cmd = app.add_subcommand("train", "train one model");
  std::string train_store, method_name;
  std::optional<std::string> train_run;
  std::size_t labeled = 0;
  bool resume = false;
  TrainFlags train_flags;
  train_cmd->add_option("--store", train_store, "patch store directory")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--method", method_name, "ssl or convnet")->required()->check(CLI::IsMember({"ssl", "convnet"}));
  train_cmd->add_option("--labeled", labeled, "labeled training images")->required()->check(CLI::PositiveNumber);
  train_cmd->add_option("--run", train_run, "run directory");
  train_cmd->add_flag("--resume", resume, "continue from the latest checkpoint");
  train_flags.add(train_cmd);
  add_common(train_cmd, common);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a trained run");
  std::string eval_run, eval_store;
  std::optional<std::string> eval_out, eval_split;
  eval_cmd->add_option("--run", eval_run, "run directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--store", eval_store, "patch store directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--split", eval_split, "split to score")->check(CLI::IsMember({"train", "val", "test"}));
  eval_cmd->add_option("--out", eval_out, "report path (default <run>/report.json)");
  add_common(eval_cmd, common);

  // experiment
  auto* exp_cmd = app.add_subcommand("experiment", "labeled-count x repeat comparison of both methods");
  std::string exp_store;
  std::optional<std::string> exp_out;
  std::vector<std::size_t> exp_grid;
  std::optional<std::size_t> repeats, jobs;
  std::vector<std::string> methods;
  TrainFlags exp_flags;
  exp_cmd->add_option("--store", exp_store, "patch store directory")->required()->check(CLI::ExistingDirectory);
  exp_cmd->add_option("--out", exp_out, "experiment directory");
  exp_cmd->add_option("--grid", exp_grid, "labeled image counts")->delimiter(',');
  exp_cmd->add_option("--repeats", repeats, "random samplings per count")->check(CLI::PositiveNumber);
  exp_cmd->add_option("--methods", methods, "methods to run")->delimiter(',')->check(CLI::IsMember({"ssl", "convnet"}));
  exp_cmd->add_option("--jobs", jobs, "cells trained concurrently")->check(CLI::PositiveNumber);
  exp_flags.add(exp_cmd);
  add_common(exp_cmd, common);

  // overlay
  auto* ov_cmd = app.add_subcommand("overlay", "render abnormality heatmaps");
  std::string ov_run, ov_store;
  std::optional<std::string> ov_data, ov_out;
  std::vector<std::string> ov_images;
  std::optional<double> sigma, alpha;
  bool localize_blurred = false;
  ov_cmd->add_option("--run", ov_run, "run directory")->required()->check(CLI::ExistingDirectory);
  ov_cmd->add_option("--store", ov_store, "patch store directory")->required()->check(CLI::ExistingDirectory);
  ov_cmd->add_option("--data", ov_data, "dataset directory (default: the one the store was tiled from)");
  ov_cmd->add_option("--image", ov_images, "image id (repeatable)")->required();
  ov_cmd->add_option("--out", ov_out, "output directory (default <run>/overlays)");
  ov_cmd->add_option("--sigma", sigma, "blur sigma in pixels (default patch/2)")->check(CLI::PositiveNumber);
  ov_cmd->add_option("--alpha", alpha, "heatmap opacity")->check(CLI::Range(0.0, 1.0));
  ov_cmd->add_flag("--localize-blurred", localize_blurred, "score localization on the blurred map");
  add_common(ov_cmd, common);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    CliConfig cfg = common.resolve();
    const bool verbose = common.verbose;

    if (*synth) {
      if (healthy) cfg.synth.healthy = *healthy;
      if (diseased) cfg.synth.diseased = *diseased;
      if (synth_canvas) cfg.synth.canvas = *synth_canvas;
      const auto s = synth_generate(cfg.synth, synth_out, cfg.seed);
      std::cout << "wrote " << s.healthy + s.diseased << " images (" << s.healthy << " healthy, "
                << s.diseased << " diseased, " << s.lesions << " lesions, " << s.lesion_pixels
                << " lesion pixels) to " << synth_out << "\n";
      return 0;
    }

    if (*tile_cmd) {
      if (canvas) cfg.geometry.canvas = *canvas;
      if (grid) cfg.geometry.grid = *grid;
      if (patch) cfg.geometry.patch = *patch;
      if (downsample) cfg.geometry.downsample = *downsample;
      // Without an explicit --downsample, patches smaller than the network input stay native.
      if (!downsample && cfg.geometry.downsample > cfg.geometry.patch) {
        cfg.geometry.downsample = cfg.geometry.patch;
      }
      if (!split_counts.empty()) cfg.split = SplitCounts{split_counts[0], split_counts[1], split_counts[2]};
      if (no_stratify) cfg.stratified = false;
      TileOptions opts{cfg.geometry, cfg.split, cfg.stratified, derive_seed(cfg.seed, SeedStream::split)};
      const auto store = build_patch_store(tile_data, opts);
      save_patch_store(tile_out, store);
      write_json_file(fs::path(tile_out) / "source.json",
                      {{"dataset_dir", fs::absolute(tile_data).lexically_normal().string()},
                       {"seed", cfg.seed},
                       {"stratified", cfg.stratified}});
      std::size_t dis_img = 0, dis_patch = 0;
      for (const auto& e : store.images) {
        dis_img += e.label;
        dis_patch += e.diseased_patches;
      }
      std::cout << "tiled " << store.images.size() << " images (" << dis_img << " diseased) into "
                << store.records.size() << " patches (" << dis_patch << " diseased, "
                << store.geometry.patches_per_image() << " per image); split train/val/test = "
                << store.split.train.size() << "/" << store.split.val.size() << "/"
                << store.split.test.size() << " -> " << tile_out << "\n";
      return 0;
    }

    if (*train_cmd) {
      train_flags.apply(cfg.train);
      cfg.train.seed = cfg.seed;
      const Method method = parse_method(method_name);
      const auto store = load_patch_store(train_store);
      const auto subset = sample_labeled_subset(store.split.train, image_labels(store), labeled,
                                                derive_seed(cfg.seed, SeedStream::subset));
      const fs::path run_dir =
          train_run ? fs::path(*train_run)
                    : default_run_root(cfg) / (to_string(method) + "_n" + std::to_string(labeled) +
                                              "_s" + std::to_string(cfg.seed));
      const auto run = train(method, cfg.train, store, subset, run_dir, {resume, verbose});
      const auto& last = run.losses.back();
      std::cout << to_string(method) << ": " << run.losses.size() << " epochs, final l_sup "
                << last.l_supervised << ", l_unsup " << last.l_unsupervised << ", l_g " << last.l_g
                << (run.low_data ? " (low labeled data)" : "") << " -> " << run_dir.string() << "\n";
      return 0;
    }

    if (*eval_cmd) {
      const auto store = load_patch_store(eval_store);
      const auto result = evaluate_run(eval_run, store, eval_split.value_or(cfg.eval_split));
      const fs::path out = eval_out ? fs::path(*eval_out) : fs::path(eval_run) / "report.json";
      write_report(out, result, store.geometry.patches_per_image());
      std::cout << report_json(result, store.geometry.patches_per_image()).dump(2) << "\n";
      return 0;
    }

    if (*exp_cmd) {
      exp_flags.apply(cfg.train);
      if (!exp_grid.empty()) cfg.grid = exp_grid;
      if (repeats) cfg.repeats = *repeats;
      if (jobs) cfg.jobs = *jobs;
      if (!methods.empty()) {
        cfg.methods.clear();
        for (const auto& m : methods) cfg.methods.push_back(parse_method(m));
      }
      const auto store = load_patch_store(exp_store);
      auto spec = cfg.experiment_spec();
      spec.verbose = verbose;
      const fs::path out = exp_out ? fs::path(*exp_out) : default_run_root(cfg) / "experiment";
      const auto report = run_experiment(spec, store, out);
      std::cout << format_summary_table(report, store.split.train.size())
                << "rows: " << (out / "experiment.csv").string() << "\n";
      return 0;
    }

    if (*ov_cmd) {
      if (sigma) cfg.overlay.sigma = *sigma;
      if (alpha) cfg.overlay.alpha = *alpha;
      if (localize_blurred) cfg.overlay.localize_blurred = true;
      const auto store = load_patch_store(ov_store);
      fs::path data;
      if (ov_data) {
        data = *ov_data;
      } else {
        const auto source = fs::path(ov_store) / "source.json";
        if (!fs::exists(source)) throw ArgumentError("pass --data: the store does not record its dataset");
        data = read_json_file(source).at("dataset_dir").get<std::string>();
      }
      const fs::path out = ov_out ? fs::path(*ov_out) : fs::path(ov_run) / "overlays";
      for (const auto& id : ov_images) {
        const auto r = overlay_image(ov_run, data, store, id, out, cfg.overlay);
        std::cout << id << ": " << r.png.string();
        if (r.localization_auc) std::cout << " (localization AUC " << *r.localization_auc << ")";
        std::cout << "\n";
      }
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace patchssl

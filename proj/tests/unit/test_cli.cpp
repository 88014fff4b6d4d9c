#include <cstdlib>
#include <fstream>
#include <iterator>

#include "doctest.h"
#include "patchssl/cli.hpp"
#include "patchssl/config.hpp"
#include "patchssl/error.hpp"
#include "patchssl/image_io.hpp"
#include "patchssl/log.hpp"
#include "unit/test_util.hpp"

using namespace patchssl;
using patchssl::testing::TempDir;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int cli(std::vector<std::string> args) {
  args.push_back("-q");
  return run_cli(args);
}

}  // namespace

TEST_CASE("config presets, merging and validation") {
  const auto paper = CliConfig::preset_config("paper");
  CHECK(paper.geometry.canvas == 1024);
  CHECK(paper.geometry.grid == 8);
  CHECK(paper.geometry.downsample == 32);
  CHECK(paper.grid == std::vector<std::size_t>{10, 20, 40, 80, 149});
  CHECK(paper.repeats == 5);
  const auto desk = CliConfig::preset_config("desk");
  CHECK(desk.geometry.patch == 16);
  CHECK(desk.train.epochs == 200);
  CHECK_THROWS_AS(CliConfig::preset_config("huge"), ArgumentError);

  CliConfig c = desk;
  merge_json({{"train", {{"epochs", 7}, {"discriminator", {{"block_widths", {8, 8}}}}}},
              {"experiment", {{"methods", {"convnet"}}}},
              {"overlay", {{"sigma", 3.0}}}},
             c);
  CHECK(c.train.epochs == 7);
  CHECK(c.train.disc.block_widths == std::vector<std::size_t>{8, 8});
  CHECK(c.train.disc.nin_layers == desk.train.disc.nin_layers);
  CHECK(c.methods == std::vector<Method>{Method::convnet});
  CHECK(c.overlay.sigma == 3.0);

  CliConfig d = desk;
  CHECK_THROWS_AS(merge_json({{"trian", {}}}, d), FormatError);
  CHECK_THROWS_AS(merge_json({{"dataset", {{"cnavas", 3}}}}, d), FormatError);
  CHECK_THROWS_AS(merge_json({{"synth", {{"lesions", 3}}}}, d), FormatError);
  CHECK_THROWS_AS(merge_json({{"train", {{"discriminator", {{"depth", 3}}}}}}, d), FormatError);

  // Serialized configs load back unchanged.
  CliConfig e = CliConfig::preset_config("paper");
  merge_json(nlohmann::json(c), e);
  CHECK(nlohmann::json(e) == nlohmann::json(c));
}

TEST_CASE("command line pipeline") {
  TempDir dir("cli");
  const auto root = dir.path();
  const std::string data = (root / "data").string(), store = (root / "store").string();

  CHECK(cli({"synth"}) == 2);
  CHECK(cli({}) == 2);
  CHECK(cli({"synth", "--out", data, "--preset", "desk", "--healthy", "10", "--diseased", "6",
             "--seed", "7"}) == 0);
  CHECK(cli({"synth", "--out", (root / "data2").string(), "--preset", "desk", "--healthy", "10",
             "--diseased", "6", "--seed", "7"}) == 0);
  CHECK(slurp(root / "data" / "manifest.json") == slurp(root / "data2" / "manifest.json"));
  CHECK(slurp(root / "data" / "images" / "img_0003.png") == slurp(root / "data2" / "images" / "img_0003.png"));

  CHECK(cli({"tile", "--data", data, "--out", store, "--grid", "4", "--patch", "16", "--canvas", "64",
             "--split", "8,4,4"}) == 0);
  const auto patches = read_json_file(root / "store" / "patches.json");
  CHECK(patches["patches_per_image"] == 16);
  CHECK(patches["geometry"]["downsample"] == 16);
  std::size_t diseased = 0;
  for (const auto& r : patches["records"]) diseased += r[3] == "diseased";
  CHECK(patches["diseased_patches"] == diseased);
  CHECK(cli({"tile", "--data", data, "--out", store, "--split", "8,4"}) == 2);

  const std::string run = (root / "run").string();
  CHECK(cli({"train", "--store", store, "--method", "gan", "--labeled", "2"}) == 2);
  CHECK(cli({"train", "--store", store, "--method", "ssl", "--labeled", "2", "--preset", "desk",
             "--epochs", "2", "--checkpoint-every", "1", "--run", run, "--seed", "3"}) == 0);
  CHECK(fs::exists(root / "run" / "final.ckpt"));
  CHECK(fs::exists(root / "run" / "losses.csv"));
  // The same run directory without --resume is refused; with it, the finished run is kept.
  CHECK(cli({"train", "--store", store, "--method", "ssl", "--labeled", "2", "--preset", "desk",
             "--epochs", "2", "--checkpoint-every", "1", "--run", run, "--seed", "3"}) == 1);
  CHECK(cli({"train", "--store", store, "--method", "ssl", "--labeled", "2", "--preset", "desk",
             "--epochs", "2", "--checkpoint-every", "1", "--run", run, "--seed", "3", "--resume"}) == 0);
  CHECK(cli({"train", "--store", store, "--method", "ssl", "--labeled", "99", "--preset", "desk",
             "--run", (root / "bad").string()}) == 1);

  CHECK(cli({"eval", "--run", run, "--store", store}) == 0);
  const auto report = read_json_file(root / "run" / "report.json");
  for (const char* key : {"patch_auc", "image_auc", "n_images", "n_patches", "threshold",
                          "sensitivity", "specificity"}) {
    CHECK(report.contains(key));
  }
  CHECK(report["n_images"] == 4);
  CHECK(report["n_patches"] == 64);

  const auto split = read_json_file(root / "store" / "split.json");
  const std::string image = split["test"][0];
  CHECK(cli({"overlay", "--run", run, "--store", store, "--image", image}) == 0);
  const auto png = read_png_rgb(root / "run" / "overlays" / (image + "_overlay.png"));
  CHECK(png.dim(0) == 64);
  CHECK(png.dim(1) == 64);
  CHECK(fs::exists(root / "run" / "overlays" / (image + "_scoremap.bin")));
  CHECK(cli({"overlay", "--run", run, "--store", store, "--image", "nope"}) == 1);

  // Experiment under PATCHSSL_RUN_ROOT.
  setenv("PATCHSSL_RUN_ROOT", (root / "runs").c_str(), 1);
  CHECK(cli({"experiment", "--store", store, "--preset", "desk", "--grid", "2,3", "--repeats", "1",
             "--epochs", "1", "--batch-size", "8"}) == 0);
  unsetenv("PATCHSSL_RUN_ROOT");
  std::ifstream csv(root / "runs" / "experiment" / "experiment.csv");
  std::string line;
  std::size_t rows = 0;
  std::getline(csv, line);
  CHECK(line == "method,labeled_count,repeat,seed,patch_auc,image_auc");
  while (std::getline(csv, line)) rows += !line.empty();
  CHECK(rows == 4);

  // Config file errors are runtime errors.
  std::ofstream(root / "bad.json") << R"({"train": {"epoch": 3}})";
  CHECK(cli({"train", "--store", store, "--method", "ssl", "--labeled", "2", "--config",
             (root / "bad.json").string(), "--run", (root / "bad2").string()}) == 1);
  std::ofstream(root / "good.json") << R"({"preset": "desk", "train": {"epochs": 1, "lr_decay_start_epoch": 1}})";
  CHECK(cli({"train", "--store", store, "--method", "convnet", "--labeled", "2", "--config",
             (root / "good.json").string(), "--run", (root / "good").string()}) == 0);
  CHECK(read_losses_csv(root / "good" / "losses.csv").size() == 1);
}

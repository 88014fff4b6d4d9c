#include <cmath>

#include "doctest.h"
#include "patchssl/error.hpp"
#include "patchssl/experiment.hpp"
#include "unit/test_util.hpp"
#include "unit/toy_store.hpp"

using namespace patchssl;
using patchssl::testing::TempDir;

namespace {

ExperimentSpec tiny_spec() {
  ExperimentSpec s;
  s.grid = {2, 4};
  s.repeats = 2;
  s.train = TrainConfig::desk();
  s.train.epochs = 2;
  s.train.lr_decay_start_epoch = 2;
  s.train.checkpoint_every = 2;
  s.train.batch_size = 8;
  s.train.latent_dim = 8;
  s.seed = 5;
  return s;
}

}  // namespace

TEST_CASE("summary statistics") {
  std::vector<ExperimentRow> rows;
  const double image[3] = {0.7, 0.8, 0.95};
  for (std::size_t r = 0; r < 3; ++r) rows.push_back({Method::ssl, 10, r, 1, 0.5 + 0.1 * r, image[r]});
  rows.push_back({Method::convnet, 10, 0, 1, 0.6, 0.65});
  const auto cells = summarize(rows);
  REQUIRE(cells.size() == 2);
  const double m = (0.7 + 0.8 + 0.95) / 3.0;
  const double sd = std::sqrt(((0.7 - m) * (0.7 - m) + (0.8 - m) * (0.8 - m) + (0.95 - m) * (0.95 - m)) / 2.0);
  CHECK(std::abs(cells[0].image_mean - m) < 1e-12);
  CHECK(std::abs(cells[0].image_std - sd) < 1e-12);
  CHECK_FALSE(cells[0].single_repeat);
  CHECK(cells[1].n == 1);
  CHECK(cells[1].image_std == 0.0);
  CHECK(cells[1].single_repeat);
}

TEST_CASE("experiment runs, resumes and is worker-count independent") {
  TempDir dir("exp");
  const PatchStore store = patchssl::testing::toy_store(20, 7, 8);
  auto spec = tiny_spec();
  const auto a = run_experiment(spec, store, dir.path() / "serial");
  REQUIRE(a.rows.size() == 8);
  CHECK(a.rows[0].method == Method::ssl);
  CHECK(a.rows[4].method == Method::convnet);
  CHECK(a.rows[0].seed == a.rows[4].seed);  // methods share cell seeds
  CHECK(a.rows[0].seed == cell_seed(5, 2, 0));
  CHECK(a.rows[0].seed != a.rows[1].seed);
  CHECK(std::filesystem::exists(dir.path() / "serial" / "ssl" / "n4_r1" / "report.json"));

  const auto csv = read_experiment_csv(dir.path() / "serial" / "experiment.csv");
  REQUIRE(csv.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(csv[i].image_auc == a.rows[i].image_auc);
    CHECK(csv[i].patch_auc == a.rows[i].patch_auc);
    CHECK(csv[i].seed == a.rows[i].seed);
  }
  const auto again = summarize(csv);
  REQUIRE(again.size() == a.cells.size());
  for (std::size_t i = 0; i < again.size(); ++i) {
    CHECK(std::abs(again[i].image_mean - a.cells[i].image_mean) < 1e-9);
    CHECK(std::abs(again[i].patch_std - a.cells[i].patch_std) < 1e-9);
  }
  CHECK(format_summary_table(a, 8).find("4/8") != std::string::npos);

  spec.jobs = 3;
  const auto b = run_experiment(spec, store, dir.path() / "threads");
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(b.rows[i].image_auc == a.rows[i].image_auc);
    CHECK(b.rows[i].patch_auc == a.rows[i].patch_auc);
  }
  // Finished cells are reused.
  const auto c = run_experiment(spec, store, dir.path() / "threads");
  CHECK(c.rows[3].image_auc == b.rows[3].image_auc);

  spec.grid = {9};
  CHECK_THROWS_AS(run_experiment(spec, store, dir.path() / "bad"), ArgumentError);
  spec.grid = {};
  CHECK_THROWS_AS(run_experiment(spec, store, dir.path() / "bad"), ArgumentError);
}

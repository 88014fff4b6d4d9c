// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero when any fails. Usage: acceptance [work_dir] [--keep]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "patchssl/dataset.hpp"
#include "patchssl/evaluation.hpp"
#include "patchssl/experiment.hpp"
#include "patchssl/grad_check.hpp"
#include "patchssl/image_io.hpp"
#include "patchssl/log.hpp"
#include "patchssl/losses.hpp"
#include "patchssl/overlay.hpp"
#include "patchssl/patch_store.hpp"
#include "patchssl/synth.hpp"
#include "patchssl/training.hpp"

using namespace patchssl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v, int digits = 6) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---- 1 ----
Outcome losses_oracle() {
  const auto t0 = Clock::now();
  const Tensor<double> zero({1, 2});
  const std::vector<int> y{1};
  const double sup = loss_supervised<double>(zero, y).value;
  const double real = unsupervised_real_term<double>(zero).value;
  const double fake = unsupervised_fake_term<double>(zero).value;
  Rng rng(1);
  Tensor<double> f({8, 5});
  for (auto& v : f) v = rng.uniform(-3, 3);
  const double lg = loss_feature_matching<double>(f, f).value;
  const double t = seconds_since(t0);
  const bool ok = std::abs(sup - std::log(2.0)) <= 1e-6 && std::abs(real - std::log(1.5)) <= 1e-6 &&
                  std::abs(fake - std::log(3.0)) <= 1e-6 && lg == 0.0 && t < 1.0;
  return {ok, "L_sup=" + num(sup, 9) + " real=" + num(real, 9) + " fake=" + num(fake, 9) +
                  " L_G=" + num(lg) + " in " + num(t, 3) + "s"};
}

// ---- 2 ----
Outcome gradient_check() {
  const auto t0 = Clock::now();
  const auto setup = GradCheckSetup::tiny(2024);
  bool ok = true;
  std::string detail;
  for (auto kind : {LossKind::supervised, LossKind::unsupervised, LossKind::feature_matching}) {
    const auto r = grad_check(kind, setup, 1e-5);
    ok = ok && r.fraction_below_1e4 >= 0.95 && r.max_rel_error < 1e-2;
    detail += (detail.empty() ? "" : ", ") + std::to_string(r.coordinates) + " coords: " +
              num(100.0 * r.fraction_below_1e4, 4) + "% < 1e-4, worst " + num(r.max_rel_error, 3);
  }
  const double t = seconds_since(t0);
  ok = ok && t < 30.0;
  return {ok, detail + " in " + num(t, 3) + "s"};
}

// ---- 3 ----
Outcome tiling_oracle() {
  Rng rng(3);
  std::size_t patches = 0, mismatches = 0, partition_failures = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t grid = 1 + rng.below(8);
    const std::size_t patch = 1 + rng.below(12);
    const std::size_t n = grid * patch;
    SegMask mask{"m", Tensor<std::uint8_t>({n, n})};
    const double density = rng.uniform(0.0, 0.05);
    for (auto& v : mask.mask) v = rng.bernoulli(density);
    for (std::size_t b = 0; b < rng.below(3); ++b) {  // a few small blobs
      const std::size_t cy = rng.below(n), cx = rng.below(n), r = rng.below(3);
      for (std::size_t y = cy >= r ? cy - r : 0; y < std::min(n, cy + r + 1); ++y) {
        for (std::size_t x = cx >= r ? cx - r : 0; x < std::min(n, cx + r + 1); ++x) mask.mask[y * n + x] = 1;
      }
    }
    for (std::size_t row = 0; row < grid; ++row) {
      for (std::size_t col = 0; col < grid; ++col) {
        std::size_t count = 0;
        for (std::size_t y = row * patch; y < (row + 1) * patch; ++y) {
          for (std::size_t x = col * patch; x < (col + 1) * patch; ++x) count += mask.mask[y * n + x] != 0;
        }
        const auto got = label_patch(mask, row, col, grid, patch);
        const auto want = count > 0 ? PatchLabel::diseased : PatchLabel::healthy;
        mismatches += got.label != want || got.overlap_pixels != count;
        ++patches;
      }
    }
    // Every pixel lands in exactly one block.
    RawImage img;
    img.pixels = Tensor<float>({n, n, 3});
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<float>(i);
    std::vector<float> seen;
    for (const auto& b : tile(img, grid, patch)) seen.insert(seen.end(), b.pixels.begin(), b.pixels.end());
    std::sort(seen.begin(), seen.end());
    partition_failures += !std::equal(seen.begin(), seen.end(), img.pixels.begin(), img.pixels.end());
  }
  return {mismatches == 0 && partition_failures == 0,
          std::to_string(patches) + " patches, " + std::to_string(mismatches) + " label mismatches, " +
              std::to_string(partition_failures) + " partition failures"};
}

// ---- 4 ----
double brute_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      pairs += 1.0;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  return wins / pairs;
}

Outcome auc_oracle() {
  Rng rng(4);
  std::size_t failures = 0;
  std::size_t instances = 0;
  auto check = [&](const std::vector<double>& s, const std::vector<int>& y) {
    ++instances;
    failures += roc_auc(s, y) != brute_auc(s, y);
  };
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(99);
    std::vector<double> s(n);
    std::vector<int> y(n);
    const std::size_t levels = 1 + rng.below(20);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = trial % 3 == 0 ? rng.uniform() : static_cast<double>(rng.below(levels));
      y[i] = rng.bernoulli(rng.uniform(0.1, 0.9));
    }
    // Both classes, at random positions.
    const std::size_t a = rng.below(n);
    const std::size_t b = (a + 1 + rng.below(n - 1)) % n;
    y[a] = 1;
    y[b] = 0;
    check(s, y);
  }
  // All tied and perfectly separated.
  const std::vector<int> y{0, 1, 1, 0, 1, 0, 0};
  check(std::vector<double>(7, 2.5), y);
  std::vector<double> sep(7);
  for (std::size_t i = 0; i < 7; ++i) sep[i] = y[i] ? 10.0 + static_cast<double>(i) : static_cast<double>(i);
  check(sep, y);
  const bool special = roc_auc(std::vector<double>(7, 2.5), y) == 0.5 && roc_auc(sep, y) == 1.0;
  return {failures == 0 && special,
          std::to_string(instances) + " instances, " + std::to_string(failures) + " mismatches"};
}

// ---- 5 ----
Outcome ema_closed_form() {
  ParamSet<double> p{{"w", Tensor<double>({4})}};
  for (std::size_t i = 0; i < 4; ++i) p.at("w")[i] = 0.5 - 0.75 * static_cast<double>(i);
  EmaState<double> ema{zeros_like(p), 0.999, 0};
  for (int k = 0; k < 1000; ++k) ema_update(ema, p);
  double worst = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    worst = std::max(worst, std::abs(ema.shadow.at("w")[i] - p.at("w")[i] * (1.0 - std::pow(0.999, 1000))));
  }
  return {worst <= 1e-10, "max deviation " + num(worst, 3)};
}

// ---- 6 ----
Outcome schedule() {
  const TrainConfig c;
  const bool ok = lr_at(0, c) == 3e-4 && lr_at(999, c) == 3e-4 && lr_at(1100, c) == 1.5e-4 &&
                  lr_at(1200, c) == 0.0;
  return {ok, "lr(0)=" + num(lr_at(0, c)) + " lr(999)=" + num(lr_at(999, c)) +
                  " lr(1100)=" + num(lr_at(1100, c)) + " lr(1200)=" + num(lr_at(1200, c))};
}

// ---- 7 ----
Outcome aggregation() {
  const std::vector<double> zeros(64, 0.0);
  const double s0 = aggregate_image_score(zeros);
  Rng rng(7);
  std::size_t increases = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> l(64);
    for (auto& v : l) v = rng.uniform(-6, 6);
    const double before = aggregate_image_score(l);
    l[rng.below(64)] += rng.uniform(1e-3, 2.0);
    increases += aggregate_image_score(l) > before;
  }
  return {s0 == 32.0 && increases == 100,
          "score(64 zeros)=" + num(s0) + ", " + std::to_string(increases) + "/100 strictly increasing"};
}

// ---- 8 ----
bool bit_equal(const ParamSet<float>& a, const ParamSet<float>& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, t] : a) {
    const auto it = b.find(name);
    if (it == b.end() || it->second.shape() != t.shape() ||
        std::memcmp(t.data(), it->second.data(), t.size() * sizeof(float)) != 0) {
      return false;
    }
  }
  return true;
}

Outcome checkpoint_round_trip(const fs::path& work) {
  TrainConfig c = TrainConfig::desk();
  c.latent_dim = 16;
  const Discriminator<float> disc(c.disc_arch());
  const Generator<float> gen(c.gen_arch());
  TrainState s = init_train_state(Method::ssl, c);
  Rng rng(8);
  StepBatch b;
  b.labeled = Tensor<float>({4, 3, 16, 16});
  b.unlabeled = Tensor<float>({8, 3, 16, 16});
  for (auto& v : b.labeled) v = static_cast<float>(rng.uniform(-1, 1));
  for (auto& v : b.unlabeled) v = static_cast<float>(rng.uniform(-1, 1));
  b.labels = {0, 1, 1, 0};
  b.z = gen.sample_latent(8, rng);
  for (int k = 0; k < 3; ++k) train_step_ssl(disc, gen, s, b, 3e-4, {0.5, 0.999, 1e-8}, rng);
  s.epoch = 3;
  const auto path = work / "roundtrip.ckpt";
  save_checkpoint(path, Method::ssl, c, s);
  const auto back = load_checkpoint(path);
  const auto& r = back.state;
  const bool ok = bit_equal(r.d, s.d) && bit_equal(r.ema.shadow, s.ema.shadow) &&
                  bit_equal(r.adam_d.m, s.adam_d.m) && bit_equal(r.adam_d.v, s.adam_d.v) &&
                  bit_equal(r.g.learned, s.g.learned) && bit_equal(r.g.running, s.g.running) &&
                  bit_equal(r.adam_g.m, s.adam_g.m) && bit_equal(r.adam_g.v, s.adam_g.v) &&
                  r.adam_d.step == s.adam_d.step && r.adam_g.step == s.adam_g.step &&
                  r.ema.update_count == s.ema.update_count && r.epoch == s.epoch;
  std::size_t arrays = s.d.size() * 4 + s.g.learned.size() * 3 + s.g.running.size();
  return {ok, std::to_string(arrays) + " arrays compared bitwise"};
}

// ---- 9 / 10 / 11 ----
struct Desk {
  fs::path data;
  PatchStore store;
  ExperimentSpec spec;
  ExperimentReport report;
  fs::path out;
};

std::size_t param_count(const ParamSet<float>& p) {
  std::size_t n = 0;
  for (const auto& [name, t] : p) n += t.size();
  return n;
}

Outcome desk_trend(const fs::path& work, Desk& desk) {
  const auto t0 = Clock::now();
  SynthConfig sc;  // canvas 64, 40 healthy, 20 diseased
  desk.data = work / "desk_data";
  synth_generate(sc, desk.data, 7);
  TileOptions opts;
  opts.geometry = {64, 4, 16, 16};
  opts.counts = SplitCounts{40, 10, 10};
  opts.seed = derive_seed(0, SeedStream::split);
  desk.store = build_patch_store(desk.data, opts);
  std::size_t train_dis = 0;
  for (const auto& id : desk.store.split.train) train_dis += desk.store.image(id).label;
  const std::size_t train_healthy = desk.store.split.train.size() - train_dis;

  desk.spec.grid = {4};
  desk.spec.repeats = 3;
  desk.spec.train = TrainConfig::desk();
  desk.spec.seed = 1;
  const auto d_params = Discriminator<float>(desk.spec.train.disc_arch()).init(0);
  const auto g_params = Generator<float>(desk.spec.train.gen_arch()).init(0).learned;
  const std::size_t nd = param_count(d_params), ng = param_count(g_params);

  desk.out = work / "desk_experiment";
  desk.report = run_experiment(desk.spec, desk.store, desk.out);
  double ssl = 0.0, base = 0.0;
  for (const auto& c : desk.report.cells) (c.method == Method::ssl ? ssl : base) = c.image_mean;

  bool finite = true;
  for (const auto& m : {"ssl", "convnet"}) {
    for (std::size_t r = 0; r < 3; ++r) {
      const auto rows = read_losses_csv(desk.out / m / ("n4_r" + std::to_string(r)) / "losses.csv");
      finite = finite && rows.size() == desk.spec.train.epochs;
      for (const auto& e : rows) {
        finite = finite && std::isfinite(e.l_supervised) && std::isfinite(e.l_unsupervised) &&
                 std::isfinite(e.l_g);
      }
    }
  }
  const double t = seconds_since(t0);
  const bool shape = desk.store.split.train.size() == 40 && train_healthy == 27 && train_dis == 13 &&
                     desk.store.split.val.size() == 10 && desk.store.split.test.size() == 10 &&
                     nd <= 150000 && ng <= 150000;
  const bool a = ssl >= 0.85;
  const bool b = ssl >= base - 0.02;
  std::ostringstream os;
  os << "train " << train_healthy << "/" << train_dis << ", params D " << nd << " G " << ng
     << "; SSL image AUC " << num(ssl, 4) << " (a: " << (a ? "ok" : "FAIL") << "), baseline "
     << num(base, 4) << " (b: " << (b ? "ok" : "FAIL") << "), losses finite: " << (finite ? "yes" : "NO")
     << "; " << num(t / 60.0, 3) << " min on this machine";
  return {shape && a && b && finite, os.str()};
}

Outcome overlay_check(const fs::path& work, const Desk& desk) {
  ScoreMap constant{"c", Tensor<double>({64, 64}, 0.42)};
  double worst = 0.0;
  for (double v : gaussian_blur(constant, 8.0).map) worst = std::max(worst, std::abs(v - 0.42));

  // A diseased test image, scored with the first SSL run.
  std::string id;
  for (const auto& t : desk.store.split.test) {
    if (desk.store.image(t).label == 1) {
      id = t;
      break;
    }
  }
  const auto mask = load_mask(desk.data / "masks" / (id + ".png"), 64);
  ScoreMap exact{id, Tensor<double>({64, 64})};
  for (std::size_t i = 0; i < exact.map.size(); ++i) exact.map[i] = mask.mask[i];
  const double loc = localization_auc(exact, mask);

  const auto r = overlay_image(desk.out / "ssl" / "n4_r0", desk.data, desk.store, id,
                               work / "overlays", {});
  const auto png = read_png_rgb(r.png);
  const bool dims = png.dim(0) == 64 && png.dim(1) == 64;
  return {worst <= 1e-6 && loc == 1.0 && dims,
          "constant blur deviation " + num(worst, 3) + ", localization(map==mask)=" + num(loc) +
              ", overlay " + std::to_string(png.dim(1)) + "x" + std::to_string(png.dim(0)) +
              (r.localization_auc ? ", model localization AUC " + num(*r.localization_auc, 4) : "")};
}

Outcome determinism(const fs::path& work, const Desk& desk) {
  ExperimentSpec again = desk.spec;
  again.repeats = 1;
  const auto out = work / "desk_rerun";
  const auto rerun = run_experiment(again, desk.store, out);
  bool ok = true;
  for (const auto& m : {"ssl", "convnet"}) {
    const auto a = read_file(desk.out / m / "n4_r0" / "final.ckpt");
    const auto b = read_file(out / m / "n4_r0" / "final.ckpt");
    ok = ok && !a.empty() && a == b;
  }
  const auto first = read_experiment_csv(desk.out / "experiment.csv");
  std::size_t matched = 0;
  for (const auto& r : rerun.rows) {
    for (const auto& f : first) {
      if (f.method == r.method && f.repeat == r.repeat && f.labeled_count == r.labeled_count) {
        matched += f.seed == r.seed && f.patch_auc == r.patch_auc && f.image_auc == r.image_auc;
      }
    }
  }
  // Row text as written must match too.
  std::istringstream a(read_file(desk.out / "experiment.csv")), b(read_file(out / "experiment.csv"));
  std::vector<std::string> la, lb;
  for (std::string l; std::getline(a, l);) la.push_back(l);
  for (std::string l; std::getline(b, l);) lb.push_back(l);
  std::size_t text = 0;
  for (const auto& l : lb) text += std::find(la.begin(), la.end(), l) != la.end();
  ok = ok && matched == rerun.rows.size() && text == lb.size();
  return {ok, "final checkpoints byte-identical for both methods: " + std::string(ok ? "yes" : "no") +
                  "; " + std::to_string(matched) + "/" + std::to_string(rerun.rows.size()) +
                  " experiment rows identical"};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "patchssl_acceptance";
  bool keep = false;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--keep") {
      keep = true;
    } else {
      work = argv[i];
    }
  }
  fs::remove_all(work);
  fs::create_directories(work);
  log::set_level(log::Level::warn);

  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << o.detail
              << std::endl;
    return o.pass;
  };

  report(1, "loss oracle", losses_oracle);
  report(2, "gradient check", gradient_check);
  report(3, "tiling and labeling", tiling_oracle);
  report(4, "AUC oracle", auc_oracle);
  report(5, "EMA closed form", ema_closed_form);
  report(6, "learning-rate schedule", schedule);
  report(7, "image score aggregation", aggregation);
  report(8, "checkpoint round trip", [&] { return checkpoint_round_trip(work); });

  Desk desk;
  const bool trained = report(9, "desk trend", [&] { return desk_trend(work, desk); });
  const bool have_runs = trained || fs::exists(desk.out / "experiment.csv");
  report(10, "overlay", [&]() -> Outcome {
    if (!have_runs) return {false, "desk runs unavailable"};
    return overlay_check(work, desk);
  });
  report(11, "determinism", [&]() -> Outcome {
    if (!have_runs) return {false, "desk runs unavailable"};
    return determinism(work, desk);
  });

  if (!keep) fs::remove_all(work);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}

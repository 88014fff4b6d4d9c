#include "patchssl/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "patchssl/error.hpp"
#include "patchssl/evaluation.hpp"
#include "patchssl/log.hpp"

namespace patchssl {

std::uint64_t cell_seed(std::uint64_t master, std::size_t labeled_count, std::size_t repeat) {
  return derive_seed(master, SeedStream::repeat, labeled_count * 1000 + repeat);
}

namespace {

struct Task {
  Method method;
  std::size_t count;
  std::size_t repeat;
};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

ExperimentRow run_cell(const ExperimentSpec& spec, const PatchStore& store,
                       const std::map<std::string, int>& labels, const Task& t,
                       const std::filesystem::path& out_dir) {
  ExperimentRow row;
  row.method = t.method;
  row.labeled_count = t.count;
  row.repeat = t.repeat;
  row.seed = cell_seed(spec.seed, t.count, t.repeat);

  const auto subset = sample_labeled_subset(store.split.train, labels, t.count,
                                            derive_seed(row.seed, SeedStream::subset));
  TrainConfig cfg = spec.train;
  cfg.seed = row.seed;
  const auto run_dir = out_dir / to_string(t.method) /
                       ("n" + std::to_string(t.count) + "_r" + std::to_string(t.repeat));
  const TrainRun run = train(t.method, cfg, store, subset, run_dir, {true, spec.verbose});
  for (const auto& r : run.losses) {
    if (!std::isfinite(r.l_supervised) || !std::isfinite(r.l_unsupervised) || !std::isfinite(r.l_g)) {
      throw Error("non-finite loss recorded in " + run_dir.string());
    }
  }
  const auto result = evaluate_run(run_dir, store, spec.split);
  write_report(run_dir / "report.json", result, store.geometry.patches_per_image());
  write_image_scores_csv(run_dir / "image_scores.csv", result);
  row.patch_auc = result.patch.auc;
  row.image_auc = result.image.auc;
  log::info(to_string(t.method), " n=", t.count, " repeat ", t.repeat, ": patch AUC ",
            row.patch_auc, ", image AUC ", row.image_auc);
  return row;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentSpec& spec, const PatchStore& store,
                                const std::filesystem::path& out_dir) {
  if (spec.grid.empty()) throw ArgumentError("experiment grid is empty");
  if (spec.repeats == 0) throw ArgumentError("repeats must be positive");
  if (spec.methods.empty()) throw ArgumentError("no methods selected");
  spec.train.validate();
  for (auto n : spec.grid) {
    if (n == 0 || n > store.split.train.size()) {
      throw ArgumentError("labeled count " + std::to_string(n) + " outside [1, " +
                          std::to_string(store.split.train.size()) + "]");
    }
  }
  std::map<std::string, int> labels;
  for (const auto& e : store.images) labels[e.id] = e.label;

  std::vector<Task> tasks;
  for (auto m : spec.methods) {
    for (auto n : spec.grid) {
      for (std::size_t r = 0; r < spec.repeats; ++r) tasks.push_back({m, n, r});
    }
  }
  std::filesystem::create_directories(out_dir);
  write_json_file(out_dir / "experiment.json",
                  {{"grid", spec.grid},
                   {"repeats", spec.repeats},
                   {"methods", [&] {
                      std::vector<std::string> v;
                      for (auto m : spec.methods) v.push_back(to_string(m));
                      return v;
                    }()},
                   {"seed", spec.seed},
                   {"split", spec.split},
                   {"train", spec.train}});

  // Cells are independent and individually seeded, so any worker count gives
  // the same rows.
  std::vector<ExperimentRow> rows(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        rows[i] = run_cell(spec, store, labels, tasks[i], out_dir);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t jobs = std::clamp<std::size_t>(spec.jobs, 1, tasks.size());
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  ExperimentReport report;
  report.rows = std::move(rows);
  report.cells = summarize(report.rows);
  write_experiment_csv(out_dir / "experiment.csv", report.rows);
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : report.cells) {
    cells.push_back({{"method", to_string(c.method)},
                     {"labeled_count", c.labeled_count},
                     {"repeats", c.n},
                     {"patch_auc_mean", c.patch_mean},
                     {"patch_auc_std", c.patch_std},
                     {"image_auc_mean", c.image_mean},
                     {"image_auc_std", c.image_std},
                     {"single_repeat", c.single_repeat}});
  }
  write_json_file(out_dir / "summary.json", {{"cells", cells}});
  return report;
}

std::vector<CellSummary> summarize(const std::vector<ExperimentRow>& rows) {
  std::vector<CellSummary> cells;
  std::map<std::pair<int, std::size_t>, std::vector<const ExperimentRow*>> groups;
  std::vector<std::pair<int, std::size_t>> order;
  for (const auto& r : rows) {
    const auto key = std::make_pair(static_cast<int>(r.method), r.labeled_count);
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(&r);
  }
  auto mean_std = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    if (v.size() < 2) return std::make_pair(m, 0.0);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::make_pair(m, std::sqrt(ss / static_cast<double>(v.size() - 1)));
  };
  for (const auto& key : order) {
    const auto& g = groups[key];
    std::vector<double> p, im;
    for (const auto* r : g) {
      p.push_back(r->patch_auc);
      im.push_back(r->image_auc);
    }
    CellSummary c;
    c.method = static_cast<Method>(key.first);
    c.labeled_count = key.second;
    c.n = g.size();
    std::tie(c.patch_mean, c.patch_std) = mean_std(p);
    std::tie(c.image_mean, c.image_std) = mean_std(im);
    c.single_repeat = c.n == 1;
    cells.push_back(c);
  }
  return cells;
}

void write_experiment_csv(const std::filesystem::path& path, const std::vector<ExperimentRow>& rows) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << "method,labeled_count,repeat,seed,patch_auc,image_auc\n";
    for (const auto& r : rows) {
      out << to_string(r.method) << ',' << r.labeled_count << ',' << r.repeat << ',' << r.seed
          << ',' << fmt(r.patch_auc) << ',' << fmt(r.image_auc) << '\n';
    }
  }
  std::filesystem::rename(tmp, path);
}

std::vector<ExperimentRow> read_experiment_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<ExperimentRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string method;
    ExperimentRow r;
    char c1, c2, c3, c4;
    if (!std::getline(is, method, ',') ||
        !(is >> r.labeled_count >> c1 >> r.repeat >> c2 >> r.seed >> c3 >> r.patch_auc >> c4 >>
          r.image_auc)) {
      throw FormatError("malformed row in " + path.string() + ": " + line);
    }
    r.method = parse_method(method);
    rows.push_back(r);
  }
  return rows;
}

std::string format_summary_table(const ExperimentReport& report, std::size_t train_images) {
  std::vector<std::size_t> counts;
  std::vector<Method> methods;
  for (const auto& c : report.cells) {
    if (std::find(counts.begin(), counts.end(), c.labeled_count) == counts.end()) {
      counts.push_back(c.labeled_count);
    }
    if (std::find(methods.begin(), methods.end(), c.method) == methods.end()) {
      methods.push_back(c.method);
    }
  }
  std::ostringstream os;
  char buf[64];
  for (const char* level : {"image", "patch"}) {
    os << level << "-level AUC (%)\n";
    std::snprintf(buf, sizeof buf, "%-8s", "method");
    os << buf;
    for (auto n : counts) {
      std::snprintf(buf, sizeof buf, " %14s", (std::to_string(n) + "/" + std::to_string(train_images)).c_str());
      os << buf;
    }
    os << '\n';
    for (auto m : methods) {
      std::snprintf(buf, sizeof buf, "%-8s", to_string(m).c_str());
      os << buf;
      for (auto n : counts) {
        const auto it = std::find_if(report.cells.begin(), report.cells.end(), [&](const auto& c) {
          return c.method == m && c.labeled_count == n;
        });
        const bool image = std::string(level) == "image";
        const double mean = image ? it->image_mean : it->patch_mean;
        const double sd = image ? it->image_std : it->patch_std;
        std::snprintf(buf, sizeof buf, " %6.1f +- %4.1f%s", 100.0 * mean, 100.0 * sd,
                      it->single_repeat ? "*" : "");
        os << buf;
      }
      os << '\n';
    }
  }
  if (std::any_of(report.cells.begin(), report.cells.end(), [](const auto& c) { return c.single_repeat; })) {
    os << "* single repeat; std reported as 0\n";
  }
  return os.str();
}

}  // namespace patchssl

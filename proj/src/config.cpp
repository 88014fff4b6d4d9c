#include "patchssl/config.hpp"

#include <cstdlib>
#include <set>

#include "patchssl/error.hpp"

namespace patchssl {

CliConfig CliConfig::preset_config(const std::string& name) {
  CliConfig c;
  c.preset = name;
  if (name == "paper") {
    c.geometry = {1024, 8, 128, 32};
    c.train = TrainConfig::paper();
    c.synth.canvas = 1024;
    c.synth.healthy = 168;
    c.synth.diseased = 81;
    return c;
  }
  if (name == "desk") {
    c.geometry = {64, 4, 16, 16};
    c.train = TrainConfig::desk();
    c.grid = {4};
    c.repeats = 3;
    return c;
  }
  throw ArgumentError("unknown preset '" + name + "' (expected paper or desk)");
}

ExperimentSpec CliConfig::experiment_spec() const {
  ExperimentSpec s;
  s.grid = grid;
  s.repeats = repeats;
  s.methods = methods;
  s.train = train;
  s.seed = seed;
  s.jobs = jobs;
  s.split = eval_split;
  return s;
}

namespace {

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                const std::string& where) {
  if (!j.is_object()) throw FormatError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw FormatError("unknown key '" + k + "' in " + where);
  }
}

template <typename V>
void read_opt(const nlohmann::json& j, const char* key, V& out) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(out);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

void to_json(nlohmann::json& j, const CliConfig& c) {
  std::vector<std::string> methods;
  for (auto m : c.methods) methods.push_back(to_string(m));
  nlohmann::json split = nullptr;
  if (c.split) split = {c.split->train, c.split->val, c.split->test};
  j = {{"preset", c.preset},
       {"seed", c.seed},
       {"run_root", c.run_root.string()},
       {"dataset",
        {{"canvas", c.geometry.canvas},
         {"grid", c.geometry.grid},
         {"patch", c.geometry.patch},
         {"downsample", c.geometry.downsample},
         {"split", split},
         {"stratified", c.stratified}}},
       {"synth", c.synth},
       {"train", c.train},
       {"experiment",
        {{"grid", c.grid},
         {"repeats", c.repeats},
         {"methods", methods},
         {"jobs", c.jobs},
         {"split", c.eval_split}}},
       {"overlay",
        {{"sigma", c.overlay.sigma ? nlohmann::json(*c.overlay.sigma) : nlohmann::json(nullptr)},
         {"alpha", c.overlay.alpha},
         {"localize_blurred", c.overlay.localize_blurred}}}};
}

void merge_json(const nlohmann::json& j, CliConfig& c) {
  check_keys(j, {"preset", "seed", "run_root", "dataset", "synth", "train", "experiment", "overlay"},
             "config");
  read_opt(j, "preset", c.preset);
  read_opt(j, "seed", c.seed);
  if (j.contains("run_root")) c.run_root = j.at("run_root").get<std::string>();
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    check_keys(d, {"canvas", "grid", "patch", "downsample", "split", "stratified"}, "dataset");
    read_opt(d, "canvas", c.geometry.canvas);
    read_opt(d, "grid", c.geometry.grid);
    read_opt(d, "patch", c.geometry.patch);
    read_opt(d, "downsample", c.geometry.downsample);
    read_opt(d, "stratified", c.stratified);
    if (d.contains("split")) {
      const auto& s = d.at("split");
      if (s.is_null()) {
        c.split.reset();
      } else {
        if (!s.is_array() || s.size() != 3) throw FormatError("dataset.split must be [train, val, test]");
        c.split = SplitCounts{s[0].get<std::size_t>(), s[1].get<std::size_t>(), s[2].get<std::size_t>()};
      }
    }
  }
  if (j.contains("synth")) {
    nlohmann::json merged = c.synth;
    check_keys(j.at("synth"), [&] {
      std::set<std::string> keys;
      for (const auto& [k, v] : merged.items()) keys.insert(k);
      return keys;
    }(), "synth");
    merged.update(j.at("synth"));
    c.synth = merged.get<SynthConfig>();
  }
  if (j.contains("train")) {
    // Partial discriminator/generator objects override only the keys they name.
    nlohmann::json merged = c.train;
    const auto& t = j.at("train");
    if (!t.is_object()) throw FormatError("train must be a JSON object");
    for (const auto& [k, v] : t.items()) {
      if ((k == "discriminator" || k == "generator") && v.is_object() && merged.contains(k)) {
        merged[k].update(v);
      } else {
        merged[k] = v;
      }
    }
    c.train = merged.get<TrainConfig>();
  }
  if (j.contains("experiment")) {
    const auto& e = j.at("experiment");
    check_keys(e, {"grid", "repeats", "methods", "jobs", "split"}, "experiment");
    read_opt(e, "grid", c.grid);
    read_opt(e, "repeats", c.repeats);
    read_opt(e, "jobs", c.jobs);
    read_opt(e, "split", c.eval_split);
    if (e.contains("methods")) {
      c.methods.clear();
      for (const auto& m : e.at("methods")) c.methods.push_back(parse_method(m.get<std::string>()));
    }
  }
  if (j.contains("overlay")) {
    const auto& o = j.at("overlay");
    check_keys(o, {"sigma", "alpha", "localize_blurred"}, "overlay");
    if (o.contains("sigma")) {
      if (o.at("sigma").is_null()) {
        c.overlay.sigma.reset();
      } else {
        c.overlay.sigma = o.at("sigma").get<double>();
      }
    }
    read_opt(o, "alpha", c.overlay.alpha);
    read_opt(o, "localize_blurred", c.overlay.localize_blurred);
  }
}

CliConfig load_cli_config(const std::optional<std::filesystem::path>& file,
                          const std::optional<std::string>& preset) {
  nlohmann::json j = nlohmann::json::object();
  if (file) j = read_json_file(*file);
  if (!j.is_object()) throw FormatError("config file must hold a JSON object");
  std::string name = "paper";
  if (j.contains("preset")) name = j.at("preset").get<std::string>();
  if (preset) name = *preset;
  CliConfig c = CliConfig::preset_config(name);
  j.erase("preset");
  try {
    merge_json(j, c);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad config value: ") + e.what());
  }
  return c;
}

std::filesystem::path default_run_root(const CliConfig& c) {
  if (const char* env = std::getenv("PATCHSSL_RUN_ROOT"); env && *env) return env;
  return c.run_root;
}

}  // namespace patchssl

#include "patchssl/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include "patchssl/error.hpp"
#include "patchssl/log.hpp"
#include "patchssl/tensor_file.hpp"

namespace patchssl {

std::string to_string(Method m) { return m == Method::ssl ? "ssl" : "convnet"; }

Method parse_method(const std::string& text) {
  if (text == "ssl") return Method::ssl;
  if (text == "convnet") return Method::convnet;
  throw ArgumentError("unknown method '" + text + "' (expected ssl or convnet)");
}

// ---- configuration ----

TrainConfig TrainConfig::paper() { return TrainConfig{}; }

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.epochs = 200;
  c.batch_size = 32;
  c.lr_decay_start_epoch = 160;
  c.checkpoint_every = 50;
  c.disc = DiscriminatorArch::desk(16);
  c.gen = GeneratorArch::desk(16);
  return c;
}

DiscriminatorArch TrainConfig::disc_arch() const {
  DiscriminatorArch a = disc;
  a.lrelu_slope = lrelu_slope;
  return a;
}

GeneratorArch TrainConfig::gen_arch() const {
  GeneratorArch a = gen;
  a.latent_dim = latent_dim;
  return a;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ArgumentError("train config: " + what); };
  if (epochs == 0) fail("epochs must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (lr_decay_start_epoch > epochs) fail("lr_decay_start_epoch exceeds epochs");
  if (!(adam_alpha > 0.0)) fail("adam_alpha must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) fail("adam_beta1 must be in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) fail("adam_beta2 must be in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) fail("ema_decay must be in [0, 1)");
  if (!(weight_init_sigma > 0.0)) fail("weight_init_sigma must be positive");
  if (!(lrelu_slope >= 0.0)) fail("lrelu_slope must be non-negative");
  if (latent_dim == 0) fail("latent_dim must be positive");
  if (checkpoint_every == 0) fail("checkpoint_every must be positive");
  if (gen.output_size != disc.input_size || gen.out_channels != disc.in_channels) {
    fail("generator output does not match the discriminator input");
  }
  // Constructing the networks checks the remaining geometry.
  Discriminator<float> d(disc_arch());
  Generator<float> g(gen_arch());
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
  if (j.contains(key)) {
    try {
      j.at(key).get_to(out);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("bad value for '") + key + "': " + e.what());
    }
  }
}

}  // namespace

void to_json(nlohmann::json& j, const DiscriminatorArch& a) {
  j = {{"input_size", a.input_size},
       {"in_channels", a.in_channels},
       {"num_classes", a.num_classes},
       {"block_widths", a.block_widths},
       {"convs_per_block", a.convs_per_block},
       {"reduce_layers", a.reduce_layers},
       {"nin_layers", a.nin_layers},
       {"input_dropout", a.input_dropout},
       {"block_dropout", a.block_dropout},
       {"feature_tap", a.feature_tap == FeatureTap::pooled ? "pooled" : "spatial"}};
}

void from_json(const nlohmann::json& j, DiscriminatorArch& a) {
  check_keys(j,
             {"input_size", "in_channels", "num_classes", "block_widths", "convs_per_block",
              "reduce_layers", "nin_layers", "input_dropout", "block_dropout", "feature_tap"},
             "discriminator");
  read_opt(j, "input_size", a.input_size);
  read_opt(j, "in_channels", a.in_channels);
  read_opt(j, "num_classes", a.num_classes);
  read_opt(j, "block_widths", a.block_widths);
  read_opt(j, "convs_per_block", a.convs_per_block);
  read_opt(j, "reduce_layers", a.reduce_layers);
  read_opt(j, "nin_layers", a.nin_layers);
  read_opt(j, "input_dropout", a.input_dropout);
  read_opt(j, "block_dropout", a.block_dropout);
  if (j.contains("feature_tap")) {
    const auto tap = j.at("feature_tap").get<std::string>();
    if (tap != "pooled" && tap != "spatial") throw FormatError("feature_tap must be pooled or spatial");
    a.feature_tap = tap == "pooled" ? FeatureTap::pooled : FeatureTap::spatial;
  }
}

void to_json(nlohmann::json& j, const GeneratorArch& a) {
  j = {{"output_size", a.output_size},
       {"out_channels", a.out_channels},
       {"channels", a.channels},
       {"kernel", a.kernel}};
}

void from_json(const nlohmann::json& j, GeneratorArch& a) {
  check_keys(j, {"output_size", "out_channels", "channels", "kernel"}, "generator");
  read_opt(j, "output_size", a.output_size);
  read_opt(j, "out_channels", a.out_channels);
  read_opt(j, "channels", a.channels);
  read_opt(j, "kernel", a.kernel);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"lrelu_slope", c.lrelu_slope},
       {"ema_decay", c.ema_decay},
       {"adam_alpha", c.adam_alpha},
       {"adam_beta1", c.adam_beta1},
       {"adam_beta2", c.adam_beta2},
       {"adam_eps", c.adam_eps},
       {"lr_decay_start_epoch", c.lr_decay_start_epoch},
       {"weight_init_sigma", c.weight_init_sigma},
       {"latent_dim", c.latent_dim},
       {"augment_flip", c.augment_flip},
       {"augment_translate", c.augment_translate},
       {"translate_pixels", c.translate_pixels},
       {"class_balanced", c.class_balanced},
       {"checkpoint_every", c.checkpoint_every},
       {"seed", c.seed},
       {"discriminator", c.disc},
       {"generator", c.gen}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  check_keys(j,
             {"epochs", "batch_size", "lrelu_slope", "ema_decay", "adam_alpha", "adam_beta1",
              "adam_beta2", "adam_eps", "lr_decay_start_epoch", "weight_init_sigma", "latent_dim",
              "augment_flip", "augment_translate", "translate_pixels", "class_balanced",
              "checkpoint_every", "seed", "discriminator", "generator"},
             "train config");
  read_opt(j, "epochs", c.epochs);
  read_opt(j, "batch_size", c.batch_size);
  read_opt(j, "lrelu_slope", c.lrelu_slope);
  read_opt(j, "ema_decay", c.ema_decay);
  read_opt(j, "adam_alpha", c.adam_alpha);
  read_opt(j, "adam_beta1", c.adam_beta1);
  read_opt(j, "adam_beta2", c.adam_beta2);
  read_opt(j, "adam_eps", c.adam_eps);
  read_opt(j, "lr_decay_start_epoch", c.lr_decay_start_epoch);
  read_opt(j, "weight_init_sigma", c.weight_init_sigma);
  read_opt(j, "latent_dim", c.latent_dim);
  read_opt(j, "augment_flip", c.augment_flip);
  read_opt(j, "augment_translate", c.augment_translate);
  read_opt(j, "translate_pixels", c.translate_pixels);
  read_opt(j, "class_balanced", c.class_balanced);
  read_opt(j, "checkpoint_every", c.checkpoint_every);
  read_opt(j, "seed", c.seed);
  if (j.contains("discriminator")) from_json(j.at("discriminator"), c.disc);
  if (j.contains("generator")) from_json(j.at("generator"), c.gen);
}

double lr_at(std::size_t epoch, const TrainConfig& config) {
  if (epoch > config.epochs) {
    throw ArgumentError("epoch " + std::to_string(epoch) + " outside [0, " +
                        std::to_string(config.epochs) + "]");
  }
  if (epoch < config.lr_decay_start_epoch) return config.adam_alpha;
  if (config.epochs == config.lr_decay_start_epoch) return 0.0;
  const double frac = static_cast<double>(config.epochs - epoch) /
                      static_cast<double>(config.epochs - config.lr_decay_start_epoch);
  return config.adam_alpha * frac;
}

// ---- augmentation ----

Tensor<float> augment(const Tensor<float>& batch, Rng& rng, const AugmentConfig& config) {
  if (batch.rank() != 4) throw ShapeError("augment expects [B, C, H, W]");
  const std::size_t b = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  const std::size_t pad = config.translate ? config.pad : 0;
  if (pad >= h || pad >= w) throw GeometryError("augmentation padding too large for the patch");
  Tensor<float> out(batch.shape());
  auto reflect = [](std::ptrdiff_t i, std::size_t n) {
    const auto nn = static_cast<std::ptrdiff_t>(n);
    if (i < 0) i = -i;
    if (i >= nn) i = 2 * nn - 2 - i;
    return static_cast<std::size_t>(i);
  };
  const std::size_t span = 2 * config.pad + 1;
  for (std::size_t s = 0; s < b; ++s) {
    const std::size_t oy = rng.below(span);
    const std::size_t ox = rng.below(span);
    const bool fh = rng.bernoulli(0.5);
    const bool fv = rng.bernoulli(0.5);
    const auto dy = config.translate ? static_cast<std::ptrdiff_t>(oy) - static_cast<std::ptrdiff_t>(config.pad) : 0;
    const auto dx = config.translate ? static_cast<std::ptrdiff_t>(ox) - static_cast<std::ptrdiff_t>(config.pad) : 0;
    const bool flip_h = config.flip && fh;
    const bool flip_v = config.flip && fv;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const float* src = batch.data() + (s * c + ch) * h * w;
      float* dst = out.data() + (s * c + ch) * h * w;
      for (std::size_t y = 0; y < h; ++y) {
        const std::size_t yy = flip_v ? h - 1 - y : y;
        const std::size_t sy = reflect(static_cast<std::ptrdiff_t>(yy) + dy, h);
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t xx = flip_h ? w - 1 - x : x;
          dst[y * w + x] = src[sy * w + reflect(static_cast<std::ptrdiff_t>(xx) + dx, w)];
        }
      }
    }
  }
  return out;
}

// ---- EMA and Adam ----

template <typename T>
void ema_update(EmaState<T>& ema, const ParamSet<T>& params) {
  if (ema.shadow.size() != params.size()) throw ShapeError("EMA shadow does not mirror params");
  const double d = ema.decay;
  for (const auto& [name, p] : params) {
    auto it = ema.shadow.find(name);
    if (it == ema.shadow.end()) throw ShapeError("EMA shadow lacks " + name);
    require_same_shape(it->second.shape(), p.shape(), "EMA " + name);
    auto& s = it->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      s[i] = static_cast<T>(d * static_cast<double>(s[i]) + (1.0 - d) * static_cast<double>(p[i]));
    }
  }
  ++ema.update_count;
}

template <typename T>
AdamState<T> adam_init(const ParamSet<T>& params) {
  return {zeros_like(params), zeros_like(params), 0};
}

template <typename T>
void adam_update(ParamSet<T>& params, const ParamSet<T>& grads, AdamState<T>& state, double lr,
                 const AdamConfig& config) {
  ++state.step;
  const double b1 = config.beta1;
  const double b2 = config.beta2;
  const auto t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(b1, t);
  const double c2 = 1.0 - std::pow(b2, t);
  for (auto& [name, p] : params) {
    const auto g = grads.find(name);
    if (g == grads.end()) continue;
    require_same_shape(g->second.shape(), p.shape(), "Adam gradient " + name);
    auto& m = state.m.at(name);
    auto& v = state.v.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g->second[i];
      const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
      const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double step = lr * (mi / c1) / (std::sqrt(vi / c2) + config.eps);
      p[i] = static_cast<T>(static_cast<double>(p[i]) - step);
    }
  }
}

template void ema_update<float>(EmaState<float>&, const ParamSet<float>&);
template void ema_update<double>(EmaState<double>&, const ParamSet<double>&);
template AdamState<float> adam_init<float>(const ParamSet<float>&);
template AdamState<double> adam_init<double>(const ParamSet<double>&);
template void adam_update<float>(ParamSet<float>&, const ParamSet<float>&, AdamState<float>&,
                                 double, const AdamConfig&);
template void adam_update<double>(ParamSet<double>&, const ParamSet<double>&, AdamState<double>&,
                                  double, const AdamConfig&);

// ---- steps ----

TrainState init_train_state(Method method, const TrainConfig& config) {
  TrainState s;
  const Discriminator<float> disc(config.disc_arch());
  s.d = disc.init(derive_seed(config.seed, SeedStream::init_discriminator),
                  config.weight_init_sigma);
  s.adam_d = adam_init(s.d);
  // The shadow starts at the initial parameters.
  s.ema = {s.d, config.ema_decay, 0};
  if (method == Method::ssl) {
    const Generator<float> gen(config.gen_arch());
    s.g = gen.init(derive_seed(config.seed, SeedStream::init_generator), config.weight_init_sigma);
    s.adam_g = adam_init(s.g.learned);
  }
  return s;
}

LossBundle train_step_ssl(const Discriminator<float>& disc, const Generator<float>& gen,
                          TrainState& state, const StepBatch& batch, double lr,
                          const AdamConfig& adam, Rng& rng) {
  ParamSet<float> grads_d = zeros_like(state.d);
  double l_sup = 0.0;
  if (batch.labeled.rank() == 4 && batch.labeled.dim(0) > 0) {
    DiscriminatorTape<float> tape;
    const auto out = disc.forward(state.d, batch.labeled, Mode::train, &rng, tape);
    const auto sup = loss_supervised<float>(out.logits, batch.labels);
    disc.backward(state.d, tape, &sup.grad, nullptr, &grads_d);
    l_sup = sup.value;
  }
  DiscriminatorTape<float> tape_real;
  const auto out_real = disc.forward(state.d, batch.unlabeled, Mode::train, &rng, tape_real);
  const auto real_term = unsupervised_real_term<float>(out_real.logits);
  disc.backward(state.d, tape_real, &real_term.grad, nullptr, &grads_d);

  // The generator batch serves both updates; G's parameters do not change in between.
  nn::Sequential<float>::Tape gen_tape;
  const Tensor<float> fake = gen.forward(state.g, batch.z, Mode::train, gen_tape);
  DiscriminatorTape<float> tape_fake;
  const auto out_fake = disc.forward(state.d, fake, Mode::train, &rng, tape_fake);
  const auto fake_term = unsupervised_fake_term<float>(out_fake.logits);
  disc.backward(state.d, tape_fake, &fake_term.grad, nullptr, &grads_d);

  adam_update(state.d, grads_d, state.adam_d, lr, adam);
  ema_update(state.ema, state.d);

  const auto feat_real = disc.forward(state.d, batch.unlabeled, Mode::train, &rng).features;
  DiscriminatorTape<float> tape_g;
  const auto out_g = disc.forward(state.d, fake, Mode::train, &rng, tape_g);
  const auto fm = loss_feature_matching<float>(feat_real, out_g.features);
  const Tensor<float> dfake = disc.backward(state.d, tape_g, nullptr, &fm.grad, nullptr);
  ParamSet<float> grads_g = zeros_like(state.g.learned);
  gen.backward(state.g, gen_tape, dfake, &grads_g);
  adam_update(state.g.learned, grads_g, state.adam_g, lr, adam);

  return make_loss_bundle(l_sup,
                          static_cast<double>(real_term.value) + static_cast<double>(fake_term.value),
                          fm.value);
}

LossBundle train_step_baseline(const Discriminator<float>& disc, TrainState& state,
                               const StepBatch& batch, double lr, const AdamConfig& adam,
                               Rng& rng) {
  if (batch.labeled.rank() != 4 || batch.labeled.dim(0) == 0) {
    throw ArgumentError("the supervised baseline needs labeled patches");
  }
  ParamSet<float> grads = zeros_like(state.d);
  DiscriminatorTape<float> tape;
  const auto out = disc.forward(state.d, batch.labeled, Mode::train, &rng, tape);
  const auto sup = loss_supervised<float>(out.logits, batch.labels);
  disc.backward(state.d, tape, &sup.grad, nullptr, &grads);
  adam_update(state.d, grads, state.adam_d, lr, adam);
  ema_update(state.ema, state.d);
  return make_loss_bundle(sup.value, 0.0, 0.0);
}

// ---- checkpoints ----

namespace {

void put(ParamSet<float>& out, const std::string& prefix, const ParamSet<float>& set) {
  for (const auto& [name, t] : set) out.emplace(prefix + name, t);
}

ParamSet<float> take(const ParamSet<float>& all, const std::string& prefix) {
  ParamSet<float> out;
  for (const auto& [name, t] : all) {
    if (name.starts_with(prefix)) out.emplace(name.substr(prefix.size()), t);
  }
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, Method method, const TrainConfig& config,
                     const TrainState& state) {
  ParamSet<float> all;
  put(all, "d/", state.d);
  put(all, "ema/", state.ema.shadow);
  put(all, "adam_d/m/", state.adam_d.m);
  put(all, "adam_d/v/", state.adam_d.v);
  nlohmann::json meta = {{"format", "patchssl-checkpoint"},
                         {"version", 1},
                         {"method", to_string(method)},
                         {"epoch", state.epoch},
                         {"adam_d_step", state.adam_d.step},
                         {"ema_decay", state.ema.decay},
                         {"ema_updates", state.ema.update_count},
                         {"config", config}};
  if (method == Method::ssl) {
    put(all, "g/", state.g.learned);
    put(all, "g_running/", state.g.running);
    put(all, "adam_g/m/", state.adam_g.m);
    put(all, "adam_g/v/", state.adam_g.v);
    meta["adam_g_step"] = state.adam_g.step;
  }
  save_tensor_file(path, all, meta);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const TensorFile file = load_tensor_file(path);
  Checkpoint c;
  try {
    const auto& meta = file.meta;
    if (meta.value("format", "") != "patchssl-checkpoint") {
      throw FormatError(path.string() + " is not a checkpoint");
    }
    c.method = parse_method(meta.at("method").get<std::string>());
    c.config = meta.at("config").get<TrainConfig>();
    c.state.epoch = meta.at("epoch").get<std::size_t>();
    c.state.d = take(file.tensors, "d/");
    c.state.ema = {take(file.tensors, "ema/"), meta.at("ema_decay").get<double>(),
                   meta.at("ema_updates").get<std::uint64_t>()};
    c.state.adam_d = {take(file.tensors, "adam_d/m/"), take(file.tensors, "adam_d/v/"),
                      meta.at("adam_d_step").get<std::uint64_t>()};
    if (c.method == Method::ssl) {
      c.state.g = {take(file.tensors, "g/"), take(file.tensors, "g_running/")};
      c.state.adam_g = {take(file.tensors, "adam_g/m/"), take(file.tensors, "adam_g/v/"),
                        meta.at("adam_g_step").get<std::uint64_t>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed checkpoint metadata in " + path.string() + ": " + e.what());
  }
  if (c.state.d.empty() || c.state.ema.shadow.size() != c.state.d.size()) {
    throw FormatError("checkpoint " + path.string() + " lacks discriminator or EMA tensors");
  }
  return c;
}

// ---- run loop ----

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_losses_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& rows) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << "epoch,l_sup,l_unsup,l_g,lr\n";
    for (const auto& r : rows) {
      out << r.epoch << ',' << fmt(r.l_supervised) << ',' << fmt(r.l_unsupervised) << ','
          << fmt(r.l_g) << ',' << fmt(r.lr) << '\n';
    }
  }
  std::filesystem::rename(tmp, path);
}

// Draws labeled patch indices: half diseased, half healthy when both exist.
class LabeledSampler {
 public:
  LabeledSampler(const PatchStore& store, const std::vector<std::size_t>& indices, bool balanced)
      : balanced_(balanced) {
    for (auto i : indices) {
      pools_[store.records[i].label == PatchLabel::diseased ? 1 : 0].push_back(i);
    }
  }

  bool empty() const { return pools_[0].empty() && pools_[1].empty(); }
  std::size_t pool_size(int c) const { return pools_[c].size(); }

  void draw(std::size_t batch, Rng& rng, std::vector<std::size_t>& out,
            std::vector<int>& labels) const {
    out.clear();
    labels.clear();
    if (empty()) return;
    if (balanced_ && !pools_[0].empty() && !pools_[1].empty()) {
      const std::size_t n_dis = batch / 2;
      draw_from(1, n_dis, rng, out, labels);
      draw_from(0, batch - n_dis, rng, out, labels);
      return;
    }
    if (!balanced_ && !pools_[0].empty() && !pools_[1].empty()) {
      std::vector<std::size_t> all = pools_[0];
      all.insert(all.end(), pools_[1].begin(), pools_[1].end());
      pick(all, batch, rng, out);
      for (auto i : out) labels.push_back(std::binary_search(pools_[1].begin(), pools_[1].end(), i));
      return;
    }
    draw_from(pools_[0].empty() ? 1 : 0, batch, rng, out, labels);
  }

 private:
  // Without replacement when the pool is large enough, otherwise with.
  static void pick(const std::vector<std::size_t>& pool, std::size_t n, Rng& rng,
                   std::vector<std::size_t>& out) {
    if (pool.size() >= n) {
      std::vector<std::size_t> tmp = pool;
      for (std::size_t k = 0; k < n; ++k) {
        std::swap(tmp[k], tmp[k + rng.below(tmp.size() - k)]);
        out.push_back(tmp[k]);
      }
    } else {
      for (std::size_t k = 0; k < n; ++k) out.push_back(pool[rng.below(pool.size())]);
    }
  }

  void draw_from(int c, std::size_t n, Rng& rng, std::vector<std::size_t>& out,
                 std::vector<int>& labels) const {
    pick(pools_[c], n, rng, out);
    labels.resize(out.size(), c);
  }

  bool balanced_;
  std::vector<std::size_t> pools_[2];
};

std::optional<std::pair<std::size_t, std::filesystem::path>> latest_checkpoint(
    const std::filesystem::path& dir) {
  std::optional<std::pair<std::size_t, std::filesystem::path>> best;
  if (!std::filesystem::is_directory(dir)) return best;
  const std::regex pattern("epoch_([0-9]+)\\.ckpt");
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (std::regex_match(name, m, pattern)) {
      const std::size_t n = std::stoul(m[1].str());
      if (!best || n > best->first) best = {n, e.path()};
    }
  }
  return best;
}

}  // namespace

std::vector<EpochRecord> read_losses_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<EpochRecord> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    EpochRecord r;
    char comma;
    std::istringstream is(line);
    if (!(is >> r.epoch >> comma >> r.l_supervised >> comma >> r.l_unsupervised >> comma >> r.l_g >>
          comma >> r.lr)) {
      throw FormatError("malformed row in " + path.string() + ": " + line);
    }
    rows.push_back(r);
  }
  return rows;
}

TrainRun train(Method method, const TrainConfig& config, const PatchStore& store,
               const LabeledSubset& subset, const std::filesystem::path& run_dir,
               const TrainOptions& options) {
  config.validate();
  if (store.geometry.downsample != config.disc.input_size) {
    throw GeometryError("patches are " + std::to_string(store.geometry.downsample) +
                        " px but the discriminator expects " +
                        std::to_string(config.disc.input_size));
  }
  const Discriminator<float> disc(config.disc_arch());
  const Generator<float> gen(config.gen_arch());
  const AdamConfig adam{config.adam_beta1, config.adam_beta2, config.adam_eps};
  const AugmentConfig aug{config.augment_flip, config.augment_translate, config.translate_pixels};

  std::vector<std::string> train_ids = subset.labeled;
  train_ids.insert(train_ids.end(), subset.unlabeled.begin(), subset.unlabeled.end());
  const auto pool = store.patch_indices(train_ids);
  const auto labeled_idx = store.patch_indices(subset.labeled);
  const LabeledSampler sampler(store, labeled_idx, config.class_balanced);
  const std::size_t batch = config.batch_size;
  if (pool.empty()) throw ArgumentError("no training patches");
  const std::size_t steps = std::max<std::size_t>(1, pool.size() / batch);

  TrainRun run;
  run.run_dir = run_dir;
  run.method = method;
  run.config = config;
  run.low_data = sampler.pool_size(0) < batch / 2 || sampler.pool_size(1) < batch / 2;
  if (method == Method::convnet && sampler.empty()) {
    throw ArgumentError("the supervised baseline needs labeled patches");
  }
  if (sampler.empty()) log::warn("no labeled patches; discriminator trains on the unsupervised loss only");

  const nlohmann::json snapshot = {{"method", to_string(method)},
                                   {"train", config},
                                   {"subset", subset},
                                   {"geometry",
                                    {{"canvas", store.geometry.canvas},
                                     {"grid", store.geometry.grid},
                                     {"patch", store.geometry.patch},
                                     {"downsample", store.geometry.downsample}}}};
  const auto ckpt_dir = run_dir / "checkpoints";
  const auto csv = run_dir / "losses.csv";
  bool fresh = true;
  if (std::filesystem::exists(run_dir) && !std::filesystem::is_empty(run_dir)) {
    if (!options.resume) {
      throw ArgumentError("run directory " + run_dir.string() +
                          " is not empty; resume it or choose a new directory");
    }
    const auto previous = read_json_file(run_dir / "config.json");
    if (previous != snapshot) {
      throw ArgumentError("run directory " + run_dir.string() + " was created with another config");
    }
    fresh = false;
  }
  std::filesystem::create_directories(ckpt_dir);

  if (!fresh && std::filesystem::exists(run_dir / "final.ckpt")) {
    const auto done = load_checkpoint(run_dir / "final.ckpt");
    run.state = done.state;
    run.losses = read_losses_csv(csv);
    return run;
  }
  run.state = init_train_state(method, config);
  if (!fresh) {
    if (const auto latest = latest_checkpoint(ckpt_dir)) {
      run.state = load_checkpoint(latest->second).state;
      auto rows = read_losses_csv(csv);
      if (rows.size() < run.state.epoch) throw FormatError("losses.csv is shorter than the checkpoint");
      rows.resize(run.state.epoch);
      run.losses = rows;
      log::info("resuming ", run_dir.string(), " after epoch ", run.state.epoch);
    }
  }
  write_json_file(run_dir / "config.json", snapshot);
  write_losses_csv(csv, run.losses);

  const auto started = std::chrono::steady_clock::now();
  std::vector<std::size_t> labeled_pick;
  std::vector<std::size_t> unl_pick(batch);
  StepBatch sb;
  for (std::size_t e = run.state.epoch; e < config.epochs; ++e) {
    const double lr = lr_at(e, config);
    Rng rng(derive_seed(config.seed, SeedStream::epoch, e));
    Rng aug_rng(derive_seed(config.seed, SeedStream::augmentation, e));
    std::vector<std::size_t> order = pool;
    rng.shuffle(order);
    double sums[3] = {0.0, 0.0, 0.0};
    for (std::size_t s = 0; s < steps; ++s) {
      sampler.draw(batch, rng, labeled_pick, sb.labels);
      sb.labeled = augment(store.gather(labeled_pick), aug_rng, aug);
      LossBundle lb;
      if (method == Method::ssl) {
        for (std::size_t k = 0; k < batch; ++k) unl_pick[k] = order[(s * batch + k) % order.size()];
        sb.unlabeled = augment(store.gather(unl_pick), aug_rng, aug);
        sb.z = gen.sample_latent(batch, rng);
        lb = train_step_ssl(disc, gen, run.state, sb, lr, adam, rng);
      } else {
        lb = train_step_baseline(disc, run.state, sb, lr, adam, rng);
      }
      if (!std::isfinite(lb.l_d) || !std::isfinite(lb.l_g)) {
        throw Error("non-finite loss at epoch " + std::to_string(e + 1) + " step " +
                    std::to_string(s));
      }
      sums[0] += lb.l_supervised;
      sums[1] += lb.l_unsupervised;
      sums[2] += lb.l_g;
    }
    const auto n = static_cast<double>(steps);
    run.losses.push_back({e + 1, sums[0] / n, sums[1] / n, sums[2] / n, lr});
    run.state.epoch = e + 1;
    write_losses_csv(csv, run.losses);
    if (run.state.epoch % config.checkpoint_every == 0) {
      save_checkpoint(ckpt_dir / ("epoch_" + std::to_string(run.state.epoch) + ".ckpt"), method,
                      config, run.state);
    }
    if (options.verbose) {
      const auto& r = run.losses.back();
      log::info(to_string(method), " epoch ", r.epoch, "/", config.epochs, " l_sup ", r.l_supervised,
                " l_unsup ", r.l_unsupervised, " l_g ", r.l_g, " lr ", r.lr);
    }
  }
  save_checkpoint(run_dir / "final.ckpt", method, config, run.state);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  write_json_file(run_dir / "run.json",
                  {{"method", to_string(method)},
                   {"epochs_completed", run.state.epoch},
                   {"steps_per_epoch", steps},
                   {"pool_patches", pool.size()},
                   {"labeled_images", subset.labeled.size()},
                   {"labeled_healthy_patches", sampler.pool_size(0)},
                   {"labeled_diseased_patches", sampler.pool_size(1)},
                   {"low_data", run.low_data},
                   {"seconds_this_session", seconds}});
  return run;
}

TrainRun train_ssl(const TrainConfig& config, const PatchStore& store, const LabeledSubset& subset,
                   const std::filesystem::path& run_dir, const TrainOptions& options) {
  return train(Method::ssl, config, store, subset, run_dir, options);
}

TrainRun train_baseline(const TrainConfig& config, const PatchStore& store,
                        const LabeledSubset& subset, const std::filesystem::path& run_dir,
                        const TrainOptions& options) {
  return train(Method::convnet, config, store, subset, run_dir, options);
}

}  // namespace patchssl

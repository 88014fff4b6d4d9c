#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "patchssl/dataset.hpp"
#include "patchssl/losses.hpp"
#include "patchssl/model.hpp"
#include "patchssl/patch_store.hpp"

namespace patchssl {

enum class Method { ssl, convnet };

std::string to_string(Method m);
Method parse_method(const std::string& text);

struct TrainConfig {
  std::size_t epochs = 1200;
  std::size_t batch_size = 100;
  double lrelu_slope = 0.2;
  double ema_decay = 0.999;
  double adam_alpha = 3e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t lr_decay_start_epoch = 1000;
  double weight_init_sigma = 0.05;
  std::size_t latent_dim = 100;
  bool augment_flip = true;
  bool augment_translate = true;
  std::size_t translate_pixels = 2;
  bool class_balanced = true;
  std::size_t checkpoint_every = 100;
  std::uint64_t seed = 0;
  DiscriminatorArch disc = DiscriminatorArch::paper();
  GeneratorArch gen = GeneratorArch::paper();

  static TrainConfig paper();
  // 16x16 patches, small networks, 200 epochs.
  static TrainConfig desk();

  // Architectures with the shared scalars (slope, latent size) applied.
  DiscriminatorArch disc_arch() const;
  GeneratorArch gen_arch() const;
  void validate() const;
};

// Unknown keys are rejected with FormatError.
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const DiscriminatorArch& a);
void from_json(const nlohmann::json& j, DiscriminatorArch& a);
void to_json(nlohmann::json& j, const GeneratorArch& a);
void from_json(const nlohmann::json& j, GeneratorArch& a);

// Constant alpha before lr_decay_start_epoch, then linear to 0 at `epochs`.
double lr_at(std::size_t epoch, const TrainConfig& config);

struct AugmentConfig {
  bool flip = true;
  bool translate = true;
  std::size_t pad = 2;
};

// Per sample: reflect-pad, random crop back to size, random horizontal and
// vertical flips. Four draws per sample regardless of the flags.
Tensor<float> augment(const Tensor<float>& batch, Rng& rng, const AugmentConfig& config);

template <typename T>
struct EmaState {
  ParamSet<T> shadow;
  double decay = 0.999;
  std::uint64_t update_count = 0;
};

// shadow <- d * shadow + (1 - d) * params.
template <typename T>
void ema_update(EmaState<T>& ema, const ParamSet<T>& params);

struct AdamConfig {
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  ParamSet<T> m;
  ParamSet<T> v;
  std::uint64_t step = 0;
};

template <typename T>
AdamState<T> adam_init(const ParamSet<T>& params);

// Bias-corrected Adam step: p -= lr * m_hat / (sqrt(v_hat) + eps).
template <typename T>
void adam_update(ParamSet<T>& params, const ParamSet<T>& grads, AdamState<T>& state, double lr,
                 const AdamConfig& config);

// Everything a run needs to continue. The generator parts are empty for the baseline.
struct TrainState {
  ParamSet<float> d;
  AdamState<float> adam_d;
  EmaState<float> ema;
  GeneratorParams<float> g;
  AdamState<float> adam_g;
  std::size_t epoch = 0;  // completed epochs
};

TrainState init_train_state(Method method, const TrainConfig& config);

struct StepBatch {
  Tensor<float> labeled;  // may have zero rows
  std::vector<int> labels;
  Tensor<float> unlabeled;
  Tensor<float> z;
};

// One discriminator update on L_supervised + L_unsupervised, the EMA update,
// then one generator update on feature matching against the updated
// discriminator. Dropout masks come from `rng`.
LossBundle train_step_ssl(const Discriminator<float>& disc, const Generator<float>& gen,
                          TrainState& state, const StepBatch& batch, double lr,
                          const AdamConfig& adam, Rng& rng);

// Supervised-only discriminator update plus EMA.
LossBundle train_step_baseline(const Discriminator<float>& disc, TrainState& state,
                               const StepBatch& batch, double lr, const AdamConfig& adam, Rng& rng);

void save_checkpoint(const std::filesystem::path& path, Method method, const TrainConfig& config,
                     const TrainState& state);

struct Checkpoint {
  Method method = Method::ssl;
  TrainConfig config;
  TrainState state;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based count of completed epochs
  double l_supervised = 0.0;
  double l_unsupervised = 0.0;
  double l_g = 0.0;
  double lr = 0.0;
};

struct TrainRun {
  std::filesystem::path run_dir;
  Method method = Method::ssl;
  TrainConfig config;
  std::vector<EpochRecord> losses;
  TrainState state;
  bool low_data = false;  // a labeled class pool was smaller than half a batch
};

struct TrainOptions {
  bool resume = false;
  bool verbose = false;
};

// Every epoch walks the training-split patch pool in shuffled batches; each
// step also draws a class-balanced labeled batch (with replacement when a
// class pool is too small) and a latent batch. The baseline takes the same
// number of steps per epoch on labeled batches only.
TrainRun train(Method method, const TrainConfig& config, const PatchStore& store,
               const LabeledSubset& subset, const std::filesystem::path& run_dir,
               const TrainOptions& options = {});

TrainRun train_ssl(const TrainConfig& config, const PatchStore& store, const LabeledSubset& subset,
                   const std::filesystem::path& run_dir, const TrainOptions& options = {});
TrainRun train_baseline(const TrainConfig& config, const PatchStore& store,
                        const LabeledSubset& subset, const std::filesystem::path& run_dir,
                        const TrainOptions& options = {});

std::vector<EpochRecord> read_losses_csv(const std::filesystem::path& path);

}  // namespace patchssl

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "patchssl/layers.hpp"
#include "patchssl/tensor.hpp"

namespace patchssl {

using nn::Mode;

// Which discriminator activation feeds the feature-matching loss.
enum class FeatureTap {
  pooled,   // globally average-pooled output of the last NiN layer (F = last width)
  spatial,  // flattened last NiN output before pooling
};

// Discriminator: input dropout, blocks of 3x3 weight-normalized convs (the
// last of each block has stride 2) each followed by dropout, valid-padding
// reduction convs, 1x1 NiN layers, global pooling and a dense K-way head.
struct DiscriminatorArch {
  std::size_t input_size = 32;
  std::size_t in_channels = 3;
  std::size_t num_classes = 2;
  std::vector<std::size_t> block_widths{96, 192};
  std::size_t convs_per_block = 3;
  std::size_t reduce_layers = 2;
  std::size_t nin_layers = 2;
  double input_dropout = 0.2;
  double block_dropout = 0.5;
  double lrelu_slope = 0.2;
  FeatureTap feature_tap = FeatureTap::pooled;

  static DiscriminatorArch paper();
  // Small network for 16x16 patches used by the desk-scale experiments.
  static DiscriminatorArch desk(std::size_t input_size = 16);
};

// Generator: dense projection of a uniform latent to base x base x channels[0]
// with batch norm and ReLU, then stride-2 5x5 transposed convs (batch norm +
// ReLU) and a final weight-normalized transposed conv with tanh. One transposed
// conv per entry of `channels`, so output = base * 2^channels.size().
struct GeneratorArch {
  std::size_t latent_dim = 100;
  std::size_t output_size = 32;
  std::size_t out_channels = 3;
  std::vector<std::size_t> channels{512, 256, 128};
  std::size_t kernel = 5;

  static GeneratorArch paper();
  static GeneratorArch desk(std::size_t output_size = 16);
  std::size_t base_size() const;
};

// Strides of the valid-padding reduction convs for a given input extent:
// stride 2 unless that leaves too little room for the remaining layers.
std::vector<std::size_t> reduction_strides(std::size_t extent, std::size_t layers);

template <typename T>
struct DiscriminatorOutput {
  Tensor<T> logits;    // [B, K]
  Tensor<T> features;  // [B, F]
};

template <typename T>
struct DiscriminatorTape {
  typename nn::Sequential<T>::Tape trunk;
  nn::LayerCache<T> pool;
  nn::LayerCache<T> head;
};

template <typename T>
class Discriminator {
 public:
  explicit Discriminator(DiscriminatorArch arch);

  const DiscriminatorArch& arch() const { return arch_; }
  std::size_t feature_dim() const { return feature_dim_; }
  std::size_t num_classes() const { return arch_.num_classes; }

  // Weights ~ N(0, sigma^2), weight-norm scales 1, biases 0.
  ParamSet<T> init(std::uint64_t seed, double sigma = 0.05) const;

  DiscriminatorOutput<T> forward(const ParamSet<T>& params, const Tensor<T>& x, Mode mode,
                                 Rng* dropout_rng, DiscriminatorTape<T>& tape) const;
  DiscriminatorOutput<T> forward(const ParamSet<T>& params, const Tensor<T>& x, Mode mode,
                                 Rng* dropout_rng = nullptr) const;

  // Backpropagates gradients on logits and/or features (either may be null).
  // Parameter gradients accumulate into `grads` when non-null. Returns d/dx.
  Tensor<T> backward(const ParamSet<T>& params, const DiscriminatorTape<T>& tape,
                     const Tensor<T>* dlogits, const Tensor<T>* dfeatures,
                     ParamSet<T>* grads) const;

 private:
  DiscriminatorArch arch_;
  nn::Sequential<T> trunk_;
  nn::GlobalAvgPool<T> pool_;
  std::shared_ptr<nn::Dense<T>> head_;
  std::size_t feature_dim_ = 0;
  Shape trunk_out_;
};

// Learned parameters plus batch-norm running statistics.
template <typename T>
struct GeneratorParams {
  ParamSet<T> learned;
  ParamSet<T> running;
};

template <typename T>
class Generator {
 public:
  explicit Generator(GeneratorArch arch);

  const GeneratorArch& arch() const { return arch_; }
  GeneratorParams<T> init(std::uint64_t seed, double sigma = 0.05) const;

  // Train mode uses batch statistics and updates `params.running`.
  Tensor<T> forward(GeneratorParams<T>& params, const Tensor<T>& z, Mode mode,
                    typename nn::Sequential<T>::Tape& tape) const;
  Tensor<T> forward_eval(const GeneratorParams<T>& params, const Tensor<T>& z) const;
  Tensor<T> backward(const GeneratorParams<T>& params,
                     const typename nn::Sequential<T>::Tape& tape, const Tensor<T>& dx,
                     ParamSet<T>* grads) const;

  // Latent batch ~ uniform[-1, 1]^latent_dim.
  Tensor<T> sample_latent(std::size_t batch, Rng& rng) const;

 private:
  GeneratorArch arch_;
  nn::Sequential<T> net_;
};

// Paper-default convenience entry points (K-way discriminator on 32x32x3).
ParamSet<float> init_discriminator(std::size_t num_classes, std::uint64_t seed);
DiscriminatorOutput<float> discriminator_forward(const ParamSet<float>& params,
                                                 const Tensor<float>& x, Mode mode,
                                                 Rng* dropout_rng = nullptr);
GeneratorParams<float> init_generator(std::uint64_t seed);
Tensor<float> generator_forward(GeneratorParams<float>& params, const Tensor<float>& z, Mode mode);

}  // namespace patchssl

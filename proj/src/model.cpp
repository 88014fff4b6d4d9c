#include "patchssl/model.hpp"

#include <string>

#include "patchssl/error.hpp"

namespace patchssl {

DiscriminatorArch DiscriminatorArch::paper() { return DiscriminatorArch{}; }

DiscriminatorArch DiscriminatorArch::desk(std::size_t input_size) {
  DiscriminatorArch a;
  a.input_size = input_size;
  a.block_widths = {16, 32};
  a.convs_per_block = 2;
  a.reduce_layers = 1;
  a.nin_layers = 2;
  return a;
}

GeneratorArch GeneratorArch::paper() { return GeneratorArch{}; }

GeneratorArch GeneratorArch::desk(std::size_t output_size) {
  GeneratorArch a;
  a.output_size = output_size;
  a.channels = {32, 16};
  return a;
}

std::size_t GeneratorArch::base_size() const {
  if (channels.empty()) throw ArgumentError("generator needs at least one transposed conv");
  const std::size_t factor = std::size_t{1} << channels.size();
  if (output_size % factor != 0 || output_size / factor == 0) {
    throw GeometryError("generator output " + std::to_string(output_size) +
                        " is not divisible by 2^" + std::to_string(channels.size()));
  }
  return output_size / factor;
}

std::vector<std::size_t> reduction_strides(std::size_t extent, std::size_t layers) {
  std::vector<std::size_t> strides;
  std::size_t e = extent;
  for (std::size_t i = 0; i < layers; ++i) {
    const std::size_t remaining = layers - i - 1;
    auto fits = [&](std::size_t out) { return out >= 1 + 2 * remaining; };
    if (e < 3) {
      throw GeometryError("valid 3x3 reduction conv needs an extent >= 3, got " +
                          std::to_string(e));
    }
    const std::size_t out2 = (e - 3) / 2 + 1;
    const std::size_t out1 = e - 2;
    if (fits(out2)) {
      strides.push_back(2);
      e = out2;
    } else if (fits(out1)) {
      strides.push_back(1);
      e = out1;
    } else {
      throw GeometryError("feature map of extent " + std::to_string(extent) + " cannot take " +
                          std::to_string(layers) + " valid reduction convs");
    }
  }
  return strides;
}

// ---- Discriminator ----

template <typename T>
Discriminator<T>::Discriminator(DiscriminatorArch arch) : arch_(std::move(arch)) {
  if (arch_.num_classes < 2) throw ArgumentError("discriminator needs at least 2 classes");
  if (arch_.block_widths.empty() || arch_.convs_per_block == 0) {
    throw ArgumentError("discriminator needs at least one conv block");
  }
  using nn::ConvSpec;
  const double slope = arch_.lrelu_slope;
  trunk_.add(std::make_shared<nn::Dropout<T>>(arch_.input_dropout));
  std::size_t channels = arch_.in_channels;
  for (std::size_t b = 0; b < arch_.block_widths.size(); ++b) {
    const std::size_t width = arch_.block_widths[b];
    for (std::size_t j = 0; j < arch_.convs_per_block; ++j) {
      const bool last = j + 1 == arch_.convs_per_block;
      trunk_.add(std::make_shared<nn::Conv2d<T>>(
          ConvSpec{"block" + std::to_string(b) + ".conv" + std::to_string(j), channels, width, 3,
                   last ? std::size_t{2} : std::size_t{1}, 1, true, true}));
      trunk_.add(std::make_shared<nn::LeakyRelu<T>>(slope));
      channels = width;
    }
    trunk_.add(std::make_shared<nn::Dropout<T>>(arch_.block_dropout));
  }
  Shape shape = trunk_.output_shape({arch_.in_channels, arch_.input_size, arch_.input_size});
  const auto strides = reduction_strides(shape[1], arch_.reduce_layers);
  for (std::size_t i = 0; i < strides.size(); ++i) {
    trunk_.add(std::make_shared<nn::Conv2d<T>>(
        ConvSpec{"reduce" + std::to_string(i), channels, channels, 3, strides[i], 0, true, true}));
    trunk_.add(std::make_shared<nn::LeakyRelu<T>>(slope));
  }
  for (std::size_t i = 0; i < arch_.nin_layers; ++i) {
    trunk_.add(std::make_shared<nn::Conv2d<T>>(
        ConvSpec{"nin" + std::to_string(i), channels, channels, 1, 1, 0, true, true}));
    trunk_.add(std::make_shared<nn::LeakyRelu<T>>(slope));
  }
  trunk_out_ = trunk_.output_shape({arch_.in_channels, arch_.input_size, arch_.input_size});
  feature_dim_ = arch_.feature_tap == FeatureTap::pooled ? trunk_out_[0] : shape_size(trunk_out_);
  head_ = std::make_shared<nn::Dense<T>>(
      nn::DenseSpec{"head", trunk_out_[0], arch_.num_classes, true, true});
}

template <typename T>
ParamSet<T> Discriminator<T>::init(std::uint64_t seed, double sigma) const {
  Rng rng(seed);
  ParamSet<T> params;
  ParamSet<T> unused;
  trunk_.init(params, unused, rng, sigma);
  head_->init(params, unused, rng, sigma);
  return params;
}

template <typename T>
DiscriminatorOutput<T> Discriminator<T>::forward(const ParamSet<T>& params, const Tensor<T>& x,
                                                 Mode mode, Rng* dropout_rng,
                                                 DiscriminatorTape<T>& tape) const {
  const Shape expected{arch_.in_channels, arch_.input_size, arch_.input_size};
  if (x.rank() != 4 || Shape(x.shape().begin() + 1, x.shape().end()) != expected) {
    throw ShapeError("discriminator expects (B, " + std::to_string(arch_.in_channels) + ", " +
                     std::to_string(arch_.input_size) + ", " + std::to_string(arch_.input_size) +
                     "), got " + shape_string(x.shape()));
  }
  nn::ForwardContext<T> ctx{mode, dropout_rng, nullptr};
  Tensor<T> act = trunk_.forward(params, x, tape.trunk, ctx);
  Tensor<T> pooled = pool_.forward(params, act, tape.pool, ctx);
  DiscriminatorOutput<T> out;
  out.logits = head_->forward(params, pooled, tape.head, ctx);
  if (arch_.feature_tap == FeatureTap::pooled) {
    out.features = std::move(pooled);
  } else {
    act.reshape({x.dim(0), feature_dim_});
    out.features = std::move(act);
  }
  return out;
}

template <typename T>
DiscriminatorOutput<T> Discriminator<T>::forward(const ParamSet<T>& params, const Tensor<T>& x,
                                                 Mode mode, Rng* dropout_rng) const {
  DiscriminatorTape<T> tape;
  return forward(params, x, mode, dropout_rng, tape);
}

template <typename T>
Tensor<T> Discriminator<T>::backward(const ParamSet<T>& params, const DiscriminatorTape<T>& tape,
                                     const Tensor<T>* dlogits, const Tensor<T>* dfeatures,
                                     ParamSet<T>* grads) const {
  const std::size_t batch = tape.pool.input_shape.at(0);
  Tensor<T> dpooled({batch, trunk_out_[0]});
  if (dlogits != nullptr) dpooled = head_->backward(params, tape.head, *dlogits, grads);
  if (dfeatures != nullptr && arch_.feature_tap == FeatureTap::pooled) {
    require_same_shape(dfeatures->shape(), dpooled.shape(), "feature gradient");
    for (std::size_t i = 0; i < dpooled.size(); ++i) dpooled[i] += (*dfeatures)[i];
  }
  Tensor<T> dact = pool_.backward(params, tape.pool, dpooled, grads);
  if (dfeatures != nullptr && arch_.feature_tap == FeatureTap::spatial) {
    if (dfeatures->size() != dact.size()) throw ShapeError("feature gradient size mismatch");
    for (std::size_t i = 0; i < dact.size(); ++i) dact[i] += (*dfeatures)[i];
  }
  return trunk_.backward(params, tape.trunk, std::move(dact), grads);
}

// ---- Generator ----

template <typename T>
Generator<T>::Generator(GeneratorArch arch) : arch_(std::move(arch)) {
  using nn::ConvSpec;
  const std::size_t base = arch_.base_size();
  const auto& ch = arch_.channels;
  net_.add(std::make_shared<nn::Dense<T>>(
      nn::DenseSpec{"project", arch_.latent_dim, ch[0] * base * base, false, false}));
  net_.add(std::make_shared<nn::Reshape<T>>(Shape{ch[0], base, base}));
  net_.add(std::make_shared<nn::BatchNorm<T>>("project_bn", ch[0]));
  net_.add(std::make_shared<nn::LeakyRelu<T>>(0.0));
  const std::size_t pad = arch_.kernel / 2;
  for (std::size_t i = 1; i < ch.size(); ++i) {
    const std::string name = "up" + std::to_string(i - 1);
    net_.add(std::make_shared<nn::ConvTranspose2d<T>>(
        ConvSpec{name, ch[i - 1], ch[i], arch_.kernel, 2, pad, false, false}));
    net_.add(std::make_shared<nn::BatchNorm<T>>(name + "_bn", ch[i]));
    net_.add(std::make_shared<nn::LeakyRelu<T>>(0.0));
  }
  net_.add(std::make_shared<nn::ConvTranspose2d<T>>(
      ConvSpec{"out", ch.back(), arch_.out_channels, arch_.kernel, 2, pad, true, true}));
  net_.add(std::make_shared<nn::Tanh<T>>());
  const Shape out = net_.output_shape({arch_.latent_dim});
  if (out != Shape{arch_.out_channels, arch_.output_size, arch_.output_size}) {
    throw GeometryError("generator produces " + shape_string(out));
  }
}

template <typename T>
GeneratorParams<T> Generator<T>::init(std::uint64_t seed, double sigma) const {
  Rng rng(seed);
  GeneratorParams<T> p;
  net_.init(p.learned, p.running, rng, sigma);
  return p;
}

template <typename T>
Tensor<T> Generator<T>::forward(GeneratorParams<T>& params, const Tensor<T>& z, Mode mode,
                                typename nn::Sequential<T>::Tape& tape) const {
  if (z.rank() != 2 || z.dim(1) != arch_.latent_dim) {
    throw ShapeError("generator expects latent (B, " + std::to_string(arch_.latent_dim) +
                     "), got " + shape_string(z.shape()));
  }
  nn::ForwardContext<T> ctx{mode, nullptr, &params.running};
  return net_.forward(params.learned, z, tape, ctx);
}

template <typename T>
Tensor<T> Generator<T>::forward_eval(const GeneratorParams<T>& params, const Tensor<T>& z) const {
  GeneratorParams<T> copy = params;
  typename nn::Sequential<T>::Tape tape;
  return forward(copy, z, Mode::eval, tape);
}

template <typename T>
Tensor<T> Generator<T>::backward(const GeneratorParams<T>& params,
                                 const typename nn::Sequential<T>::Tape& tape, const Tensor<T>& dx,
                                 ParamSet<T>* grads) const {
  return net_.backward(params.learned, tape, dx, grads);
}

template <typename T>
Tensor<T> Generator<T>::sample_latent(std::size_t batch, Rng& rng) const {
  Tensor<T> z({batch, arch_.latent_dim});
  for (auto& v : z) v = static_cast<T>(rng.uniform(-1.0, 1.0));
  return z;
}

template class Discriminator<float>;
template class Discriminator<double>;
template class Generator<float>;
template class Generator<double>;

// ---- paper-default wrappers ----

namespace {
DiscriminatorArch paper_arch(std::size_t k) {
  auto a = DiscriminatorArch::paper();
  a.num_classes = k;
  return a;
}
}  // namespace

ParamSet<float> init_discriminator(std::size_t num_classes, std::uint64_t seed) {
  return Discriminator<float>(paper_arch(num_classes)).init(seed);
}

DiscriminatorOutput<float> discriminator_forward(const ParamSet<float>& params,
                                                 const Tensor<float>& x, Mode mode,
                                                 Rng* dropout_rng) {
  const std::size_t k = nn::param(params, "head.b").size();
  return Discriminator<float>(paper_arch(k)).forward(params, x, mode, dropout_rng);
}

GeneratorParams<float> init_generator(std::uint64_t seed) {
  return Generator<float>(GeneratorArch::paper()).init(seed);
}

Tensor<float> generator_forward(GeneratorParams<float>& params, const Tensor<float>& z, Mode mode) {
  typename nn::Sequential<float>::Tape tape;
  return Generator<float>(GeneratorArch::paper()).forward(params, z, mode, tape);
}

}  // namespace patchssl

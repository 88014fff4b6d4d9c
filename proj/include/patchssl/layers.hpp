#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "patchssl/kernels.hpp"
#include "patchssl/rng.hpp"
#include "patchssl/tensor.hpp"

namespace patchssl::nn {

enum class Mode { train, eval };

// Per-call state that is not a learned parameter.
template <typename T>
struct ForwardContext {
  Mode mode = Mode::eval;
  Rng* rng = nullptr;              // dropout masks; required in train mode when dropout is present
  ParamSet<T>* buffers = nullptr;  // batch-norm running statistics, updated in train mode
};

// Activations a layer keeps between forward and backward.
template <typename T>
struct LayerCache {
  std::vector<Tensor<T>> saved;
  Shape input_shape;
};

// Layers hold no parameters; they read and write named entries of a ParamSet.
// Parameter gradients are accumulated (+=) into `grads` when it is non-null.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string_view kind() const = 0;
  // Shape of one sample (without the batch dimension).
  virtual Shape output_shape(const Shape& sample) const = 0;
  virtual void init(ParamSet<T>& /*params*/, ParamSet<T>& /*buffers*/, Rng& /*rng*/,
                    double /*sigma*/) const {}
  virtual Tensor<T> forward(const ParamSet<T>& params, const Tensor<T>& x, LayerCache<T>& cache,
                            ForwardContext<T>& ctx) const = 0;
  virtual Tensor<T> backward(const ParamSet<T>& params, const LayerCache<T>& cache,
                             const Tensor<T>& dy, ParamSet<T>* grads) const = 0;
};

// w = g * v / ||v||, normalized per slice along `axis` (0 or 1) of v's shape.
struct WeightNormLayout {
  std::size_t outer = 1;
  std::size_t groups = 1;
  std::size_t inner = 1;
  static WeightNormLayout from(const Shape& shape, std::size_t axis);
};

template <typename T>
void weight_norm_forward(const WeightNormLayout& layout, std::span<const T> v,
                         std::span<const T> g, std::span<T> w, std::span<T> norms);

template <typename T>
void weight_norm_backward(const WeightNormLayout& layout, std::span<const T> v,
                          std::span<const T> g, std::span<const T> norms, std::span<const T> dw,
                          std::span<T> dv, std::span<T> dg);

template <typename T>
void accumulate(ParamSet<T>& grads, const std::string& name, const Tensor<T>& value);

template <typename T>
const Tensor<T>& param(const ParamSet<T>& params, const std::string& name);

template <typename T>
class Dropout final : public Layer<T> {
 public:
  explicit Dropout(double rate) : rate_(rate) {}
  std::string_view kind() const override { return "dropout"; }
  Shape output_shape(const Shape& s) const override { return s; }
  Tensor<T> forward(const ParamSet<T>&, const Tensor<T>& x, LayerCache<T>&,
                    ForwardContext<T>&) const override;
  Tensor<T> backward(const ParamSet<T>&, const LayerCache<T>&, const Tensor<T>&,
                     ParamSet<T>*) const override;
  double rate() const { return rate_; }

 private:
  double rate_;
};

struct ConvSpec {
  std::string name;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 1;
  bool weight_norm = true;
  bool bias = true;
};

// Parameters: <name>.v / <name>.g when weight-normalized, else <name>.w; <name>.b.
template <typename T>
class Conv2d final : public Layer<T> {
 public:
  explicit Conv2d(ConvSpec spec) : spec_(std::move(spec)) {}
  std::string_view kind() const override { return "conv"; }
  Shape output_shape(const Shape& s) const override;
  void init(ParamSet<T>& params, ParamSet<T>& buffers, Rng& rng, double sigma) const override;
  Tensor<T> forward(const ParamSet<T>&, const Tensor<T>& x, LayerCache<T>&,
                    ForwardContext<T>&) const override;
  Tensor<T> backward(const ParamSet<T>&, const LayerCache<T>&, const Tensor<T>&,
                     ParamSet<T>*) const override;
  const ConvSpec& spec() const { return spec_; }

 private:
  ConvGeometry geometry(const Shape& sample) const;
  ConvSpec spec_;
};

// Adjoint of a strided convolution; output extent = input extent * stride.
// Weights are stored [in_channels, out_channels, k, k]; weight norm is per output channel.
template <typename T>
class ConvTranspose2d final : public Layer<T> {
 public:
  explicit ConvTranspose2d(ConvSpec spec) : spec_(std::move(spec)) {}
  std::string_view kind() const override { return "conv_transpose"; }
  Shape output_shape(const Shape& s) const override;
  void init(ParamSet<T>& params, ParamSet<T>& buffers, Rng& rng, double sigma) const override;
  Tensor<T> forward(const ParamSet<T>&, const Tensor<T>& x, LayerCache<T>&,
                    ForwardContext<T>&) const override;
  Tensor<T> backward(const ParamSet<T>&, const LayerCache<T>&, const Tensor<T>&,
                     ParamSet<T>*) const override;

 private:
  // Geometry of the forward convolution this layer is the adjoint of.
  ConvGeometry adjoint_geometry(const Shape& sample) const;
  ConvSpec spec_;
};

struct DenseSpec {
  std::string name;
  std::size_t in = 0;
  std::size_t out = 0;
  bool weight_norm = true;
  bool bias = true;
};

template <typename T>
class Dense final : public Layer<T> {
 public:
  explicit Dense(DenseSpec spec) : spec_(std::move(spec)) {}
  std::string_view kind() const override { return "dense"; }
  Shape output_shape(const Shape& s) const override;
  void init(ParamSet<T>& params, ParamSet<T>& buffers, Rng& rng, double sigma) const override;
  Tensor<T> forward(const ParamSet<T>&, const Tensor<T>& x, LayerCache<T>&,
                    ForwardContext<T>&) const override;
  Tensor<T> backward(const ParamSet<T>&, const LayerCache<T>&, const Tensor<T>&,
                     ParamSet<T>*) const override;

 private:
  DenseSpec spec_;
};

// Per-channel batch normalization over batch and spatial positions.
// Parameters <name>.gamma/.beta; buffers <name>.running_mean/.running_var.
template <typename T>
class BatchNorm final : public Layer<T> {
 public:
  BatchNorm(std::string name, std::size_t channels, double momentum = 0.1, double eps = 1e-5)
      : name_(std::move(name)), channels_(channels), momentum_(momentum), eps_(eps) {}
  std::string_view kind() const override { return "batchnorm"; }
  Shape output_shape(const Shape& s) const override { return s; }
  void init(ParamSet<T>& params, ParamSet<T>& buffers, Rng& rng, double sigma) const override;
  Tensor<T> forward(const ParamSet<T>&, const Tensor<T>& x, LayerCache<T>&,
                    ForwardContext<T>&) const override;
  Tensor<T> backward(const ParamSet<T>&, const LayerCache<T>&, const Tensor<T>&,
                     ParamSet<T>*) const override;

 private:
  std::string name_;
  std::size_t channels_;
  double momentum_;
  double eps_;
};

template <typename T>
class LeakyRelu final : public Layer<T> {
 public:
  explicit LeakyRelu(double slope) : slope_(slope) {}
  std::string_view kind() const override { return "lrelu"; }
  Shape output_shape(const Shape& s) const override { return s; }
  Tensor<T> forward(const ParamSet<T>&, const Tensor<T>& x, LayerCache<T>&,
                    ForwardContext<T>&) const override;
  Tensor<T> backward(const ParamSet<T>&, const LayerCache<T>&, const Tensor<T>&,
                     ParamSet<T>*) const override;

 private:
  double slope_;
};

template <typename T>
class Tanh final : public Layer<T> {
 public:
  std::string_view kind() const override { return "tanh"; }
  Shape output_shape(const Shape& s) const override { return s; }
  Tensor<T> forward(const ParamSet<T>&, const Tensor<T>& x, LayerCache<T>&,
                    ForwardContext<T>&) const override;
  Tensor<T> backward(const ParamSet<T>&, const LayerCache<T>&, const Tensor<T>&,
                     ParamSet<T>*) const override;
};

template <typename T>
class GlobalAvgPool final : public Layer<T> {
 public:
  std::string_view kind() const override { return "global_pool"; }
  Shape output_shape(const Shape& s) const override { return {s.at(0)}; }
  Tensor<T> forward(const ParamSet<T>&, const Tensor<T>& x, LayerCache<T>&,
                    ForwardContext<T>&) const override;
  Tensor<T> backward(const ParamSet<T>&, const LayerCache<T>&, const Tensor<T>&,
                     ParamSet<T>*) const override;
};

// Reinterprets each sample with a new shape of equal size.
template <typename T>
class Reshape final : public Layer<T> {
 public:
  explicit Reshape(Shape sample) : sample_(std::move(sample)) {}
  std::string_view kind() const override { return "reshape"; }
  Shape output_shape(const Shape&) const override { return sample_; }
  Tensor<T> forward(const ParamSet<T>&, const Tensor<T>& x, LayerCache<T>&,
                    ForwardContext<T>&) const override;
  Tensor<T> backward(const ParamSet<T>&, const LayerCache<T>&, const Tensor<T>&,
                     ParamSet<T>*) const override;

 private:
  Shape sample_;
};

template <typename T>
class Sequential {
 public:
  using Tape = std::vector<LayerCache<T>>;

  void add(std::shared_ptr<const Layer<T>> layer) { layers_.push_back(std::move(layer)); }
  std::size_t size() const { return layers_.size(); }
  const Layer<T>& at(std::size_t i) const { return *layers_.at(i); }

  Shape output_shape(Shape sample) const;
  void init(ParamSet<T>& params, ParamSet<T>& buffers, Rng& rng, double sigma) const;
  Tensor<T> forward(const ParamSet<T>& params, Tensor<T> x, Tape& tape,
                    ForwardContext<T>& ctx) const;
  Tensor<T> backward(const ParamSet<T>& params, const Tape& tape, Tensor<T> dy,
                     ParamSet<T>* grads) const;

 private:
  std::vector<std::shared_ptr<const Layer<T>>> layers_;
};

}  // namespace patchssl::nn

#include "patchssl/layers.hpp"

#include <cmath>
#include <string>

#include "patchssl/error.hpp"

namespace patchssl::nn {

namespace {

template <typename T>
Tensor<T> gaussian(Shape shape, Rng& rng, double sigma) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t) v = static_cast<T>(rng.normal(0.0, sigma));
  return t;
}

Shape with_batch(std::size_t batch, const Shape& sample) {
  Shape s{batch};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

Shape sample_of(const Shape& s) { return Shape(s.begin() + 1, s.end()); }

template <typename T>
void require_batched(const Tensor<T>& x, std::size_t rank, std::string_view layer) {
  if (x.rank() != rank) {
    throw ShapeError(std::string(layer) + ": expected rank " + std::to_string(rank) +
                     " input, got " + shape_string(x.shape()));
  }
}

}  // namespace

WeightNormLayout WeightNormLayout::from(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) throw ShapeError("weight norm axis out of range");
  WeightNormLayout l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
  l.groups = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

template <typename T>
void weight_norm_forward(const WeightNormLayout& l, std::span<const T> v, std::span<const T> g,
                         std::span<T> w, std::span<T> norms) {
  for (std::size_t gi = 0; gi < l.groups; ++gi) {
    T sq{0};
    for (std::size_t o = 0; o < l.outer; ++o) {
      const T* p = v.data() + (o * l.groups + gi) * l.inner;
      for (std::size_t i = 0; i < l.inner; ++i) sq += p[i] * p[i];
    }
    const T norm = std::sqrt(sq);
    if (!(norm > T{0})) throw ArgumentError("weight norm: direction vector has zero norm");
    norms[gi] = norm;
    const T scale = g[gi] / norm;
    for (std::size_t o = 0; o < l.outer; ++o) {
      const std::size_t base = (o * l.groups + gi) * l.inner;
      for (std::size_t i = 0; i < l.inner; ++i) w[base + i] = scale * v[base + i];
    }
  }
}

template <typename T>
void weight_norm_backward(const WeightNormLayout& l, std::span<const T> v, std::span<const T> g,
                          std::span<const T> norms, std::span<const T> dw, std::span<T> dv,
                          std::span<T> dg) {
  for (std::size_t gi = 0; gi < l.groups; ++gi) {
    const T norm = norms[gi];
    T dot{0};
    for (std::size_t o = 0; o < l.outer; ++o) {
      const std::size_t base = (o * l.groups + gi) * l.inner;
      for (std::size_t i = 0; i < l.inner; ++i) dot += dw[base + i] * v[base + i];
    }
    const T dscale = dot / norm;  // d loss / d g
    dg[gi] = dscale;
    const T a = g[gi] / norm;
    const T b = dscale / norm;
    for (std::size_t o = 0; o < l.outer; ++o) {
      const std::size_t base = (o * l.groups + gi) * l.inner;
      for (std::size_t i = 0; i < l.inner; ++i) dv[base + i] = a * (dw[base + i] - b * v[base + i]);
    }
  }
}

template <typename T>
void accumulate(ParamSet<T>& grads, const std::string& name, const Tensor<T>& value) {
  auto it = grads.find(name);
  if (it == grads.end()) {
    grads.emplace(name, value);
    return;
  }
  require_same_shape(it->second.shape(), value.shape(), "gradient " + name);
  auto& dst = it->second;
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += value[i];
}

template <typename T>
const Tensor<T>& param(const ParamSet<T>& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw ArgumentError("missing parameter '" + name + "'");
  return it->second;
}

namespace {

// Effective weight of a layer: either the stored weight or g * v / ||v||.
template <typename T>
struct EffectiveWeight {
  Tensor<T> w;
  Tensor<T> norms;
};

template <typename T>
EffectiveWeight<T> effective_weight(const ParamSet<T>& params, const std::string& name,
                                    bool weight_norm, std::size_t axis) {
  if (!weight_norm) return {param(params, name + ".w"), {}};
  const auto& v = param(params, name + ".v");
  const auto& g = param(params, name + ".g");
  const auto layout = WeightNormLayout::from(v.shape(), axis);
  if (g.size() != layout.groups) throw ShapeError(name + ".g has wrong size");
  EffectiveWeight<T> out{Tensor<T>(v.shape()), Tensor<T>({layout.groups})};
  weight_norm_forward<T>(layout, v.span(), g.span(), out.w.span(), out.norms.span());
  return out;
}

template <typename T>
void accumulate_weight_grad(const ParamSet<T>& params, const std::string& name, bool weight_norm,
                            std::size_t axis, const Tensor<T>& norms, const Tensor<T>& dw,
                            ParamSet<T>& grads) {
  if (!weight_norm) {
    accumulate(grads, name + ".w", dw);
    return;
  }
  const auto& v = param(params, name + ".v");
  const auto& g = param(params, name + ".g");
  const auto layout = WeightNormLayout::from(v.shape(), axis);
  Tensor<T> dv(v.shape());
  Tensor<T> dg(g.shape());
  weight_norm_backward<T>(layout, v.span(), g.span(), norms.span(), dw.span(), dv.span(),
                          dg.span());
  accumulate(grads, name + ".v", dv);
  accumulate(grads, name + ".g", dg);
}

template <typename T>
void init_weight(ParamSet<T>& params, const std::string& name, bool weight_norm,
                 const Shape& shape, std::size_t axis, Rng& rng, double sigma) {
  if (weight_norm) {
    params.insert_or_assign(name + ".v", gaussian<T>(shape, rng, sigma));
    params.insert_or_assign(name + ".g", Tensor<T>({shape.at(axis)}, T{1}));
  } else {
    params.insert_or_assign(name + ".w", gaussian<T>(shape, rng, sigma));
  }
}

}  // namespace

// ---- Dropout ----

template <typename T>
Tensor<T> Dropout<T>::forward(const ParamSet<T>&, const Tensor<T>& x, LayerCache<T>& cache,
                              ForwardContext<T>& ctx) const {
  cache.saved.clear();
  cache.input_shape = x.shape();
  if (ctx.mode == Mode::eval || rate_ <= 0.0) return x;
  if (ctx.rng == nullptr) throw ArgumentError("dropout in train mode requires an rng");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate_));
  Tensor<T> mask(x.shape());
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask[i] = ctx.rng->bernoulli(rate_) ? T{0} : keep_scale;
    y[i] = x[i] * mask[i];
  }
  cache.saved.push_back(std::move(mask));
  return y;
}

template <typename T>
Tensor<T> Dropout<T>::backward(const ParamSet<T>&, const LayerCache<T>& cache, const Tensor<T>& dy,
                               ParamSet<T>*) const {
  if (cache.saved.empty()) return dy;
  const auto& mask = cache.saved[0];
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * mask[i];
  return dx;
}

// ---- Conv2d ----

template <typename T>
ConvGeometry Conv2d<T>::geometry(const Shape& sample) const {
  if (sample.size() != 3 || sample[0] != spec_.in_channels) {
    throw ShapeError(spec_.name + ": expected sample (" + std::to_string(spec_.in_channels) +
                     ", H, W), got " + shape_string(sample));
  }
  return ConvGeometry::make(spec_.in_channels, sample[1], sample[2], spec_.out_channels,
                            spec_.kernel, spec_.stride, spec_.pad);
}

template <typename T>
Shape Conv2d<T>::output_shape(const Shape& s) const {
  const auto g = geometry(s);
  return {g.out_channels, g.out_h, g.out_w};
}

template <typename T>
void Conv2d<T>::init(ParamSet<T>& params, ParamSet<T>&, Rng& rng, double sigma) const {
  init_weight(params, spec_.name, spec_.weight_norm,
              {spec_.out_channels, spec_.in_channels, spec_.kernel, spec_.kernel}, 0, rng, sigma);
  if (spec_.bias) params.insert_or_assign(spec_.name + ".b", Tensor<T>({spec_.out_channels}));
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const ParamSet<T>& params, const Tensor<T>& x, LayerCache<T>& cache,
                             ForwardContext<T>&) const {
  require_batched(x, 4, spec_.name);
  const auto g = geometry(sample_of(x.shape()));
  const std::size_t batch = x.dim(0);
  auto ew = effective_weight(params, spec_.name, spec_.weight_norm, 0);
  require_same_shape(ew.w.shape(),
                     {spec_.out_channels, spec_.in_channels, spec_.kernel, spec_.kernel},
                     spec_.name + " weight");
  std::span<const T> bias;
  if (spec_.bias) bias = param(params, spec_.name + ".b").span();
  Tensor<T> y({batch, g.out_channels, g.out_h, g.out_w});
  kernels::conv2d_forward<T>(g, batch, x.span(), ew.w.span(), bias, y.span());
  cache.input_shape = x.shape();
  cache.saved = {x, std::move(ew.w), std::move(ew.norms)};
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const ParamSet<T>& params, const LayerCache<T>& cache,
                              const Tensor<T>& dy, ParamSet<T>* grads) const {
  const auto& x = cache.saved[0];
  const auto& w = cache.saved[1];
  const auto g = geometry(sample_of(x.shape()));
  const std::size_t batch = x.dim(0);
  Tensor<T> dx(x.shape());
  kernels::conv2d_backward_data<T>(g, batch, dy.span(), w.span(), dx.span());
  if (grads != nullptr) {
    Tensor<T> dw(w.shape());
    Tensor<T> db({spec_.out_channels});
    kernels::conv2d_backward_weights<T>(g, batch, x.span(), dy.span(), dw.span(),
                                        spec_.bias ? db.span() : std::span<T>{});
    accumulate_weight_grad(params, spec_.name, spec_.weight_norm, 0, cache.saved[2], dw, *grads);
    if (spec_.bias) accumulate(*grads, spec_.name + ".b", db);
  }
  return dx;
}

// ---- ConvTranspose2d ----

template <typename T>
ConvGeometry ConvTranspose2d<T>::adjoint_geometry(const Shape& sample) const {
  if (sample.size() != 3 || sample[0] != spec_.in_channels) {
    throw ShapeError(spec_.name + ": expected sample (" + std::to_string(spec_.in_channels) +
                     ", H, W), got " + shape_string(sample));
  }
  const std::size_t out_h = sample[1] * spec_.stride;
  const std::size_t out_w = sample[2] * spec_.stride;
  auto g = ConvGeometry::make(spec_.out_channels, out_h, out_w, spec_.in_channels, spec_.kernel,
                              spec_.stride, spec_.pad);
  if (g.out_h != sample[1] || g.out_w != sample[2]) {
    throw GeometryError(spec_.name + ": transposed conv geometry does not invert to input size");
  }
  return g;
}

template <typename T>
Shape ConvTranspose2d<T>::output_shape(const Shape& s) const {
  const auto g = adjoint_geometry(s);
  return {g.in_channels, g.in_h, g.in_w};
}

template <typename T>
void ConvTranspose2d<T>::init(ParamSet<T>& params, ParamSet<T>&, Rng& rng, double sigma) const {
  init_weight(params, spec_.name, spec_.weight_norm,
              {spec_.in_channels, spec_.out_channels, spec_.kernel, spec_.kernel}, 1, rng, sigma);
  if (spec_.bias) params.insert_or_assign(spec_.name + ".b", Tensor<T>({spec_.out_channels}));
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::forward(const ParamSet<T>& params, const Tensor<T>& x,
                                      LayerCache<T>& cache, ForwardContext<T>&) const {
  require_batched(x, 4, spec_.name);
  const auto g = adjoint_geometry(sample_of(x.shape()));
  const std::size_t batch = x.dim(0);
  auto ew = effective_weight(params, spec_.name, spec_.weight_norm, 1);
  require_same_shape(ew.w.shape(),
                     {spec_.in_channels, spec_.out_channels, spec_.kernel, spec_.kernel},
                     spec_.name + " weight");
  Tensor<T> y({batch, g.in_channels, g.in_h, g.in_w});
  kernels::conv2d_backward_data<T>(g, batch, x.span(), ew.w.span(), y.span());
  if (spec_.bias) {
    const auto& b = param(params, spec_.name + ".b");
    const std::size_t plane = g.in_h * g.in_w;
    for (std::size_t s = 0; s < batch; ++s) {
      for (std::size_t c = 0; c < g.in_channels; ++c) {
        T* p = y.data() + (s * g.in_channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] += b[c];
      }
    }
  }
  cache.input_shape = x.shape();
  cache.saved = {x, std::move(ew.w), std::move(ew.norms)};
  return y;
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::backward(const ParamSet<T>& params, const LayerCache<T>& cache,
                                       const Tensor<T>& dy, ParamSet<T>* grads) const {
  const auto& x = cache.saved[0];
  const auto& w = cache.saved[1];
  const auto g = adjoint_geometry(sample_of(x.shape()));
  const std::size_t batch = x.dim(0);
  Tensor<T> dx(x.shape());
  kernels::conv2d_forward<T>(g, batch, dy.span(), w.span(), {}, dx.span());
  if (grads != nullptr) {
    Tensor<T> dw(w.shape());
    kernels::conv2d_backward_weights<T>(g, batch, dy.span(), x.span(), dw.span(), {});
    accumulate_weight_grad(params, spec_.name, spec_.weight_norm, 1, cache.saved[2], dw, *grads);
    if (spec_.bias) {
      Tensor<T> db({spec_.out_channels});
      const std::size_t plane = g.in_h * g.in_w;
      for (std::size_t s = 0; s < batch; ++s) {
        for (std::size_t c = 0; c < g.in_channels; ++c) {
          const T* p = dy.data() + (s * g.in_channels + c) * plane;
          T acc{0};
          for (std::size_t i = 0; i < plane; ++i) acc += p[i];
          db[c] += acc;
        }
      }
      accumulate(*grads, spec_.name + ".b", db);
    }
  }
  return dx;
}

// ---- Dense ----

template <typename T>
Shape Dense<T>::output_shape(const Shape& s) const {
  if (shape_size(s) != spec_.in) {
    throw ShapeError(spec_.name + ": expected " + std::to_string(spec_.in) + " inputs, got " +
                     shape_string(s));
  }
  return {spec_.out};
}

template <typename T>
void Dense<T>::init(ParamSet<T>& params, ParamSet<T>&, Rng& rng, double sigma) const {
  init_weight(params, spec_.name, spec_.weight_norm, {spec_.out, spec_.in}, 0, rng, sigma);
  if (spec_.bias) params.insert_or_assign(spec_.name + ".b", Tensor<T>({spec_.out}));
}

template <typename T>
Tensor<T> Dense<T>::forward(const ParamSet<T>& params, const Tensor<T>& x, LayerCache<T>& cache,
                            ForwardContext<T>&) const {
  if (x.rank() < 2) throw ShapeError(spec_.name + ": expected batched input");
  output_shape(sample_of(x.shape()));
  const std::size_t batch = x.dim(0);
  auto ew = effective_weight(params, spec_.name, spec_.weight_norm, 0);
  require_same_shape(ew.w.shape(), {spec_.out, spec_.in}, spec_.name + " weight");
  std::span<const T> bias;
  if (spec_.bias) bias = param(params, spec_.name + ".b").span();
  Tensor<T> y({batch, spec_.out});
  kernels::dense_forward<T>(batch, spec_.in, spec_.out, x.span(), ew.w.span(), bias, y.span());
  cache.input_shape = x.shape();
  cache.saved = {x, std::move(ew.w), std::move(ew.norms)};
  return y;
}

template <typename T>
Tensor<T> Dense<T>::backward(const ParamSet<T>& params, const LayerCache<T>& cache,
                             const Tensor<T>& dy, ParamSet<T>* grads) const {
  const auto& x = cache.saved[0];
  const auto& w = cache.saved[1];
  const std::size_t batch = x.dim(0);
  Tensor<T> dx(x.shape());
  Tensor<T> dw;
  Tensor<T> db;
  if (grads != nullptr) {
    dw = Tensor<T>(w.shape());
    if (spec_.bias) db = Tensor<T>({spec_.out});
  }
  kernels::dense_backward<T>(batch, spec_.in, spec_.out, x.span(), w.span(), dy.span(), dx.span(),
                             dw.span(), db.span());
  if (grads != nullptr) {
    accumulate_weight_grad(params, spec_.name, spec_.weight_norm, 0, cache.saved[2], dw, *grads);
    if (spec_.bias) accumulate(*grads, spec_.name + ".b", db);
  }
  return dx;
}

// ---- BatchNorm ----

template <typename T>
void BatchNorm<T>::init(ParamSet<T>& params, ParamSet<T>& buffers, Rng&, double) const {
  params.insert_or_assign(name_ + ".gamma", Tensor<T>({channels_}, T{1}));
  params.insert_or_assign(name_ + ".beta", Tensor<T>({channels_}));
  buffers.insert_or_assign(name_ + ".running_mean", Tensor<T>({channels_}));
  buffers.insert_or_assign(name_ + ".running_var", Tensor<T>({channels_}, T{1}));
}

template <typename T>
Tensor<T> BatchNorm<T>::forward(const ParamSet<T>& params, const Tensor<T>& x,
                                LayerCache<T>& cache, ForwardContext<T>& ctx) const {
  if (x.rank() < 2 || x.dim(1) != channels_) {
    throw ShapeError(name_ + ": expected (B, " + std::to_string(channels_) + ", ...), got " +
                     shape_string(x.shape()));
  }
  const std::size_t batch = x.dim(0);
  const std::size_t plane = x.size() / (batch * channels_);
  const std::size_t count = batch * plane;
  const auto& gamma = param(params, name_ + ".gamma");
  const auto& beta = param(params, name_ + ".beta");
  Tensor<T> y(x.shape());
  Tensor<T> xhat(x.shape());
  Tensor<T> invstd({channels_});

  const bool train = ctx.mode == Mode::train;
  if (train && count < 2) throw ShapeError(name_ + ": batch statistics need at least 2 values");
  Tensor<T>* running_mean = nullptr;
  Tensor<T>* running_var = nullptr;
  if (ctx.buffers != nullptr) {
    auto im = ctx.buffers->find(name_ + ".running_mean");
    auto iv = ctx.buffers->find(name_ + ".running_var");
    if (im != ctx.buffers->end() && iv != ctx.buffers->end()) {
      running_mean = &im->second;
      running_var = &iv->second;
    }
  }
  if (!train && running_mean == nullptr) {
    throw ArgumentError(name_ + ": eval mode requires running statistics");
  }

  for (std::size_t c = 0; c < channels_; ++c) {
    T mean{0};
    T var{0};
    if (train) {
      double sum = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = x.data() + (b * channels_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      }
      mean = static_cast<T>(sum / static_cast<double>(count));
      double sq = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = x.data() + (b * channels_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = static_cast<double>(p[i] - mean);
          sq += d * d;
        }
      }
      var = static_cast<T>(sq / static_cast<double>(count));
      if (running_mean != nullptr) {
        const T m = static_cast<T>(momentum_);
        const T unbiased = static_cast<T>(sq / static_cast<double>(count - 1));
        (*running_mean)[c] = (T{1} - m) * (*running_mean)[c] + m * mean;
        (*running_var)[c] = (T{1} - m) * (*running_var)[c] + m * unbiased;
      }
    } else {
      mean = (*running_mean)[c];
      var = (*running_var)[c];
    }
    const T is = T{1} / std::sqrt(var + static_cast<T>(eps_));
    invstd[c] = is;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t base = (b * channels_ + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T h = (x[base + i] - mean) * is;
        xhat[base + i] = h;
        y[base + i] = gamma[c] * h + beta[c];
      }
    }
  }
  cache.input_shape = x.shape();
  cache.saved = {std::move(xhat), std::move(invstd), Tensor<T>({1}, train ? T{1} : T{0})};
  return y;
}

template <typename T>
Tensor<T> BatchNorm<T>::backward(const ParamSet<T>& params, const LayerCache<T>& cache,
                                 const Tensor<T>& dy, ParamSet<T>* grads) const {
  const auto& xhat = cache.saved[0];
  const auto& invstd = cache.saved[1];
  const bool train = cache.saved[2][0] != T{0};
  const auto& gamma = param(params, name_ + ".gamma");
  const std::size_t batch = xhat.dim(0);
  const std::size_t plane = xhat.size() / (batch * channels_);
  const T count = static_cast<T>(batch * plane);
  Tensor<T> dx(xhat.shape());
  Tensor<T> dgamma({channels_});
  Tensor<T> dbeta({channels_});
  for (std::size_t c = 0; c < channels_; ++c) {
    T sum_dy{0};
    T sum_dy_xhat{0};
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t base = (b * channels_ + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += dy[base + i];
        sum_dy_xhat += dy[base + i] * xhat[base + i];
      }
    }
    dgamma[c] = sum_dy_xhat;
    dbeta[c] = sum_dy;
    const T scale = gamma[c] * invstd[c];
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t base = (b * channels_ + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        if (train) {
          dx[base + i] =
              scale * (dy[base + i] - sum_dy / count - xhat[base + i] * sum_dy_xhat / count);
        } else {
          dx[base + i] = scale * dy[base + i];
        }
      }
    }
  }
  if (grads != nullptr) {
    accumulate(*grads, name_ + ".gamma", dgamma);
    accumulate(*grads, name_ + ".beta", dbeta);
  }
  return dx;
}

// ---- Activations, pooling, reshape ----

template <typename T>
Tensor<T> LeakyRelu<T>::forward(const ParamSet<T>&, const Tensor<T>& x, LayerCache<T>& cache,
                                ForwardContext<T>&) const {
  const T slope = static_cast<T>(slope_);
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} ? x[i] : slope * x[i];
  cache.input_shape = x.shape();
  cache.saved = {x};
  return y;
}

template <typename T>
Tensor<T> LeakyRelu<T>::backward(const ParamSet<T>&, const LayerCache<T>& cache,
                                 const Tensor<T>& dy, ParamSet<T>*) const {
  const auto& x = cache.saved[0];
  const T slope = static_cast<T>(slope_);
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = x[i] > T{0} ? dy[i] : slope * dy[i];
  return dx;
}

template <typename T>
Tensor<T> Tanh<T>::forward(const ParamSet<T>&, const Tensor<T>& x, LayerCache<T>& cache,
                           ForwardContext<T>&) const {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
  cache.input_shape = x.shape();
  cache.saved = {y};
  return y;
}

template <typename T>
Tensor<T> Tanh<T>::backward(const ParamSet<T>&, const LayerCache<T>& cache, const Tensor<T>& dy,
                            ParamSet<T>*) const {
  const auto& y = cache.saved[0];
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * (T{1} - y[i] * y[i]);
  return dx;
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::forward(const ParamSet<T>&, const Tensor<T>& x, LayerCache<T>& cache,
                                    ForwardContext<T>&) const {
  require_batched(x, 4, "global_pool");
  const std::size_t batch = x.dim(0);
  const std::size_t channels = x.dim(1);
  const std::size_t plane = x.dim(2) * x.dim(3);
  Tensor<T> y({batch, channels});
  const T inv = T{1} / static_cast<T>(plane);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const T* p = x.data() + (b * channels + c) * plane;
      T acc{0};
      for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      y[b * channels + c] = acc * inv;
    }
  }
  cache.input_shape = x.shape();
  cache.saved.clear();
  return y;
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::backward(const ParamSet<T>&, const LayerCache<T>& cache,
                                     const Tensor<T>& dy, ParamSet<T>*) const {
  const auto& s = cache.input_shape;
  const std::size_t plane = s[2] * s[3];
  const T inv = T{1} / static_cast<T>(plane);
  Tensor<T> dx(s);
  for (std::size_t bc = 0; bc < s[0] * s[1]; ++bc) {
    const T v = dy[bc] * inv;
    std::fill(dx.data() + bc * plane, dx.data() + (bc + 1) * plane, v);
  }
  return dx;
}

template <typename T>
Tensor<T> Reshape<T>::forward(const ParamSet<T>&, const Tensor<T>& x, LayerCache<T>& cache,
                              ForwardContext<T>&) const {
  Tensor<T> y = x;
  y.reshape(with_batch(x.dim(0), sample_));
  cache.input_shape = x.shape();
  return y;
}

template <typename T>
Tensor<T> Reshape<T>::backward(const ParamSet<T>&, const LayerCache<T>& cache,
                               const Tensor<T>& dy, ParamSet<T>*) const {
  Tensor<T> dx = dy;
  dx.reshape(cache.input_shape);
  return dx;
}

// ---- Sequential ----

template <typename T>
Shape Sequential<T>::output_shape(Shape sample) const {
  for (const auto& layer : layers_) sample = layer->output_shape(sample);
  return sample;
}

template <typename T>
void Sequential<T>::init(ParamSet<T>& params, ParamSet<T>& buffers, Rng& rng, double sigma) const {
  for (const auto& layer : layers_) layer->init(params, buffers, rng, sigma);
}

template <typename T>
Tensor<T> Sequential<T>::forward(const ParamSet<T>& params, Tensor<T> x, Tape& tape,
                                 ForwardContext<T>& ctx) const {
  tape.assign(layers_.size(), LayerCache<T>{});
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i]->forward(params, x, tape[i], ctx);
  }
  return x;
}

template <typename T>
Tensor<T> Sequential<T>::backward(const ParamSet<T>& params, const Tape& tape, Tensor<T> dy,
                                  ParamSet<T>* grads) const {
  if (tape.size() != layers_.size()) throw ArgumentError("backward called without matching tape");
  for (std::size_t i = layers_.size(); i-- > 0;) {
    dy = layers_[i]->backward(params, tape[i], dy, grads);
  }
  return dy;
}

#define PATCHSSL_INSTANTIATE_LAYERS(T)                                                       \
  template void weight_norm_forward<T>(const WeightNormLayout&, std::span<const T>,          \
                                       std::span<const T>, std::span<T>, std::span<T>);      \
  template void weight_norm_backward<T>(const WeightNormLayout&, std::span<const T>,         \
                                        std::span<const T>, std::span<const T>,              \
                                        std::span<const T>, std::span<T>, std::span<T>);     \
  template void accumulate<T>(ParamSet<T>&, const std::string&, const Tensor<T>&);           \
  template const Tensor<T>& param<T>(const ParamSet<T>&, const std::string&);                \
  template class Dropout<T>;                                                                 \
  template class Conv2d<T>;                                                                  \
  template class ConvTranspose2d<T>;                                                         \
  template class Dense<T>;                                                                   \
  template class BatchNorm<T>;                                                               \
  template class LeakyRelu<T>;                                                               \
  template class Tanh<T>;                                                                    \
  template class GlobalAvgPool<T>;                                                           \
  template class Reshape<T>;                                                                 \
  template class Sequential<T>;

PATCHSSL_INSTANTIATE_LAYERS(float)
PATCHSSL_INSTANTIATE_LAYERS(double)

#undef PATCHSSL_INSTANTIATE_LAYERS

}  // namespace patchssl::nn

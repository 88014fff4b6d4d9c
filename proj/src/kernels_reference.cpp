#include <algorithm>
#include <cstddef>

#include "patchssl/error.hpp"
#include "patchssl/kernels.hpp"

namespace patchssl::reference {

namespace {

// Input index for output (oh, ow) and tap (ki, kj), or -1 when in the padding.
std::ptrdiff_t tap(std::size_t o, std::size_t kk, const ConvGeometry& g, std::size_t extent) {
  const auto i = static_cast<std::ptrdiff_t>(o * g.stride + kk) - static_cast<std::ptrdiff_t>(g.pad);
  return (i < 0 || i >= static_cast<std::ptrdiff_t>(extent)) ? -1 : i;
}

void check(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::size_t batch, std::span<const T> x,
                    std::span<const T> w, std::span<const T> bias, std::span<T> y) {
  check(x.size() == batch * g.input_size() && w.size() == g.weight_size() &&
            y.size() == batch * g.output_size(),
        "reference conv2d_forward: size mismatch");
  const std::size_t k = g.kernel;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      for (std::size_t oh = 0; oh < g.out_h; ++oh) {
        for (std::size_t ow = 0; ow < g.out_w; ++ow) {
          T acc = bias.empty() ? T{0} : bias[o];
          for (std::size_t c = 0; c < g.in_channels; ++c) {
            for (std::size_t ki = 0; ki < k; ++ki) {
              const auto ih = tap(oh, ki, g, g.in_h);
              if (ih < 0) continue;
              for (std::size_t kj = 0; kj < k; ++kj) {
                const auto iw = tap(ow, kj, g, g.in_w);
                if (iw < 0) continue;
                acc += w[((o * g.in_channels + c) * k + ki) * k + kj] *
                       x[((b * g.in_channels + c) * g.in_h + ih) * g.in_w + iw];
              }
            }
          }
          y[((b * g.out_channels + o) * g.out_h + oh) * g.out_w + ow] = acc;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_data(const ConvGeometry& g, std::size_t batch, std::span<const T> dy,
                          std::span<const T> w, std::span<T> dx) {
  check(dy.size() == batch * g.output_size() && w.size() == g.weight_size() &&
            dx.size() == batch * g.input_size(),
        "reference conv2d_backward_data: size mismatch");
  std::fill(dx.begin(), dx.end(), T{0});
  const std::size_t k = g.kernel;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      for (std::size_t oh = 0; oh < g.out_h; ++oh) {
        for (std::size_t ow = 0; ow < g.out_w; ++ow) {
          const T grad = dy[((b * g.out_channels + o) * g.out_h + oh) * g.out_w + ow];
          for (std::size_t c = 0; c < g.in_channels; ++c) {
            for (std::size_t ki = 0; ki < k; ++ki) {
              const auto ih = tap(oh, ki, g, g.in_h);
              if (ih < 0) continue;
              for (std::size_t kj = 0; kj < k; ++kj) {
                const auto iw = tap(ow, kj, g, g.in_w);
                if (iw < 0) continue;
                dx[((b * g.in_channels + c) * g.in_h + ih) * g.in_w + iw] +=
                    grad * w[((o * g.in_channels + c) * k + ki) * k + kj];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_weights(const ConvGeometry& g, std::size_t batch, std::span<const T> x,
                             std::span<const T> dy, std::span<T> dw, std::span<T> dbias) {
  check(x.size() == batch * g.input_size() && dy.size() == batch * g.output_size() &&
            dw.size() == g.weight_size(),
        "reference conv2d_backward_weights: size mismatch");
  std::fill(dw.begin(), dw.end(), T{0});
  std::fill(dbias.begin(), dbias.end(), T{0});
  const std::size_t k = g.kernel;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      for (std::size_t oh = 0; oh < g.out_h; ++oh) {
        for (std::size_t ow = 0; ow < g.out_w; ++ow) {
          const T grad = dy[((b * g.out_channels + o) * g.out_h + oh) * g.out_w + ow];
          if (!dbias.empty()) dbias[o] += grad;
          for (std::size_t c = 0; c < g.in_channels; ++c) {
            for (std::size_t ki = 0; ki < k; ++ki) {
              const auto ih = tap(oh, ki, g, g.in_h);
              if (ih < 0) continue;
              for (std::size_t kj = 0; kj < k; ++kj) {
                const auto iw = tap(ow, kj, g, g.in_w);
                if (iw < 0) continue;
                dw[((o * g.in_channels + c) * k + ki) * k + kj] +=
                    grad * x[((b * g.in_channels + c) * g.in_h + ih) * g.in_w + iw];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void dense_forward(std::size_t batch, std::size_t in, std::size_t out, std::span<const T> x,
                   std::span<const T> w, std::span<const T> bias, std::span<T> y) {
  check(x.size() == batch * in && w.size() == out * in && y.size() == batch * out,
        "reference dense_forward: size mismatch");
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < out; ++o) {
      T acc = bias.empty() ? T{0} : bias[o];
      for (std::size_t i = 0; i < in; ++i) acc += x[b * in + i] * w[o * in + i];
      y[b * out + o] = acc;
    }
  }
}

template <typename T>
void dense_backward(std::size_t batch, std::size_t in, std::size_t out, std::span<const T> x,
                    std::span<const T> w, std::span<const T> dy, std::span<T> dx,
                    std::span<T> dw, std::span<T> dbias) {
  std::fill(dx.begin(), dx.end(), T{0});
  std::fill(dw.begin(), dw.end(), T{0});
  std::fill(dbias.begin(), dbias.end(), T{0});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < out; ++o) {
      const T grad = dy[b * out + o];
      if (!dbias.empty()) dbias[o] += grad;
      for (std::size_t i = 0; i < in; ++i) {
        if (!dx.empty()) dx[b * in + i] += grad * w[o * in + i];
        if (!dw.empty()) dw[o * in + i] += grad * x[b * in + i];
      }
    }
  }
}

#define PATCHSSL_INSTANTIATE_REFERENCE(T)                                                       \
  template void conv2d_forward<T>(const ConvGeometry&, std::size_t, std::span<const T>,         \
                                  std::span<const T>, std::span<const T>, std::span<T>);        \
  template void conv2d_backward_data<T>(const ConvGeometry&, std::size_t, std::span<const T>,   \
                                        std::span<const T>, std::span<T>);                      \
  template void conv2d_backward_weights<T>(const ConvGeometry&, std::size_t, std::span<const T>, \
                                           std::span<const T>, std::span<T>, std::span<T>);     \
  template void dense_forward<T>(std::size_t, std::size_t, std::size_t, std::span<const T>,     \
                                 std::span<const T>, std::span<const T>, std::span<T>);         \
  template void dense_backward<T>(std::size_t, std::size_t, std::size_t, std::span<const T>,    \
                                  std::span<const T>, std::span<const T>, std::span<T>,         \
                                  std::span<T>, std::span<T>);

PATCHSSL_INSTANTIATE_REFERENCE(float)
PATCHSSL_INSTANTIATE_REFERENCE(double)

#undef PATCHSSL_INSTANTIATE_REFERENCE

}  // namespace patchssl::reference

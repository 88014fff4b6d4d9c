#pragma once

#include <cstddef>
#include <span>

namespace patchssl {

// Geometry of a 2-D convolution over a [batch, channels, height, width] input.
// Weights are laid out [out_channels, in_channels, kernel, kernel].
struct ConvGeometry {
  std::size_t in_channels = 0;
  std::size_t in_h = 0;
  std::size_t in_w = 0;
  std::size_t out_channels = 0;
  std::size_t out_h = 0;
  std::size_t out_w = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  // Computes output extents; throws GeometryError when the window does not fit.
  static ConvGeometry make(std::size_t in_channels, std::size_t in_h, std::size_t in_w,
                           std::size_t out_channels, std::size_t kernel, std::size_t stride,
                           std::size_t pad);

  std::size_t input_size() const { return in_channels * in_h * in_w; }
  std::size_t output_size() const { return out_channels * out_h * out_w; }
  std::size_t weight_size() const { return out_channels * in_channels * kernel * kernel; }
  std::size_t col_rows() const { return in_channels * kernel * kernel; }
  std::size_t col_cols() const { return out_h * out_w; }
  bool is_pointwise() const { return kernel == 1 && stride == 1 && pad == 0; }
};

// Parallel kernels (OpenMP over samples, GEMM per sample). Results are
// independent of the thread count: weight gradients are reduced over fixed
// sample chunks in a fixed order.
namespace kernels {

inline constexpr std::size_t kWeightGradChunk = 8;

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::size_t batch, std::span<const T> x,
                    std::span<const T> w, std::span<const T> bias, std::span<T> y);

// dx is overwritten.
template <typename T>
void conv2d_backward_data(const ConvGeometry& g, std::size_t batch, std::span<const T> dy,
                          std::span<const T> w, std::span<T> dx);

// dw and dbias are overwritten; dbias may be empty.
template <typename T>
void conv2d_backward_weights(const ConvGeometry& g, std::size_t batch, std::span<const T> x,
                             std::span<const T> dy, std::span<T> dw, std::span<T> dbias);

// y[b, o] = sum_i x[b, i] * w[o, i] + bias[o]; bias may be empty.
template <typename T>
void dense_forward(std::size_t batch, std::size_t in, std::size_t out, std::span<const T> x,
                   std::span<const T> w, std::span<const T> bias, std::span<T> y);

template <typename T>
void dense_backward(std::size_t batch, std::size_t in, std::size_t out, std::span<const T> x,
                    std::span<const T> w, std::span<const T> dy, std::span<T> dx,
                    std::span<T> dw, std::span<T> dbias);

template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* cols);

template <typename T>
void col2im(const ConvGeometry& g, const T* cols, T* dx);

}  // namespace kernels

// Serial direct-loop implementations kept as the test oracle for the
// parallel kernels. Same contracts as above.
namespace reference {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::size_t batch, std::span<const T> x,
                    std::span<const T> w, std::span<const T> bias, std::span<T> y);

template <typename T>
void conv2d_backward_data(const ConvGeometry& g, std::size_t batch, std::span<const T> dy,
                          std::span<const T> w, std::span<T> dx);

template <typename T>
void conv2d_backward_weights(const ConvGeometry& g, std::size_t batch, std::span<const T> x,
                             std::span<const T> dy, std::span<T> dw, std::span<T> dbias);

template <typename T>
void dense_forward(std::size_t batch, std::size_t in, std::size_t out, std::span<const T> x,
                   std::span<const T> w, std::span<const T> bias, std::span<T> y);

template <typename T>
void dense_backward(std::size_t batch, std::size_t in, std::size_t out, std::span<const T> x,
                    std::span<const T> w, std::span<const T> dy, std::span<T> dx,
                    std::span<T> dw, std::span<T> dbias);

}  // namespace reference

}  // namespace patchssl

#include "patchssl/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "patchssl/error.hpp"
#include "patchssl/tensor.hpp"

namespace patchssl {

ConvGeometry ConvGeometry::make(std::size_t in_channels, std::size_t in_h, std::size_t in_w,
                                std::size_t out_channels, std::size_t kernel, std::size_t stride,
                                std::size_t pad) {
  if (kernel == 0 || stride == 0) throw GeometryError("conv kernel and stride must be positive");
  if (in_h + 2 * pad < kernel || in_w + 2 * pad < kernel) {
    throw GeometryError("conv window " + std::to_string(kernel) + " does not fit input " +
                        std::to_string(in_h) + "x" + std::to_string(in_w) + " with pad " +
                        std::to_string(pad));
  }
  ConvGeometry g;
  g.in_channels = in_channels;
  g.in_h = in_h;
  g.in_w = in_w;
  g.out_channels = out_channels;
  g.kernel = kernel;
  g.stride = stride;
  g.pad = pad;
  g.out_h = (in_h + 2 * pad - kernel) / stride + 1;
  g.out_w = (in_w + 2 * pad - kernel) / stride + 1;
  return g;
}

namespace kernels {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using ConstColVec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

void check_size(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(want) + " elements, got " +
                     std::to_string(got));
  }
}

}  // namespace

template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* cols) {
  const std::size_t k = g.kernel;
  const std::size_t n = g.col_cols();
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const T* xc = x + c * g.in_h * g.in_w;
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        T* row = cols + ((c * k + ki) * k + kj) * n;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          T* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h)) {
            std::fill(dst, dst + g.out_w, T{0});
            continue;
          }
          const T* src = xc + static_cast<std::size_t>(ih) * g.in_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.in_w)) ? T{0} : src[iw];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* cols, T* dx) {
  const std::size_t k = g.kernel;
  const std::size_t n = g.col_cols();
  std::fill(dx, dx + g.input_size(), T{0});
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    T* dxc = dx + c * g.in_h * g.in_w;
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const T* row = cols + ((c * k + ki) * k + kj) * n;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          T* dst = dxc + static_cast<std::size_t>(ih) * g.in_w;
          const T* src = row + oh * g.out_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.in_w)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::size_t batch, std::span<const T> x,
                    std::span<const T> w, std::span<const T> bias, std::span<T> y) {
  check_size(x.size(), batch * g.input_size(), "conv2d_forward input");
  check_size(w.size(), g.weight_size(), "conv2d_forward weight");
  check_size(y.size(), batch * g.output_size(), "conv2d_forward output");
  if (!bias.empty()) check_size(bias.size(), g.out_channels, "conv2d_forward bias");

  const auto m = static_cast<Eigen::Index>(g.out_channels);
  const auto k = static_cast<Eigen::Index>(g.col_rows());
  const auto n = static_cast<Eigen::Index>(g.col_cols());
  const ConstMatMap<T> wmat(w.data(), m, k);
  const bool pointwise = g.is_pointwise();

#pragma omp parallel
  {
    AlignedVector<T> cols(pointwise ? 0 : g.col_rows() * g.col_cols());
#pragma omp for schedule(static)
    for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(batch); ++b) {
      const T* xs = x.data() + static_cast<std::size_t>(b) * g.input_size();
      const T* src = xs;
      if (!pointwise) {
        im2col(g, xs, cols.data());
        src = cols.data();
      }
      MatMap<T> ymat(y.data() + static_cast<std::size_t>(b) * g.output_size(), m, n);
      ymat.noalias() = wmat * ConstMatMap<T>(src, k, n);
      if (!bias.empty()) ymat.colwise() += ConstColVec<T>(bias.data(), m);
    }
  }
}

template <typename T>
void conv2d_backward_data(const ConvGeometry& g, std::size_t batch, std::span<const T> dy,
                          std::span<const T> w, std::span<T> dx) {
  check_size(dy.size(), batch * g.output_size(), "conv2d_backward_data grad");
  check_size(w.size(), g.weight_size(), "conv2d_backward_data weight");
  check_size(dx.size(), batch * g.input_size(), "conv2d_backward_data output");

  const auto m = static_cast<Eigen::Index>(g.out_channels);
  const auto k = static_cast<Eigen::Index>(g.col_rows());
  const auto n = static_cast<Eigen::Index>(g.col_cols());
  const ConstMatMap<T> wmat(w.data(), m, k);
  const bool pointwise = g.is_pointwise();

#pragma omp parallel
  {
    AlignedVector<T> cols(pointwise ? 0 : g.col_rows() * g.col_cols());
#pragma omp for schedule(static)
    for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(batch); ++b) {
      const ConstMatMap<T> dymat(dy.data() + static_cast<std::size_t>(b) * g.output_size(), m, n);
      T* dxs = dx.data() + static_cast<std::size_t>(b) * g.input_size();
      if (pointwise) {
        MatMap<T>(dxs, k, n).noalias() = wmat.transpose() * dymat;
      } else {
        MatMap<T>(cols.data(), k, n).noalias() = wmat.transpose() * dymat;
        col2im(g, cols.data(), dxs);
      }
    }
  }
}

template <typename T>
void conv2d_backward_weights(const ConvGeometry& g, std::size_t batch, std::span<const T> x,
                             std::span<const T> dy, std::span<T> dw, std::span<T> dbias) {
  check_size(x.size(), batch * g.input_size(), "conv2d_backward_weights input");
  check_size(dy.size(), batch * g.output_size(), "conv2d_backward_weights grad");
  check_size(dw.size(), g.weight_size(), "conv2d_backward_weights weight grad");
  if (!dbias.empty()) check_size(dbias.size(), g.out_channels, "conv2d_backward_weights bias grad");

  const auto m = static_cast<Eigen::Index>(g.out_channels);
  const auto k = static_cast<Eigen::Index>(g.col_rows());
  const auto n = static_cast<Eigen::Index>(g.col_cols());
  const bool pointwise = g.is_pointwise();
  const std::size_t chunks = (batch + kWeightGradChunk - 1) / kWeightGradChunk;
  const std::size_t part = g.weight_size() + g.out_channels;
  AlignedVector<T> partials(chunks * part, T{0});

#pragma omp parallel
  {
    AlignedVector<T> cols(pointwise ? 0 : g.col_rows() * g.col_cols());
#pragma omp for schedule(static)
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(chunks); ++c) {
      T* pw = partials.data() + static_cast<std::size_t>(c) * part;
      T* pb = pw + g.weight_size();
      MatMap<T> dwmat(pw, m, k);
      const std::size_t begin = static_cast<std::size_t>(c) * kWeightGradChunk;
      const std::size_t end = std::min(batch, begin + kWeightGradChunk);
      for (std::size_t b = begin; b < end; ++b) {
        const T* xs = x.data() + b * g.input_size();
        const T* src = xs;
        if (!pointwise) {
          im2col(g, xs, cols.data());
          src = cols.data();
        }
        const ConstMatMap<T> dymat(dy.data() + b * g.output_size(), m, n);
        dwmat.noalias() += dymat * ConstMatMap<T>(src, k, n).transpose();
        for (Eigen::Index o = 0; o < m; ++o) pb[o] += dymat.row(o).sum();
      }
    }
  }

  std::fill(dw.begin(), dw.end(), T{0});
  if (!dbias.empty()) std::fill(dbias.begin(), dbias.end(), T{0});
  for (std::size_t c = 0; c < chunks; ++c) {
    const T* pw = partials.data() + c * part;
    for (std::size_t i = 0; i < g.weight_size(); ++i) dw[i] += pw[i];
    if (!dbias.empty()) {
      for (std::size_t o = 0; o < g.out_channels; ++o) dbias[o] += pw[g.weight_size() + o];
    }
  }
}

template <typename T>
void dense_forward(std::size_t batch, std::size_t in, std::size_t out, std::span<const T> x,
                   std::span<const T> w, std::span<const T> bias, std::span<T> y) {
  check_size(x.size(), batch * in, "dense_forward input");
  check_size(w.size(), out * in, "dense_forward weight");
  check_size(y.size(), batch * out, "dense_forward output");
  const auto b = static_cast<Eigen::Index>(batch);
  const auto i = static_cast<Eigen::Index>(in);
  const auto o = static_cast<Eigen::Index>(out);
  MatMap<T> ymat(y.data(), b, o);
  ymat.noalias() = ConstMatMap<T>(x.data(), b, i) * ConstMatMap<T>(w.data(), o, i).transpose();
  if (!bias.empty()) {
    check_size(bias.size(), out, "dense_forward bias");
    ymat.rowwise() += ConstColVec<T>(bias.data(), o).transpose();
  }
}

template <typename T>
void dense_backward(std::size_t batch, std::size_t in, std::size_t out, std::span<const T> x,
                    std::span<const T> w, std::span<const T> dy, std::span<T> dx,
                    std::span<T> dw, std::span<T> dbias) {
  check_size(dy.size(), batch * out, "dense_backward grad");
  const auto b = static_cast<Eigen::Index>(batch);
  const auto i = static_cast<Eigen::Index>(in);
  const auto o = static_cast<Eigen::Index>(out);
  const ConstMatMap<T> dymat(dy.data(), b, o);
  if (!dx.empty()) {
    check_size(dx.size(), batch * in, "dense_backward input grad");
    MatMap<T>(dx.data(), b, i).noalias() = dymat * ConstMatMap<T>(w.data(), o, i);
  }
  if (!dw.empty()) {
    check_size(dw.size(), out * in, "dense_backward weight grad");
    MatMap<T>(dw.data(), o, i).noalias() = dymat.transpose() * ConstMatMap<T>(x.data(), b, i);
  }
  if (!dbias.empty()) {
    check_size(dbias.size(), out, "dense_backward bias grad");
    for (Eigen::Index j = 0; j < o; ++j) dbias[static_cast<std::size_t>(j)] = dymat.col(j).sum();
  }
}

#define PATCHSSL_INSTANTIATE_KERNELS(T)                                                         \
  template void im2col<T>(const ConvGeometry&, const T*, T*);                                   \
  template void col2im<T>(const ConvGeometry&, const T*, T*);                                   \
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

PATCHSSL_INSTANTIATE_KERNELS(float)
PATCHSSL_INSTANTIATE_KERNELS(double)

#undef PATCHSSL_INSTANTIATE_KERNELS

}  // namespace kernels
}  // namespace patchssl

#include "patchssl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "patchssl/error.hpp"

namespace patchssl {

namespace {

template <typename T>
T softplus(T x) {
  return std::max(x, T{0}) + std::log1p(std::exp(-std::abs(x)));
}

template <typename T>
T sigmoid(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <typename T>
void require_logits(const Tensor<T>& logits, const char* what) {
  if (logits.rank() != 2 || logits.dim(0) == 0 || logits.dim(1) == 0) {
    throw ShapeError(std::string(what) + ": expected nonempty (B, K) logits, got " +
                     shape_string(logits.shape()));
  }
}

// d lse / d l = softmax(l), scaled per row.
template <typename T>
void add_scaled_softmax(const Tensor<T>& logits, const Tensor<T>& lse, std::size_t row, T scale,
                        Tensor<T>& grad) {
  const std::size_t k = logits.dim(1);
  for (std::size_t j = 0; j < k; ++j) {
    grad[row * k + j] += scale * std::exp(logits[row * k + j] - lse[row]);
  }
}

}  // namespace

LossBundle make_loss_bundle(double l_supervised, double l_unsupervised, double l_g) {
  LossBundle b;
  b.l_supervised = l_supervised;
  b.l_unsupervised = l_unsupervised;
  b.l_d = l_supervised + l_unsupervised;
  b.l_g = l_g;
  return b;
}

template <typename T>
Tensor<T> log_sum_exp(const Tensor<T>& logits) {
  require_logits(logits, "log_sum_exp");
  const std::size_t b = logits.dim(0);
  const std::size_t k = logits.dim(1);
  Tensor<T> out({b});
  for (std::size_t i = 0; i < b; ++i) {
    const T* row = logits.data() + i * k;
    const T m = *std::max_element(row, row + k);
    T s{0};
    for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - m);
    out[i] = m + std::log(s);
  }
  return out;
}

template <typename T>
LossGrad<T> loss_supervised(const Tensor<T>& logits, std::span<const int> labels) {
  require_logits(logits, "loss_supervised");
  const std::size_t b = logits.dim(0);
  const std::size_t k = logits.dim(1);
  if (labels.size() != b) throw ShapeError("loss_supervised: label count does not match batch");
  const Tensor<T> lse = log_sum_exp(logits);
  LossGrad<T> out{T{0}, Tensor<T>(logits.shape())};
  const T inv = T{1} / static_cast<T>(b);
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw ArgumentError("loss_supervised: label " + std::to_string(labels[i]) +
                          " outside [0, " + std::to_string(k) + ")");
    }
    const auto y = static_cast<std::size_t>(labels[i]);
    out.value += lse[i] - logits[i * k + y];
    add_scaled_softmax(logits, lse, i, inv, out.grad);
    out.grad[i * k + y] -= inv;
  }
  out.value *= inv;
  return out;
}

template <typename T>
LossGrad<T> unsupervised_real_term(const Tensor<T>& logits_real) {
  require_logits(logits_real, "unsupervised_real_term");
  const std::size_t b = logits_real.dim(0);
  const Tensor<T> lse = log_sum_exp(logits_real);
  LossGrad<T> out{T{0}, Tensor<T>(logits_real.shape())};
  const T inv = T{1} / static_cast<T>(b);
  for (std::size_t i = 0; i < b; ++i) {
    // -log(Z / (1 + Z)) = softplus(-lse)
    out.value += softplus(-lse[i]);
    add_scaled_softmax(logits_real, lse, i, -sigmoid(-lse[i]) * inv, out.grad);
  }
  out.value *= inv;
  return out;
}

template <typename T>
LossGrad<T> unsupervised_fake_term(const Tensor<T>& logits_fake) {
  require_logits(logits_fake, "unsupervised_fake_term");
  const std::size_t b = logits_fake.dim(0);
  const Tensor<T> lse = log_sum_exp(logits_fake);
  LossGrad<T> out{T{0}, Tensor<T>(logits_fake.shape())};
  const T inv = T{1} / static_cast<T>(b);
  for (std::size_t i = 0; i < b; ++i) {
    // -log(1 / (1 + Z)) = softplus(lse)
    out.value += softplus(lse[i]);
    add_scaled_softmax(logits_fake, lse, i, sigmoid(lse[i]) * inv, out.grad);
  }
  out.value *= inv;
  return out;
}

template <typename T>
T loss_unsupervised(const Tensor<T>& logits_real, const Tensor<T>& logits_fake) {
  return unsupervised_real_term(logits_real).value + unsupervised_fake_term(logits_fake).value;
}

template <typename T>
LossGrad<T> loss_feature_matching(const Tensor<T>& feat_real, const Tensor<T>& feat_fake) {
  if (feat_real.rank() != 2 || feat_fake.rank() != 2 || feat_real.dim(1) != feat_fake.dim(1)) {
    throw ShapeError("loss_feature_matching: feature shapes " + shape_string(feat_real.shape()) +
                     " and " + shape_string(feat_fake.shape()) + " are incompatible");
  }
  if (feat_real.dim(0) == 0 || feat_fake.dim(0) == 0) {
    throw ShapeError("loss_feature_matching: empty batch");
  }
  const std::size_t f = feat_real.dim(1);
  const std::size_t br = feat_real.dim(0);
  const std::size_t bf = feat_fake.dim(0);
  std::vector<T> mean_real(f, T{0});
  std::vector<T> mean_fake(f, T{0});
  for (std::size_t i = 0; i < br; ++i)
    for (std::size_t j = 0; j < f; ++j) mean_real[j] += feat_real[i * f + j];
  for (std::size_t i = 0; i < bf; ++i)
    for (std::size_t j = 0; j < f; ++j) mean_fake[j] += feat_fake[i * f + j];
  LossGrad<T> out{T{0}, Tensor<T>(feat_fake.shape())};
  const T inv_r = T{1} / static_cast<T>(br);
  const T inv_f = T{1} / static_cast<T>(bf);
  for (std::size_t j = 0; j < f; ++j) {
    const T diff = mean_real[j] * inv_r - mean_fake[j] * inv_f;
    out.value += std::abs(diff);
    const T sign = diff > T{0} ? T{1} : (diff < T{0} ? T{-1} : T{0});
    for (std::size_t i = 0; i < bf; ++i) out.grad[i * f + j] = -sign * inv_f;
  }
  return out;
}

#define PATCHSSL_INSTANTIATE_LOSSES(T)                                               \
  template Tensor<T> log_sum_exp<T>(const Tensor<T>&);                               \
  template LossGrad<T> loss_supervised<T>(const Tensor<T>&, std::span<const int>);   \
  template LossGrad<T> unsupervised_real_term<T>(const Tensor<T>&);                  \
  template LossGrad<T> unsupervised_fake_term<T>(const Tensor<T>&);                  \
  template T loss_unsupervised<T>(const Tensor<T>&, const Tensor<T>&);               \
  template LossGrad<T> loss_feature_matching<T>(const Tensor<T>&, const Tensor<T>&);

PATCHSSL_INSTANTIATE_LOSSES(float)
PATCHSSL_INSTANTIATE_LOSSES(double)

#undef PATCHSSL_INSTANTIATE_LOSSES

}  // namespace patchssl

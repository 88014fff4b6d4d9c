#pragma once

#include <span>

#include "patchssl/tensor.hpp"

namespace patchssl {

// Scalar loss plus its gradient with respect to one input.
template <typename T>
struct LossGrad {
  T value{};
  Tensor<T> grad;
};

// Discriminator and generator losses of one step.
struct LossBundle {
  double l_supervised = 0.0;
  double l_unsupervised = 0.0;
  double l_d = 0.0;  // always l_supervised + l_unsupervised
  double l_g = 0.0;
};

LossBundle make_loss_bundle(double l_supervised, double l_unsupervised, double l_g);

// Row-wise log(sum_k exp(l_k)), stabilized by the row maximum.
template <typename T>
Tensor<T> log_sum_exp(const Tensor<T>& logits);

// Mean over the batch of -log softmax(logits)[label] over the K real classes.
template <typename T>
LossGrad<T> loss_supervised(const Tensor<T>& logits, std::span<const int> labels);

// With Z(x) = sum_k exp(l_k) the generated-class probability is 1 / (1 + Z).
// Real term: mean of -log(Z / (1 + Z)). Fake term: mean of -log(1 / (1 + Z)).
template <typename T>
LossGrad<T> unsupervised_real_term(const Tensor<T>& logits_real);
template <typename T>
LossGrad<T> unsupervised_fake_term(const Tensor<T>& logits_fake);
template <typename T>
T loss_unsupervised(const Tensor<T>& logits_real, const Tensor<T>& logits_fake);

// || mean_b feat_real - mean_b feat_fake ||_1; gradient is taken w.r.t. feat_fake.
template <typename T>
LossGrad<T> loss_feature_matching(const Tensor<T>& feat_real, const Tensor<T>& feat_fake);

}  // namespace patchssl

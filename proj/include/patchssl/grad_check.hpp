#pragma once

#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

#include "patchssl/model.hpp"
#include "patchssl/tensor.hpp"

namespace patchssl {

enum class LossKind { supervised, unsupervised, feature_matching };

LossKind parse_loss_kind(std::string_view name);

struct GradCheckReport {
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
  double fraction_below_1e4 = 0.0;  // share of coordinates with relative error < 1e-4
  std::vector<double> rel_errors;
};

// Relative error |a - n| / max(|a|, |n|, 1e-8).
double relative_error(double analytic, double numeric);

// Central differences of `loss` over every coordinate of `params`, compared to `analytic`.
GradCheckReport compare_gradients(ParamSet<double> params, const ParamSet<double>& analytic,
                                  const std::function<double(const ParamSet<double>&)>& loss,
                                  double epsilon);

// A tiny network pair (two convs in the discriminator, one transposed conv in
// the generator) and fixed inputs, all in 64-bit.
struct GradCheckSetup {
  DiscriminatorArch disc;
  GeneratorArch gen;
  ParamSet<double> disc_params;
  GeneratorParams<double> gen_params;
  Tensor<double> x_labeled;
  std::vector<int> labels;
  Tensor<double> x_real;
  Tensor<double> x_fake;
  Tensor<double> z;
  std::uint64_t dropout_seed = 0;

  static GradCheckSetup tiny(std::uint64_t seed);
};

// Gradient check of one loss: supervised and unsupervised w.r.t. the
// discriminator parameters, feature matching w.r.t. the generator parameters
// through the discriminator. Dropout masks are replayed from `dropout_seed`.
GradCheckReport grad_check(LossKind kind, const GradCheckSetup& setup, double epsilon);

}  // namespace patchssl

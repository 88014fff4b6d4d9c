#include "patchssl/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "patchssl/error.hpp"
#include "patchssl/losses.hpp"

namespace patchssl {

LossKind parse_loss_kind(std::string_view name) {
  if (name == "supervised") return LossKind::supervised;
  if (name == "unsupervised") return LossKind::unsupervised;
  if (name == "feature_matching") return LossKind::feature_matching;
  throw ArgumentError("unknown loss '" + std::string(name) + "'");
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport compare_gradients(ParamSet<double> params, const ParamSet<double>& analytic,
                                  const std::function<double(const ParamSet<double>&)>& loss,
                                  double epsilon) {
  GradCheckReport report;
  std::size_t below = 0;
  for (auto& [name, tensor] : params) {
    auto it = analytic.find(name);
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double saved = tensor[i];
      tensor[i] = saved + epsilon;
      const double up = loss(params);
      tensor[i] = saved - epsilon;
      const double down = loss(params);
      tensor[i] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = it == analytic.end() ? 0.0 : it->second[i];
      const double err = relative_error(a, numeric);
      report.rel_errors.push_back(err);
      report.max_rel_error = std::max(report.max_rel_error, err);
      if (err < 1e-4) ++below;
    }
  }
  report.coordinates = report.rel_errors.size();
  report.fraction_below_1e4 =
      report.coordinates == 0 ? 1.0 : static_cast<double>(below) / report.coordinates;
  return report;
}

GradCheckSetup GradCheckSetup::tiny(std::uint64_t seed) {
  GradCheckSetup s;
  s.disc.input_size = 6;
  s.disc.block_widths = {3};
  s.disc.convs_per_block = 1;
  s.disc.reduce_layers = 1;
  s.disc.nin_layers = 0;
  s.gen.latent_dim = 4;
  s.gen.output_size = 6;
  s.gen.channels = {2};
  s.dropout_seed = derive_seed(seed, SeedStream::training);

  Rng rng(seed);
  // sigma 0.5 keeps pre-activations away from the leaky-ReLU kink at FD scale.
  s.disc_params = Discriminator<double>(s.disc).init(rng.next_u64(), 0.5);
  for (auto& [name, t] : s.disc_params) {
    for (auto& v : t) {
      if (name.ends_with(".b")) v = rng.normal(0.0, 0.1);
      if (name.ends_with(".g")) v = rng.uniform(0.5, 1.5);
    }
  }
  s.gen_params = Generator<double>(s.gen).init(rng.next_u64(), 0.5);
  auto fill = [&rng](Shape shape) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t) v = rng.uniform(-1.0, 1.0);
    return t;
  };
  s.x_labeled = fill({4, 3, 6, 6});
  s.labels = {0, 1, 1, 0};
  s.x_real = fill({4, 3, 6, 6});
  s.x_fake = fill({3, 3, 6, 6});
  s.z = fill({4, 4});
  return s;
}

namespace {

struct DiscLossEval {
  const GradCheckSetup& s;
  const Discriminator<double>& disc;
  LossKind kind;

  // Loss value and, when grads != nullptr, its gradient w.r.t. the discriminator.
  double operator()(const ParamSet<double>& params, ParamSet<double>* grads) const {
    Rng rng(s.dropout_seed);
    if (kind == LossKind::supervised) {
      DiscriminatorTape<double> tape;
      const auto out = disc.forward(params, s.x_labeled, Mode::train, &rng, tape);
      const auto l = loss_supervised<double>(out.logits, s.labels);
      if (grads != nullptr) disc.backward(params, tape, &l.grad, nullptr, grads);
      return l.value;
    }
    DiscriminatorTape<double> tape_r;
    DiscriminatorTape<double> tape_f;
    const auto out_r = disc.forward(params, s.x_real, Mode::train, &rng, tape_r);
    const auto out_f = disc.forward(params, s.x_fake, Mode::train, &rng, tape_f);
    const auto lr = unsupervised_real_term<double>(out_r.logits);
    const auto lf = unsupervised_fake_term<double>(out_f.logits);
    if (grads != nullptr) {
      disc.backward(params, tape_r, &lr.grad, nullptr, grads);
      disc.backward(params, tape_f, &lf.grad, nullptr, grads);
    }
    return lr.value + lf.value;
  }
};

struct GenLossEval {
  const GradCheckSetup& s;
  const Discriminator<double>& disc;
  const Generator<double>& gen;

  double operator()(const ParamSet<double>& learned, ParamSet<double>* grads) const {
    Rng rng(s.dropout_seed);
    GeneratorParams<double> gp{learned, s.gen_params.running};
    typename nn::Sequential<double>::Tape gtape;
    const auto fake = gen.forward(gp, s.z, Mode::train, gtape);
    const auto real = disc.forward(s.disc_params, s.x_real, Mode::train, &rng);
    DiscriminatorTape<double> dtape;
    const auto out_f = disc.forward(s.disc_params, fake, Mode::train, &rng, dtape);
    const auto l = loss_feature_matching<double>(real.features, out_f.features);
    if (grads != nullptr) {
      const auto dx = disc.backward(s.disc_params, dtape, nullptr, &l.grad, nullptr);
      gen.backward(gp, gtape, dx, grads);
    }
    return l.value;
  }
};

}  // namespace

GradCheckReport grad_check(LossKind kind, const GradCheckSetup& setup, double epsilon) {
  const Discriminator<double> disc(setup.disc);
  if (kind == LossKind::feature_matching) {
    const Generator<double> gen(setup.gen);
    GenLossEval eval{setup, disc, gen};
    ParamSet<double> analytic;
    eval(setup.gen_params.learned, &analytic);
    return compare_gradients(
        setup.gen_params.learned, analytic,
        [&](const ParamSet<double>& p) { return eval(p, nullptr); }, epsilon);
  }
  DiscLossEval eval{setup, disc, kind};
  ParamSet<double> analytic;
  eval(setup.disc_params, &analytic);
  return compare_gradients(
      setup.disc_params, analytic, [&](const ParamSet<double>& p) { return eval(p, nullptr); },
      epsilon);
}

}  // namespace patchssl

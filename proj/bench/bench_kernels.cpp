// Parallel (im2col + GEMM, OpenMP) kernels against the serial reference loops.
#include <benchmark/benchmark.h>

#include <vector>

#include "patchssl/kernels.hpp"
#include "patchssl/rng.hpp"

namespace {

using patchssl::ConvGeometry;

struct Problem {
  ConvGeometry g;
  std::size_t batch;
  std::vector<float> x, w, b, y, dy, dx, dw, db;
};

Problem make_problem(std::size_t channels, std::size_t extent, std::size_t batch) {
  Problem p{ConvGeometry::make(channels, extent, extent, channels, 3, 1, 1), batch, {}, {}, {}, {},
            {}, {}, {}, {}};
  patchssl::Rng rng(1);
  auto fill = [&rng](std::size_t n) {
    std::vector<float> v(n);
    for (auto& e : v) e = static_cast<float>(rng.uniform(-1.0, 1.0));
    return v;
  };
  p.x = fill(batch * p.g.input_size());
  p.w = fill(p.g.weight_size());
  p.b = fill(channels);
  p.y.resize(batch * p.g.output_size());
  p.dy = fill(batch * p.g.output_size());
  p.dx.resize(p.x.size());
  p.dw.resize(p.w.size());
  p.db.resize(channels);
  return p;
}

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
  auto p = make_problem(state.range(0), state.range(1), 32);
  for (auto _ : state) {
    if constexpr (Parallel) {
      patchssl::kernels::conv2d_forward<float>(p.g, p.batch, p.x, p.w, p.b, p.y);
    } else {
      patchssl::reference::conv2d_forward<float>(p.g, p.batch, p.x, p.w, p.b, p.y);
    }
    benchmark::DoNotOptimize(p.y.data());
  }
  state.SetItemsProcessed(state.iterations() * p.batch);
}

template <bool Parallel>
void BM_ConvBackward(benchmark::State& state) {
  auto p = make_problem(state.range(0), state.range(1), 32);
  for (auto _ : state) {
    if constexpr (Parallel) {
      patchssl::kernels::conv2d_backward_data<float>(p.g, p.batch, p.dy, p.w, p.dx);
      patchssl::kernels::conv2d_backward_weights<float>(p.g, p.batch, p.x, p.dy, p.dw, p.db);
    } else {
      patchssl::reference::conv2d_backward_data<float>(p.g, p.batch, p.dy, p.w, p.dx);
      patchssl::reference::conv2d_backward_weights<float>(p.g, p.batch, p.x, p.dy, p.dw, p.db);
    }
    benchmark::DoNotOptimize(p.dx.data());
    benchmark::DoNotOptimize(p.dw.data());
  }
  state.SetItemsProcessed(state.iterations() * p.batch);
}

void shapes(benchmark::internal::Benchmark* b) {
  b->Args({16, 16})->Args({32, 8})->Args({96, 32})->Unit(benchmark::kMillisecond);
}

BENCHMARK(BM_ConvForward<false>)->Name("reference/conv_forward")->Apply(shapes);
BENCHMARK(BM_ConvForward<true>)->Name("parallel/conv_forward")->Apply(shapes);
BENCHMARK(BM_ConvBackward<false>)->Name("reference/conv_backward")->Apply(shapes);
BENCHMARK(BM_ConvBackward<true>)->Name("parallel/conv_backward")->Apply(shapes);

}  // namespace

BENCHMARK_MAIN();

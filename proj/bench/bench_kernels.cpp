// Parallel kernels against the serial reference on mini-backbone shapes.
#include <benchmark/benchmark.h>

#include <vector>

#include "twoview/kernels.hpp"
#include "twoview/random.hpp"

namespace k = twoview::kernels;

namespace {

std::vector<float> random_values(std::size_t n, std::uint64_t seed) {
  twoview::Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = float(rng.uniform(-1.0, 1.0));
  return v;
}

k::ConvGeometry conv_geometry(int batch) {
  k::ConvGeometry g;
  g.batch = batch;
  g.in_h = g.in_w = 32;
  g.in_c = 8;
  g.out_c = 16;
  g.kernel = 3;
  g.padding = 1;
  g.out_h = g.out_w = k::ConvGeometry::output_extent(32, 3, 1, 1);
  return g;
}

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
  const auto g = conv_geometry(int(state.range(0)));
  const auto in = random_values(g.input_size(), 1), w = random_values(g.weight_size(), 2);
  const auto b = random_values(std::size_t(g.out_c), 3);
  std::vector<float> out(g.output_size());
  for (auto _ : state) {
    if constexpr (Parallel) k::conv2d_forward<float>(g, in, w, b, out);
    else k::reference::conv2d_forward<float>(g, in, w, b, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * g.batch);
}

template <bool Parallel>
void BM_ConvBackwardInput(benchmark::State& state) {
  const auto g = conv_geometry(int(state.range(0)));
  const auto go = random_values(g.output_size(), 1), w = random_values(g.weight_size(), 2);
  std::vector<float> gi(g.input_size());
  for (auto _ : state) {
    if constexpr (Parallel) k::conv2d_backward_input<float>(g, go, w, gi);
    else k::reference::conv2d_backward_input<float>(g, go, w, gi);
    benchmark::DoNotOptimize(gi.data());
  }
  state.SetItemsProcessed(state.iterations() * g.batch);
}

template <bool Parallel>
void BM_ConvBackwardParams(benchmark::State& state) {
  const auto g = conv_geometry(int(state.range(0)));
  const auto in = random_values(g.input_size(), 1), go = random_values(g.output_size(), 2);
  std::vector<float> gw(g.weight_size()), gb(std::size_t(g.out_c));
  for (auto _ : state) {
    if constexpr (Parallel) k::conv2d_backward_params<float>(g, in, go, gw, gb);
    else k::reference::conv2d_backward_params<float>(g, in, go, gw, gb);
    benchmark::DoNotOptimize(gw.data());
  }
  state.SetItemsProcessed(state.iterations() * g.batch);
}

template <bool Parallel>
void BM_DenseForward(benchmark::State& state) {
  const k::DenseGeometry g{int(state.range(0)), 2048, 128};
  const auto in = random_values(std::size_t(g.batch) * g.in, 1);
  const auto w = random_values(std::size_t(g.in) * g.out, 2), b = random_values(std::size_t(g.out), 3);
  std::vector<float> out(std::size_t(g.batch) * g.out);
  for (auto _ : state) {
    if constexpr (Parallel) k::dense_forward<float>(g, in, w, b, out);
    else k::reference::dense_forward<float>(g, in, w, b, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * g.batch);
}

template <bool Parallel>
void BM_MaxpoolForward(benchmark::State& state) {
  k::PoolGeometry g;
  g.batch = int(state.range(0));
  g.in_h = g.in_w = 64;
  g.channels = 8;
  g.out_h = g.out_w = 32;
  const auto in = random_values(g.input_size(), 1);
  std::vector<float> out(g.output_size());
  std::vector<std::int32_t> arg(g.output_size());
  for (auto _ : state) {
    if constexpr (Parallel) k::maxpool_forward<float>(g, in, out, arg);
    else k::reference::maxpool_forward<float>(g, in, out, arg);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * g.batch);
}

}  // namespace

BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/reference")->Arg(16)->Arg(64);
BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/parallel")->Arg(16)->Arg(64)->UseRealTime();
BENCHMARK(BM_ConvBackwardInput<false>)->Name("conv_backward_input/reference")->Arg(16)->Arg(64);
BENCHMARK(BM_ConvBackwardInput<true>)->Name("conv_backward_input/parallel")->Arg(16)->Arg(64)->UseRealTime();
BENCHMARK(BM_ConvBackwardParams<false>)->Name("conv_backward_params/reference")->Arg(16)->Arg(64);
BENCHMARK(BM_ConvBackwardParams<true>)->Name("conv_backward_params/parallel")->Arg(16)->Arg(64)->UseRealTime();
BENCHMARK(BM_DenseForward<false>)->Name("dense_forward/reference")->Arg(16)->Arg(64);
BENCHMARK(BM_DenseForward<true>)->Name("dense_forward/parallel")->Arg(16)->Arg(64)->UseRealTime();
BENCHMARK(BM_MaxpoolForward<false>)->Name("maxpool_forward/reference")->Arg(16)->Arg(64);
BENCHMARK(BM_MaxpoolForward<true>)->Name("maxpool_forward/parallel")->Arg(16)->Arg(64)->UseRealTime();

BENCHMARK_MAIN();

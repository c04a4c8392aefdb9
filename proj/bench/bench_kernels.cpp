// Parallel kernels against the serial reference loops, at the desk detector's
// layer shapes. Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "hhic/kernels.hpp"

namespace {

using namespace hhic;
using namespace hhic::kernels;

std::vector<float> random_vector(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> d(0.f, 1.f);
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

ConvGeometry conv_shape(int size, int cin, int cout) {
  return {.in_channels = cin, .in_height = size, .in_width = size, .out_channels = cout,
          .kernel = 3, .stride = 1, .pad = 1};
}

struct ConvData {
  ConvGeometry g;
  std::vector<float> in, w, b, out, gout, gin, gw, gb;
  explicit ConvData(const ConvGeometry& geo)
      : g(geo), in(random_vector(g.input_size(), 1)), w(random_vector(g.weight_size(), 2)),
        b(random_vector(g.out_channels, 3)), out(g.output_size()),
        gout(random_vector(g.output_size(), 4)), gin(g.input_size()), gw(g.weight_size()),
        gb(g.out_channels) {}
};

ConvData conv_data(const benchmark::State& state) {
  return ConvData(conv_shape(int(state.range(0)), int(state.range(1)), int(state.range(2))));
}

template <bool Reference>
void BM_ConvForward(benchmark::State& state) {
  ConvData d = conv_data(state);
  for (auto _ : state) {
    if constexpr (Reference)
      reference::conv2d_forward<float>(d.g, d.in, d.w, d.b, d.out);
    else
      conv2d_forward<float>(d.g, d.in, d.w, d.b, d.out);
    benchmark::DoNotOptimize(d.out.data());
  }
  state.counters["MFLOP"] = 2e-6 * double(d.g.weight_size()) * d.g.out_height() * d.g.out_width();
}

template <bool Reference>
void BM_ConvBackward(benchmark::State& state) {
  ConvData d = conv_data(state);
  for (auto _ : state) {
    if constexpr (Reference)
      reference::conv2d_backward<float>(d.g, d.in, d.w, d.gout, d.gin, d.gw, d.gb);
    else
      conv2d_backward<float>(d.g, d.in, d.w, d.gout, d.gin, d.gw, d.gb);
    benchmark::DoNotOptimize(d.gw.data());
  }
}

template <bool Reference>
void BM_Linear(benchmark::State& state) {
  const int rows = int(state.range(0)), in = int(state.range(1)), out = int(state.range(2));
  auto x = random_vector(std::size_t(rows) * in, 1), w = random_vector(std::size_t(out) * in, 2),
       b = random_vector(out, 3);
  std::vector<float> y(std::size_t(rows) * out);
  for (auto _ : state) {
    if constexpr (Reference)
      reference::linear_forward<float>(rows, in, out, x, w, b, y);
    else
      linear_forward<float>(rows, in, out, x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Reference>
void BM_RoiAlign(benchmark::State& state) {
  RoiAlignGeometry g{.channels = 64, .height = 16, .width = 16, .pooled = 7,
                     .sampling_ratio = 2, .spatial_scale = 0.125};
  auto feats = random_vector(std::size_t(g.channels) * g.height * g.width, 1);
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(0, 100);
  std::vector<Box> boxes;
  for (int i = 0; i < state.range(0); ++i) {
    double x = u(rng), y = u(rng);
    boxes.push_back({x, y, x + 8 + u(rng) * 0.25, y + 8 + u(rng) * 0.25});
  }
  std::vector<float> out(g.output_size_per_roi() * boxes.size());
  for (auto _ : state) {
    if constexpr (Reference)
      reference::roi_align_forward<float>(g, feats, boxes, out);
    else
      roi_align_forward<float>(g, feats, boxes, out);
    benchmark::DoNotOptimize(out.data());
  }
}

// {spatial size, in channels, out channels}
void conv_args(benchmark::internal::Benchmark* b) {
  b->Args({128, 3, 32})->Args({64, 32, 64})->Args({16, 64, 64})->Unit(benchmark::kMillisecond);
}

void linear_args(benchmark::internal::Benchmark* b) {
  b->Args({256, 3136, 256})->Args({256, 256, 256})->Unit(benchmark::kMillisecond);
}

}  // namespace

BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/reference")->Apply(conv_args);
BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/parallel")->Apply(conv_args);
BENCHMARK(BM_ConvBackward<true>)->Name("conv_backward/reference")->Apply(conv_args);
BENCHMARK(BM_ConvBackward<false>)->Name("conv_backward/parallel")->Apply(conv_args);
BENCHMARK(BM_Linear<true>)->Name("linear_forward/reference")->Apply(linear_args);
BENCHMARK(BM_Linear<false>)->Name("linear_forward/parallel")->Apply(linear_args);
BENCHMARK(BM_RoiAlign<true>)->Name("roi_align/reference")->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_RoiAlign<false>)->Name("roi_align/parallel")->Arg(256)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();

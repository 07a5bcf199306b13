// Serial vs OpenMP kernels at the layer shapes of the full-size model
// (batch 1, 30 frames, 96x96 crops). Arg 0 is serial, arg 1 is parallel.
//
//   ./build/bench/mouthnet_bench --benchmark_filter=Conv

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "mouthnet/kernels.hpp"

namespace k = mouthnet::kernels;

namespace {

std::vector<float> filled(std::size_t n, unsigned seed) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = dist(gen);
  return v;
}

struct ConvCase {
  std::size_t cin, cout;
  k::Dims3 in, stride;
};

// conv1 on the raw crop, conv2 after pool1, conv3 after pool2.
constexpr ConvCase kConv[] = {
    {1, 16, {30, 96, 96}, {1, 2, 2}},
    {16, 16, {30, 24, 24}, {1, 1, 1}},
    {16, 32, {30, 12, 12}, {1, 1, 1}},
};

k::Conv3dGeometry geometry(const ConvCase& c) {
  return k::conv3d_geometry(1, c.cin, c.cout, c.in, {3, 5, 5}, c.stride, {1, 2, 2});
}

void label(benchmark::State& state) {
  state.SetLabel(state.range(0) == 0 ? "serial" : "parallel");
}

void BM_ConvForward(benchmark::State& state) {
  const auto g = geometry(kConv[state.range(1)]);
  const auto x = filled(g.in_channels * g.in_volume(), 1);
  const auto w = filled(g.out_channels * g.in_channels * g.kernel_volume(), 2);
  const auto b = filled(g.out_channels, 3);
  std::vector<float> y(g.out_channels * g.out_volume());
  for (auto _ : state) {
    if (state.range(0) == 0)
      k::serial::conv3d_forward(g, x.data(), w.data(), b.data(), y.data());
    else
      k::parallel::conv3d_forward(g, x.data(), w.data(), b.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
  label(state);
}

void BM_ConvBackward(benchmark::State& state) {
  const auto g = geometry(kConv[state.range(1)]);
  const auto x = filled(g.in_channels * g.in_volume(), 1);
  const auto w = filled(g.out_channels * g.in_channels * g.kernel_volume(), 2);
  const auto gy = filled(g.out_channels * g.out_volume(), 3);
  std::vector<float> gx(x.size()), gw(w.size()), gb(g.out_channels);
  for (auto _ : state) {
    if (state.range(0) == 0) {
      k::serial::conv3d_backward_input(g, gy.data(), w.data(), gx.data());
      k::serial::conv3d_backward_weight(g, gy.data(), x.data(), gw.data(), gb.data());
    } else {
      k::parallel::conv3d_backward_input(g, gy.data(), w.data(), gx.data());
      k::parallel::conv3d_backward_weight(g, gy.data(), x.data(), gw.data(), gb.data());
    }
    benchmark::DoNotOptimize(gx.data());
    benchmark::DoNotOptimize(gw.data());
  }
  label(state);
}

// pool1: 16 channels at 30x48x48.
void BM_MaxPool(benchmark::State& state) {
  const auto g = k::pool3d_geometry(1, 16, {30, 48, 48}, {3, 5, 5}, {1, 2, 2}, {1, 2, 2});
  const auto x = filled(g.channels * g.in_volume(), 4);
  std::vector<float> y(g.channels * g.out_volume());
  std::vector<std::size_t> arg(y.size());
  std::vector<float> gx(x.size());
  for (auto _ : state) {
    if (state.range(0) == 0) {
      k::serial::maxpool3d_forward(g, x.data(), y.data(), arg.data());
      k::serial::maxpool3d_backward(g, y.data(), arg.data(), gx.data());
    } else {
      k::parallel::maxpool3d_forward(g, x.data(), y.data(), arg.data());
      k::parallel::maxpool3d_backward(g, y.data(), arg.data(), gx.data());
    }
    benchmark::DoNotOptimize(gx.data());
  }
  label(state);
}

// GRU input projection: (B*T = 60, 1152) x (768, 1152)^T.
void BM_Gemm(benchmark::State& state) {
  constexpr std::size_t m = 60, n = 768, kk = 1152;
  const auto a = filled(m * kk, 5), b = filled(n * kk, 6);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    if (state.range(0) == 0)
      k::serial::gemm_nt(m, n, kk, a.data(), b.data(), c.data());
    else
      k::parallel::gemm_nt(m, n, kk, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(m * n * kk));
  label(state);
}

}  // namespace

BENCHMARK(BM_ConvForward)->ArgsProduct({{0, 1}, {0, 1, 2}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward)->ArgsProduct({{0, 1}, {0, 1, 2}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MaxPool)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Gemm)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();

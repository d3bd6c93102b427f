#include <benchmark/benchmark.h>

#include <random>

#include "substyle/decomposition.hpp"
#include "substyle/transfer.hpp"
#include "substyle/wct.hpp"

namespace {

using namespace substyle;
using linalg::Matrix;

Matrix random_features(std::size_t c, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g;
  Matrix m(c, n);
  for (float& v : m.values()) v = g(rng);
  return m;
}

void BM_SymEig(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto stats = linalg::moment_stats(random_features(c, 4 * c, 1));
  for (auto _ : state) benchmark::DoNotOptimize(linalg::sym_eig(stats.cov));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_SymEig)->RangeMultiplier(2)->Range(32, 512)->Unit(benchmark::kMillisecond);

void BM_Conv3x3(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int side = static_cast<int>(state.range(1));
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(-0.1f, 0.1f);
  cnn::Conv3x3 layer;
  layer.name = "bench";
  layer.in = c;
  layer.out = c;
  layer.weight.resize(static_cast<std::size_t>(c) * c * 9);
  layer.bias.assign(c, 0.0f);
  for (float& w : layer.weight) w = u(rng);
  layer.prepare();
  cnn::Tensor x(c, side, side);
  for (float& v : x.data) v = u(rng);
  for (auto _ : state) benchmark::DoNotOptimize(cnn::conv3x3(layer, x));
  state.SetItemsProcessed(state.iterations() * 9LL * c * c * side * side);
}
BENCHMARK(BM_Conv3x3)->Args({64, 128})->Args({256, 64})->Args({512, 32})->Unit(benchmark::kMillisecond);

// Level-4 feature sizes of a 512x512 image: 512 channels, 64x64 positions.
void BM_Wct(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  const Matrix content = random_features(c, n, 3);
  const auto style = linalg::moment_stats(random_features(c, n, 4));
  for (auto _ : state) benchmark::DoNotOptimize(wct::wct(content, style));
}
BENCHMARK(BM_Wct)->Args({64, 4096})->Args({256, 4096})->Args({512, 4096})->Unit(benchmark::kMillisecond);

void BM_GmmFit(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  const Matrix points = random_features(static_cast<std::size_t>(state.range(1)), 4096, 5);
  for (auto _ : state) benchmark::DoNotOptimize(decomp::gmm_fit(points, k, 42));
}
BENCHMARK(BM_GmmFit)->Args({3, 3})->Args({6, 6})->Unit(benchmark::kMillisecond);

void BM_FastIca(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const Matrix f = random_features(c, 4096, 6);
  for (auto _ : state) benchmark::DoNotOptimize(decomp::fast_ica(f, 3, 42));
}
BENCHMARK(BM_FastIca)->Arg(64)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_DecomposeStyle(benchmark::State& state) {
  const Matrix f = random_features(512, 1024, 7);
  for (auto _ : state) benchmark::DoNotOptimize(decomp::decompose_style(f, 3, 42));
}
BENCHMARK(BM_DecomposeStyle)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

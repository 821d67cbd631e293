#include <benchmark/benchmark.h>

#include <random>

#include "cap/kernels.hpp"
#include "cap/pooling.hpp"

namespace {

cap::Tensor random_tensor(cap::Shape shape, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> uni(-1.0f, 1.0f);
  cap::Tensor t(std::move(shape));
  for (float& v : t.values()) v = uni(rng);
  return t;
}

cap::Backend backend_of(const benchmark::State& state) {
  return state.range(0) == 0 ? cap::Backend::Serial : cap::Backend::Parallel;
}

cap::SegmentRanges pairs(std::size_t k) {
  cap::SegmentRanges r;
  for (std::size_t t = 0; t + 1 < k; t += 3) r.ranges.push_back({t, t + 1});
  return r;
}

void BM_Linear(benchmark::State& state) {
  const auto x = random_tensor({64, 768}, 1);
  const auto w = random_tensor({768, 3072}, 2);
  const auto b = random_tensor({3072}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(cap::kernels::linear(backend_of(state), x, w, b));
}

void BM_Attention(benchmark::State& state) {
  const auto qkv = random_tensor({128, 3 * 768}, 4);
  const auto v = cap::kernels::value_columns(qkv);
  for (auto _ : state) {
    auto p = cap::kernels::attention_pattern(backend_of(state), qkv, 12);
    benchmark::DoNotOptimize(cap::kernels::apply_pattern(backend_of(state), p, v));
  }
}

void BM_Pool1d(benchmark::State& state) {
  const auto x = random_tensor({8, 128, 768}, 5);
  const auto r = pairs(128);
  for (auto _ : state) benchmark::DoNotOptimize(cap::pool_1d(x, r, cap::Protocol::Mean, backend_of(state)));
}

void BM_Pool2d(benchmark::State& state) {
  const auto p = random_tensor({1, 12, 128, 128}, 6);
  const auto r = pairs(128);
  for (auto _ : state) benchmark::DoNotOptimize(cap::pool_2d(p, r, cap::Protocol::Sum, backend_of(state)));
}

}  // namespace

BENCHMARK(BM_Linear)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Attention)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Pool1d)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Pool2d)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();

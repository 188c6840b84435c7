// Serial reference kernels against the OpenMP versions. Thread count comes
// from the benchmark argument, so run e.g.
//   bench_kernels --benchmark_filter=gemm
// on a multi-core machine to see the scaling.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "selectfusion/kernels.hpp"

namespace k = selectfusion::kernels;

namespace {

std::vector<double> uniform(std::size_t n, double lo, double hi) {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

void BM_GemmSerial(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = uniform(n * n, -1, 1), b = uniform(n * n, -1, 1);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    k::serial::gemm(a, b, c, n, n, n, k::Trans::No, k::Trans::No, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

void BM_GemmParallel(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  k::set_threads(static_cast<int>(state.range(1)));
  const auto a = uniform(n * n, -1, 1), b = uniform(n * n, -1, 1);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    k::gemm(a, b, c, n, n, n, k::Trans::No, k::Trans::No, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
  k::set_threads(1);
}

void BM_SigmoidSerial(benchmark::State& state) {
  const auto in = uniform(static_cast<std::size_t>(state.range(0)), -4, 4);
  std::vector<double> out(in.size());
  for (auto _ : state) {
    k::serial::map_unary(k::Unary::Sigmoid, in, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_SigmoidParallel(benchmark::State& state) {
  k::set_threads(static_cast<int>(state.range(1)));
  const auto in = uniform(static_cast<std::size_t>(state.range(0)), -4, 4);
  std::vector<double> out(in.size());
  for (auto _ : state) {
    k::map_unary(k::Unary::Sigmoid, in, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
  k::set_threads(1);
}

void BM_GumbelSerial(benchmark::State& state) {
  const auto u = uniform(static_cast<std::size_t>(state.range(0)), 1e-6, 1 - 1e-6);
  std::vector<double> out(u.size());
  for (auto _ : state) {
    k::serial::gumbel_from_uniform(u, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_GumbelParallel(benchmark::State& state) {
  k::set_threads(static_cast<int>(state.range(1)));
  const auto u = uniform(static_cast<std::size_t>(state.range(0)), 1e-6, 1 - 1e-6);
  std::vector<double> out(u.size());
  for (auto _ : state) {
    k::gumbel_from_uniform(u, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
  k::set_threads(1);
}

}  // namespace

BENCHMARK(BM_GemmSerial)->Arg(64)->Arg(256);
BENCHMARK(BM_GemmParallel)->ArgsProduct({{64, 256}, {1, 2, 4}})->UseRealTime();
BENCHMARK(BM_SigmoidSerial)->Arg(1 << 20);
BENCHMARK(BM_SigmoidParallel)->ArgsProduct({{1 << 20}, {1, 2, 4}})->UseRealTime();
BENCHMARK(BM_GumbelSerial)->Arg(1 << 20);
BENCHMARK(BM_GumbelParallel)->ArgsProduct({{1 << 20}, {1, 2, 4}})->UseRealTime();

BENCHMARK_MAIN();

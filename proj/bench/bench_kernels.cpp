// Parallel kernels against their serial reference twins.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "wmnav/kernels.hpp"

namespace {

std::vector<float> random_vec(std::size_t n) {
  std::mt19937 rng(42);
  std::normal_distribution<float> d;
  std::vector<float> v(n);
  for (float& x : v) x = d(rng);
  return v;
}

void BM_Gemm(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  auto a = random_vec(static_cast<std::size_t>(n) * n), b = random_vec(static_cast<std::size_t>(n) * n);
  std::vector<float> c(static_cast<std::size_t>(n) * n);
  for (auto _ : state) {
    wmnav::kernels::gemm(n, n, n, a.data(), false, b.data(), false, c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOPS"] = benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate,
                                                benchmark::Counter::kIs1000);
}

void BM_GemmReference(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  auto a = random_vec(static_cast<std::size_t>(n) * n), b = random_vec(static_cast<std::size_t>(n) * n);
  std::vector<float> c(static_cast<std::size_t>(n) * n);
  for (auto _ : state) {
    wmnav::kernels::gemm_reference(n, n, n, a.data(), false, b.data(), false, c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOPS"] = benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate,
                                                benchmark::Counter::kIs1000);
}

void BM_Im2col(benchmark::State& state) {
  const wmnav::kernels::ConvGeom g{32, 16, 32, 32, 3, 2, 1};
  auto img = random_vec(32UL * 16 * 32 * 32);
  std::vector<float> cols(static_cast<std::size_t>(g.col_rows()) * g.col_cols());
  for (auto _ : state) {
    wmnav::kernels::im2col(g, img.data(), cols.data());
    benchmark::DoNotOptimize(cols.data());
  }
}

void BM_Im2colReference(benchmark::State& state) {
  const wmnav::kernels::ConvGeom g{32, 16, 32, 32, 3, 2, 1};
  auto img = random_vec(32UL * 16 * 32 * 32);
  std::vector<float> cols(static_cast<std::size_t>(g.col_rows()) * g.col_cols());
  for (auto _ : state) {
    wmnav::kernels::im2col_reference(g, img.data(), cols.data());
    benchmark::DoNotOptimize(cols.data());
  }
}

}  // namespace

BENCHMARK(BM_Gemm)->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_GemmReference)->Arg(64)->Arg(256);
BENCHMARK(BM_Im2col);
BENCHMARK(BM_Im2colReference);

BENCHMARK_MAIN();

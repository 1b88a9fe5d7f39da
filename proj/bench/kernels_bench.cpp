// Serial reference vs OpenMP kernels. Thread count follows OMP_NUM_THREADS.
#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "mtk/kernels.hpp"

namespace k = mtk::kernels;

namespace {

std::vector<double> fill(std::size_t n, double lo, double hi, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

template <bool Ref>
void BM_Gemm(benchmark::State& st) {
  const k::index_t n = st.range(0);
  const auto a = fill(n * n, -1, 1, 1), b = fill(n * n, -1, 1, 2);
  std::vector<double> c(n * n);
  for (auto _ : st) {
    if constexpr (Ref) k::gemm_reference(n, n, n, a.data(), b.data(), c.data(), false);
    else k::gemm(n, n, n, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  st.counters["flops"] = benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate);
}

template <bool Ref>
void BM_Depthwise(benchmark::State& st) {
  const k::index_t hw = st.range(0), C = 64;
  const auto x = fill(hw * hw * C, -1, 1, 3), w = fill(9 * C, -1, 1, 4);
  std::vector<double> y(x.size());
  for (auto _ : st) {
    if constexpr (Ref) k::depthwise3x3_reference(1, hw, hw, C, x.data(), w.data(), y.data());
    else k::depthwise3x3(1, hw, hw, C, x.data(), w.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
}

struct ScanData {
  std::vector<double> x, delta, a, b, c, d;
  k::ScanProblem<double> p;
  ScanData(k::index_t L, k::index_t C, k::index_t N)
      : x(fill(L * C, -1, 1, 5)), delta(fill(L * C, 0.01, 0.2, 6)), a(fill(C * N, -2, -0.1, 7)),
        b(fill(L * N, -1, 1, 8)), c(fill(L * N, -1, 1, 9)), d(fill(C, -1, 1, 10)) {
    p.length = L;
    p.channels = C;
    p.state = N;
    p.x = x.data();
    p.delta = delta.data();
    p.a = a.data();
    p.b = b.data();
    p.c = c.data();
    p.d = d.data();
  }
};

// 0 = reference, 1 = sequential OpenMP, 2 = chunked
template <int Impl>
void BM_Scan(benchmark::State& st) {
  ScanData s(st.range(0), 32, 16);
  std::vector<double> y(s.x.size());
  for (auto _ : st) {
    if constexpr (Impl == 0) k::selective_scan_reference(s.p, y.data());
    else if constexpr (Impl == 1) k::selective_scan(s.p, y.data());
    else k::selective_scan_chunked(s.p, 64, y.data());
    benchmark::DoNotOptimize(y.data());
  }
  st.SetComplexityN(st.range(0));
}

template <bool Ref>
void BM_Attention(benchmark::State& st) {
  const k::index_t L = st.range(0), dim = 32;
  const auto q = fill(L * dim, -1, 1, 11), kk = fill(L * dim, -1, 1, 12),
             v = fill(L * dim, -1, 1, 13);
  std::vector<double> out(q.size());
  for (auto _ : st) {
    if constexpr (Ref) k::attention_reference(L, dim, q.data(), kk.data(), v.data(), out.data());
    else k::attention(L, dim, q.data(), kk.data(), v.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
  st.SetComplexityN(L);
}

}  // namespace

BENCHMARK(BM_Gemm<true>)->Name("gemm/reference")->Arg(64)->Arg(256);
BENCHMARK(BM_Gemm<false>)->Name("gemm/omp")->Arg(64)->Arg(256);
BENCHMARK(BM_Depthwise<true>)->Name("depthwise3x3/reference")->Arg(32)->Arg(64);
BENCHMARK(BM_Depthwise<false>)->Name("depthwise3x3/omp")->Arg(32)->Arg(64);
BENCHMARK(BM_Scan<0>)->Name("scan/reference")->RangeMultiplier(4)->Range(256, 4096)->Complexity();
BENCHMARK(BM_Scan<1>)->Name("scan/omp")->RangeMultiplier(4)->Range(256, 4096)->Complexity();
BENCHMARK(BM_Scan<2>)->Name("scan/omp_chunked")->RangeMultiplier(4)->Range(256, 4096)->Complexity();
BENCHMARK(BM_Attention<true>)->Name("attention/reference")->RangeMultiplier(2)->Range(128, 1024)->Complexity();
BENCHMARK(BM_Attention<false>)->Name("attention/omp")->RangeMultiplier(2)->Range(128, 1024)->Complexity();

BENCHMARK_MAIN();

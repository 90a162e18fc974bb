// Serial reference vs OpenMP kernels on the matrix shapes a training step hits.
// Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "milkt/kernels.hpp"
#include "milkt/parallel.hpp"

namespace {

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

using Gemm = void (*)(std::span<const double>, std::span<const double>, std::span<double>,
                      std::size_t, std::size_t, std::size_t);

enum class Layout { nn, tn, nt };

// Args: r, k, c in the kernel's own terms. nn: A r x k, B k x c, C r x c.
// tn: A r x k, B r x c, C k x c. nt: A r x k, B c x k, C r x c.
template <Gemm kernel, Layout layout>
void run(benchmark::State& state) {
  const auto r = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const auto c = static_cast<std::size_t>(state.range(2));
  const auto a = random_vector(r * k, 1);
  const auto b = random_vector((layout == Layout::tn ? r : k) * c, 2);
  std::vector<double> out((layout == Layout::tn ? k : r) * c);
  for (auto _ : state) {
    std::fill(out.begin(), out.end(), 0.0);
    kernel(a, b, out, r, k, c);
    benchmark::DoNotOptimize(out.data());
    benchmark::ClobberMemory();
  }
  state.counters["GFLOP/s"] = benchmark::Counter(2.0 * static_cast<double>(r * k * c),
                                                 benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::kIs1000);
  state.counters["threads"] = milkt::max_threads();
}

// Instance embedding (bag x d_in times d_in x d_embed) and the attention branch.
void shapes(benchmark::internal::Benchmark* b) {
  b->Args({125, 1024, 512})->Args({200, 1024, 768})->Args({125, 512, 256})->Args({512, 512, 512});
  b->Unit(benchmark::kMicrosecond);
}

}  // namespace

BENCHMARK(run<milkt::kernels::serial::gemm_nn, Layout::nn>)->Name("gemm_nn/serial")->Apply(shapes);
BENCHMARK(run<milkt::kernels::parallel::gemm_nn, Layout::nn>)->Name("gemm_nn/parallel")->Apply(shapes);
BENCHMARK(run<milkt::kernels::serial::gemm_tn, Layout::tn>)->Name("gemm_tn/serial")->Apply(shapes);
BENCHMARK(run<milkt::kernels::parallel::gemm_tn, Layout::tn>)->Name("gemm_tn/parallel")->Apply(shapes);
BENCHMARK(run<milkt::kernels::serial::gemm_nt, Layout::nt>)->Name("gemm_nt/serial")->Apply(shapes);
BENCHMARK(run<milkt::kernels::parallel::gemm_nt, Layout::nt>)->Name("gemm_nt/parallel")->Apply(shapes);

BENCHMARK_MAIN();

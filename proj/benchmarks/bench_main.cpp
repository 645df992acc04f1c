// Micro benchmarks for the hot paths: linearization, covariance assembly,
// density evaluation, kernel evaluation, path simulation, and a small
// series-term convolution.  Run with --benchmark_filter=<regex> to narrow.

#include <benchmark/benchmark.h>

#include "kolmoparam/flow.hpp"
#include "kolmoparam/gaussian.hpp"
#include "kolmoparam/model.hpp"
#include "kolmoparam/parametrix.hpp"
#include "kolmoparam/simulate.hpp"

using namespace kolmoparam;

namespace {

Vec vec2(double a, double b) {
    Vec v(2);
    v << a, b;
    return v;
}

ChainModel bench_model() {
    return build_model("perturbed-chain", {{"amp", 0.3}, {"drift_amp", 0.4}});
}

void BM_Linearize(benchmark::State& state) {
    const ChainModel m = bench_model();
    const Vec y = vec2(0.1, -0.2);
    for (auto _ : state) {
        benchmark::DoNotOptimize(linearize(m, 1.0, y, 0.0));
    }
}
BENCHMARK(BM_Linearize);

void BM_Covariance(benchmark::State& state) {
    const ChainModel m = bench_model();
    const LinearizedSystem lin = linearize(m, 1.0, vec2(0.1, -0.2), 0.0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(covariance(lin, 0.0, 1.0, 16));
    }
}
BENCHMARK(BM_Covariance);

void BM_CovarianceCached(benchmark::State& state) {
    const ChainModel m = bench_model();
    const LinearizedSystem lin = linearize(m, 1.0, vec2(0.1, -0.2), 0.0);
    double u = 0.2;
    for (auto _ : state) {
        benchmark::DoNotOptimize(covariance_cached(lin, 0.0, u));
        u = (u < 0.9) ? u + 1e-4 : 0.2;
    }
}
BENCHMARK(BM_CovarianceCached);

void BM_FrozenDensity(benchmark::State& state) {
    const ChainModel m = bench_model();
    const Vec y = vec2(0.1, -0.2);
    const Vec x = vec2(0.3, 0.2);
    const LinearizedSystem lin = linearize(m, 1.0, y, 0.0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(frozen_density(lin, 0.0, 1.0, x, y, 0));
    }
}
BENCHMARK(BM_FrozenDensity);

void BM_FrozenDerivatives(benchmark::State& state) {
    const ChainModel m = bench_model();
    const Vec y = vec2(0.1, -0.2);
    const Vec x = vec2(0.3, 0.2);
    const LinearizedSystem lin = linearize(m, 1.0, y, 0.0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(frozen_density_derivatives(lin, 0.0, 1.0, x, y, 0));
    }
}
BENCHMARK(BM_FrozenDerivatives);

void BM_KernelH(benchmark::State& state) {
    const ChainModel m = bench_model();
    const Vec y = vec2(0.1, -0.2);
    const Vec w = vec2(0.25, 0.05);
    const LinearizedSystem lin = linearize(m, 1.0, y, 0.0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(kernel_H(m, lin, 0.5, 1.0, w, y, 0));
    }
}
BENCHMARK(BM_KernelH);

void BM_EulerPaths(benchmark::State& state) {
    const ChainModel m = bench_model();
    const Vec x = vec2(0.0, 0.0);
    const auto budget = static_cast<std::uint64_t>(state.range(0));
    for (auto _ : state) {
        benchmark::DoNotOptimize(euler_paths(m, 0.0, x, 1.0, 100, budget, 7));
    }
    state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * budget * 100));
}
BENCHMARK(BM_EulerPaths)->Arg(1000)->Arg(10000);

void BM_ConvolveOrder1(benchmark::State& state) {
    const ChainModel m = bench_model();
    const Vec x = vec2(0.2, -0.1);
    const Vec y = vec2(0.0, 0.0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(convolve_chain(m, 0.0, 0.5, x, y, 1, 2000, 11));
    }
}
BENCHMARK(BM_ConvolveOrder1);

}  // namespace

BENCHMARK_MAIN();

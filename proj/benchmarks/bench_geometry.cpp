#include <benchmark/benchmark.h>

#include "defemb/embedding.hpp"
#include "defemb/geometry.hpp"
#include "defemb/rng.hpp"

using namespace defemb;

namespace {

EmbeddingMatrix gaussian(uint32_t rows, uint32_t cols, uint64_t seed) {
    EmbeddingMatrix e(rows, cols);
    Rng rng(seed);
    for (float& x : e.data) x = float(rng.normal());
    return e;
}

}  // namespace

static void bm_isotropy(benchmark::State& state) {
    const EmbeddingMatrix e = gaussian(uint32_t(state.range(0)), uint32_t(state.range(1)), 7);
    for (auto _ : state) {
        benchmark::DoNotOptimize(isotropy(e));
    }
}
BENCHMARK(bm_isotropy)->Args({256, 32})->Args({1024, 64})->Unit(benchmark::kMicrosecond);

static void bm_del_direction(benchmark::State& state) {
    const EmbeddingMatrix e = gaussian(uint32_t(state.range(0)), uint32_t(state.range(1)), 7);
    for (auto _ : state) {
        benchmark::DoNotOptimize(del_direction(e, {3}));
    }
}
BENCHMARK(bm_del_direction)->Args({256, 32})->Args({1024, 64})->Unit(benchmark::kMicrosecond);

static void bm_svd_project2d(benchmark::State& state) {
    const EmbeddingMatrix e = gaussian(uint32_t(state.range(0)), 64, 7);
    for (auto _ : state) {
        benchmark::DoNotOptimize(svd_project2d(e));
    }
}
BENCHMARK(bm_svd_project2d)->Arg(1024)->Unit(benchmark::kMicrosecond);

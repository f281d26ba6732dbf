#include <benchmark/benchmark.h>

#include <vector>

#include "defemb/model.hpp"
#include "defemb/rng.hpp"

using namespace defemb;

namespace {

struct Setup {
    Params<float> params;
    std::vector<Example<float>> batch;
};

Setup make_setup(int seq_len, int batch_size) {
    ModelConfig cfg;
    cfg.vocab_size = 512;
    cfg.h_e = 32;
    cfg.h_s = 32;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.ffn = 64;
    cfg.max_seq = 128;
    cfg.mode = ModelMode::encoder;
    Setup s{init_params<float>(cfg, 5), {}};
    Rng rng(6);
    for (int b = 0; b < batch_size; ++b) {
        Example<float> ex;
        for (int k = 0; k < seq_len; ++k)
            ex.src.push_back(int(rng.below(uint64_t(cfg.vocab_size))));
        for (size_t k = 0; k < size_t(seq_len); k += 4) {
            ex.positions.push_back(k);
            ex.target_ids.push_back(int(rng.below(uint64_t(cfg.vocab_size))));
        }
        s.batch.push_back(std::move(ex));
    }
    return s;
}

}  // namespace

static void bm_forward(benchmark::State& state) {
    Setup s = make_setup(int(state.range(0)), 8);
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            loss_and_grads(s.params, s.batch, Objective::cross_entropy, false));
    }
}
BENCHMARK(bm_forward)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

static void bm_forward_backward(benchmark::State& state) {
    Setup s = make_setup(int(state.range(0)), 8);
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            loss_and_grads(s.params, s.batch, Objective::cross_entropy, true));
    }
}
BENCHMARK(bm_forward_backward)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

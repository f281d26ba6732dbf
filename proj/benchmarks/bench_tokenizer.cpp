#include <benchmark/benchmark.h>

#include <string>

#include "defemb/rng.hpp"
#include "defemb/tokenizer.hpp"

using namespace defemb;

namespace {

std::string synthetic_corpus(size_t words, uint64_t seed) {
    static const char* bank[] = {"the",  "quick", "brown",  "fox",   "jumps", "over",
                                 "lazy", "dog",   "stream", "stone", "river", "light"};
    Rng rng(seed);
    std::string out;
    for (size_t i = 0; i < words; ++i) {
        if (i) out += ' ';
        out += bank[rng.below(12)];
    }
    return out;
}

}  // namespace

static void bm_tokenizer_train(benchmark::State& state) {
    const std::string corpus = synthetic_corpus(size_t(state.range(0)), 1);
    for (auto _ : state) {
        benchmark::DoNotOptimize(Tokenizer::train(corpus, 384, 8, 1));
    }
}
BENCHMARK(bm_tokenizer_train)->Arg(2000)->Arg(8000)->Unit(benchmark::kMillisecond);

static void bm_tokenizer_encode(benchmark::State& state) {
    const std::string corpus = synthetic_corpus(8000, 1);
    const Tokenizer tok = Tokenizer::train(corpus, 384, 8, 1);
    const std::string text = synthetic_corpus(size_t(state.range(0)), 2);
    for (auto _ : state) {
        benchmark::DoNotOptimize(tok.encode(text));
    }
    state.SetBytesProcessed(int64_t(state.iterations()) * int64_t(text.size()));
}
BENCHMARK(bm_tokenizer_encode)->Arg(200)->Arg(2000);

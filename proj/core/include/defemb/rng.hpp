#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace defemb {

// Deterministic RNG. std::mt19937_64 produces the same stream on every
// platform; the distribution transforms are hand-rolled because the std::
// distribution objects are implementation-defined and would break frozen
// test values across standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1), 53 random bits
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // unbiased uniform integer in [0, n)
    uint64_t below(uint64_t n) {
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do { x = engine_(); } while (x >= limit);
        return x % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller with a cached spare
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1;
        do { u1 = uniform(); } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

    // n distinct values from [0, pool) in draw order
    std::vector<size_t> sample_without_replacement(size_t pool, size_t n) {
        std::vector<size_t> ids(pool);
        for (size_t i = 0; i < pool; ++i) ids[i] = i;
        std::vector<size_t> out;
        out.reserve(n);
        for (size_t i = 0; i < n && i < pool; ++i) {
            const size_t j = i + below(pool - i);
            std::swap(ids[i], ids[j]);
            out.push_back(ids[i]);
        }
        return out;
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace defemb

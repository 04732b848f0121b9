#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "bbuda/util.hpp"

namespace bbuda {

// Deterministic random source. mt19937_64 output is pinned by the standard;
// all value transforms are hand-rolled here so that a given seed produces the
// same stream on every platform and toolchain. Reproducibility of training
// runs and dropout masks is a test requirement, so no std::*_distribution.
class Rng {
 public:
    explicit Rng(uint64_t seed) : gen_(seed), base_seed_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1), 53-bit mantissa.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    size_t index(size_t n) { return n ? static_cast<size_t>(uniform() * static_cast<double>(n)) : 0; }

    // Uniform integer in [lo, hi] inclusive.
    int64_t irange(int64_t lo, int64_t hi) {
        return lo + static_cast<int64_t>(index(static_cast<size_t>(hi - lo + 1)));
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller, spare value cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mu, double sigma) { return mu + sigma * normal(); }

    // Child generator with an independent stream for (seed, tag).
    Rng fork(uint64_t tag) const { return Rng(mix_seed(base_seed_, tag)); }

    static Rng from(uint64_t seed, uint64_t tag) { return Rng(mix_seed(seed, tag)); }

 private:
    std::mt19937_64 gen_;
    uint64_t base_seed_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace bbuda

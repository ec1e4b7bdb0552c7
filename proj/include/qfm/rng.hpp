#pragma once

#include <cstdint>
#include <random>

namespace qfm {

/// Seeded generator with explicit draw algorithms so traces are reproducible
/// across standard library implementations.
struct Rng {
    std::mt19937_64 gen;

    explicit Rng(std::uint64_t seed) : gen(seed) {}

    /// Uniform double in [0, 1) built from the top 53 bits.
    double uniform() { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n) by rejection.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = gen();
        while (x >= limit) x = gen();
        return x % n;
    }
};

} // namespace qfm

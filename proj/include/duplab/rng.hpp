#pragma once

#include <cmath>
#include <cstdint>

namespace duplab {

// splitmix64 finalizer (Steele/Lea/Flood, as published by Vigna). Every
// random stream in the library is built on this mixer so that datasets and
// sweeps regenerate bit-identically from their seeds on any platform.
constexpr std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Derives an independent sub-stream seed from (seed, salt). Derived seeds
// depend only on their inputs, never on call order, so adding sweep points
// or reordering runs cannot shift existing streams.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    return splitmix64(seed ^ (splitmix64(salt) + 0x9e3779b97f4a7c15ULL));
}

constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    return mix_seed(mix_seed(seed, a), b);
}

constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                                 std::uint64_t c) {
    return mix_seed(mix_seed(seed, a, b), c);
}

// Deterministic PRNG: a splitmix64 counter stream plus the samplers the
// library needs. std::normal_distribution is not pinned down by the
// standard, so the Gaussian path is an explicit Box-Muller transform.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform double in [0, 1), 53 random bits
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform double in (0, 1]; safe as a log() argument
    double uniform_open() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    // unbiased integer in [0, n) by rejection sampling; n must be > 0
    std::uint64_t uniform_int(std::uint64_t n) {
        const std::uint64_t threshold = (-n) % n;  // 2^64 mod n
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // standard normal via Box-Muller; consumes two uniforms per pair and
    // caches the second deviate
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u = uniform_open();
        const double v = uniform();
        const double r = std::sqrt(-2.0 * std::log(u));
        const double a = 2.0 * 3.14159265358979323846 * v;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

  private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace duplab

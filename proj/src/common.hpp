#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace ad {

// Error taxonomy. Each class maps onto one process exit code / C status code so
// failures stay machine-distinguishable all the way out to the CLI.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad or inconsistent configuration (unknown keys, out-of-range values, shape
// mismatches caused by caller-supplied dimensions).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Unreadable, corrupt or incompatible data files (trajectory files, manifests,
// checkpoints).
class DataError : public Error {
public:
    using Error::Error;
};

// Non-finite values or numeric failure detected during computation.
class NumericError : public Error {
public:
    using Error::Error;
};

// splitmix64: used only to derive independent seeds from a master seed.
// Keyed derivation (master, stream) -> seed gives every task / batch / worker
// its own statistically independent stream without any shared mutable state.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t master, uint64_t stream) {
    return splitmix64(splitmix64(master) ^ splitmix64(stream * 0x9e3779b97f4a7c15ull + 1));
}

// Deterministic RNG with hand-rolled distributions. std::mt19937_64 has a
// portable bit stream, but the std::*_distribution wrappers do not, so the
// uniform/normal transforms are implemented here to keep outputs identical
// across platforms and compilers.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(splitmix64(seed)) {}

    Rng(uint64_t master, uint64_t stream) : Rng(derive_seed(master, stream)) {}

    uint64_t next_u64() {
        // xorshift-multiply step (splitmix64 counter mode): jump-free, cheap,
        // and every (master, stream) pair gets an independent sequence.
        state_ += 0x9e3779b97f4a7c15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n) by rejection.
    uint64_t uniform_int(uint64_t n) {
        if (n == 0) throw ConfigError("uniform_int: n must be positive");
        uint64_t threshold = (0 - n) % n;
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // Standard normal via Box-Muller; caches the second variate.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        double mag = std::sqrt(-2.0 * std::log(u1));
        double two_pi = 6.283185307179586476925286766559;
        spare_ = mag * std::sin(two_pi * u2);
        has_spare_ = true;
        return mag * std::cos(two_pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Domain constants keep the different consumers of a master seed on disjoint
// streams (train tasks can never collide with test tasks, batches, ...).
namespace seed_domain {
inline constexpr uint64_t train_task = 1;
inline constexpr uint64_t test_task = 2;
inline constexpr uint64_t learner = 3;
inline constexpr uint64_t env_reset = 4;
inline constexpr uint64_t model_init = 5;
inline constexpr uint64_t batch = 6;
inline constexpr uint64_t eval_rollout = 7;
inline constexpr uint64_t augment = 8;
}  // namespace seed_domain

inline uint64_t domain_seed(uint64_t master, uint64_t domain, uint64_t index) {
    return derive_seed(master, (domain << 32) ^ index);
}

}  // namespace ad

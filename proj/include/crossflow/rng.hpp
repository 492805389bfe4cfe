#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace crossflow {

/// Seeded PRNG with explicit, implementation-independent draw routines.
///
/// All stochastic behavior in the simulator flows through this class so that
/// a (seed, call-sequence) pair reproduces bit-identical runs regardless of
/// the standard library's distribution internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

    /// Next raw 64-bit value (splitmix64).
    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1).
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform double in [a, b).
    double uniform(double a, double b) { return a + uniform01() * (b - a); }

    /// Uniform integer in [0, n).
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("uniform_int: n must be > 0");
        // rejection sampling to avoid modulo bias
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    bool bernoulli(double p) { return uniform01() < p; }

    /// Index drawn from unnormalized nonnegative weights.
    std::size_t pick_weighted(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) {
            if (w < 0.0) throw std::invalid_argument("pick_weighted: negative weight");
            total += w;
        }
        if (total <= 0.0) throw std::invalid_argument("pick_weighted: all weights zero");
        double r = uniform01() * total;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            r -= weights[i];
            if (r < 0.0) return i;
        }
        return weights.size() - 1;  // fp round-off lands on the last bucket
    }

    /// Gaussian via Box-Muller (one value per call, no cached spare).
    double gaussian(double mean = 0.0, double stddev = 1.0);

    /// Derive an independent stream from this seed and a label, without
    /// advancing this generator.
    Rng fork(std::uint64_t label) const {
        Rng r(state_ ^ (0x632be59bd9b4e019ull * (label + 1)));
        r.next_u64();
        return r;
    }

    std::uint64_t state() const { return state_; }

private:
    std::uint64_t state_;
};

}  // namespace crossflow

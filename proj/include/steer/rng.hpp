#pragma once

#include <cmath>
#include <cstdint>

#include "steer/tensor.hpp"

namespace steer {

/// Deterministic random source: xoshiro256** (Blackman & Vigna), seeded
/// through SplitMix64. Integer and uniform-double streams are reproducible
/// across platforms for a given seed; gaussians use the Marsaglia polar
/// method (sqrt/log only).
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& word : state_) word = splitmix64(x);
    }

    /// Stable sub-stream derivation: one master seed fans out to per-sample,
    /// per-epoch or per-parameter streams without correlation.
    static std::uint64_t derive(std::uint64_t master, std::uint64_t stream) {
        std::uint64_t x = master ^ (0x9E3779B97F4A7C15ull * (stream + 1));
        return splitmix64(x);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Modulo reduction; bias is negligible for
    /// the small ranges used here and keeps the stream platform-stable.
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Marsaglia's polar method with a cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

    template <typename T>
    Tensor<T> uniform_tensor(Shape shape, double lo, double hi) {
        Tensor<T> t(std::move(shape));
        for (auto& v : t.data) v = T(uniform(lo, hi));
        return t;
    }

    template <typename T>
    Tensor<T> normal_tensor(Shape shape, double mean = 0.0, double stddev = 1.0) {
        Tensor<T> t(std::move(shape));
        for (auto& v : t.data) v = T(mean + stddev * normal());
        return t;
    }

private:
    static std::uint64_t splitmix64(std::uint64_t& x) {
        x += 0x9E3779B97F4A7C15ull;
        std::uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    static std::uint64_t rotl(std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

    std::uint64_t state_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace steer

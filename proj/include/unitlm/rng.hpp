#pragma once

// Deterministic randomness. Everything in the pipeline draws from Rng streams
// keyed by (seed, purpose, index) so that any artifact can be regenerated
// bit-exactly from its manifest. No std::random distributions are used: their
// output is implementation-defined, and these streams must be stable.

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "unitlm/common.hpp"

namespace unitlm {

// splitmix64 step; also the mixing function used to derive child seeds.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Derive a child seed from a parent seed plus a label and index. Labels keep
// unrelated streams (noise vs. switch points vs. batch order) decorrelated
// even when their indices coincide.
inline uint64_t derive_seed(uint64_t parent, std::string_view label, uint64_t index = 0) {
    uint64_t s = parent ^ fnv1a64(label);
    uint64_t a = splitmix64(s);
    s ^= index * 0xd1342543de82ef95ull + 0x2545f4914f6cdd1dull;
    uint64_t b = splitmix64(s);
    return a ^ (b + 0x9e3779b97f4a7c15ull);
}

// xoshiro256++ seeded via splitmix64.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
        has_gauss_ = false;
        gauss_ = 0.0;
    }

    uint64_t next_u64() {
        auto rotl = [](uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
        const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased uniform integer in [0, n).
    uint64_t uniform_int(uint64_t n) {
        require(n > 0, ErrorCode::invalid_argument, "uniform_int: n must be positive");
        uint64_t limit = ~uint64_t{0} - ~uint64_t{0} % n;
        uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % n;
    }

    // Standard normal via Box-Muller (polar form avoided to keep the draw
    // count predictable: exactly one uniform pair per two gaussians).
    double gaussian() {
        if (has_gauss_) {
            has_gauss_ = false;
            return gauss_;
        }
        double u1 = uniform();
        // Avoid log(0).
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * M_PI * u2;
        gauss_ = r * std::sin(theta);
        has_gauss_ = true;
        return r * std::cos(theta);
    }

    // Geometric on {1, 2, ...} with mean `mean` (success prob 1/mean).
    uint64_t geometric(double mean) {
        require(mean >= 1.0, ErrorCode::invalid_argument, "geometric: mean must be >= 1");
        if (mean == 1.0) return 1;
        double p = 1.0 / mean;
        double u = uniform();
        while (u <= 0.0) u = uniform();
        double v = std::log(u) / std::log1p(-p);
        uint64_t k = uint64_t(v) + 1;
        return k < 1 ? 1 : k;
    }

    // Fisher-Yates shuffle of [0, n).
    std::vector<size_t> permutation(size_t n) {
        std::vector<size_t> p(n);
        for (size_t i = 0; i < n; ++i) p[i] = i;
        for (size_t i = n; i > 1; --i) {
            size_t j = size_t(uniform_int(i));
            std::swap(p[i - 1], p[j]);
        }
        return p;
    }

private:
    uint64_t s_[4];
    bool has_gauss_;
    double gauss_;
};

}  // namespace unitlm

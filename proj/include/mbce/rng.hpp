#ifndef MBCE_RNG_HPP
#define MBCE_RNG_HPP

#include <cmath>
#include <complex>
#include <cstdint>

#include "mbce/common.hpp"

namespace mbce {

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// xoshiro256** with splitmix64 seeding. Self-contained so that streams are
// bit-identical across standard libraries and platforms.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) { reseed(seed); }

    void reseed(uint64_t seed) {
        uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
        have_gauss_ = false;
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(s_[1] * 5, 7) * 9;
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
    double uniform01() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Standard normal via Box-Muller (cached second value).
    double normal() {
        if (have_gauss_) {
            have_gauss_ = false;
            return gauss_;
        }
        double u1 = uniform01();
        double u2 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * kPi * u2;
        gauss_ = r * std::sin(a);
        have_gauss_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Circularly-symmetric complex Gaussian with total variance var.
    cxd complex_normal(double var) {
        double s = std::sqrt(var / 2.0);
        double re = normal() * s;
        double im = normal() * s;
        return {re, im};
    }

    int uniform_int(int n) { // in [0, n)
        return int(next_u64() % uint64_t(n));
    }

    // Independent child stream; used to give parallel workers their own rng.
    Rng derive(uint64_t key) const {
        uint64_t sm = s_[0] ^ rotl(key, 32) ^ 0xabcdef0123456789ULL;
        Rng child(0);
        for (auto& w : child.s_) w = splitmix64(sm);
        return child;
    }

    static Rng from_key(uint64_t seed, uint64_t key) {
        uint64_t sm = seed ^ (0x517cc1b727220a95ULL * (key + 1));
        Rng r(0);
        for (auto& w : r.s_) w = splitmix64(sm);
        return r;
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    uint64_t s_[4] = {};
    bool have_gauss_ = false;
    double gauss_ = 0.0;
};

} // namespace mbce

#endif

#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace stpg {

// Counter-based deterministic generator (splitmix64 mixing over an
// incrementing state). The same seed yields the same stream on every
// platform; no libstdc++ distribution objects are used anywhere so draws
// are reproducible bit-for-bit.
//
// Streams for parallel or independent work are derived from the master
// seed with derive(tag); sibling streams never share state.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), state_(mix(seed ^ 0x5851f42d4c957f2dULL)) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix(state_);
    }

    // Uniform in [0,1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). n must be positive.
    int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller without the cached second value: two draws per call,
    // so the generator state never carries hidden float state across
    // checkpoints.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            int j = uniform_int(i + 1);
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
        }
    }

    // Independent stream keyed off the original seed, not the evolved state.
    Rng derive(uint64_t tag) const { return Rng(mix(seed_ ^ mix(tag + 0x9e3779b97f4a7c15ULL))); }

    uint64_t seed() const { return seed_; }
    uint64_t state() const { return state_; }
    void set_state(uint64_t s) { state_ = s; }

private:
    static uint64_t mix(uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    uint64_t seed_;
    uint64_t state_;
};

}  // namespace stpg

#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace s2mf {

// splitmix64; used to derive independent per-stage seeds so that resuming a
// run mid-stream reproduces the exact random sequence of a fresh run.
inline uint64_t mix_seed(uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t derive_seed(uint64_t base, uint64_t task, uint64_t stage) {
    return mix_seed(mix_seed(base ^ 0x5851f42d4c957f2dULL) + mix_seed(task * 0x100000001b3ULL + stage));
}

// Deterministic RNG. mt19937_64 is fully specified by the standard; the
// distributions here are hand-rolled because std::normal_distribution is
// implementation-defined and would break cross-platform bitwise runs.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // uniform in [0, 1)
    double uniform01() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Box-Muller; consumes two uniforms per pair, caches the second value.
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform01();
        double u2 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    // uniform integer in [0, n), n > 0
    uint64_t uniform_int(uint64_t n) {
        // rejection to remove modulo bias; deterministic given the engine state
        uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v = eng_();
        while (v >= limit) v = eng_();
        return v % n;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace s2mf

#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace apprentice {

// Deterministic RNG. mt19937_64 output is pinned by the standard; the float
// and normal draws below are derived with fixed arithmetic so that streams
// are reproducible across platforms and standard library versions (the
// <random> distributions are not).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next() { return gen_(); }

    // [0, 1)
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    // [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n)
    std::uint64_t uniform_index(std::uint64_t n) { return gen_() % n; }

    // Standard normal via Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    bool coin() { return (gen_() & 1u) != 0; }

    // Stable stream splitting: derive an independent seed from (seed, tags).
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t tag_a, std::uint64_t tag_b = 0) {
        auto mix = [](std::uint64_t z) {
            z += 0x9e3779b97f4a7c15ull;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
            return z ^ (z >> 31);
        };
        return mix(mix(mix(seed) ^ tag_a) ^ tag_b);
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace apprentice

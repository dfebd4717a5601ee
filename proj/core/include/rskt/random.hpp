#pragma once

#include "rskt/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace rskt {

// Deterministic RNG. mt19937_64 output is pinned by the standard; the
// uniform/normal transforms below avoid std::*_distribution, whose streams
// are implementation-defined. Identical seeds give bit-identical draws on
// every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 random mantissa bits.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; the paired draw is cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    std::size_t index(std::size_t n) { return static_cast<std::size_t>(gen_() % n); }

    template <typename T>
    void fill_normal(TensorT<T>& t, double mean, double stddev) {
        for (std::size_t i = 0; i < t.size(); ++i)
            t[i] = static_cast<T>(mean + stddev * normal());
    }

    template <typename T>
    void fill_uniform(TensorT<T>& t, double lo, double hi) {
        for (std::size_t i = 0; i < t.size(); ++i)
            t[i] = static_cast<T>(uniform(lo, hi));
    }

    template <typename It>
    void shuffle(It first, It last) {
        const auto n = static_cast<std::size_t>(last - first);
        for (std::size_t i = n; i > 1; --i) std::swap(first[i - 1], first[index(i)]);
    }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// FNV-1a over the bytes, mixed with a seed. Stable across runs and platforms;
// drives the toy text embeddings.
inline std::uint64_t stable_hash(std::string_view s, std::uint64_t seed) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    h ^= seed + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    return h;
}

} // namespace rskt

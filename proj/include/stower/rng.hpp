#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace stower {

/// Deterministic random source. All distributions are built from the raw
/// mt19937_64 stream with fixed arithmetic, so a given seed produces the
/// same draws on every platform (std::uniform_real_distribution and
/// friends are implementation-defined and deliberately avoided).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    float uniform_float() { return static_cast<float>(uniform()); }

    /// Standard normal via Box-Muller; consumes two uniforms per pair,
    /// caches the spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        // avoid log(0)
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    /// Uniform integer in [0, n).
    int uniform_int(int n) {
        return n <= 1 ? 0 : static_cast<int>(uniform() * n);
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Fisher-Yates with the in-house uniform_int, back to front.
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            const int j = uniform_int(i + 1);
            std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
        }
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

std::uint64_t fnv1a64(std::string_view s);
std::uint64_t splitmix64(std::uint64_t x);

/// Seed-splitting scheme: every component draws from its own stream,
/// derived as splitmix64(root ^ fnv1a64(label)). Labels are stable
/// strings like "backbone.init" or "stage1.noise", so adding a new
/// consumer never perturbs existing streams.
std::uint64_t derive_seed(std::uint64_t root, std::string_view label);

inline Rng derive_rng(std::uint64_t root, std::string_view label) {
    return Rng(derive_seed(root, label));
}

} // namespace stower

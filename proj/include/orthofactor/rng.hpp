#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace orthofactor {

/// SplitMix64 finalizer. Bijective on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Seed of chain `index` derived from a master seed. Each derived stream is
/// reproducible on its own: seed_i = mix64(master + (i + 1) * golden).
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) noexcept {
    return mix64(master + (index + 1) * 0x9E3779B97F4A7C15ULL);
}

/// Counter-based random stream: draw t is mix64(key + t * golden), so the
/// stream is fully determined by (key, counter) and substreams can be split
/// off without touching the parent. All distribution code below is written
/// out explicitly so results do not depend on the standard library vendor.
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed = 0) noexcept : key_(mix64(seed ^ 0x6A09E667F3BCC909ULL)) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept { return next_u64(); }

    std::uint64_t next_u64() noexcept {
        return mix64(key_ + (++counter_) * 0x9E3779B97F4A7C15ULL);
    }

    /// Independent stream identified by `id`; the parent is not advanced.
    [[nodiscard]] Rng substream(std::uint64_t id) const noexcept {
        Rng child;
        child.key_ = mix64(key_ ^ mix64(id + 0x3C6EF372FE94F82BULL));
        return child;
    }

    std::uint64_t counter() const noexcept { return counter_; }

    /// Uniform on the open interval (0, 1).
    double uniform() noexcept {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Standard normal by the Marsaglia polar method.
    double normal() noexcept {
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

    double normal(double mean, double sd) noexcept { return mean + sd * normal(); }

    double exponential() noexcept { return -std::log(uniform()); }

    /// Gamma(shape, 1) by Marsaglia–Tsang; shape < 1 via the u^(1/shape) boost.
    double gamma(double shape) noexcept {
        if (shape < 1.0) {
            const double g = gamma(shape + 1.0);
            return g * std::exp(std::log(uniform()) / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform();
            const double x2 = x * x;
            if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
            if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    /// Inverse-Gamma with density ∝ x^(-shape-1) exp(-scale/x).
    double inverse_gamma(double shape, double scale) noexcept { return scale / gamma(shape); }

    double beta(double a, double b) noexcept {
        const double x = gamma(a);
        const double y = gamma(b);
        return x / (x + y);
    }

    bool bernoulli(double p) noexcept { return uniform() < p; }

private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace orthofactor

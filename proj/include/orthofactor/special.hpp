#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/erf.hpp>

#include "orthofactor/rng.hpp"

namespace orthofactor {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

inline double log_sum_exp(double a, double b) noexcept {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    const double m = std::max(a, b);
    return m + std::log1p(std::exp(-std::abs(a - b)));
}

/// log Φ(x), accurate far into the lower tail.
inline double log_norm_cdf(double x) noexcept {
    if (x > -30.0) return std::log(0.5 * std::erfc(-x / std::numbers::sqrt2));
    // Asymptotic series of the Mills ratio.
    const double x2 = x * x;
    return -0.5 * x2 - std::log(-x) - kLogSqrt2Pi +
           std::log1p(-1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2));
}

/// Φ⁻¹(p) for p in (0, 1).
inline double norm_quantile(double p) {
    return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

/// Draw z ~ N(0,1) conditioned on z ≥ tau.
///
/// Inverse-CDF on the upper tail while tau ≤ 4; past that, Robert's
/// translated-exponential rejection sampler (acceptance > 0.97 there).
inline double sample_std_normal_tail(double tau, Rng& rng) {
    constexpr double kSwitch = 4.0;
    if (tau <= kSwitch) {
        // Q(tau) = Φ(-tau); z = -Φ⁻¹(u·Q(tau)).
        const double upper = 0.5 * std::erfc(tau / std::numbers::sqrt2);
        double z = -norm_quantile(rng.uniform() * upper);
        return std::max(z, tau);
    }
    const double rate = 0.5 * (tau + std::sqrt(tau * tau + 4.0));
    for (;;) {
        const double z = tau + rng.exponential() / rate;
        const double d = z - rate;
        if (std::log(rng.uniform()) <= -0.5 * d * d) return z;
    }
}

/// Draw from N(mean, sd²) restricted to [0, ∞) when `positive`, else (-∞, 0).
inline double sample_half_line_normal(double mean, double sd, bool positive, Rng& rng) {
    if (positive) {
        const double z = sample_std_normal_tail(-mean / sd, rng);
        return std::max(mean + sd * z, 0.0);
    }
    const double z = sample_std_normal_tail(mean / sd, rng);
    return std::min(mean - sd * z, -0.0);
}

/// Log of the Beta(a, b) kernel (unnormalised).
inline double log_beta_kernel(double x, double a, double b) noexcept {
    if (x <= 0.0 || x >= 1.0) return kNegInf;
    return (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x);
}

/// One slice-sampling update of x restricted to [lo, hi] targeting the Beta(a,b)
/// kernel, carried out on log x. Valid for a ≥ 0 (a = 0 arises for the
/// non-terminal sparsity weights when a column has no slab entries).
inline double slice_truncated_beta(double x, double a, double b, double lo, double hi, Rng& rng) {
    constexpr double kTiny = 1e-300;
    lo = std::max(lo, kTiny);
    const double ulo = std::log(lo);
    const double uhi = std::log(hi);
    auto logf = [&](double u) {
        const double xv = std::exp(u);
        if (xv >= 1.0) return kNegInf;
        // Jacobian dx = x du adds u.
        return a * u + (b - 1.0) * std::log1p(-xv);
    };
    double u0 = std::log(std::clamp(x, lo, hi));
    for (int rep = 0; rep < 3; ++rep) {
        const double level = logf(u0) - rng.exponential();
        double left = ulo;
        double right = uhi;
        for (int it = 0; it < 200; ++it) {
            const double u1 = rng.uniform(left, right);
            if (logf(u1) >= level) {
                u0 = u1;
                break;
            }
            if (u1 < u0) left = u1; else right = u1;
        }
    }
    return std::clamp(std::exp(u0), lo, hi);
}

/// Draw from Beta(a, b) truncated to [lo, hi] ⊆ [0, 1].
///
/// Exact inverse-CDF draw when the truncated mass is resolvable in double
/// precision; otherwise (a = 0 or mass below ~1e-280) falls back to a slice
/// update started at `current`, which leaves the truncated law invariant.
inline double sample_truncated_beta(double a, double b, double lo, double hi, double current, Rng& rng) {
    // Keep draws strictly positive; Beta(a, b) with tiny a underflows to 0.
    lo = std::clamp(lo, std::numeric_limits<double>::min(), 1.0);
    hi = std::clamp(hi, 0.0, 1.0);
    if (hi <= lo) return lo;
    if (a > 0.0) {
        // Work in whichever tail keeps the interval mass well resolved.
        const double flo = boost::math::ibeta(a, b, lo);
        if (flo < 0.5) {
            const double fhi = boost::math::ibeta(a, b, hi);
            if (fhi > 1e-280 && fhi - flo > 1e-9 * fhi) {
                const double p = flo + rng.uniform() * (fhi - flo);
                return std::clamp(boost::math::ibeta_inv(a, b, p), lo, hi);
            }
        } else {
            const double clo = boost::math::ibetac(a, b, lo);
            const double chi = boost::math::ibetac(a, b, hi);
            if (clo > 1e-280 && clo - chi > 1e-9 * clo) {
                const double q = chi + rng.uniform() * (clo - chi);
                return std::clamp(boost::math::ibetac_inv(a, b, q), lo, hi);
            }
        }
    }
    return slice_truncated_beta(current, a, b, lo, hi, rng);
}

}  // namespace orthofactor

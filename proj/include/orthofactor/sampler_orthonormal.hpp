#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "orthofactor/errors.hpp"
#include "orthofactor/linalg.hpp"
#include "orthofactor/model.hpp"
#include "orthofactor/rng.hpp"
#include "orthofactor/sampler_normal.hpp"

namespace orthofactor {

/// Quantities of the row-k factor conditional on the √n-sphere: the
/// unconstrained mean Ω̄_k, its variance σ̄²_k and the norm of Ω̄_k projected
/// onto the complement of the other rows.
struct SphereSliceParams {
    Vector mean_row;
    double sigma_bar_sq = 1.0;
    double proj_norm = 0.0;
    Index n = 1;
    Index K = 1;

    double concentration() const { return proj_norm / sigma_bar_sq; }
};

/// ((n−K−2)/2)·log(n−d²) + κ·d, κ = proj_norm/σ̄²; −∞ outside |d| < √n.
inline double latitude_log_density(double d, const SphereSliceParams& p) {
    const double n = static_cast<double>(p.n);
    const double room = n - d * d;
    if (!(room > 0.0)) return kNegInf;
    return 0.5 * static_cast<double>(p.n - p.K - 2) * std::log(room) + p.concentration() * d;
}

namespace detail {

/// Latitude density in the angle coordinate d = √n·sin φ (Jacobian included):
/// (n−K−1)·log cos φ + κ√n·sin φ.
inline double latitude_angle_log_density(double phi, double power, double kappa_root_n) {
    const double c = std::cos(phi);
    if (!(c > 0.0)) return power < 0.0 ? std::numeric_limits<double>::infinity() : (power == 0.0 ? kappa_root_n * std::sin(phi) : kNegInf);
    return power * std::log(c) + kappa_root_n * std::sin(phi);
}

inline double reflect_angle(double phi) {
    constexpr double half = 0.5 * std::numbers::pi;
    for (int it = 0; it < 64 && (phi > half || phi < -half); ++it) phi = phi > half ? std::numbers::pi - phi : -std::numbers::pi - phi;
    return std::clamp(phi, -half, half);
}

/// Mode of the angle density and −(second derivative) there.
struct AngleMode {
    double phi = 0.0;
    double curvature = 1.0;
};

inline AngleMode latitude_angle_mode(double power, double kappa_root_n) {
    AngleMode m;
    double s = 0.0;
    if (kappa_root_n > 0.0)
        s = power > 0.0 ? (-power + std::sqrt(power * power + 4.0 * kappa_root_n * kappa_root_n)) / (2.0 * kappa_root_n)
                        : 1.0;
    m.phi = std::asin(std::clamp(s, -1.0, 1.0));
    const double c2 = std::max(1.0 - s * s, 1e-300);
    m.curvature = (power > 0.0 ? power / c2 : 0.0) + kappa_root_n * s;
    if (!(m.curvature > 0.0) || !std::isfinite(m.curvature)) m.curvature = 0.0;
    return m;
}

/// Random-walk proposal sd in φ: 2.4/√curvature at the mode, at most π.
inline double latitude_step(const AngleMode& m) {
    return m.curvature > 0.0 ? std::min(2.4 / std::sqrt(m.curvature), std::numbers::pi) : std::numbers::pi;
}

}  // namespace detail

struct LatitudeOptions {
    int steps = 1;
    bool adapt = false;
};

/// Metropolis on φ with d = √n·sin φ. Each step is, with probability 1/2,
/// a reflected random walk (sd from the curvature at the mode times the
/// tuning scale, adapted only while `opt.adapt` holds) or an independence
/// proposal from a Cauchy centred at the mode with scale 1/√curvature,
/// truncated to |φ| < π/2 (heavy tails keep far states reachable). The second kernel lets the chain jump back to the bulk in one
/// step when the conditional moves far between sweeps.
inline double sample_latitude(const SphereSliceParams& p, double current_d, Rng& rng, LatitudeTuning& tuning,
                              const LatitudeOptions& opt = {}) {
    constexpr double half = 0.5 * std::numbers::pi;
    const double root_n = std::sqrt(static_cast<double>(p.n));
    const double power = static_cast<double>(p.n - p.K - 1);
    const double kappa_root_n = p.concentration() * root_n;
    double phi = std::asin(std::clamp(current_d / root_n, -1.0, 1.0));
    double logp = detail::latitude_angle_log_density(phi, power, kappa_root_n);
    const detail::AngleMode mode = detail::latitude_angle_mode(power, kappa_root_n);
    const double step = detail::latitude_step(mode);
    const double width = mode.curvature > 0.0 ? std::min(1.0 / std::sqrt(mode.curvature), std::numbers::pi)
                                              : std::numbers::pi;
    auto log_q = [&](double x) {
        const double z = (x - mode.phi) / width;
        return -std::log1p(z * z);
    };
    for (int s = 0; s < opt.steps; ++s) {
        if (rng.uniform() < 0.5) {
            const double prop = detail::reflect_angle(phi + tuning.scale * step * rng.normal());
            const double logq = detail::latitude_angle_log_density(prop, power, kappa_root_n);
            const bool accept = std::log(rng.uniform()) < logq - logp || !std::isfinite(logp);
            if (accept && std::isfinite(logq)) {
                phi = prop;
                logp = logq;
            }
            if (opt.adapt) {
                ++tuning.proposed;
                if (accept) ++tuning.accepted;
                if (tuning.proposed == 50) {
                    const double rate = static_cast<double>(tuning.accepted) / 50.0;
                    if (rate < 0.3) tuning.scale *= 0.8;
                    else if (rate > 0.5) tuning.scale = std::min(tuning.scale * 1.25, 4.0);
                    tuning.proposed = tuning.accepted = 0;
                }
            }
        } else {
            double prop = 0.0;
            bool inside = false;
            for (int tries = 0; tries < 64 && !inside; ++tries) {
                prop = mode.phi + width * std::tan(std::numbers::pi * (rng.uniform() - 0.5));
                inside = prop > -half && prop < half;
            }
            if (!inside) continue;
            const double logq = detail::latitude_angle_log_density(prop, power, kappa_root_n);
            const double ratio = logq - logp + log_q(phi) - log_q(prop);
            if ((std::log(rng.uniform()) < ratio || !std::isfinite(logp)) && std::isfinite(logq)) {
                phi = prop;
                logp = logq;
            }
        }
    }
    double d = root_n * std::sin(phi);
    const double lim = root_n * (1.0 - 1e-15);
    return std::clamp(d, -lim, lim);
}

inline double sample_latitude(const SphereSliceParams& p, double current_d, Rng& rng) {
    LatitudeTuning tuning;
    return sample_latitude(p, current_d, rng, tuning);
}

namespace detail {

inline Matrix other_rows(const Matrix& omega, Index k) {
    Matrix rest(omega.rows() - 1, omega.cols());
    for (Index t = 0, r = 0; t < omega.rows(); ++t)
        if (t != k) rest.row(r++) = omega.row(t);
    return rest;
}

/// Unit vector uniform on the sphere of the complement of the given rows.
inline Vector uniform_complement_direction(const Matrix& rows, const Vector* extra, Index n, Rng& rng) {
    for (int attempt = 0; attempt < 100; ++attempt) {
        Vector z(n);
        for (Index i = 0; i < n; ++i) z[i] = rng.normal();
        project_out_rows(z, rows);
        if (extra) {
            for (int pass = 0; pass < 2; ++pass) z -= extra->dot(z) * *extra;
            project_out_rows(z, rows);
        }
        const double nz = z.norm();
        if (nz > 1e-8) return z / nz;
    }
    throw NumericalError("complement of the factor rows is empty");
}

/// Enforce Ω_k ⊥ Ω_{−k} and ‖Ω_k‖² = n to machine precision.
inline void polish_row(Eigen::Ref<Vector> row, const Matrix& rest) {
    project_out_rows(row, rest);
    row *= std::sqrt(static_cast<double>(row.size())) / row.norm();
}

}  // namespace detail

/// Row update given the current residual R = Y − BΩ, which is kept in sync.
inline void update_factor_row_with_residual(Index k, Matrix& omega, const Matrix& B, const Vector& sigma, Matrix& resid,
                                            LatitudeTuning& tuning, const LatitudeOptions& opt, Rng& rng) {
    const Index K = omega.rows(), n = omega.cols();
    const double root_n = std::sqrt(static_cast<double>(n));
    const Matrix rest = detail::other_rows(omega, k);
    const Vector old_row = omega.row(k).transpose();
    Vector fresh;

    const Vector w = B.col(k).cwiseQuotient(sigma);
    const double precision = B.col(k).dot(w);
    if (!(B.col(k).norm() >= 1e-12) || !(precision > 0.0)) {
        // No likelihood information: uniform on the complement sphere.
        fresh = root_n * detail::uniform_complement_direction(rest, nullptr, n, rng);
    } else {
        SphereSliceParams p;
        p.n = n;
        p.K = K;
        p.sigma_bar_sq = 1.0 / precision;
        // Ω̄_k = σ̄²·(Y − Σ_{t≠k} B_t Ω_t)ᵀ Σ⁻¹ B_k = σ̄²·Rᵀw + Ω_k.
        p.mean_row = p.sigma_bar_sq * (resid.transpose() * w) + old_row;
        Vector proj = p.mean_row;
        project_out_rows(proj, rest);
        p.proj_norm = proj.norm();
        if (!(p.proj_norm > 0.0) || !std::isfinite(p.proj_norm)) {
            fresh = root_n * detail::uniform_complement_direction(rest, nullptr, n, rng);
        } else {
            const Vector u = proj / p.proj_norm;
            double d;
            if (n - K + 1 == 1) {
                // Complement is a line: Ω_k = ±√n·u.
                const double kr = p.concentration() * root_n;
                d = rng.uniform() < 1.0 / (1.0 + std::exp(-2.0 * kr)) ? root_n : -root_n;
                fresh = d * u;
            } else {
                d = sample_latitude(p, old_row.dot(u), rng, tuning, opt);
                const Vector dir = detail::uniform_complement_direction(rest, &u, n, rng);
                fresh = d * u + std::sqrt(std::max(static_cast<double>(n) - d * d, 0.0)) * dir;
            }
        }
    }
    detail::polish_row(fresh, rest);
    omega.row(k) = fresh.transpose();
    resid.noalias() -= B.col(k) * (fresh - old_row).transpose();
}

/// Draws row k of Ω from its conditional on the √n-sphere orthogonal to the
/// other rows.
inline void update_factor_row_orthonormal(Index k, ChainState& s, const ObservationMatrix& y, Rng& rng,
                                          const LatitudeOptions& opt = {}) {
    if (s.factor_mode != FactorMode::orthonormal)
        throw ValidationError("update_factor_row_orthonormal requires orthonormal factor mode");
    check_dimensions(s, y);
    if (k < 0 || k >= s.Omega.rows()) throw ValidationError("factor row index out of range");
    s.latitude.resize(static_cast<std::size_t>(s.Omega.rows()));
    Matrix resid = y.data - s.B * s.Omega;
    update_factor_row_with_residual(k, s.Omega, s.B, s.Sigma, resid, s.latitude[static_cast<std::size_t>(k)], opt, rng);
}

inline void update_factors_orthonormal(Matrix& omega, const Matrix& B, const Vector& sigma, const Matrix& Y,
                                       std::vector<LatitudeTuning>& tuning, const LatitudeOptions& opt, Rng& rng) {
    tuning.resize(static_cast<std::size_t>(omega.rows()));
    Matrix resid = Y - B * omega;
    for (Index k = 0; k < omega.rows(); ++k)
        update_factor_row_with_residual(k, omega, B, sigma, resid, tuning[static_cast<std::size_t>(k)], opt, rng);
}

struct OrthonormalSweepOptions {
    LatitudeOptions latitude;
    bool random_scan = false;
};

/// Same scan as the normal sampler with the Ω-step replaced by row-wise
/// sphere updates; no scale moves (the factor magnitude is fixed).
inline void gibbs_sweep_orthonormal(ChainState& s, const ObservationMatrix& y, const PriorSpec& prior,
                                    const OrthonormalSweepOptions& opt, Rng& rng) {
    if (s.factor_mode != FactorMode::orthonormal)
        throw ValidationError("gibbs_sweep_orthonormal requires orthonormal factor mode");
    check_dimensions(s, y);
    update_loadings(s, y, prior, rng, opt.random_scan);
    update_factors_orthonormal(s.Omega, s.B, s.Sigma, y.data, s.latitude, opt.latitude, rng);
    update_allocation(s, prior, rng);
    update_sparsity(s, prior, rng);
    update_idio_variance(s, y, prior, rng);
    ++s.sweep;
}

inline void gibbs_sweep_orthonormal(ChainState& s, const ObservationMatrix& y, const PriorSpec& prior,
                                    const OrthonormalSweepOptions& opt = {}) {
    gibbs_sweep_orthonormal(s, y, prior, opt, s.rng);
}

}  // namespace orthofactor

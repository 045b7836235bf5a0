#pragma once

#include <cmath>
#include <vector>

#include "orthofactor/errors.hpp"
#include "orthofactor/linalg.hpp"
#include "orthofactor/model.hpp"
#include "orthofactor/rng.hpp"
#include "orthofactor/sampler_normal.hpp"
#include "orthofactor/sampler_orthonormal.hpp"

namespace orthofactor {

/// State of the modified Ghosh–Dunson model: β_jk = q_jk·r_k with normal
/// spike-and-slab on q (precisions gd_lambda0 / gd_lambda1) and a diffuse
/// normal on r (precision gd_lambda).
struct GDState {
    Matrix Q;            // G × K normalised loadings
    Vector r;            // K column magnitudes
    BinaryMatrix Gamma;  // G × K
    Vector Theta;        // K
    Vector Sigma;        // G
    Matrix Omega;        // K × n
    std::uint64_t sweep = 0;
    FactorMode factor_mode = FactorMode::normal;
    Rng rng;
    std::vector<LatitudeTuning> latitude;

    Matrix loadings() const { return Q * r.asDiagonal(); }
};

inline void check_dimensions(const GDState& s, const ObservationMatrix& y) {
    const Index G = y.responses(), n = y.samples(), K = s.Q.cols();
    if (s.Q.rows() != G || s.r.size() != K || s.Gamma.rows() != G || s.Gamma.cols() != K || s.Theta.size() != K ||
        s.Sigma.size() != G || s.Omega.rows() != K || s.Omega.cols() != n)
        throw ValidationError("Ghosh-Dunson state dimensions do not match the data");
    if ((s.Sigma.array() <= 0.0).any()) throw ValidationError("idiosyncratic variances must be positive");
}

inline double gd_precision(bool slab, const PriorSpec& prior) { return slab ? prior.gd_lambda1 : prior.gd_lambda0; }

/// Conjugate normal conditional of a single q_jk, as (mean, precision).
struct NormalConditional {
    double mean = 0.0;
    double precision = 1.0;
};

/// q_jk | rest: precision r_k²·Σ_i ω_ik²/σ_j² + λ_γ, mean (r_k/σ_j²)·Σ_i ω_ik e_i / precision
/// where e_i = y_ij − Σ_{l≠k} q_jl r_l ω_il; `cross` is Σ_i ω_ik e_i.
inline NormalConditional gd_q_conditional(double r_k, double sq_k, double sig2, double cross, double prior_prec) {
    NormalConditional c;
    c.precision = r_k * r_k * sq_k / sig2 + prior_prec;
    c.mean = (r_k / sig2) * cross / c.precision;
    return c;
}

inline void gd_update_q(GDState& s, const ObservationMatrix& y, const PriorSpec& prior, Rng& rng) {
    const Index G = s.Q.rows(), K = s.Q.cols();
    const Matrix omega_t = s.Omega.transpose();
    const Vector sq = omega_t.colwise().squaredNorm().transpose();
    const Matrix y_t = y.data.transpose();
    Vector res(s.Omega.cols());
    for (Index j = 0; j < G; ++j) {
        const double sig2 = s.Sigma[j];
        res.noalias() = y_t.col(j) - omega_t * (s.Q.row(j).transpose().cwiseProduct(s.r));
        for (Index k = 0; k < K; ++k) {
            const double old = s.Q(j, k);
            const double cross = omega_t.col(k).dot(res) + old * s.r[k] * sq[k];
            const auto c = gd_q_conditional(s.r[k], sq[k], sig2, cross, gd_precision(s.Gamma(j, k) != 0, prior));
            const double fresh = c.mean + rng.normal() / std::sqrt(c.precision);
            res.noalias() -= (fresh - old) * s.r[k] * omega_t.col(k);
            s.Q(j, k) = fresh;
        }
    }
}

/// r_k | rest: precision λ + Σ_j q_jk²·Σ_i ω_ik²/σ_j², mean Σ_j (q_jk/σ_j²)·Σ_i ω_ik e_ij / precision.
inline void gd_update_r(GDState& s, const ObservationMatrix& y, const PriorSpec& prior, Rng& rng) {
    const Index K = s.Q.cols();
    Matrix resid = y.data - s.loadings() * s.Omega;
    for (Index k = 0; k < K; ++k) {
        const double sq = s.Omega.row(k).squaredNorm();
        const Vector cross = resid * s.Omega.row(k).transpose() + (s.r[k] * sq) * s.Q.col(k);
        const Vector q_over = s.Q.col(k).cwiseQuotient(s.Sigma);
        const double precision = prior.gd_lambda + sq * s.Q.col(k).dot(q_over);
        const double mean = q_over.dot(cross) / precision;
        const double fresh = mean + rng.normal() / std::sqrt(precision);
        resid.noalias() -= ((fresh - s.r[k]) * s.Q.col(k)) * s.Omega.row(k);
        s.r[k] = fresh;
    }
}

/// γ_jk | q_jk, θ_k with normal spike/slab densities.
inline double gd_slab_probability(double q, double theta, const PriorSpec& prior) noexcept {
    if (theta >= 1.0) return 1.0;
    if (theta <= 0.0) return 0.0;
    const double l1 = 0.5 * std::log(prior.gd_lambda1) - 0.5 * prior.gd_lambda1 * q * q + std::log(theta);
    const double l0 = 0.5 * std::log(prior.gd_lambda0) - 0.5 * prior.gd_lambda0 * q * q + std::log1p(-theta);
    return std::exp(l1 - log_sum_exp(l0, l1));
}

inline void gd_update_allocation(GDState& s, const PriorSpec& prior, Rng& rng) {
    for (Index k = 0; k < s.Q.cols(); ++k)
        for (Index j = 0; j < s.Q.rows(); ++j)
            s.Gamma(j, k) = rng.uniform() < gd_slab_probability(s.Q(j, k), s.Theta[k], prior);
}

struct GDSweepOptions {
    LatitudeOptions latitude;
};

/// Full scan Q, r, Γ, Θ, Σ, Ω. The Ω-step is the normal-factor draw with
/// B = Q·diag(r), or the sphere row updates in orthonormal mode.
inline void gd_sweep(GDState& s, const ObservationMatrix& y, const PriorSpec& prior, const GDSweepOptions& opt,
                     Rng& rng) {
    check_dimensions(s, y);
    gd_update_q(s, y, prior, rng);
    gd_update_r(s, y, prior, rng);
    gd_update_allocation(s, prior, rng);
    update_sparsity(s.Gamma, s.Theta, prior.alpha, rng);
    const Matrix B = s.loadings();
    update_idio_variance(s.Sigma, B, s.Omega, y.data, prior, rng);
    if (s.factor_mode == FactorMode::normal)
        update_factors_normal(s.Omega, B, s.Sigma, y.data, rng);
    else
        update_factors_orthonormal(s.Omega, B, s.Sigma, y.data, s.latitude, opt.latitude, rng);
    ++s.sweep;
}

inline void gd_sweep(GDState& s, const ObservationMatrix& y, const PriorSpec& prior, const GDSweepOptions& opt = {}) {
    gd_sweep(s, y, prior, opt, s.rng);
}

}  // namespace orthofactor

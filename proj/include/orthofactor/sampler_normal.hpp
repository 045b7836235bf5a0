#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "orthofactor/errors.hpp"
#include "orthofactor/linalg.hpp"
#include "orthofactor/model.hpp"
#include "orthofactor/rng.hpp"
#include "orthofactor/special.hpp"

namespace orthofactor {

/// Conditional of one loading: density ∝ exp(−aβ² + bβ − c|β|).
struct TruncNormMixtureParams {
    double a = 1.0;
    double b = 0.0;
    double c = 0.0;
};

/// Two-sided decomposition of exp(−aβ² + bβ − c|β|) into half-line normals
/// with means μ± = (b ∓ c)/2a and common sd s = 1/√(2a). The log weights are
/// log ∫ over each half line, up to the shared factor √(2π)·s.
struct HalfLineSplit {
    double mean_pos, mean_neg, sd, log_w_pos, log_w_neg;

    explicit HalfLineSplit(const TruncNormMixtureParams& p) {
        sd = 1.0 / std::sqrt(2.0 * p.a);
        mean_pos = (p.b - p.c) / (2.0 * p.a);
        mean_neg = (p.b + p.c) / (2.0 * p.a);
        const double zp = mean_pos / sd;
        const double zn = mean_neg / sd;
        log_w_pos = 0.5 * zp * zp + log_norm_cdf(zp);
        log_w_neg = 0.5 * zn * zn + log_norm_cdf(-zn);
    }

    /// log Z where Z = ∫ exp(−aβ² + bβ − c|β|) dβ.
    double log_normalizer() const { return log_sum_exp(log_w_pos, log_w_neg) + kLogSqrt2Pi + std::log(sd); }

    double prob_positive() const { return std::exp(log_w_pos - log_sum_exp(log_w_pos, log_w_neg)); }
};

/// Exact draw from exp(−aβ² + bβ − c|β|); requires a > 0.
inline double sample_trunc_norm_mixture(const TruncNormMixtureParams& p, Rng& rng) {
    const HalfLineSplit split(p);
    const bool positive = rng.uniform() < split.prob_positive();
    return positive ? sample_half_line_normal(split.mean_pos, split.sd, true, rng)
                    : sample_half_line_normal(split.mean_neg, split.sd, false, rng);
}

/// Draw from the Laplace prior with rate λ (used when a loading's factor
/// carries no information, i.e. Σ_i ω_ik² = 0).
inline double sample_laplace(double rate, Rng& rng) {
    const double mag = rng.exponential() / rate;
    return rng.uniform() < 0.5 ? -mag : mag;
}

/// a, b, c of the (j, k) loading conditional, computed from scratch.
/// Throws NumericalError when factor k is identically zero (a = 0).
inline TruncNormMixtureParams loading_conditional_params(Index j, Index k, const ChainState& s,
                                                         const ObservationMatrix& y, const PriorSpec& prior) {
    check_dimensions(s, y);
    const double sig2 = s.Sigma[j];
    const double sk = s.Omega.row(k).squaredNorm();
    if (!(sk > 0.0)) throw NumericalError("degenerate factor: all entries of factor row are zero");
    // y_j − Σ_{l≠k} β_jl ω_l
    RowVector partial = y.data.row(j) - s.B.row(j) * s.Omega + s.B(j, k) * s.Omega.row(k);
    TruncNormMixtureParams p;
    p.a = sk / (2.0 * sig2);
    p.b = s.Omega.row(k).dot(partial) / sig2;
    p.c = prior.penalty(s.Gamma(j, k) != 0);
    return p;
}

struct NormalSweepOptions {
    bool group_moves = false;
    bool random_scan = false;
};

namespace detail {

/// Loadings update for one row given its residual vector r = y_j − B_j Ω
/// (updated in place). omega_t is Ωᵀ (n × K), sq the row norms Σ_i ω_ik².
inline void update_loading_row(Index j, const std::vector<Index>& order, Matrix& B, const BinaryMatrix& Gamma,
                               double sig2, const Matrix& omega_t, const Vector& sq, const PriorSpec& prior,
                               Eigen::Ref<Vector> r, Rng& rng) {
    for (Index k : order) {
        const double old = B(j, k);
        const double c = prior.penalty(Gamma(j, k) != 0);
        double fresh;
        if (sq[k] > 0.0) {
            const double dot = omega_t.col(k).dot(r);
            TruncNormMixtureParams p{sq[k] / (2.0 * sig2), (dot + old * sq[k]) / sig2, c};
            fresh = sample_trunc_norm_mixture(p, rng);
        } else {
            fresh = sample_laplace(c, rng);
        }
        if (fresh != old) {
            r.noalias() -= (fresh - old) * omega_t.col(k);
            B(j, k) = fresh;
        }
    }
}

inline std::vector<Index> scan_order(Index K, bool random_scan, Rng& rng) {
    std::vector<Index> order(static_cast<std::size_t>(K));
    std::iota(order.begin(), order.end(), Index{0});
    if (random_scan) {
        for (Index i = K - 1; i > 0; --i) {
            const auto u = static_cast<Index>(rng.next_u64() % static_cast<std::uint64_t>(i + 1));
            std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(u)]);
        }
    }
    return order;
}

}  // namespace detail

/// Every β_jk from its conditional; rows j in order, k inner.
inline void update_loadings(ChainState& s, const ObservationMatrix& y, const PriorSpec& prior, Rng& rng,
                            bool random_scan = false) {
    const Index G = s.B.rows(), K = s.B.cols();
    const Matrix omega_t = s.Omega.transpose();
    const Vector sq = omega_t.colwise().squaredNorm().transpose();
    const Matrix y_t = y.data.transpose();
    Vector r(s.Omega.cols());
    for (Index j = 0; j < G; ++j) {
        r.noalias() = y_t.col(j) - omega_t * s.B.row(j).transpose();
        const auto order = detail::scan_order(K, random_scan, rng);
        detail::update_loading_row(j, order, s.B, s.Gamma, s.Sigma[j], omega_t, sq, prior, r, rng);
    }
}

/// Draws every ω_i from N_K(P⁻¹BᵀΣ⁻¹y_i, P⁻¹) with P = I + BᵀΣ⁻¹B. One
/// Cholesky of P serves all columns; column i uses its own substream, so the
/// loop can be split across threads without changing the result.
inline void update_factors_normal(Matrix& omega, const Matrix& B, const Vector& sigma, const Matrix& Y, Rng& rng) {
    const Index K = B.cols(), n = Y.cols();
    const Vector inv_sd = sigma.array().rsqrt();
    const Matrix W = inv_sd.asDiagonal() * B;
    Matrix P = Matrix::Identity(K, K);
    P.selfadjointView<Eigen::Lower>().rankUpdate(W.transpose());
    P = P.selfadjointView<Eigen::Lower>();
    if (!P.allFinite()) throw NumericalError("factor precision matrix is not finite");
    Eigen::LLT<Matrix> llt(P);
    if (llt.info() != Eigen::Success) throw NumericalError("factor precision matrix is not positive definite");
    const Matrix mean = llt.solve(W.transpose() * (inv_sd.asDiagonal() * Y));
    const Rng base(rng.next_u64());
    omega.resize(K, n);
    Vector z(K);
    for (Index i = 0; i < n; ++i) {
        Rng col_rng = base.substream(static_cast<std::uint64_t>(i));
        for (Index k = 0; k < K; ++k) z[k] = col_rng.normal();
        // Lᵀ x = z gives x ~ N(0, P⁻¹).
        omega.col(i) = mean.col(i) + llt.matrixU().solve(z);
    }
}

inline void update_factors_normal(ChainState& s, const ObservationMatrix& y, Rng& rng) {
    if (s.factor_mode != FactorMode::normal) throw ValidationError("update_factors_normal requires normal factor mode");
    update_factors_normal(s.Omega, s.B, s.Sigma, y.data, rng);
}

/// Slab probability of γ_jk given β_jk and θ_k, in log space.
inline double slab_probability(double beta, double theta, const PriorSpec& prior) noexcept {
    if (theta >= 1.0) return 1.0;
    if (theta <= 0.0) return 0.0;
    const double ab = std::abs(beta);
    const double l1 = std::log(prior.lambda1) - prior.lambda1 * ab + std::log(theta);
    const double l0 = std::log(prior.lambda0) - prior.lambda0 * ab + std::log1p(-theta);
    return std::exp(l1 - log_sum_exp(l0, l1));
}

inline void update_allocation(ChainState& s, const PriorSpec& prior, Rng& rng) {
    const Index G = s.B.rows(), K = s.B.cols();
    for (Index k = 0; k < K; ++k)
        for (Index j = 0; j < G; ++j) s.Gamma(j, k) = rng.uniform() < slab_probability(s.B(j, k), s.Theta[k], prior);
}

/// θ_k | Γ, θ_{−k} ~ Beta(α̃_k, β̃_k) truncated to [θ_{k+1}, θ_{k−1}], k in order.
inline void update_sparsity(const BinaryMatrix& gamma, Vector& theta, double alpha, Rng& rng) {
    const Index G = gamma.rows(), K = gamma.cols();
    for (Index k = 0; k < K; ++k) {
        double ones = 0.0;
        for (Index j = 0; j < G; ++j) ones += gamma(j, k) != 0 ? 1.0 : 0.0;
        const double a = ones + (k == K - 1 ? alpha : 0.0);
        const double b = static_cast<double>(G) - ones + 1.0;
        const double hi = k == 0 ? 1.0 : theta[k - 1];
        const double lo = k == K - 1 ? 0.0 : theta[k + 1];
        theta[k] = sample_truncated_beta(a, b, lo, hi, theta[k], rng);
    }
}

inline void update_sparsity(ChainState& s, const PriorSpec& prior, Rng& rng) {
    update_sparsity(s.Gamma, s.Theta, prior.alpha, rng);
}

inline void update_idio_variance(Vector& sigma, const Matrix& B, const Matrix& omega, const Matrix& Y,
                                 const PriorSpec& prior, Rng& rng) {
    const Index G = Y.rows();
    const double n = static_cast<double>(Y.cols());
    const Matrix resid = Y - B * omega;
    const double shape = 0.5 * (prior.eta + n);
    for (Index j = 0; j < G; ++j) {
        const double scale = 0.5 * (prior.eta * prior.epsilon + resid.row(j).squaredNorm());
        sigma[j] = std::max(rng.inverse_gamma(shape, scale), 1e-300);
    }
}

inline void update_idio_variance(ChainState& s, const ObservationMatrix& y, const PriorSpec& prior, Rng& rng) {
    update_idio_variance(s.Sigma, s.B, s.Omega, y.data, prior, rng);
}

/// ℓ(α) = dim·log α − αΛ − S/(2α²): log density of the column scale α in
/// the scaling group move, with dim = G − n − 1.
inline double scale_log_density(double alpha, double dim, double lambda_sum, double sq_sum) noexcept {
    if (!(alpha > 0.0)) return kNegInf;
    return dim * std::log(alpha) - alpha * lambda_sum - 0.5 * sq_sum / (alpha * alpha);
}

/// Properness of ℓ on (0, ∞): needs decay at both ends.
inline bool scale_density_proper(double dim, double lambda_sum, double sq_sum) noexcept {
    const bool right_ok = lambda_sum > 0.0 || dim < -1.0;
    const bool left_ok = sq_sum > 0.0 || dim > -1.0;
    return right_ok && left_ok;
}

/// Univariate slice sampler (stepping out + shrinkage) on a log density.
template <class LogDensity>
double slice_sample(double x0, LogDensity&& logf, double width, int max_steps, Rng& rng) {
    const double level = logf(x0) - rng.exponential();
    double left = x0 - width * rng.uniform();
    double right = left + width;
    int j = static_cast<int>(std::floor(max_steps * rng.uniform()));
    int k = max_steps - 1 - j;
    while (j-- > 0 && logf(left) > level) left -= width;
    while (k-- > 0 && logf(right) > level) right += width;
    for (int it = 0; it < 10000; ++it) {
        const double x1 = rng.uniform(left, right);
        if (logf(x1) > level) return x1;
        if (x1 < x0) left = x1; else right = x1;
    }
    return x0;
}

struct GroupMoveReport {
    std::vector<double> scales;         // α_k applied (1 where skipped)
    std::vector<Index> skipped;         // columns whose scale density was improper
};

/// For each k in turn, draws α_k from ℓ and maps (B_{·k}, Ω_{k·}) to
/// (α_k B_{·k}, Ω_{k·}/α_k). Sampling is a slice update on log α started at
/// the identity (α = 1), step width 1 and at most 50 step-outs.
inline GroupMoveReport scaling_group_move(ChainState& s, const PriorSpec& prior, Rng& rng) {
    if (s.factor_mode != FactorMode::normal)
        throw ValidationError("scaling group moves apply to normal factors only");
    const Index G = s.B.rows(), K = s.B.cols(), n = s.Omega.cols();
    const double dim = static_cast<double>(G - n - 1);
    GroupMoveReport report;
    report.scales.assign(static_cast<std::size_t>(K), 1.0);
    for (Index k = 0; k < K; ++k) {
        double lambda_sum = 0.0;
        for (Index j = 0; j < G; ++j) lambda_sum += prior.penalty(s.Gamma(j, k) != 0) * std::abs(s.B(j, k));
        const double sq_sum = s.Omega.row(k).squaredNorm();
        if (!scale_density_proper(dim, lambda_sum, sq_sum)) {
            report.skipped.push_back(k);
            continue;
        }
        // Density of u = log α carries the extra Jacobian e^u.
        auto logf = [&](double u) { return scale_log_density(std::exp(u), dim, lambda_sum, sq_sum) + u; };
        const double u = slice_sample(0.0, logf, 1.0, 50, rng);
        const double alpha = std::exp(u);
        s.B.col(k) *= alpha;
        s.Omega.row(k) /= alpha;
        report.scales[static_cast<std::size_t>(k)] = alpha;
    }
    return report;
}

/// One systematic scan: B, Ω, Γ, Θ, Σ, then (optionally) the K scale moves.
inline GroupMoveReport gibbs_sweep_normal(ChainState& s, const ObservationMatrix& y, const PriorSpec& prior,
                                          const NormalSweepOptions& opt, Rng& rng) {
    if (s.factor_mode != FactorMode::normal) throw ValidationError("gibbs_sweep_normal requires normal factor mode");
    check_dimensions(s, y);
    update_loadings(s, y, prior, rng, opt.random_scan);
    update_factors_normal(s, y, rng);
    update_allocation(s, prior, rng);
    update_sparsity(s, prior, rng);
    update_idio_variance(s, y, prior, rng);
    GroupMoveReport report;
    if (opt.group_moves) report = scaling_group_move(s, prior, rng);
    ++s.sweep;
    return report;
}

inline GroupMoveReport gibbs_sweep_normal(ChainState& s, const ObservationMatrix& y, const PriorSpec& prior,
                                          const NormalSweepOptions& opt = {}) {
    return gibbs_sweep_normal(s, y, prior, opt, s.rng);
}

}  // namespace orthofactor

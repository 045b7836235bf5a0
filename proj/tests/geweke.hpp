#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "orthofactor/diagnostics.hpp"
#include "orthofactor/sampler_ghosh_dunson.hpp"
#include "orthofactor/sampler_normal.hpp"
#include "orthofactor/sampler_orthonormal.hpp"

namespace orthofactor::testing {

enum class GewekeVariant { spsl_normal, spsl_groupmoves, spsl_orthonormal, gd_normal, gd_orthonormal };

inline const char* to_string(GewekeVariant v) {
    switch (v) {
        case GewekeVariant::spsl_normal: return "spsl_normal";
        case GewekeVariant::spsl_groupmoves: return "spsl_normal_groupmoves";
        case GewekeVariant::spsl_orthonormal: return "spsl_orthonormal";
        case GewekeVariant::gd_normal: return "gd_normal";
        case GewekeVariant::gd_orthonormal: return "gd_orthonormal";
    }
    return "?";
}

struct GewekeResult {
    std::vector<std::string> names{"mean beta", "mean |beta|", "mean log sigma2"};
    std::vector<double> z;
    double max_abs_z = 0.0;
};

/// Hyperparameters with light enough tails for the successive-conditional
/// chain to mix at G=3, n=2, K=1.
inline PriorSpec geweke_prior() {
    PriorSpec p;
    p.lambda0 = 5.0;
    p.lambda1 = 1.0;
    p.alpha = 1.0;
    p.eta = 4.0;
    p.epsilon = 1.0;
    p.gd_lambda = 1.0;
    p.gd_lambda0 = 25.0;
    p.gd_lambda1 = 1.0;
    return p;
}

namespace geweke_detail {

inline std::vector<double> stats(const Matrix& B, const Vector& sigma) {
    return {B.mean(), B.cwiseAbs().mean(), sigma.array().log().mean()};
}

inline Matrix draw_data(const Matrix& B, const Matrix& Omega, const Vector& sigma, Rng& rng) {
    Matrix Y = B * Omega;
    for (Index i = 0; i < Y.cols(); ++i)
        for (Index j = 0; j < Y.rows(); ++j) Y(j, i) += std::sqrt(sigma[j]) * rng.normal();
    return Y;
}

inline Vector draw_theta(Index K, double alpha, Rng& rng) {
    Vector t(K);
    double prod = 1.0;
    for (Index k = 0; k < K; ++k) {
        prod *= rng.beta(alpha, 1.0);
        t[k] = std::max(prod, 1e-300);
    }
    return t;
}

inline Matrix draw_factors(Index K, Index n, FactorMode m, Rng& rng) {
    return m == FactorMode::normal ? standard_normal_matrix(K, n, rng) : sample_scaled_stiefel(K, n, rng);
}

inline void draw_common(BinaryMatrix& Gamma, Vector& Theta, Vector& Sigma, Matrix& Omega, Index G, Index n, Index K,
                        FactorMode m, const PriorSpec& p, Rng& rng) {
    Theta = draw_theta(K, p.alpha, rng);
    Gamma.resize(G, K);
    for (Index k = 0; k < K; ++k)
        for (Index j = 0; j < G; ++j) Gamma(j, k) = rng.uniform() < Theta[k];
    Sigma.resize(G);
    for (Index j = 0; j < G; ++j) Sigma[j] = rng.inverse_gamma(0.5 * p.eta, 0.5 * p.eta * p.epsilon);
    Omega = draw_factors(K, n, m, rng);
}

inline void forward_spsl(ChainState& s, Matrix& Y, Index G, Index n, Index K, FactorMode m, const PriorSpec& p,
                         Rng& rng) {
    s.factor_mode = m;
    draw_common(s.Gamma, s.Theta, s.Sigma, s.Omega, G, n, K, m, p, rng);
    s.B.resize(G, K);
    for (Index k = 0; k < K; ++k)
        for (Index j = 0; j < G; ++j) s.B(j, k) = sample_laplace(p.penalty(s.Gamma(j, k) != 0), rng);
    Y = draw_data(s.B, s.Omega, s.Sigma, rng);
}

inline void forward_gd(GDState& s, Matrix& Y, Index G, Index n, Index K, FactorMode m, const PriorSpec& p, Rng& rng) {
    s.factor_mode = m;
    draw_common(s.Gamma, s.Theta, s.Sigma, s.Omega, G, n, K, m, p, rng);
    s.Q.resize(G, K);
    for (Index k = 0; k < K; ++k)
        for (Index j = 0; j < G; ++j) s.Q(j, k) = rng.normal() / std::sqrt(gd_precision(s.Gamma(j, k) != 0, p));
    s.r.resize(K);
    for (Index k = 0; k < K; ++k) s.r[k] = rng.normal() / std::sqrt(p.gd_lambda);
    Y = draw_data(s.loadings(), s.Omega, s.Sigma, rng);
}

}  // namespace geweke_detail

/// Marginal-conditional vs successive-conditional comparison: z-scores of
/// the difference in means, with the successive chain's variance scaled by
/// its effective sample size.
inline GewekeResult run_geweke(GewekeVariant v, int rounds, std::uint64_t seed, Index G = 3, Index n = 2,
                               Index K = 1) {
    using namespace geweke_detail;
    const PriorSpec p = geweke_prior();
    const bool gd = v == GewekeVariant::gd_normal || v == GewekeVariant::gd_orthonormal;
    const FactorMode mode = (v == GewekeVariant::spsl_orthonormal || v == GewekeVariant::gd_orthonormal)
                                ? FactorMode::orthonormal
                                : FactorMode::normal;
    Rng rng(seed);
    const std::size_t S = 3;
    std::vector<std::vector<double>> fwd(S), suc(S);

    ChainState cs;
    GDState gs;
    Matrix Y;
    for (int t = 0; t < rounds; ++t) {
        std::vector<double> g;
        if (gd) {
            forward_gd(gs, Y, G, n, K, mode, p, rng);
            g = stats(gs.loadings(), gs.Sigma);
        } else {
            forward_spsl(cs, Y, G, n, K, mode, p, rng);
            g = stats(cs.B, cs.Sigma);
        }
        for (std::size_t i = 0; i < S; ++i) fwd[i].push_back(g[i]);
    }

    if (gd) forward_gd(gs, Y, G, n, K, mode, p, rng);
    else forward_spsl(cs, Y, G, n, K, mode, p, rng);
    NormalSweepOptions nopt;
    nopt.group_moves = v == GewekeVariant::spsl_groupmoves;
    std::vector<LatitudeTuning> tuning;
    for (int t = 0; t < rounds; ++t) {
        ObservationMatrix y(Y);
        std::vector<double> g;
        if (gd) {
            gd_sweep(gs, y, p, GDSweepOptions{}, rng);
            Y = draw_data(gs.loadings(), gs.Omega, gs.Sigma, rng);
            g = stats(gs.loadings(), gs.Sigma);
        } else {
            if (mode == FactorMode::normal) gibbs_sweep_normal(cs, y, p, nopt, rng);
            else gibbs_sweep_orthonormal(cs, y, p, OrthonormalSweepOptions{}, rng);
            Y = draw_data(cs.B, cs.Omega, cs.Sigma, rng);
            g = stats(cs.B, cs.Sigma);
        }
        for (std::size_t i = 0; i < S; ++i) suc[i].push_back(g[i]);
    }

    GewekeResult r;
    for (std::size_t i = 0; i < S; ++i) {
        auto moments = [](const std::vector<double>& x) {
            double m = 0.0;
            for (double a : x) m += a;
            m /= static_cast<double>(x.size());
            double s = 0.0;
            for (double a : x) s += (a - m) * (a - m);
            return std::pair{m, s / static_cast<double>(x.size() - 1)};
        };
        const auto [mf, vf] = moments(fwd[i]);
        const auto [ms, vs] = moments(suc[i]);
        const double ess = effective_sample_size(suc[i]).value;
        const double z = (mf - ms) / std::sqrt(vf / static_cast<double>(fwd[i].size()) + vs / ess);
        r.z.push_back(z);
        r.max_abs_z = std::max(r.max_abs_z, std::abs(z));
    }
    return r;
}

}  // namespace orthofactor::testing

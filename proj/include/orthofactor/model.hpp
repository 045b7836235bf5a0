#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "orthofactor/errors.hpp"
#include "orthofactor/linalg.hpp"
#include "orthofactor/rng.hpp"
#include "orthofactor/special.hpp"

namespace orthofactor {

enum class FactorMode { normal, orthonormal };

inline const char* to_string(FactorMode m) { return m == FactorMode::normal ? "normal" : "orthonormal"; }

/// G × n data, one row per response and one column per sample.
struct ObservationMatrix {
    Matrix data;
    std::vector<std::string> row_labels;
    std::vector<std::string> col_labels;

    ObservationMatrix() = default;
    explicit ObservationMatrix(Matrix y, std::vector<std::string> rows = {}, std::vector<std::string> cols = {})
        : data(std::move(y)), row_labels(std::move(rows)), col_labels(std::move(cols)) {
        validate();
    }

    Index responses() const { return data.rows(); }
    Index samples() const { return data.cols(); }

    void validate() const {
        if (data.rows() < 1 || data.cols() < 1)
            throw ValidationError("observation matrix must have at least one row and one column");
        if (!data.allFinite()) throw ValidationError("observation matrix contains non-finite entries");
        if (!row_labels.empty() && static_cast<Index>(row_labels.size()) != data.rows())
            throw ValidationError("row label count does not match the number of responses");
        if (!col_labels.empty() && static_cast<Index>(col_labels.size()) != data.cols())
            throw ValidationError("column label count does not match the number of samples");
    }
};

/// Hyperparameters of the spike-and-slab factor model and of the modified
/// Ghosh–Dunson comparison model (the gd_* fields are normal precisions).
struct PriorSpec {
    double lambda0 = 20.0;
    double lambda1 = 0.001;
    double alpha = 1.0;
    double eta = 1.0;
    double epsilon = 1.0;
    double gd_lambda = 0.001;
    double gd_lambda0 = 200.0;
    double gd_lambda1 = 1.0;

    void validate() const {
        const std::pair<const char*, double> fields[] = {
            {"lambda0", lambda0}, {"lambda1", lambda1},       {"alpha", alpha},
            {"eta", eta},         {"epsilon", epsilon},       {"gd_lambda", gd_lambda},
            {"gd_lambda0", gd_lambda0}, {"gd_lambda1", gd_lambda1}};
        for (const auto& [name, v] : fields)
            if (!(v > 0.0) || !std::isfinite(v))
                throw ValidationError(std::string("prior field ") + name + " must be a finite positive number");
        if (!(lambda0 > lambda1)) throw ValidationError("prior requires lambda0 > lambda1");
    }

    double penalty(bool slab) const { return slab ? lambda1 : lambda0; }
};

/// Per-row proposal scale of the latitude Metropolis step, adapted toward an
/// acceptance rate in [0.3, 0.5] during burn-in.
struct LatitudeTuning {
    double scale = 1.0;
    int proposed = 0;
    int accepted = 0;
};

/// Full MCMC state. Sigma holds the variances σ_j².
struct ChainState {
    Matrix B;            // G × K loadings
    Matrix Omega;        // K × n factors
    BinaryMatrix Gamma;  // G × K allocation
    Vector Theta;        // K sparsity weights, non-increasing
    Vector Sigma;        // G idiosyncratic variances
    std::uint64_t sweep = 0;
    FactorMode factor_mode = FactorMode::normal;
    Rng rng;
    std::vector<LatitudeTuning> latitude;

    Index responses() const { return B.rows(); }
    Index factors() const { return B.cols(); }
    Index samples() const { return Omega.cols(); }
};

inline void check_dimensions(const ChainState& s, const ObservationMatrix& y) {
    const Index G = y.responses(), n = y.samples(), K = s.B.cols();
    if (s.B.rows() != G || s.Omega.rows() != K || s.Omega.cols() != n || s.Gamma.rows() != G ||
        s.Gamma.cols() != K || s.Theta.size() != K || s.Sigma.size() != G)
        throw ValidationError("chain state dimensions do not match the data (G=" + std::to_string(G) +
                              ", n=" + std::to_string(n) + ", K=" + std::to_string(K) + ")");
    if ((s.Sigma.array() <= 0.0).any()) throw ValidationError("idiosyncratic variances must be positive");
}

/// Chain start at given (B, Σ, Θ): Ω drawn from its prior (i.i.d. normal, or
/// √n times a uniform Stiefel frame) and γ_jk ~ Bern(θ_k). The chain owns a
/// stream seeded by `seed`.
inline ChainState initial_state(const Matrix& B, const Vector& Sigma, const Vector& Theta, Index n, FactorMode mode,
                                std::uint64_t seed) {
    const Index G = B.rows(), K = B.cols();
    if (Sigma.size() != G || Theta.size() != K) throw ValidationError("initial_state: inconsistent dimensions");
    ChainState s;
    s.rng = Rng(seed);
    s.factor_mode = mode;
    s.B = B;
    s.Sigma = Sigma;
    s.Theta = Theta;
    Rng init = s.rng.substream(0);
    s.Omega = mode == FactorMode::normal ? standard_normal_matrix(K, n, init) : sample_scaled_stiefel(K, n, init);
    s.Gamma.resize(G, K);
    for (Index k = 0; k < K; ++k)
        for (Index j = 0; j < G; ++j) s.Gamma(j, k) = init.uniform() < Theta[k];
    return s;
}

/// Data-generating parameters kept for scoring.
struct SyntheticTruth {
    Matrix B0;
    Matrix Omega0;
    Vector Sigma0;
    BinaryMatrix support;
};

/// log[(1−γ)ψ(β|λ₀) + γψ(β|λ₁)], ψ(β|λ) = (λ/2)exp(−λ|β|).
inline double spsl_log_density(double beta, bool gamma, const PriorSpec& prior) noexcept {
    const double lambda = prior.penalty(gamma);
    return std::log(0.5 * lambda) - lambda * std::abs(beta);
}

/// log p(Θ) for θ_k = ∏ ν_l with ν_l ~ Beta(α, 1); −∞ off the ordered simplex.
inline double log_sparsity_prior(const Vector& theta, double alpha) {
    const Index K = theta.size();
    double prev = 1.0;
    for (Index k = 0; k < K; ++k) {
        if (!(theta[k] > 0.0) || theta[k] > prev) return kNegInf;
        prev = theta[k];
    }
    if (K == 0) return 0.0;
    double lp = static_cast<double>(K) * std::log(alpha) + (alpha - 1.0) * std::log(theta[K - 1]);
    for (Index k = 0; k + 1 < K; ++k) lp -= std::log(theta[k]);
    return lp;
}

inline double log_inverse_gamma(double x, double shape, double scale) {
    return shape * std::log(scale) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - scale / x;
}

/// Gaussian log-likelihood log f(Y | B, Ω, Σ).
inline double log_likelihood(const Matrix& B, const Matrix& Omega, const Vector& Sigma, const Matrix& Y) {
    const double n = static_cast<double>(Y.cols());
    const Matrix resid = Y - B * Omega;
    double ll = 0.0;
    for (Index j = 0; j < Y.rows(); ++j)
        ll += -0.5 * n * (std::log(Sigma[j]) + 2.0 * kLogSqrt2Pi) - 0.5 * resid.row(j).squaredNorm() / Sigma[j];
    return ll;
}

/// Unnormalised log π(B, Ω, Σ, Γ, Θ | Y). In orthonormal mode the Stiefel
/// density of Ω is a constant and is dropped.
inline double log_joint_posterior(const ChainState& s, const ObservationMatrix& y, const PriorSpec& prior) {
    check_dimensions(s, y);
    const Index G = s.B.rows(), K = s.B.cols();
    double lp = log_likelihood(s.B, s.Omega, s.Sigma, y.data);
    if (s.factor_mode == FactorMode::normal)
        lp += -0.5 * s.Omega.squaredNorm() - static_cast<double>(s.Omega.size()) * kLogSqrt2Pi;
    for (Index k = 0; k < K; ++k) {
        const double th = s.Theta[k];
        for (Index j = 0; j < G; ++j) {
            const bool g = s.Gamma(j, k) != 0;
            lp += spsl_log_density(s.B(j, k), g, prior);
            lp += g ? std::log(th) : std::log1p(-th);
        }
    }
    lp += log_sparsity_prior(s.Theta, prior.alpha);
    const double shape = 0.5 * prior.eta, scale = 0.5 * prior.eta * prior.epsilon;
    for (Index j = 0; j < G; ++j) lp += log_inverse_gamma(s.Sigma[j], shape, scale);
    return lp;
}

struct SyntheticOptions {
    Index G = 1956;
    Index n = 100;
    Index K0 = 5;
    Index block_len = 500;
    Index stride = 364;
    std::uint64_t seed = 1;
    FactorMode factor_mode = FactorMode::normal;
    double noise_scale = 1.0;  // 0 gives noiseless data
};

/// Block loadings (column k covers rows [stride·k, stride·k + block_len)),
/// identity noise covariance, factors normal or √n-orthonormal.
inline std::pair<ObservationMatrix, SyntheticTruth> generate_synthetic(const SyntheticOptions& opt) {
    if (opt.G < 1 || opt.n < 1 || opt.K0 < 1 || opt.block_len < 1 || opt.stride < 0)
        throw ValidationError("synthetic layout requires positive G, n, K0, block_len and stride >= 0");
    if (opt.stride * (opt.K0 - 1) + opt.block_len > opt.G)
        throw ValidationError("synthetic block layout exceeds G: stride*(K0-1)+block_len = " +
                              std::to_string(opt.stride * (opt.K0 - 1) + opt.block_len) + " > " +
                              std::to_string(opt.G));
    if (opt.factor_mode == FactorMode::orthonormal && opt.K0 > opt.n)
        throw ValidationError("orthonormal factors need K0 <= n");

    SyntheticTruth truth;
    truth.B0 = Matrix::Zero(opt.G, opt.K0);
    truth.support = BinaryMatrix::Zero(opt.G, opt.K0);
    for (Index k = 0; k < opt.K0; ++k) {
        for (Index j = opt.stride * k; j < opt.stride * k + opt.block_len; ++j) {
            truth.B0(j, k) = 1.0;
            truth.support(j, k) = 1;
        }
    }
    truth.Sigma0 = Vector::Ones(opt.G);

    Rng rng(opt.seed);
    Rng factor_rng = rng.substream(1);
    Rng noise_rng = rng.substream(2);
    truth.Omega0 = opt.factor_mode == FactorMode::normal ? standard_normal_matrix(opt.K0, opt.n, factor_rng)
                                                          : sample_scaled_stiefel(opt.K0, opt.n, factor_rng);
    Matrix y = truth.B0 * truth.Omega0;
    if (opt.noise_scale != 0.0) {
        for (Index i = 0; i < opt.n; ++i)
            for (Index j = 0; j < opt.G; ++j) y(j, i) += opt.noise_scale * std::sqrt(truth.Sigma0[j]) * noise_rng.normal();
    }
    return {ObservationMatrix(std::move(y)), std::move(truth)};
}

/// Row-wise least-squares residuals of Y on [1, covariates]. Covariates are
/// n × p and are standardised first; the fit itself is unchanged by that.
inline ObservationMatrix residualize(const ObservationMatrix& y_raw, const Matrix& covariates,
                                     const std::vector<std::string>& covariate_names = {}) {
    const Index n = y_raw.samples();
    const Index p = covariates.cols();
    if (p > 0 && covariates.rows() != n)
        throw ValidationError("covariate rows (" + std::to_string(covariates.rows()) +
                              ") do not match the number of samples (" + std::to_string(n) + ")");
    if (p + 1 >= n) throw ValidationError("residualize needs p + 1 < n");

    Matrix design(n, p + 1);
    design.col(0).setOnes();
    for (Index c = 0; c < p; ++c) {
        const Vector col = covariates.col(c);
        const double mean = col.mean();
        const double sd = std::sqrt((col.array() - mean).square().sum() / static_cast<double>(n));
        design.col(c + 1) = sd > 0.0 ? Vector((col.array() - mean) / sd) : Vector(col.array() - mean);
    }

    // Modified Gram–Schmidt with re-orthogonalisation; a column that loses
    // (nearly) all of its norm is a linear combination of earlier ones.
    Matrix basis(n, p + 1);
    for (Index c = 0; c <= p; ++c) {
        Vector v = design.col(c);
        const double norm0 = v.norm();
        for (int pass = 0; pass < 2; ++pass)
            for (Index t = 0; t < c; ++t) v -= basis.col(t).dot(v) * basis.col(t);
        const double nv = v.norm();
        if (!(norm0 > 0.0) || nv <= 1e-10 * std::max(norm0, std::sqrt(static_cast<double>(n)))) {
            std::string name = c == 0 ? "intercept"
                               : (static_cast<Index>(covariate_names.size()) >= c ? covariate_names[c - 1]
                                                                                    : "covariate " + std::to_string(c));
            throw ValidationError("rank-deficient design: column '" + name + "' is collinear with the intercept or earlier covariates");
        }
        basis.col(c) = v / nv;
    }

    Matrix resid = y_raw.data - (y_raw.data * basis) * basis.transpose();
    return ObservationMatrix(std::move(resid), y_raw.row_labels, y_raw.col_labels);
}

}  // namespace orthofactor

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include "orthofactor/errors.hpp"
#include "orthofactor/linalg.hpp"
#include "orthofactor/model.hpp"
#include "orthofactor/rng.hpp"
#include "orthofactor/sampler_normal.hpp"
#include "orthofactor/sampler_orthonormal.hpp"

namespace orthofactor {

struct MapEstimate {
    Matrix B_hat;
    Vector Sigma_hat;
    Vector Theta_hat;
    Index K_hat = 0;
    double objective = kNegInf;
    int iterations = 0;
    bool converged = false;
    std::vector<double> objective_path;  // one value per EM iteration
};

struct LadderSchedule {
    double lambda1 = 0.001;
    std::vector<double> lambda0_sequence{12.0, 15.0, 20.0, 30.0, 40.0};
    double stabilization_tol = 0.01;

    void validate() const {
        if (!(lambda1 > 0.0) || !std::isfinite(lambda1)) throw ValidationError("ladder lambda1 must be positive");
        if (lambda0_sequence.empty()) throw ValidationError("ladder lambda0_sequence must not be empty");
        for (std::size_t t = 0; t < lambda0_sequence.size(); ++t) {
            const double v = lambda0_sequence[t];
            if (!std::isfinite(v) || !(v > lambda1))
                throw ValidationError("ladder lambda0_sequence entries must exceed lambda1");
            if (t > 0 && !(v > lambda0_sequence[t - 1]))
                throw ValidationError("ladder lambda0_sequence must be strictly increasing");
        }
        if (!(stabilization_tol > 0.0)) throw ValidationError("ladder stabilization_tol must be positive");
    }
};

/// Rotation applied after each M-step: none (plain EM), B ← B·L with L the
/// Cholesky factor of (1/n)ΣE[ωωᵀ], or its diagonal-only variant
/// B ← B·diag((1/n)ΣE[ω_k²])^{1/2}.
enum class Expansion { none, cholesky, scale };

struct EmOptions {
    int max_iter = 500;
    double tol = 1e-4;
    Expansion expansion = Expansion::none;
    int cd_passes = 25;
};

inline double sparsity_threshold(const PriorSpec& prior) { return 10.0 / prior.lambda0; }

inline Index count_active_columns(const Matrix& B, double threshold) {
    Index count = 0;
    for (Index k = 0; k < B.cols(); ++k)
        if (B.col(k).cwiseAbs().maxCoeff() > threshold) ++count;
    return count;
}

/// log π(B, Σ, Θ | Y) up to a constant, with Ω and Γ integrated out:
/// Gaussian marginal likelihood with covariance BBᵀ + Σ (via Woodbury) plus
/// the mixture prior of B and the priors of Θ and Σ.
inline double map_objective(const Matrix& Y, const Matrix& B, const Vector& sigma, const Vector& theta,
                            const PriorSpec& prior) {
    const Index G = Y.rows(), K = B.cols();
    const double n = static_cast<double>(Y.cols());
    const Vector inv_sig = sigma.cwiseInverse();
    const Matrix BtSi = B.transpose() * inv_sig.asDiagonal();
    Matrix P = Matrix::Identity(K, K) + BtSi * B;
    Eigen::LLT<Matrix> llt(P);
    if (llt.info() != Eigen::Success) return kNegInf;
    double logdet = 0.0;
    for (Index k = 0; k < K; ++k) logdet += 2.0 * std::log(llt.matrixL()(k, k));
    logdet += sigma.array().log().sum();
    const Matrix Z = BtSi * Y;
    const double quad = (Y.array().square().colwise() * inv_sig.array()).sum() - (Z.array() * llt.solve(Z).array()).sum();
    double lp = -0.5 * n * logdet - 0.5 * quad - n * static_cast<double>(G) * kLogSqrt2Pi;

    for (Index k = 0; k < K; ++k) {
        const double th = theta[k];
        for (Index j = 0; j < G; ++j) {
            const double ab = std::abs(B(j, k));
            const double l1 = std::log(th) + std::log(0.5 * prior.lambda1) - prior.lambda1 * ab;
            const double l0 = std::log1p(-th) + std::log(0.5 * prior.lambda0) - prior.lambda0 * ab;
            lp += th >= 1.0 ? l1 : log_sum_exp(l0, l1);
        }
    }
    lp += log_sparsity_prior(theta, prior.alpha);
    const double shape = 0.5 * prior.eta, scale = 0.5 * prior.eta * prior.epsilon;
    for (Index j = 0; j < G; ++j) lp += log_inverse_gamma(sigma[j], shape, scale);
    return lp;
}

/// Kaiser varimax rotation of the columns of L (SVD iteration).
inline Matrix varimax(const Matrix& L, int max_iter = 1000, double tol = 1e-13) {
    const Index p = L.rows(), K = L.cols();
    if (K < 2) return L;
    Matrix R = Matrix::Identity(K, K);
    double crit = 0.0;
    for (int it = 0; it < max_iter; ++it) {
        const Matrix Lam = L * R;
        const RowVector colsq = Lam.array().square().colwise().sum() / static_cast<double>(p);
        const Matrix T = Lam.array().cube().matrix() - Lam * colsq.transpose().asDiagonal();
        Eigen::JacobiSVD<Matrix> svd(L.transpose() * T, Eigen::ComputeFullU | Eigen::ComputeFullV);
        R = svd.matrixU() * svd.matrixV().transpose();
        const double next = svd.singularValues().sum();
        if (next < crit * (1.0 + tol)) break;
        crit = next;
    }
    return L * R;
}

/// Principal-component start: B = U_K·S_K/√n rotated by varimax, σ_j² the
/// per-row residual variance (floored), θ_k = 1/2. Each column's
/// largest-magnitude entry is made positive.
inline MapEstimate default_map_init(const Matrix& Y, Index K) {
    if (K < 1) throw ValidationError("factor count K must be at least 1");
    const Index G = Y.rows(), n = Y.cols();
    const double root_n = std::sqrt(static_cast<double>(n));
    Eigen::BDCSVD<Matrix> svd(Y, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Index r = std::min<Index>(K, svd.singularValues().size());
    MapEstimate m;
    m.B_hat = Matrix::Zero(G, K);
    for (Index k = 0; k < r; ++k) m.B_hat.col(k) = svd.matrixU().col(k) * svd.singularValues()[k] / root_n;
    m.B_hat.leftCols(r) = varimax(m.B_hat.leftCols(r));
    for (Index k = 0; k < r; ++k) {
        Index arg;
        m.B_hat.col(k).cwiseAbs().maxCoeff(&arg);
        if (m.B_hat(arg, k) < 0.0) m.B_hat.col(k) = -m.B_hat.col(k);
    }
    Matrix resid = Y;
    if (r > 0) {
        const Matrix U = svd.matrixU().leftCols(r);
        resid -= U * (U.transpose() * Y);
    }
    m.Sigma_hat = (resid.rowwise().squaredNorm() / static_cast<double>(n)).cwiseMax(1e-3);
    m.Theta_hat = Vector::Constant(K, 0.5);
    return m;
}

namespace detail {

/// E-step moments: V = (I + BᵀΣ⁻¹B)⁻¹, M = VBᵀΣ⁻¹Y, A = MMᵀ + nV.
struct EStep {
    Matrix M;
    Matrix A;
};

inline EStep e_step(const Matrix& Y, const Matrix& B, const Vector& sigma) {
    const Index K = B.cols();
    const Matrix BtSi = B.transpose() * sigma.cwiseInverse().asDiagonal();
    const Matrix P = Matrix::Identity(K, K) + BtSi * B;
    Eigen::LLT<Matrix> llt(P);
    if (llt.info() != Eigen::Success) throw NumericalError("EM: factor precision matrix is not positive definite");
    const Matrix V = llt.solve(Matrix::Identity(K, K));
    EStep e;
    e.M = V * (BtSi * Y);
    e.A = e.M * e.M.transpose() + static_cast<double>(Y.cols()) * V;
    return e;
}

inline double soft_threshold(double x, double t) noexcept {
    return x > t ? x - t : (x < -t ? x + t : 0.0);
}

/// Coordinate-wise maximiser of Σ_k [P_k log θ_k + (G − P_k) log(1 − θ_k)] + log p(Θ)
/// on the ordered simplex, each θ_k clamped to [θ_{k+1}, θ_{k−1}].
inline void update_theta_mode(const Vector& expected_ones, double G, double alpha, Vector& theta) {
    const Index K = theta.size();
    constexpr double floor = 1e-12, ceil = 1.0 - 1e-12;
    for (int pass = 0; pass < 3; ++pass) {
        for (Index k = 0; k < K; ++k) {
            const double ones = expected_ones[k] + (k == K - 1 ? alpha - 1.0 : -1.0);
            const double zeros = G - expected_ones[k];
            double mode = ones <= 0.0 ? 0.0 : ones / (ones + zeros);
            const double hi = std::min(k == 0 ? 1.0 : theta[k - 1], ceil);
            const double lo = std::max(k == K - 1 ? 0.0 : theta[k + 1], floor);
            theta[k] = std::clamp(mode, lo, std::max(lo, hi));
        }
    }
}

}  // namespace detail

/// EM for the posterior mode of (B, Σ, Θ) with Ω and Γ latent. The M-step
/// for each row of B is a weighted lasso solved by coordinate descent.
inline MapEstimate em_map(const ObservationMatrix& y, const PriorSpec& prior, Index K,
                          const std::optional<MapEstimate>& init = std::nullopt, const EmOptions& opt = {}) {
    prior.validate();
    const Matrix& Y = y.data;
    const Index G = Y.rows();
    const double n = static_cast<double>(Y.cols());
    MapEstimate cur = init ? *init : default_map_init(Y, K);
    if (cur.B_hat.rows() != G || cur.Sigma_hat.size() != G || cur.Theta_hat.size() != cur.B_hat.cols())
        throw ValidationError("EM initialisation has the wrong dimensions");
    K = cur.B_hat.cols();
    cur.objective_path.clear();
    cur.converged = false;

    const Vector yy = Y.rowwise().squaredNorm();
    double obj = map_objective(Y, cur.B_hat, cur.Sigma_hat, cur.Theta_hat, prior);
    MapEstimate best = cur;
    best.objective = obj;

    int it = 0;
    for (; it < opt.max_iter; ++it) {
        const detail::EStep e = detail::e_step(Y, cur.B_hat, cur.Sigma_hat);
        const Matrix C = Y * e.M.transpose();  // G × K, row j is c_jᵀ
        Matrix B_new = cur.B_hat;
        Vector expected_ones = Vector::Zero(K);
        for (Index j = 0; j < G; ++j) {
            RowVector penalty(K);
            for (Index k = 0; k < K; ++k) {
                const double p = slab_probability(cur.B_hat(j, k), cur.Theta_hat[k], prior);
                expected_ones[k] += p;
                penalty[k] = cur.Sigma_hat[j] * (p * prior.lambda1 + (1.0 - p) * prior.lambda0);
            }
            Vector b = B_new.row(j).transpose();
            for (int pass = 0; pass < opt.cd_passes; ++pass) {
                double delta = 0.0;
                for (Index k = 0; k < K; ++k) {
                    const double partial = C(j, k) - e.A.row(k).dot(b) + e.A(k, k) * b[k];
                    const double fresh = detail::soft_threshold(partial, penalty[k]) / e.A(k, k);
                    delta = std::max(delta, std::abs(fresh - b[k]));
                    b[k] = fresh;
                }
                if (delta < 1e-12) break;
            }
            B_new.row(j) = b.transpose();
            const double rss = yy[j] - 2.0 * b.dot(C.row(j).transpose()) + b.dot(e.A * b);
            cur.Sigma_hat[j] = std::max((std::max(rss, 0.0) + prior.eta * prior.epsilon) / (n + prior.eta + 2.0), 1e-12);
        }
        detail::update_theta_mode(expected_ones, static_cast<double>(G), prior.alpha, cur.Theta_hat);
        if (opt.expansion == Expansion::cholesky) {
            Eigen::LLT<Matrix> chol(e.A / n);
            if (chol.info() == Eigen::Success) B_new = B_new * Matrix(chol.matrixL());
        } else if (opt.expansion == Expansion::scale) {
            B_new = B_new * (e.A.diagonal() / n).cwiseSqrt().asDiagonal();
        }
        const double change = (B_new - cur.B_hat).cwiseAbs().maxCoeff();
        cur.B_hat = std::move(B_new);
        obj = map_objective(Y, cur.B_hat, cur.Sigma_hat, cur.Theta_hat, prior);
        if (!std::isfinite(obj)) throw NumericalError("EM objective became non-finite");
        cur.objective_path.push_back(obj);
        if (obj >= best.objective) {
            best.B_hat = cur.B_hat;
            best.Sigma_hat = cur.Sigma_hat;
            best.Theta_hat = cur.Theta_hat;
            best.objective = obj;
        }
        if (change < opt.tol) {
            cur.converged = true;
            ++it;
            break;
        }
    }
    MapEstimate out = cur.converged ? cur : best;
    out.objective = cur.converged ? obj : best.objective;
    out.objective_path = std::move(cur.objective_path);
    out.iterations = it;
    out.converged = cur.converged;
    out.K_hat = count_active_columns(out.B_hat, sparsity_threshold(prior));
    return out;
}

inline MapEstimate em_map(const ObservationMatrix& y, const PriorSpec& prior, const MapEstimate& init,
                          const EmOptions& opt = {}) {
    return em_map(y, prior, init.B_hat.cols(), init, opt);
}

struct LadderStage {
    double lambda0 = 0.0;
    MapEstimate estimate;
    double relative_change = std::numeric_limits<double>::infinity();  // vs previous stage
};

/// ‖B − B_prev‖_max / max(1, ‖B‖_max).
inline double ladder_change(const Matrix& B, const Matrix& B_prev) {
    if (B.rows() != B_prev.rows() || B.cols() != B_prev.cols()) return std::numeric_limits<double>::infinity();
    const double scale = std::max(1.0, B.cwiseAbs().maxCoeff());
    return (B - B_prev).cwiseAbs().maxCoeff() / scale;
}

/// Warm-started EM along the λ₀ sequence; stops after the first stage whose
/// MAP moved by less than the stabilisation tolerance.
inline std::vector<LadderStage> run_ladder(const ObservationMatrix& y, const LadderSchedule& schedule,
                                           const PriorSpec& base_prior, Index K_init, const EmOptions& opt = {}) {
    schedule.validate();
    std::vector<LadderStage> path;
    std::optional<MapEstimate> warm;
    for (double lambda0 : schedule.lambda0_sequence) {
        PriorSpec prior = base_prior;
        prior.lambda0 = lambda0;
        prior.lambda1 = schedule.lambda1;
        LadderStage stage;
        stage.lambda0 = lambda0;
        stage.estimate = em_map(y, prior, K_init, warm, opt);
        if (!path.empty()) stage.relative_change = ladder_change(stage.estimate.B_hat, path.back().estimate.B_hat);
        warm = stage.estimate;
        path.push_back(std::move(stage));
        if (path.back().relative_change < schedule.stabilization_tol) break;
    }
    return path;
}

struct AdaptReport {
    std::vector<Index> dropped;
    bool appended = false;
    Index K = 0;
};

namespace detail {

inline void keep_columns(ChainState& s, const std::vector<Index>& keep) {
    const Index G = s.B.rows(), n = s.Omega.cols(), K = static_cast<Index>(keep.size());
    Matrix B(G, K), Omega(K, n);
    BinaryMatrix Gamma(G, K);
    Vector Theta(K);
    std::vector<LatitudeTuning> lat;
    for (Index t = 0; t < K; ++t) {
        const Index k = keep[static_cast<std::size_t>(t)];
        B.col(t) = s.B.col(k);
        Omega.row(t) = s.Omega.row(k);
        Gamma.col(t) = s.Gamma.col(k);
        Theta[t] = s.Theta[k];
        if (static_cast<std::size_t>(k) < s.latitude.size()) lat.push_back(s.latitude[static_cast<std::size_t>(k)]);
    }
    s.B = std::move(B);
    s.Omega = std::move(Omega);
    s.Gamma = std::move(Gamma);
    s.Theta = std::move(Theta);
    s.latitude = std::move(lat);
}

/// Gram–Schmidt the rows in order and rescale each to norm √n.
inline void reorthonormalize_rows(Matrix& omega) {
    const double root_n = std::sqrt(static_cast<double>(omega.cols()));
    for (Index k = 0; k < omega.rows(); ++k) {
        Vector row = omega.row(k).transpose();
        project_out_rows(row, omega.topRows(k));
        omega.row(k) = (root_n / row.norm()) * row.transpose();
    }
}

}  // namespace detail

/// Drops factors whose Γ column is all zero; when none are dropped, appends a
/// null factor (zero loadings, spike allocation, θ from the stick-breaking
/// prior below θ_K, factor row from its prior on the current complement).
inline AdaptReport adapt_factor_count(ChainState& s, const PriorSpec& prior, Rng& rng) {
    const Index K = s.B.cols(), n = s.Omega.cols(), G = s.B.rows();
    AdaptReport report;
    std::vector<Index> keep;
    for (Index k = 0; k < K; ++k) {
        if ((s.Gamma.col(k).array() != 0).any()) keep.push_back(k);
        else report.dropped.push_back(k);
    }
    if (keep.empty()) {
        // Retain one null factor.
        keep.push_back(report.dropped.front());
        report.dropped.erase(report.dropped.begin());
    }
    if (!report.dropped.empty()) {
        detail::keep_columns(s, keep);
        if (s.factor_mode == FactorMode::orthonormal) detail::reorthonormalize_rows(s.Omega);
    } else if (s.factor_mode == FactorMode::normal || K < n) {
        const Index K1 = K + 1;
        s.B.conservativeResize(G, K1);
        s.B.col(K).setZero();
        s.Gamma.conservativeResize(G, K1);
        s.Gamma.col(K).setZero();
        const double last = K > 0 ? s.Theta[K - 1] : 1.0;
        s.Theta.conservativeResize(K1);
        s.Theta[K] = std::max(last * rng.beta(prior.alpha, 1.0), std::numeric_limits<double>::min());
        Vector row(n);
        if (s.factor_mode == FactorMode::normal) {
            for (Index i = 0; i < n; ++i) row[i] = rng.normal();
        } else {
            row = std::sqrt(static_cast<double>(n)) * detail::uniform_complement_direction(s.Omega, nullptr, n, rng);
        }
        s.Omega.conservativeResize(K1, n);
        s.Omega.row(K) = row.transpose();
        s.latitude.resize(static_cast<std::size_t>(K1));
        report.appended = true;
    }
    report.K = s.B.cols();
    return report;
}

}  // namespace orthofactor

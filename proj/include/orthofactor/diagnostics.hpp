#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/QR>

#include "orthofactor/errors.hpp"
#include "orthofactor/linalg.hpp"
#include "orthofactor/sampler_normal.hpp"

namespace orthofactor {

struct LQFactors {
    Matrix K_mat;  // K × K lower triangular, positive diagonal
    Matrix V_mat;  // K × n, orthonormal rows
};

/// M = K_mat·V_mat from the thin QR of Mᵀ, signs fixed so diag(K_mat) > 0.
inline LQFactors lq_decompose(const Matrix& M) {
    const Index K = M.rows(), n = M.cols();
    if (K > n) throw ValidationError("lq_decompose needs K <= n");
    if (K == 0) return {Matrix(0, 0), Matrix(0, n)};
    Eigen::HouseholderQR<Matrix> qr(M.transpose());
    Matrix R = qr.matrixQR().topRows(K).template triangularView<Eigen::Upper>();
    Matrix Q = qr.householderQ() * Matrix::Identity(n, K);
    const double rmax = R.diagonal().cwiseAbs().maxCoeff();
    for (Index k = 0; k < K; ++k) {
        if (!(std::abs(R(k, k)) > 1e-12 * rmax) || !(rmax > 0.0))
            throw NumericalError("lq_decompose: rows are linearly dependent (row " + std::to_string(k) + ")");
        if (R(k, k) < 0.0) {
            R.row(k) = -R.row(k);
            Q.col(k) = -Q.col(k);
        }
    }
    return {R.transpose(), Q.transpose()};
}

/// ‖V_ref^⊥ V_testᵀ‖_F = sqrt(K_test − ‖V_ref V_testᵀ‖_F²).
inline double column_space_angle(const Matrix& V_ref, const Matrix& V_test) {
    if (V_ref.cols() != V_test.cols())
        throw ValidationError("column_space_angle: inputs have different numbers of columns");
    const double inner = (V_ref * V_test.transpose()).squaredNorm();
    return std::sqrt(std::max(static_cast<double>(V_test.rows()) - inner, 0.0));
}

struct EssResult {
    double value = 0.0;
    bool flagged = false;  // constant trace or clipped estimate
};

/// M / (1 + 2Σρ̂_t), with the lag sum cut by the initial positive sequence
/// (pairs ρ̂_{2m} + ρ̂_{2m+1} summed while positive). Clipped to [1, M].
inline EssResult effective_sample_size(std::span<const double> trace) {
    const std::size_t M = trace.size();
    if (M < 10) throw ValidationError("effective_sample_size needs at least 10 draws");
    const double Md = static_cast<double>(M);
    const double mean = std::accumulate(trace.begin(), trace.end(), 0.0) / Md;
    std::vector<double> x(M);
    for (std::size_t i = 0; i < M; ++i) x[i] = trace[i] - mean;
    auto autocov = [&](std::size_t lag) {
        double s = 0.0;
        for (std::size_t i = 0; i + lag < M; ++i) s += x[i] * x[i + lag];
        return s / Md;
    };
    const double c0 = autocov(0);
    if (!(c0 > 0.0) || c0 <= 1e-300) return {Md, true};

    double tau = -1.0;
    for (std::size_t m = 0; 2 * m + 1 < M; ++m) {
        const double pair = (autocov(2 * m) + autocov(2 * m + 1)) / c0;
        if (!(pair > 0.0)) break;
        tau += 2.0 * pair;
    }
    EssResult r;
    const double raw = tau > 0.0 ? Md / tau : Md;
    r.flagged = !(tau > 0.0) || raw > Md || raw < 1.0;
    r.value = std::clamp(raw, 1.0, Md);
    return r;
}

inline EssResult effective_sample_size(const std::vector<double>& trace) {
    return effective_sample_size(std::span<const double>(trace.data(), trace.size()));
}

/// Normalised conditional density exp(−aβ² + bβ − c|β|)/Z at β.
inline double conditional_loading_density(double beta, const TruncNormMixtureParams& p) {
    const HalfLineSplit split(p);
    return std::exp(-p.a * beta * beta + p.b * beta - p.c * std::abs(beta) - split.log_normalizer());
}

/// Pointwise average over draws of the normalised loading conditionals.
inline std::vector<double> rao_blackwell_density(const std::vector<TruncNormMixtureParams>& draws,
                                                 const std::vector<double>& grid) {
    std::vector<double> out(grid.size(), 0.0);
    if (draws.empty()) return out;
    for (const auto& p : draws) {
        if (!(p.a > 0.0)) throw ValidationError("rao_blackwell_density: conditional with a <= 0 is not normalisable");
        const HalfLineSplit split(p);
        const double logz = split.log_normalizer();
        for (std::size_t g = 0; g < grid.size(); ++g) {
            const double x = grid[g];
            out[g] += std::exp(-p.a * x * x + p.b * x - p.c * std::abs(x) - logz);
        }
    }
    const double inv = 1.0 / static_cast<double>(draws.size());
    for (double& v : out) v *= inv;
    return out;
}

/// 512-point grid over mean ± 6 sd of a traced entry.
inline std::vector<double> default_density_grid(double mean, double sd, std::size_t points = 512) {
    if (!(sd > 0.0) || !std::isfinite(sd)) sd = std::max(1e-3, 1e-3 * std::abs(mean));
    std::vector<double> grid(points);
    const double lo = mean - 6.0 * sd, hi = mean + 6.0 * sd;
    for (std::size_t g = 0; g < points; ++g)
        grid[g] = lo + (hi - lo) * static_cast<double>(g) / static_cast<double>(points - 1);
    return grid;
}

struct Alignment {
    std::vector<Index> permutation;  // permutation[k]: sample column placed at reference column k
    std::vector<int> signs;          // signs[c]: sign applied to sample column c
    Matrix aligned;                  // sample columns reordered and sign-flipped
};

/// Greedy signed-permutation matching by largest |correlation| first. Sample
/// columns left over when K_sample > K_ref are appended in original order.
inline Alignment align_to_reference(const Matrix& B_sample, const Matrix& B_ref) {
    const Index G = B_ref.rows(), Kr = B_ref.cols(), Ks = B_sample.cols();
    if (B_sample.rows() != G) throw ValidationError("align_to_reference: row counts differ");
    if (Ks < Kr) throw ValidationError("align_to_reference: sample has fewer columns than the reference");
    if (Ks > 64) throw ValidationError("align_to_reference supports at most 64 columns");

    const Vector ns = B_sample.colwise().norm().transpose();
    const Vector nr = B_ref.colwise().norm().transpose();
    const Matrix dots = B_sample.transpose() * B_ref;  // Ks × Kr
    std::vector<bool> used_s(static_cast<std::size_t>(Ks), false), used_r(static_cast<std::size_t>(Kr), false);

    Alignment a;
    a.permutation.assign(static_cast<std::size_t>(Kr), -1);
    a.signs.assign(static_cast<std::size_t>(Ks), 1);
    for (Index step = 0; step < Kr; ++step) {
        double best = -1.0;
        Index bs = -1, br = -1;
        for (Index c = 0; c < Ks; ++c) {
            if (used_s[static_cast<std::size_t>(c)] || !(ns[c] > 0.0)) continue;
            for (Index k = 0; k < Kr; ++k) {
                if (used_r[static_cast<std::size_t>(k)] || !(nr[k] > 0.0)) continue;
                const double corr = std::abs(dots(c, k)) / (ns[c] * nr[k]);
                if (corr > best) {
                    best = corr;
                    bs = c;
                    br = k;
                }
            }
        }
        if (bs < 0) break;
        used_s[static_cast<std::size_t>(bs)] = used_r[static_cast<std::size_t>(br)] = true;
        a.permutation[static_cast<std::size_t>(br)] = bs;
        a.signs[static_cast<std::size_t>(bs)] = dots(bs, br) < 0.0 ? -1 : 1;
    }
    // Zero-norm columns (on either side) are matched last, sign +.
    for (Index k = 0; k < Kr; ++k) {
        if (a.permutation[static_cast<std::size_t>(k)] >= 0) continue;
        for (Index c = 0; c < Ks; ++c) {
            if (used_s[static_cast<std::size_t>(c)]) continue;
            used_s[static_cast<std::size_t>(c)] = true;
            a.permutation[static_cast<std::size_t>(k)] = c;
            break;
        }
    }
    for (Index c = 0; c < Ks; ++c)
        if (!used_s[static_cast<std::size_t>(c)]) a.permutation.push_back(c);

    a.aligned.resize(G, Ks);
    for (Index t = 0; t < Ks; ++t) {
        const Index c = a.permutation[static_cast<std::size_t>(t)];
        a.aligned.col(t) = static_cast<double>(a.signs[static_cast<std::size_t>(c)]) * B_sample.col(c);
    }
    return a;
}

/// |cosine| between matching columns of an aligned sample and the reference.
inline Vector column_cosines(const Matrix& aligned, const Matrix& B_ref) {
    Vector out(B_ref.cols());
    for (Index k = 0; k < B_ref.cols(); ++k) {
        const double d = aligned.col(k).norm() * B_ref.col(k).norm();
        out[k] = d > 0.0 ? std::abs(aligned.col(k).dot(B_ref.col(k))) / d : 0.0;
    }
    return out;
}

}  // namespace orthofactor

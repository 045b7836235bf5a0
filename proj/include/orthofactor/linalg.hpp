#pragma once

#include <cmath>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "orthofactor/errors.hpp"
#include "orthofactor/rng.hpp"

namespace orthofactor {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using BinaryMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;
using Index = Eigen::Index;

/// Matrix of i.i.d. standard normals, filled column-major.
inline Matrix standard_normal_matrix(Index rows, Index cols, Rng& rng) {
    Matrix m(rows, cols);
    for (Index c = 0; c < cols; ++c)
        for (Index r = 0; r < rows; ++r) m(r, c) = rng.normal();
    return m;
}

/// Orthonormal basis (as columns, n × m) of the orthogonal complement of
/// span{rows of `rows`} ∪ {extra}. Rank-revealing: a Householder QR of the
/// stacked vectors; any |R_ii| below `tol`·max|R_jj| means dependent input.
inline Matrix complement_basis(const Matrix& rows, const std::optional<Vector>& extra = std::nullopt,
                               double tol = 1e-10) {
    const Index n = rows.cols();
    const Index r = rows.rows() + (extra ? 1 : 0);
    if (extra && extra->size() != n)
        throw ValidationError("complement_basis: extra vector has wrong length");
    if (r > n) throw ValidationError("complement_basis: more vectors than the ambient dimension");
    if (r == 0) return Matrix::Identity(n, n);

    Matrix stacked(n, r);
    stacked.leftCols(rows.rows()) = rows.transpose();
    if (extra) stacked.col(r - 1) = *extra;

    Eigen::HouseholderQR<Matrix> qr(stacked);
    const Matrix R = qr.matrixQR().topRows(r).template triangularView<Eigen::Upper>();
    double rmax = 0.0;
    for (Index i = 0; i < r; ++i) rmax = std::max(rmax, std::abs(R(i, i)));
    for (Index i = 0; i < r; ++i) {
        if (!(std::abs(R(i, i)) > tol * rmax))
            throw NumericalError("complement_basis: input vector " + std::to_string(i) +
                                 " is numerically dependent on the preceding ones");
    }
    const Matrix Q = qr.householderQ() * Matrix::Identity(n, n);
    return Q.rightCols(n - r);
}

/// Remove from v its components along the given mutually orthogonal rows
/// (rows need not be unit length). Two passes of classical Gram–Schmidt.
inline void project_out_rows(Eigen::Ref<Vector> v, const Matrix& rows) {
    for (int pass = 0; pass < 2; ++pass) {
        for (Index t = 0; t < rows.rows(); ++t) {
            const double nn = rows.row(t).squaredNorm();
            if (nn > 0.0) v -= (rows.row(t).dot(v) / nn) * rows.row(t).transpose();
        }
    }
}

/// K × n matrix whose rows are orthonormal and scaled to norm √n; Ω/√n is
/// Haar-uniform on the Stiefel manifold St(K, n).
inline Matrix sample_scaled_stiefel(Index K, Index n, Rng& rng) {
    if (K > n) throw ValidationError("sample_scaled_stiefel: K exceeds n");
    if (K == 0) return Matrix(0, n);
    const Matrix Z = standard_normal_matrix(n, K, rng);
    Eigen::HouseholderQR<Matrix> qr(Z);
    Matrix Q = qr.householderQ() * Matrix::Identity(n, K);
    // Sign fix so that the frame is Haar rather than QR-convention biased.
    const Matrix R = qr.matrixQR().topRows(K);
    for (Index k = 0; k < K; ++k)
        if (R(k, k) < 0.0) Q.col(k) = -Q.col(k);
    return std::sqrt(static_cast<double>(n)) * Q.transpose();
}

/// max |Ω Ωᵀ / n − I|, the manifold-constraint residual.
inline double stiefel_residual(const Matrix& omega) {
    if (omega.rows() == 0) return 0.0;
    const double n = static_cast<double>(omega.cols());
    const Matrix gram = omega * omega.transpose() / n;
    return (gram - Matrix::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
}

}  // namespace orthofactor

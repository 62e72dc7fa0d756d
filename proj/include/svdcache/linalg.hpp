// SPDX-License-Identifier: Apache-2.0
//
// Dense linear-algebra kernels shared by the whole library: thin SVD,
// energy-based rank selection, truncation, subspace projection and
// Frobenius utilities. All functions are pure and thread-safe.

#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <stdexcept>
#include <string>

namespace svdcache {

using FeatureMatrix = Eigen::MatrixXd;

// Singular values below kZeroTrimRel * sigma_max count as zero when
// computing effective ranks for downstream use.
inline constexpr double kZeroTrimRel = 1e-12;

struct SvdFactors {
    Eigen::MatrixXd U;      // N x r, orthonormal columns
    Eigen::VectorXd sigma;  // length r, nonincreasing, nonnegative
    Eigen::MatrixXd V;      // D x r, orthonormal columns
    Eigen::Index r = 0;     // min(N, D), before zero-trimming
};

inline void require_finite(const Eigen::Ref<const Eigen::MatrixXd>& m, const std::string& what) {
    if (!m.allFinite()) {
        throw std::invalid_argument(what + ": matrix has non-finite entries");
    }
}

// Fixes the sign of each right singular vector so that its
// largest-magnitude entry is positive. Keeps U*sigma*V^T unchanged and
// makes serialized bases comparable across runs.
inline void fix_singular_vector_signs(Eigen::MatrixXd& U, Eigen::MatrixXd& V) {
    for (Eigen::Index j = 0; j < V.cols(); ++j) {
        Eigen::Index imax = 0;
        double amax = -1.0;
        for (Eigen::Index i = 0; i < V.rows(); ++i) {
            const double a = std::abs(V(i, j));
            if (a > amax) {
                amax = a;
                imax = i;
            }
        }
        if (V(imax, j) < 0.0) {
            V.col(j) = -V.col(j);
            if (j < U.cols()) U.col(j) = -U.col(j);
        }
    }
}

// Thin SVD F = U * diag(sigma) * V^T with singular values sorted
// descending and the sign convention above applied.
inline SvdFactors thin_svd(const FeatureMatrix& f) {
    require_finite(f, "thin_svd");
    if (f.rows() < 1 || f.cols() < 1) {
        throw std::invalid_argument("thin_svd: empty matrix");
    }
    Eigen::BDCSVD<Eigen::MatrixXd> svd(f, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.info() != Eigen::Success) {
        throw std::runtime_error("thin_svd: did not converge for " + std::to_string(f.rows()) +
                                 "x" + std::to_string(f.cols()) + " matrix");
    }
    SvdFactors out;
    out.U = svd.matrixU();
    out.sigma = svd.singularValues();
    out.V = svd.matrixV();
    out.r = std::min(f.rows(), f.cols());
    fix_singular_vector_signs(out.U, out.V);
    return out;
}

// Number of singular values above the zero-trim floor.
inline Eigen::Index effective_rank(const Eigen::VectorXd& sigma, double rel_floor = kZeroTrimRel) {
    if (sigma.size() == 0) return 0;
    const double floor = rel_floor * sigma(0);
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < sigma.size(); ++i) {
        if (sigma(i) > floor && sigma(i) > 0.0) ++r;
    }
    return r;
}

// Smallest k >= 1 whose leading singular values capture at least `tau`
// of the total squared energy.
inline Eigen::Index select_rank(const Eigen::VectorXd& sigma, double tau) {
    if (!(tau > 0.0) || tau > 1.0) {
        throw std::invalid_argument("select_rank: tau must be in (0, 1]");
    }
    if (sigma.size() == 0) {
        throw std::invalid_argument("select_rank: empty singular value vector");
    }
    double total = 0.0;
    for (Eigen::Index i = 0; i < sigma.size(); ++i) {
        const double s = sigma(i);
        if (s < 0.0) throw std::invalid_argument("select_rank: negative singular value");
        if (i > 0 && s > sigma(i - 1)) {
            throw std::invalid_argument("select_rank: singular values not nonincreasing");
        }
        total += s * s;
    }
    if (total == 0.0) {
        throw std::invalid_argument("select_rank: all singular values are zero");
    }
    const double target = tau * total;
    double cum = 0.0;
    for (Eigen::Index k = 0; k < sigma.size(); ++k) {
        cum += sigma(k) * sigma(k);
        if (cum >= target) return k + 1;
    }
    return sigma.size();
}

// Rank-k reconstruction U_k * diag(sigma_k) * V_k^T.
inline FeatureMatrix truncate(const SvdFactors& f, Eigen::Index k) {
    if (k < 1 || k > f.sigma.size()) {
        throw std::invalid_argument("truncate: k out of range [1, " +
                                    std::to_string(f.sigma.size()) + "]");
    }
    return f.U.leftCols(k) * f.sigma.head(k).asDiagonal() * f.V.leftCols(k).transpose();
}

// Orthogonal projection of F's rows onto span(V_k): F * V_k * V_k^T.
inline FeatureMatrix project_onto_basis(const FeatureMatrix& f,
                                        const Eigen::Ref<const Eigen::MatrixXd>& v_k) {
    if (f.cols() != v_k.rows()) {
        throw std::invalid_argument("project_onto_basis: dimension mismatch (" +
                                    std::to_string(f.cols()) + " channels vs basis rows " +
                                    std::to_string(v_k.rows()) + ")");
    }
    const Eigen::Index k = v_k.cols();
    const double ortho = (v_k.transpose() * v_k - Eigen::MatrixXd::Identity(k, k)).norm();
    if (ortho > 1e-6 * std::sqrt(static_cast<double>(std::max<Eigen::Index>(k, 1)))) {
        throw std::invalid_argument("project_onto_basis: basis columns not orthonormal");
    }
    return (f * v_k) * v_k.transpose();
}

inline double frobenius_norm(const FeatureMatrix& f) { return f.norm(); }

inline double frobenius_inner(const FeatureMatrix& a, const FeatureMatrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw std::invalid_argument("frobenius_inner: shape mismatch");
    }
    return (a.array() * b.array()).sum();
}

// ||A - B||_F / ||B||_F. The reference B must be nonzero.
inline double relative_error(const FeatureMatrix& a, const FeatureMatrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw std::invalid_argument("relative_error: shape mismatch");
    }
    const double nb = b.norm();
    if (nb == 0.0) {
        throw std::invalid_argument("relative_error: zero-norm reference");
    }
    return (a - b).norm() / nb;
}

}  // namespace svdcache

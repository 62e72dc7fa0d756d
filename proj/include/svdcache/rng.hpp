// SPDX-License-Identifier: Apache-2.0
//
// Seeded random draws. Every generator in the library derives its stream
// from explicit (seed, tag...) tuples so runs are reproducible bit for bit
// on a given platform.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>

namespace svdcache {

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t tag0 = 0,
                                std::uint64_t tag1 = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(tag0), static_cast<std::uint32_t>(tag0 >> 32),
                      static_cast<std::uint32_t>(tag1), static_cast<std::uint32_t>(tag1 >> 32)};
    return std::mt19937_64(seq);
}

inline Eigen::MatrixXd gaussian_matrix(std::mt19937_64& rng, Eigen::Index rows,
                                       Eigen::Index cols) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
    }
    return m;
}

// Orthonormal columns via Householder QR of a Gaussian draw. Columns are
// sign-fixed through the R diagonal so the result is stable under small
// perturbations of the input stream length.
inline Eigen::MatrixXd random_orthonormal(std::mt19937_64& rng, Eigen::Index rows,
                                          Eigen::Index cols) {
    Eigen::MatrixXd g = gaussian_matrix(rng, rows, cols);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
    Eigen::MatrixXd r = qr.matrixQR().topRows(cols).triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < cols; ++j) {
        if (r(j, j) < 0.0) q.col(j) = -q.col(j);
    }
    return q;
}

}  // namespace svdcache

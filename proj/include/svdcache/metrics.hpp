// SPDX-License-Identifier: Apache-2.0
//
// Scalar comparison metrics shared by reports and acceptance checks.

#pragma once

#include "svdcache/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace svdcache {

struct SimilarityScore {
    double cosine = 0.0;           // in [-1, 1]
    double magnitude_ratio = 0.0;  // min(|a|,|b|) / max(|a|,|b|), in [0, 1]
    double product = 0.0;          // cosine * magnitude_ratio
};

namespace detail {

inline SimilarityScore similarity_from(double dot, double na, double nb) {
    SimilarityScore s;
    if (na == 0.0 && nb == 0.0) {
        s.cosine = 1.0;
        s.magnitude_ratio = 1.0;
    } else if (na == 0.0 || nb == 0.0) {
        s.cosine = 0.0;
        s.magnitude_ratio = 0.0;
    } else {
        s.cosine = std::clamp(dot / (na * nb), -1.0, 1.0);
        s.magnitude_ratio = std::min(na, nb) / std::max(na, nb);
    }
    s.product = s.cosine * s.magnitude_ratio;
    return s;
}

}  // namespace detail

// Product-of-cosine-and-magnitude similarity between two flattened
// feature vectors. Two zero vectors count as identical (product 1).
inline SimilarityScore similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("similarity: length mismatch");
    }
    return detail::similarity_from(a.dot(b), a.norm(), b.norm());
}

inline SimilarityScore similarity(const FeatureMatrix& a, const FeatureMatrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw std::invalid_argument("similarity: shape mismatch");
    }
    return detail::similarity_from((a.array() * b.array()).sum(), a.norm(), b.norm());
}

// ||part||_F^2 / ||whole||_F^2.
inline double energy_fraction(const FeatureMatrix& part, const FeatureMatrix& whole) {
    const double dw = whole.squaredNorm();
    if (dw == 0.0) {
        throw std::invalid_argument("energy_fraction: zero-norm whole");
    }
    return part.squaredNorm() / dw;
}

}  // namespace svdcache

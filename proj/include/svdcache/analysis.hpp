// SPDX-License-Identifier: Apache-2.0
//
// Trajectory analysis: 2-D PCA traces of feature paths and smoothness
// statistics per subspace.

#pragma once

#include "svdcache/basis.hpp"
#include "svdcache/trajectory.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace svdcache {

enum class SubspacePart { full, principal, residual };

namespace detail {

inline std::vector<FeatureMatrix> part_sequence(const TrajectoryRecord& rec, int block,
                                                const SpectralBasis* basis, Eigen::Index k,
                                                SubspacePart part) {
    if (block < 0 || block >= rec.blocks) {
        throw std::invalid_argument("trajectory block index out of range");
    }
    if (part != SubspacePart::full && basis == nullptr) {
        throw std::invalid_argument("subspace part requested without a basis");
    }
    std::vector<FeatureMatrix> seq;
    seq.reserve(static_cast<std::size_t>(rec.steps));
    for (int t = 0; t < rec.steps; ++t) {
        const FeatureMatrix& f = rec.at(block, t);
        if (part == SubspacePart::full) {
            seq.push_back(f);
        } else {
            SubspaceSplit sp = split(f, *basis, k);
            seq.push_back(part == SubspacePart::principal ? std::move(sp.principal)
                                                          : std::move(sp.residual));
        }
    }
    return seq;
}

}  // namespace detail

// Projects the (optionally split) per-step features of one block onto the
// top-2 principal directions of the stacked trajectory. Returns one 2-D
// point per step.
inline std::vector<Eigen::Vector2d> pca_trace(const TrajectoryRecord& rec, int block,
                                              const SpectralBasis* basis = nullptr,
                                              Eigen::Index k = 0,
                                              SubspacePart part = SubspacePart::full) {
    if (rec.steps < 3) {
        throw std::invalid_argument("pca_trace: need at least 3 steps");
    }
    const auto seq = detail::part_sequence(rec, block, basis, k, part);
    const Eigen::Index dim = static_cast<Eigen::Index>(rec.rows) * rec.cols;
    Eigen::MatrixXd x(rec.steps, dim);
    for (int t = 0; t < rec.steps; ++t) {
        x.row(t) = Eigen::Map<const Eigen::VectorXd>(seq[static_cast<std::size_t>(t)].data(), dim);
    }
    const Eigen::RowVectorXd mean = x.colwise().mean();
    x.rowwise() -= mean;

    std::vector<Eigen::Vector2d> out(static_cast<std::size_t>(rec.steps), Eigen::Vector2d::Zero());
    if (x.norm() == 0.0) return out;  // constant trajectory: all points at the origin

    Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinV);
    const Eigen::Index ncomp = std::min<Eigen::Index>(2, svd.matrixV().cols());
    Eigen::MatrixXd coords = x * svd.matrixV().leftCols(ncomp);
    for (int t = 0; t < rec.steps; ++t) {
        out[static_cast<std::size_t>(t)](0) = coords(t, 0);
        out[static_cast<std::size_t>(t)](1) = ncomp > 1 ? coords(t, 1) : 0.0;
    }
    return out;
}

struct SmoothnessStats {
    double mean_step_rel_change = 0.0;  // mean ||x_{t+1}-x_t|| / ||x_t||
    double path_length = 0.0;
    double displacement = 0.0;
    double path_disp_ratio = 1.0;  // 1 for a straight (or constant) path
};

namespace detail {

inline SmoothnessStats stats_of_sequence(const std::vector<FeatureMatrix>& seq) {
    SmoothnessStats st;
    int counted = 0;
    for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
        const double step = (seq[t + 1] - seq[t]).norm();
        st.path_length += step;
        const double base = seq[t].norm();
        if (base > 0.0) {
            st.mean_step_rel_change += step / base;
            ++counted;
        }
    }
    if (counted > 0) st.mean_step_rel_change /= counted;
    st.displacement = (seq.back() - seq.front()).norm();
    if (st.path_length == 0.0) {
        st.path_disp_ratio = 1.0;
    } else if (st.displacement == 0.0) {
        st.path_disp_ratio = std::numeric_limits<double>::infinity();
    } else {
        st.path_disp_ratio = st.path_length / st.displacement;
    }
    return st;
}

}  // namespace detail

inline SmoothnessStats smoothness_stats(const TrajectoryRecord& rec, int block,
                                        const SpectralBasis* basis = nullptr,
                                        Eigen::Index k = 0,
                                        SubspacePart part = SubspacePart::full) {
    if (rec.steps < 2) {
        throw std::invalid_argument("smoothness_stats: need at least 2 steps");
    }
    return detail::stats_of_sequence(detail::part_sequence(rec, block, basis, k, part));
}

struct SubspaceSmoothness {
    SmoothnessStats full;
    SmoothnessStats principal;
    SmoothnessStats residual;
};

inline SubspaceSmoothness subspace_smoothness(const TrajectoryRecord& rec, int block,
                                              const SpectralBasis& basis, Eigen::Index k = 0) {
    SubspaceSmoothness out;
    out.full = smoothness_stats(rec, block);
    out.principal = smoothness_stats(rec, block, &basis, k, SubspacePart::principal);
    out.residual = smoothness_stats(rec, block, &basis, k, SubspacePart::residual);
    return out;
}

}  // namespace svdcache

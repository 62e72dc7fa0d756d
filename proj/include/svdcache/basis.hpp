// SPDX-License-Identifier: Apache-2.0
//
// Reference-basis extraction, persistence and the principal/residual
// split. A basis holds the right singular vectors and singular values of
// a reference feature matrix; later inputs are decomposed against it
// without recomputing their own SVD.

#pragma once

#include "svdcache/io.hpp"
#include "svdcache/linalg.hpp"
#include "svdcache/metrics.hpp"

#include "json.hpp"

#include <algorithm>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace svdcache {

// step_id value for a basis shared by all timesteps of a block.
inline constexpr int kGlobalStep = -1;

inline constexpr std::uint32_t kBasisFormatVersion = 1;

struct SpectralBasis {
    Eigen::MatrixXd V;      // D x r, orthonormal columns
    Eigen::VectorXd sigma;  // length r, nonincreasing, nonnegative
    int block_id = 0;
    int step_id = kGlobalStep;
    std::string source_id;
    double tau = 0.0;           // energy threshold used at creation
    Eigen::Index k_default = 0; // select_rank(sigma, tau)

    Eigen::Index rank() const { return sigma.size(); }
    Eigen::Index channels() const { return V.rows(); }
};

struct SubspaceSplit {
    FeatureMatrix principal;
    FeatureMatrix residual;
    Eigen::Index k = 0;
    double principal_energy_fraction = 0.0;
};

inline void validate_basis(const SpectralBasis& b) {
    const Eigen::Index r = b.sigma.size();
    if (r < 1) throw std::invalid_argument("basis: rank must be >= 1");
    if (b.V.cols() != r) throw std::invalid_argument("basis: V/sigma rank mismatch");
    if (b.V.rows() < 1) throw std::invalid_argument("basis: empty channel dimension");
    if (!b.V.allFinite() || !b.sigma.allFinite()) {
        throw std::invalid_argument("basis: non-finite entries");
    }
    for (Eigen::Index i = 0; i < r; ++i) {
        if (b.sigma(i) < 0.0) throw std::invalid_argument("basis: negative singular value");
        if (i > 0 && b.sigma(i) > b.sigma(i - 1)) {
            throw std::invalid_argument("basis: singular values not nonincreasing");
        }
    }
    const double ortho = (b.V.transpose() * b.V - Eigen::MatrixXd::Identity(r, r)).norm();
    if (ortho > 1e-6 * std::sqrt(static_cast<double>(r))) {
        throw std::invalid_argument("basis: columns not orthonormal");
    }
    if (b.k_default < 1 || b.k_default > r) {
        throw std::invalid_argument("basis: k_default out of range");
    }
}

// One-time SVD of a reference matrix. Stores the full zero-trimmed
// spectrum plus the rank selected by the energy threshold.
inline SpectralBasis build_reference_basis(const FeatureMatrix& f_ref, double tau,
                                           int block_id = 0, int step_id = kGlobalStep,
                                           std::string source_id = {}) {
    SvdFactors svd = thin_svd(f_ref);
    const Eigen::Index r = effective_rank(svd.sigma);
    if (r < 1) {
        throw std::invalid_argument("build_reference_basis: reference matrix is zero");
    }
    SpectralBasis b;
    b.V = svd.V.leftCols(r);
    b.sigma = svd.sigma.head(r);
    b.block_id = block_id;
    b.step_id = step_id;
    b.source_id = std::move(source_id);
    b.tau = tau;
    b.k_default = select_rank(b.sigma, tau);
    validate_basis(b);
    return b;
}

// Approximate left factors U = F * V_C * diag(sigma_C)^-1, with each
// sigma clamped below at kZeroTrimRel * sigma_1 before inversion. The
// projection form in split() is the production path; this explicit route
// exists so the two can be checked against each other.
inline Eigen::MatrixXd reconstruct_left_factors(const FeatureMatrix& f,
                                                const SpectralBasis& basis) {
    if (f.cols() != basis.channels()) {
        throw std::invalid_argument("reconstruct_left_factors: channel mismatch");
    }
    const double floor = kZeroTrimRel * basis.sigma(0);
    Eigen::VectorXd inv = basis.sigma;
    for (Eigen::Index i = 0; i < inv.size(); ++i) {
        inv(i) = 1.0 / std::max(inv(i), floor);
    }
    return (f * basis.V) * inv.asDiagonal();
}

// Principal/residual split of F against the basis. k defaults to the
// basis's threshold-selected rank.
inline SubspaceSplit split(const FeatureMatrix& f, const SpectralBasis& basis,
                           Eigen::Index k = 0) {
    if (f.cols() != basis.channels()) {
        throw std::invalid_argument("split: channel mismatch");
    }
    if (k == 0) k = basis.k_default;
    if (k < 1 || k > basis.rank()) {
        throw std::invalid_argument("split: k out of range [1, " +
                                    std::to_string(basis.rank()) + "]");
    }
    SubspaceSplit out;
    out.k = k;
    out.principal = project_onto_basis(f, basis.V.leftCols(k));
    out.residual = f - out.principal;
    const double whole = f.squaredNorm();
    out.principal_energy_fraction = whole > 0.0 ? out.principal.squaredNorm() / whole : 0.0;
    return out;
}

struct BasisSimilarity {
    double sigma_similarity = 0.0;      // spectrum cosine x magnitude ratio
    Eigen::VectorXd vector_similarity;  // |<V_a[:,i], V_b[:,i]>| per index
    double summary = 0.0;               // energy-weighted mean of the above
};

// Per-index similarity of two bases. Vector similarities use absolute
// inner products so the sign convention cannot matter; the summary
// weights index i by sigma_a_i^2 + sigma_b_i^2, which keeps the measure
// symmetric in its arguments.
inline BasisSimilarity basis_similarity(const SpectralBasis& a, const SpectralBasis& b) {
    if (a.channels() != b.channels()) {
        throw std::invalid_argument("basis_similarity: channel mismatch");
    }
    const Eigen::Index m = std::min(a.rank(), b.rank());
    BasisSimilarity out;

    double dot = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) dot += a.sigma(i) * b.sigma(i);
    const double na = a.sigma.norm();
    const double nb = b.sigma.norm();
    const double cosine = (na > 0.0 && nb > 0.0) ? dot / (na * nb) : 0.0;
    out.sigma_similarity = cosine * (std::min(na, nb) / std::max(na, nb));

    out.vector_similarity.resize(m);
    double wsum = 0.0;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
        const double s = std::min(1.0, std::abs(a.V.col(i).dot(b.V.col(i))));
        out.vector_similarity(i) = s;
        const double w = a.sigma(i) * a.sigma(i) + b.sigma(i) * b.sigma(i);
        acc += w * s;
        wsum += w;
    }
    out.summary = wsum > 0.0 ? acc / wsum : 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Persistence. Binary layout (all integers and floats little-endian):
//   "SVDC" | version u32 | block_id i32 | step_id i32 | D u32 | r u32 |
//   tau f64 | k_default u32 | sigma r*f64 | V row-major D*r*f64 | crc32 u32
// The CRC covers every preceding byte. A JSON sidecar (<path>.json)
// duplicates the metadata fields, including source_id which has no slot
// in the binary layout.
// ---------------------------------------------------------------------------

inline void save_basis(const SpectralBasis& b, const std::filesystem::path& path) {
    validate_basis(b);
    const Eigen::Index d = b.channels();
    const Eigen::Index r = b.rank();

    ByteWriter w;
    w.put_bytes("SVDC", 4);
    w.put_u32(kBasisFormatVersion);
    w.put_i32(b.block_id);
    w.put_i32(b.step_id);
    w.put_u32(static_cast<std::uint32_t>(d));
    w.put_u32(static_cast<std::uint32_t>(r));
    w.put_f64(b.tau);
    w.put_u32(static_cast<std::uint32_t>(b.k_default));
    for (Eigen::Index i = 0; i < r; ++i) w.put_f64(b.sigma(i));
    for (Eigen::Index i = 0; i < d; ++i) {
        for (Eigen::Index j = 0; j < r; ++j) w.put_f64(b.V(i, j));
    }
    ByteWriter payload = w;
    payload.put_u32(crc32(w.bytes()));
    atomic_write_file(path, payload.bytes());

    nlohmann::json meta{{"format", "svdcache-basis"},
                        {"version", kBasisFormatVersion},
                        {"block_id", b.block_id},
                        {"step_id", b.step_id},
                        {"source_id", b.source_id},
                        {"channels", d},
                        {"rank", r},
                        {"tau", b.tau},
                        {"k_default", b.k_default}};
    atomic_write_file(path.string() + ".json", meta.dump(2) + "\n");
}

inline SpectralBasis load_basis(const std::filesystem::path& path) {
    ByteReader r(read_file_bytes(path));

    char magic[4];
    std::uint32_t version = 0;
    try {
        r.get_bytes(magic, 4);
        version = r.get_u32();
    } catch (const eof_error&) {
        throw format_error(path.string() + ": truncated header");
    }
    if (std::string(magic, 4) != "SVDC") {
        throw format_error(path.string() + ": bad magic, not a basis file");
    }
    if (version != kBasisFormatVersion) {
        throw version_error(path.string() + ": unsupported basis version " +
                            std::to_string(version));
    }

    SpectralBasis b;
    try {
        b.block_id = r.get_i32();
        b.step_id = r.get_i32();
        const std::uint32_t d = r.get_u32();
        const std::uint32_t rank = r.get_u32();
        b.tau = r.get_f64();
        b.k_default = static_cast<Eigen::Index>(r.get_u32());
        if (d == 0 || rank == 0 || d > (1u << 24) || rank > d) {
            throw format_error(path.string() + ": implausible dimensions D=" + std::to_string(d) +
                               " r=" + std::to_string(rank));
        }
        b.sigma.resize(rank);
        for (std::uint32_t i = 0; i < rank; ++i) b.sigma(i) = r.get_f64();
        b.V.resize(d, rank);
        for (std::uint32_t i = 0; i < d; ++i) {
            for (std::uint32_t j = 0; j < rank; ++j) b.V(i, j) = r.get_f64();
        }
        const std::uint32_t stored_crc = r.get_u32();
        const std::uint32_t actual_crc = crc32(r.bytes().data(), r.pos() - 4);
        if (stored_crc != actual_crc) {
            throw checksum_error(path.string() + ": checksum mismatch");
        }
    } catch (const eof_error&) {
        throw checksum_error(path.string() + ": truncated payload");
    }
    if (r.pos() != r.size()) {
        throw format_error(path.string() + ": trailing bytes after payload");
    }

    const auto sidecar = std::filesystem::path(path.string() + ".json");
    if (std::filesystem::exists(sidecar)) {
        const auto bytes = read_file_bytes(sidecar);
        const auto meta = nlohmann::json::parse(bytes.begin(), bytes.end(), nullptr, false);
        if (!meta.is_discarded() && meta.contains("source_id")) {
            b.source_id = meta["source_id"].get<std::string>();
        }
    }
    validate_basis(b);
    return b;
}

}  // namespace svdcache

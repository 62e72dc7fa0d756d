// SPDX-License-Identifier: Apache-2.0
//
// Step-indexed per-block feature trajectories and their binary container.

#pragma once

#include "svdcache/io.hpp"
#include "svdcache/linalg.hpp"

#include "json.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace svdcache {

inline constexpr std::uint32_t kTrajectoryFormatVersion = 1;

// Ordered feature matrices for every (block, step) pair, all sharing one
// (rows, cols) shape. Provenance records how the trajectory was made.
struct TrajectoryRecord {
    int blocks = 0;  // L
    int steps = 0;   // T
    int rows = 0;    // N tokens
    int cols = 0;    // D channels
    std::vector<FeatureMatrix> features;  // index = block * steps + step
    nlohmann::json provenance;

    const FeatureMatrix& at(int block, int step) const {
        return features[static_cast<std::size_t>(block) * steps + step];
    }
    FeatureMatrix& at(int block, int step) {
        return features[static_cast<std::size_t>(block) * steps + step];
    }
};

inline TrajectoryRecord make_trajectory(int blocks, int steps, int rows, int cols) {
    if (blocks < 1 || steps < 1 || rows < 1 || cols < 1) {
        throw std::invalid_argument("make_trajectory: all dimensions must be >= 1");
    }
    TrajectoryRecord rec;
    rec.blocks = blocks;
    rec.steps = steps;
    rec.rows = rows;
    rec.cols = cols;
    rec.features.assign(static_cast<std::size_t>(blocks) * steps,
                        FeatureMatrix::Zero(rows, cols));
    return rec;
}

inline void validate_trajectory(const TrajectoryRecord& rec) {
    if (rec.blocks < 1 || rec.steps < 1 || rec.rows < 1 || rec.cols < 1) {
        throw std::invalid_argument("trajectory: empty dimensions");
    }
    if (rec.features.size() != static_cast<std::size_t>(rec.blocks) * rec.steps) {
        throw std::invalid_argument("trajectory: feature count mismatch");
    }
    for (const auto& f : rec.features) {
        if (f.rows() != rec.rows || f.cols() != rec.cols) {
            throw std::invalid_argument("trajectory: inconsistent feature shape");
        }
    }
}

// Binary layout: "SVCT" | version u32 | L u32 | T u32 | N u32 | D u32 |
// per-(block, step) row-major f64 payloads | crc32 of all preceding bytes.
// A JSON sidecar (<path>.json) carries the provenance.
inline void save_trajectory(const TrajectoryRecord& rec, const std::filesystem::path& path) {
    validate_trajectory(rec);
    ByteWriter w;
    w.put_bytes("SVCT", 4);
    w.put_u32(kTrajectoryFormatVersion);
    w.put_u32(static_cast<std::uint32_t>(rec.blocks));
    w.put_u32(static_cast<std::uint32_t>(rec.steps));
    w.put_u32(static_cast<std::uint32_t>(rec.rows));
    w.put_u32(static_cast<std::uint32_t>(rec.cols));
    for (const auto& f : rec.features) {
        for (Eigen::Index i = 0; i < f.rows(); ++i) {
            for (Eigen::Index j = 0; j < f.cols(); ++j) w.put_f64(f(i, j));
        }
    }
    ByteWriter payload = w;
    payload.put_u32(crc32(w.bytes()));
    atomic_write_file(path, payload.bytes());
    atomic_write_file(path.string() + ".json", rec.provenance.dump(2) + "\n");
}

inline TrajectoryRecord load_trajectory(const std::filesystem::path& path) {
    ByteReader r(read_file_bytes(path));
    char magic[4];
    std::uint32_t version = 0;
    try {
        r.get_bytes(magic, 4);
        version = r.get_u32();
    } catch (const eof_error&) {
        throw format_error(path.string() + ": truncated header");
    }
    if (std::string(magic, 4) != "SVCT") {
        throw format_error(path.string() + ": bad magic, not a trajectory file");
    }
    if (version != kTrajectoryFormatVersion) {
        throw version_error(path.string() + ": unsupported trajectory version " +
                            std::to_string(version));
    }
    TrajectoryRecord rec;
    try {
        const std::uint32_t blocks = r.get_u32();
        const std::uint32_t steps = r.get_u32();
        const std::uint32_t rows = r.get_u32();
        const std::uint32_t cols = r.get_u32();
        if (blocks == 0 || steps == 0 || rows == 0 || cols == 0 ||
            static_cast<std::uint64_t>(blocks) * steps * rows * cols > (1ull << 32)) {
            throw format_error(path.string() + ": implausible dimensions");
        }
        rec = make_trajectory(static_cast<int>(blocks), static_cast<int>(steps),
                              static_cast<int>(rows), static_cast<int>(cols));
        for (auto& f : rec.features) {
            for (std::uint32_t i = 0; i < rows; ++i) {
                for (std::uint32_t j = 0; j < cols; ++j) f(i, j) = r.get_f64();
            }
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
        auto prov = nlohmann::json::parse(bytes.begin(), bytes.end(), nullptr, false);
        if (!prov.is_discarded()) rec.provenance = std::move(prov);
    }
    validate_trajectory(rec);
    return rec;
}

}  // namespace svdcache

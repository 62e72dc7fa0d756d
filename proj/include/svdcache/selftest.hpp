// SPDX-License-Identifier: Apache-2.0
//
// Small invariant suites runnable from the CLI. Each check throws on
// failure; the runner prints one line per suite and reports the total.

#pragma once

#include "svdcache/svdcache.hpp"

#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace svdcache {

namespace selftest_detail {

inline void check(bool ok, const std::string& what) {
    if (!ok) throw std::runtime_error(what);
}

inline void linalg_suite() {
    auto rng = make_rng(42, 0x5E1F);
    for (int trial = 0; trial < 5; ++trial) {
        FeatureMatrix f = gaussian_matrix(rng, 24, 16);
        SvdFactors svd = thin_svd(f);
        const double fn = f.norm();
        check((svd.U * svd.sigma.asDiagonal() * svd.V.transpose() - f).norm() <= 1e-8 * fn,
              "SVD reconstruction drift");
        for (Eigen::Index k = 1; k <= svd.r; ++k) {
            double tail = 0.0;
            for (Eigen::Index i = k; i < svd.r; ++i) tail += svd.sigma(i) * svd.sigma(i);
            const double err2 = (f - truncate(svd, k)).squaredNorm();
            check(std::abs(err2 - tail) <= 1e-8 * fn * fn, "truncation tail-energy identity");
        }
        FeatureMatrix p = project_onto_basis(f, svd.V.leftCols(4));
        FeatureMatrix q = f - p;
        check(std::abs(frobenius_inner(p, q)) <= 1e-8 * fn * fn, "split orthogonality");
        check(std::abs(p.squaredNorm() + q.squaredNorm() - fn * fn) <= 1e-8 * fn * fn,
              "split Pythagoras");
        check((project_onto_basis(p, svd.V.leftCols(4)) - p).norm() <= 1e-10 * fn,
              "projector idempotence");
    }
}

inline void forecast_suite() {
    auto rng = make_rng(43, 0x5E1F);
    for (double beta : {0.5, 0.9}) {
        EmaState s = make_ema_state(beta);
        std::vector<FeatureMatrix> inputs;
        for (int t = 0; t < 12; ++t) inputs.push_back(gaussian_matrix(rng, 6, 5));
        for (int t = 0; t < 12; ++t) s = ema_update(std::move(s), inputs[t], t);
        FeatureMatrix expect = inputs[0];
        for (int t = 1; t < 12; ++t) expect = beta * expect + (1.0 - beta) * inputs[t];
        check((ema_predict(s) - expect).norm() <= 1e-12 * expect.norm(),
              "EMA unrolled recursion mismatch");
    }
    History h(2);
    FeatureMatrix g = gaussian_matrix(rng, 4, 3);
    for (long t : {0L, 1L, 2L}) h.push(t, static_cast<double>(t * t) * g);
    check((taylor_predict(h, 5) - 25.0 * g).norm() <= 1e-10 * (25.0 * g.norm()),
          "polynomial extrapolation exactness");
}

inline void basis_suite() {
    auto rng = make_rng(44, 0x5E1F);
    FeatureMatrix ref = gaussian_matrix(rng, 20, 12);
    SpectralBasis basis = build_reference_basis(ref, 0.85, 0, 0, "selftest");
    FeatureMatrix f = gaussian_matrix(rng, 20, 12);
    SubspaceSplit sp = split(f, basis);
    check((sp.principal + sp.residual - f).norm() <= 1e-10 * f.norm(), "split completeness");
    check(std::abs(frobenius_inner(sp.principal, sp.residual)) <= 1e-8 * f.squaredNorm(),
          "split orthogonality");
    const BasisSimilarity self_sim = basis_similarity(basis, basis);
    check(std::abs(self_sim.summary - 1.0) <= 1e-12, "self-similarity must be 1");
}

inline void serialization_suite() {
    namespace fs = std::filesystem;
    auto rng = make_rng(45, 0x5E1F);
    const fs::path dir = fs::temp_directory_path() / "svdcache_selftest";
    fs::create_directories(dir);
    const fs::path path = dir / "basis.svdc";

    SpectralBasis basis =
        build_reference_basis(gaussian_matrix(rng, 16, 10), 0.9, 3, 7, "selftest");
    save_basis(basis, path);
    SpectralBasis loaded = load_basis(path);
    check(loaded.V == basis.V && loaded.sigma == basis.sigma &&
              loaded.block_id == basis.block_id && loaded.step_id == basis.step_id &&
              loaded.tau == basis.tau && loaded.k_default == basis.k_default &&
              loaded.source_id == basis.source_id,
          "basis round-trip not field-exact");

    // Corrupt one payload byte: load must fail with a checksum error.
    auto bytes = read_file_bytes(path);
    bytes[bytes.size() / 2] ^= 0x01;
    const fs::path bad = dir / "basis_corrupt.svdc";
    atomic_write_file(bad, bytes);
    bool checksum_caught = false;
    try {
        (void)load_basis(bad);
    } catch (const checksum_error&) {
        checksum_caught = true;
    }
    check(checksum_caught, "corrupted basis file must raise checksum_error");
    fs::remove_all(dir);
}

inline void schedule_engine_suite() {
    const CacheSchedule sched = make_schedule(50, 5);
    check(sched.num_compute() == 10, "50/5 schedule must have 10 compute steps");
    check(make_schedule(50, 6).num_compute() == 9, "50/6 schedule must have 9 compute steps");

    SynthConfig cfg;
    cfg.tokens = 24;
    cfg.channels = 16;
    cfg.steps = 20;
    cfg.blocks = 1;
    cfg.planted_rank = 4;
    cfg.residual_dirs = 4;
    cfg.seed = 7;
    TrajectoryRecord traj = synth_generate(cfg);
    const CacheSchedule s2 = make_schedule(20, 4);
    BasisStore store = build_reference_store(traj, s2, 0.85, BasisMode::per_step);

    StrategyConfig upper;
    upper.principal_rule = {RuleKind::recompute};
    upper.residual_rule = {RuleKind::recompute};
    RunReport rep = run_cached(traj, s2, upper, store);
    for (const auto& rec : rep.steps) {
        check(rec.rel_error == 0.0, "recompute+recompute must have zero error");
    }

    StrategyConfig rr;
    rr.principal_rule = {RuleKind::reuse};
    rr.residual_rule = {RuleKind::reuse};
    RunReport decomposed = run_cached(traj, s2, rr, store);
    for (const auto& rec : decomposed.steps) {
        if (rec.is_compute) continue;
        const int t = s2.compute_step_for(rec.step);
        const double direct =
            (traj.at(0, t) - traj.at(0, rec.step)).norm() / traj.at(0, rec.step).norm();
        check(std::abs(rec.rel_error - direct) <= 1e-12 * std::max(1.0, direct),
              "reuse+reuse must equal whole-feature reuse");
    }
}

inline void metrics_suite() {
    auto rng = make_rng(46, 0x5E1F);
    FeatureMatrix a = gaussian_matrix(rng, 5, 4);
    check(std::abs(similarity(a, a).product - 1.0) <= 1e-12, "self-similarity product");
    const SimilarityScore d = similarity(a, FeatureMatrix(2.0 * a));
    check(std::abs(d.cosine - 1.0) <= 1e-12 && std::abs(d.magnitude_ratio - 0.5) <= 1e-12,
          "doubling similarity");
    check(std::abs(similarity(a, FeatureMatrix(-a)).product + 1.0) <= 1e-12,
          "negation similarity");
}

inline void synth_suite() {
    SynthConfig cfg;
    cfg.tokens = 24;
    cfg.channels = 16;
    cfg.steps = 16;
    cfg.blocks = 1;
    cfg.planted_rank = 4;
    cfg.residual_dirs = 4;
    cfg.seed = 11;
    TrajectoryRecord a = synth_generate(cfg);
    TrajectoryRecord b = synth_generate(cfg);
    for (std::size_t i = 0; i < a.features.size(); ++i) {
        check(a.features[i] == b.features[i], "synth must be reproducible per seed");
    }
    Eigen::MatrixXd v_p = synth_planted_basis(cfg, 0);
    double acc = 0.0;
    for (int t = 0; t < cfg.steps; ++t) {
        const auto& f = a.at(0, t);
        acc += (f * v_p * v_p.transpose()).squaredNorm() / f.squaredNorm();
    }
    acc /= cfg.steps;
    check(std::abs(acc - cfg.energy_split) <= 0.011, "planted energy calibration off target");
}

}  // namespace selftest_detail

struct SelfTestSuite {
    std::string name;
    std::function<void()> run;
};

inline std::vector<SelfTestSuite> selftest_suites() {
    return {{"linalg", selftest_detail::linalg_suite},
            {"forecast", selftest_detail::forecast_suite},
            {"basis", selftest_detail::basis_suite},
            {"serialization", selftest_detail::serialization_suite},
            {"schedule-engine", selftest_detail::schedule_engine_suite},
            {"metrics", selftest_detail::metrics_suite},
            {"synth", selftest_detail::synth_suite}};
}

// Runs every suite; returns the number of failures.
inline int run_selftests() {
    int failed = 0;
    for (const auto& suite : selftest_suites()) {
        try {
            suite.run();
            std::printf("[PASS] %s\n", suite.name.c_str());
        } catch (const std::exception& e) {
            std::printf("[FAIL] %s: %s\n", suite.name.c_str(), e.what());
            ++failed;
        }
    }
    std::printf("%s: %zu suites, %d failed\n", failed == 0 ? "OK" : "FAILED",
                selftest_suites().size(), failed);
    return failed;
}

}  // namespace svdcache

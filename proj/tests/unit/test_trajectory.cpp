// SPDX-License-Identifier: Apache-2.0

#include "svdcache/analysis.hpp"
#include "svdcache/basis.hpp"
#include "svdcache/denoiser.hpp"
#include "svdcache/metrics.hpp"
#include "svdcache/synth.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

using namespace svdcache;
namespace fs = std::filesystem;

namespace {

SynthConfig default_suite(std::uint64_t seed) {
    SynthConfig cfg;  // library defaults are the default suite
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("synth is deterministic per seed") {
    SynthConfig cfg = default_suite(3);
    cfg.steps = 12;
    cfg.blocks = 2;
    TrajectoryRecord a = synth_generate(cfg);
    TrajectoryRecord b = synth_generate(cfg);
    REQUIRE(a.features.size() == b.features.size());
    for (std::size_t i = 0; i < a.features.size(); ++i) {
        REQUIRE(a.features[i] == b.features[i]);
    }
    cfg.seed = 4;
    TrajectoryRecord c = synth_generate(cfg);
    REQUIRE(a.at(0, 0) != c.at(0, 0));
}

TEST_CASE("synth hits the planted energy split within 0.01") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        SynthConfig cfg = default_suite(seed);
        TrajectoryRecord rec = synth_generate(cfg);
        Eigen::MatrixXd v_p = synth_planted_basis(cfg, 0);
        double mean_fraction = 0.0;
        for (int t = 0; t < cfg.steps; ++t) {
            const auto& f = rec.at(0, t);
            mean_fraction += (f * v_p * v_p.transpose()).squaredNorm() / f.squaredNorm();
        }
        mean_fraction /= cfg.steps;
        REQUIRE(std::abs(mean_fraction - cfg.energy_split) <= 0.01);
    }
}

TEST_CASE("high-split suite keeps per-step fractions near one against a step-0 basis") {
    SynthConfig cfg = default_suite(5);
    cfg.energy_split = 0.99;
    TrajectoryRecord rec = synth_generate(cfg);
    SpectralBasis basis = build_reference_basis(rec.at(0, 0), 0.85, 0, 0, "step0");
    for (int t = 0; t < cfg.steps; ++t) {
        SubspaceSplit sp = split(rec.at(0, t), basis, cfg.planted_rank);
        REQUIRE(sp.principal_energy_fraction >= 0.94);
    }
}

TEST_CASE("frozen dynamics produce a constant trajectory with zero caching error") {
    SynthConfig cfg = default_suite(6);
    cfg.drift_rate = 0.0;
    cfg.jitter_share = 0.0;
    cfg.rotating_share = 0.0;
    cfg.walk_weight = 0.0;
    cfg.osc_weight = 0.0;
    cfg.blocks = 1;
    TrajectoryRecord rec = synth_generate(cfg);
    for (int t = 1; t < cfg.steps; ++t) {
        REQUIRE((rec.at(0, t) - rec.at(0, 0)).norm() <= 1e-12 * rec.at(0, 0).norm());
    }
}

TEST_CASE("static-only synth has exactly the planted rank") {
    SynthConfig cfg = default_suite(7);
    cfg.drift_rate = 0.0;
    cfg.jitter_share = 0.0;
    cfg.rotating_share = 0.0;
    cfg.walk_weight = 0.0;
    cfg.osc_weight = 0.0;
    cfg.blocks = 1;
    TrajectoryRecord rec = synth_generate(cfg);
    SvdFactors svd = thin_svd(rec.at(0, 0));
    REQUIRE(effective_rank(svd.sigma, 1e-10) == cfg.planted_rank);
}

TEST_CASE("prompts sharing the planted basis have similar step-0 bases") {
    SynthConfig a = default_suite(11);
    SynthConfig b = default_suite(12);
    TrajectoryRecord ra = synth_generate(a);
    TrajectoryRecord rb = synth_generate(b);
    SpectralBasis ba = build_reference_basis(ra.at(0, 0), 0.85, 0, 0, "a");
    SpectralBasis bb = build_reference_basis(rb.at(0, 0), 0.85, 0, 0, "b");
    REQUIRE(basis_similarity(ba, bb).summary > 0.8);
}

TEST_CASE("a foreign prompt's basis still captures the planted energy share") {
    SynthConfig a = default_suite(13);
    SynthConfig b = default_suite(14);
    TrajectoryRecord ra = synth_generate(a);
    TrajectoryRecord rb = synth_generate(b);
    SpectralBasis basis_a = build_reference_basis(ra.at(0, 0), 0.85, 0, 0, "a");
    for (int t = 0; t < rb.steps; t += 7) {
        SubspaceSplit sp = split(rb.at(0, t), basis_a, a.planted_rank);
        REQUIRE(sp.principal_energy_fraction >= a.energy_split - 0.05);
    }
}

TEST_CASE("synth rejects infeasible configurations") {
    SynthConfig cfg = default_suite(1);
    cfg.planted_rank = cfg.channels;  // must stay below min(N, D)
    REQUIRE_THROWS_AS(synth_generate(cfg), std::invalid_argument);
    cfg = default_suite(1);
    cfg.energy_split = 1.0;
    REQUIRE_THROWS_AS(synth_generate(cfg), std::invalid_argument);
    cfg = default_suite(1);
    cfg.residual_dirs = cfg.channels;  // no room in the complement
    REQUIRE_THROWS_AS(synth_generate(cfg), std::invalid_argument);
    cfg = default_suite(1);
    cfg.steps = 1;
    REQUIRE_THROWS_AS(synth_generate(cfg), std::invalid_argument);
}

TEST_CASE("toy denoiser runs are bit-identical per seed") {
    DenoiserConfig cfg;
    cfg.tokens = 20;
    cfg.channels = 20;
    cfg.blocks = 3;
    cfg.steps = 12;
    cfg.seed = 9;
    DenoiserRun a = toy_denoiser_run(cfg);
    DenoiserRun b = toy_denoiser_run(cfg);
    REQUIRE(a.final_latent == b.final_latent);
    for (std::size_t i = 0; i < a.trajectory.features.size(); ++i) {
        REQUIRE(a.trajectory.features[i] == b.trajectory.features[i]);
    }
}

TEST_CASE("forward corruption identity") {
    auto rng = make_rng(501);
    FeatureMatrix x0 = gaussian_matrix(rng, 6, 6);
    FeatureMatrix eps = gaussian_matrix(rng, 6, 6);
    const double abar = 0.37;
    FeatureMatrix xt = forward_diffuse(x0, eps, abar);
    FeatureMatrix expect = std::sqrt(abar) * x0 + std::sqrt(1.0 - abar) * eps;
    REQUIRE((xt - expect).norm() == 0.0);
}

TEST_CASE("deterministic sampler replays exactly from the recorded initial latent") {
    DenoiserConfig cfg;
    cfg.tokens = 16;
    cfg.channels = 16;
    cfg.blocks = 2;
    cfg.steps = 10;
    cfg.seed = 10;
    cfg.eta = 0.0;
    ToyDenoiser den(cfg);
    DenoiserRun first = den.run();
    DenoiserRun replay = den.run_from(first.initial_latent);
    REQUIRE(replay.final_latent == first.final_latent);
}

TEST_CASE("denoiser schedule is strictly decreasing and valid") {
    DenoiserConfig cfg;
    cfg.steps = 20;
    ToyDenoiser den(cfg);
    double prev_abar = 1.0;
    double prev_alpha = 1.0;
    for (int s = cfg.steps - 1; s >= 0; --s) {  // walk diffusion time forward
        const double ab = den.abar_at(s);
        const double al = den.alpha_at(s);
        REQUIRE(ab > 0.0);
        REQUIRE(ab <= 1.0);
        REQUIRE(ab < prev_abar);
        REQUIRE(al < prev_alpha + 1e-15);
        prev_abar = ab;
        prev_alpha = al;
    }
    cfg.abar_end = 1.5;
    REQUIRE_THROWS_AS(ToyDenoiser(cfg), std::invalid_argument);
}

TEST_CASE("toy denoiser features stay temporally coherent") {
    DenoiserConfig cfg;  // desk-scale defaults
    DenoiserRun run = toy_denoiser_run(cfg);
    double acc = 0.0;
    int count = 0;
    for (int b = 0; b < cfg.blocks; ++b) {
        for (int t = 0; t + 1 < cfg.steps; ++t) {
            acc += similarity(run.trajectory.at(b, t + 1), run.trajectory.at(b, t)).cosine;
            ++count;
        }
    }
    REQUIRE(acc / count > 0.5);
}

TEST_CASE("pca_trace of a constant trajectory collapses to a point") {
    TrajectoryRecord rec = make_trajectory(1, 5, 4, 4);
    auto rng = make_rng(502);
    FeatureMatrix f = gaussian_matrix(rng, 4, 4);
    for (int t = 0; t < 5; ++t) rec.at(0, t) = f;
    auto pts = pca_trace(rec, 0);
    for (const auto& p : pts) {
        REQUIRE(p.norm() <= 1e-12);
    }
}

TEST_CASE("pca_trace needs at least three steps and a valid block") {
    TrajectoryRecord rec = make_trajectory(1, 2, 3, 3);
    REQUIRE_THROWS_AS(pca_trace(rec, 0), std::invalid_argument);
    TrajectoryRecord ok = make_trajectory(1, 5, 3, 3);
    REQUIRE_THROWS_AS(pca_trace(ok, 2), std::invalid_argument);
}

TEST_CASE("pure-rotation principal traces an exact circle") {
    SynthConfig cfg = default_suite(15);
    cfg.planted_rank = 2;  // one rotation plane
    cfg.residual_dirs = 4;
    cfg.jitter_share = 0.0;
    cfg.rotating_share = 1.0;
    cfg.blocks = 1;
    cfg.drift_rate = 0.05;
    TrajectoryRecord rec = synth_generate(cfg);
    // Split against the exactly-known planted basis so nothing leaks in.
    SpectralBasis basis;
    basis.V = synth_planted_basis(cfg, 0);
    basis.sigma = Eigen::Vector2d(2.0, 1.0);
    basis.tau = 1.0;
    basis.k_default = 2;
    auto pts = pca_trace(rec, 0, &basis, 2, SubspacePart::principal);

    // Kasa circle fit: linear least squares for center and radius; points
    // that lie on a circle leave no residual.
    Eigen::MatrixXd a(pts.size(), 3);
    Eigen::VectorXd rhs(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        a(static_cast<Eigen::Index>(i), 0) = 2.0 * pts[i](0);
        a(static_cast<Eigen::Index>(i), 1) = 2.0 * pts[i](1);
        a(static_cast<Eigen::Index>(i), 2) = 1.0;
        rhs(static_cast<Eigen::Index>(i)) = pts[i].squaredNorm();
    }
    Eigen::Vector3d sol = a.colPivHouseholderQr().solve(rhs);
    const double radius = std::sqrt(sol(2) + sol(0) * sol(0) + sol(1) * sol(1));
    REQUIRE(radius > 0.0);
    for (const auto& p : pts) {
        const double dist = (p - Eigen::Vector2d(sol(0), sol(1))).norm();
        REQUIRE(std::abs(dist - radius) <= 1e-6 * radius);
    }
}

TEST_CASE("residual trace is far more tortuous than the principal trace") {
    SynthConfig cfg = default_suite(16);
    TrajectoryRecord rec = synth_generate(cfg);
    SpectralBasis basis = build_reference_basis(rec.at(0, 0), 0.85, 0, 0, "s");
    const auto ratio_of = [&](SubspacePart part) {
        auto pts = pca_trace(rec, 0, &basis, cfg.planted_rank, part);
        double path = 0.0;
        for (std::size_t i = 1; i < pts.size(); ++i) path += (pts[i] - pts[i - 1]).norm();
        const double disp = (pts.back() - pts.front()).norm();
        return path / disp;
    };
    REQUIRE(ratio_of(SubspacePart::residual) >= 3.0 * ratio_of(SubspacePart::principal));
}

TEST_CASE("smoothness stats on constant and linear hand-built trajectories") {
    auto rng = make_rng(503);
    FeatureMatrix g = gaussian_matrix(rng, 4, 4);

    TrajectoryRecord constant = make_trajectory(1, 5, 4, 4);
    for (int t = 0; t < 5; ++t) constant.at(0, t) = g;
    SmoothnessStats cs = smoothness_stats(constant, 0);
    REQUIRE(cs.mean_step_rel_change == 0.0);
    REQUIRE(cs.path_disp_ratio == 1.0);

    TrajectoryRecord linear = make_trajectory(1, 6, 4, 4);
    for (int t = 0; t < 6; ++t) linear.at(0, t) = (t + 1.0) * g;
    SmoothnessStats ls = smoothness_stats(linear, 0);
    REQUIRE(ls.path_disp_ratio == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("default suite: residual is rougher than principal in both stats") {
    for (std::uint64_t seed : {17ull, 18ull, 19ull}) {
        SynthConfig cfg = default_suite(seed);
        TrajectoryRecord rec = synth_generate(cfg);
        SpectralBasis basis = build_reference_basis(rec.at(0, 0), 0.85, 0, 0, "s");
        SubspaceSmoothness sm = subspace_smoothness(rec, 0, basis, cfg.planted_rank);
        REQUIRE(sm.residual.path_disp_ratio > sm.principal.path_disp_ratio);
        REQUIRE(sm.residual.mean_step_rel_change > sm.principal.mean_step_rel_change);
    }
}

TEST_CASE("trajectory round-trip is byte-exact and corruption is caught") {
    const fs::path dir =
        fs::temp_directory_path() / ("svdcache_traj_" + std::to_string(std::random_device{}()));
    fs::create_directories(dir);
    SynthConfig cfg = default_suite(20);
    cfg.steps = 8;
    cfg.blocks = 2;
    TrajectoryRecord rec = synth_generate(cfg);
    const fs::path path = dir / "t.svct";
    save_trajectory(rec, path);
    TrajectoryRecord loaded = load_trajectory(path);
    REQUIRE(loaded.blocks == rec.blocks);
    REQUIRE(loaded.steps == rec.steps);
    for (std::size_t i = 0; i < rec.features.size(); ++i) {
        REQUIRE(loaded.features[i] == rec.features[i]);
    }
    const fs::path path2 = dir / "t2.svct";
    save_trajectory(loaded, path2);
    REQUIRE(read_file_bytes(path) == read_file_bytes(path2));

    auto bytes = read_file_bytes(path);
    bytes[bytes.size() - 10] ^= 0x01;
    atomic_write_file(dir / "bad.svct", bytes);
    REQUIRE_THROWS_AS(load_trajectory(dir / "bad.svct"), checksum_error);
    fs::remove_all(dir);
}

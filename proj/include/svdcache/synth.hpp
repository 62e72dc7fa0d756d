// SPDX-License-Identifier: Apache-2.0
//
// Planted synthetic trajectories. Each block carries a fixed orthonormal
// "planted" right basis V_P whose coefficients hold most of the energy
// and evolve smoothly, plus an orthogonal residual complement whose
// coefficients wander and oscillate. Prompts drawn with different seeds
// but the same basis_seed share V_P, the spectrum profile and the
// residual complement, so their right singular structure matches while
// their left factors differ.

#pragma once

#include "svdcache/rng.hpp"
#include "svdcache/trajectory.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace svdcache {

struct SynthConfig {
    int tokens = 64;    // N
    int channels = 48;  // D
    int steps = 101;    // T
    int blocks = 4;     // L
    int planted_rank = 8;  // k*, must be < min(N, D)
    double energy_split = 0.9;       // rho: planted share of total energy
    double drift_rate = 0.05;        // per-step rotation angle of principal coefficients
    double oscillation_freq = 0.45;  // residual phase cycles per step
    std::uint64_t seed = 1;

    // Structure shared across prompts. Prompts with equal basis_seed plant
    // the same V_P / complement / spectrum.
    std::uint64_t basis_seed = 9001;
    int residual_dirs = 12;  // m, must be <= D - k*

    // Principal coefficient mixture: a static bulk, a slowly rotating part
    // and short-correlation jitter. Shares are fractions of the principal
    // energy; the remainder is static.
    double jitter_share = 0.2;
    double rotating_share = 0.0075;
    double jitter_corr_steps = 1.5;

    // Residual coefficient mixture: a wandering (bridged random walk)
    // level plus a fast sinusoid, as relative energy weights.
    double walk_weight = 0.9836;
    double osc_weight = 0.16;
};

inline void validate_synth_config(const SynthConfig& c) {
    if (c.tokens < 1 || c.channels < 1 || c.blocks < 1) {
        throw std::invalid_argument("synth: dimensions must be >= 1");
    }
    if (c.steps < 2) throw std::invalid_argument("synth: steps must be >= 2");
    if (c.planted_rank < 1 || c.planted_rank >= std::min(c.tokens, c.channels)) {
        throw std::invalid_argument("synth: planted_rank must be in [1, min(N,D))");
    }
    if (!(c.energy_split > 0.0 && c.energy_split < 1.0)) {
        throw std::invalid_argument("synth: energy_split must be in (0, 1)");
    }
    if (c.residual_dirs < 1 || c.residual_dirs > c.channels - c.planted_rank) {
        throw std::invalid_argument("synth: residual_dirs must fit the complement of V_P");
    }
    if (c.jitter_share < 0.0 || c.rotating_share < 0.0 ||
        c.jitter_share + c.rotating_share > 1.0) {
        throw std::invalid_argument("synth: principal shares must be >= 0 and sum to <= 1");
    }
    if (c.jitter_corr_steps <= 0.0) {
        throw std::invalid_argument("synth: jitter_corr_steps must be positive");
    }
    if (c.walk_weight < 0.0 || c.osc_weight < 0.0) {
        throw std::invalid_argument("synth: residual weights must be >= 0");
    }
}

namespace detail {

// Mean over steps of ||principal_t||^2 / (||principal_t||^2 + c^2 ||residual_t||^2).
inline double mean_planted_fraction(const std::vector<double>& p2,
                                    const std::vector<double>& e2, double c) {
    double acc = 0.0;
    for (std::size_t t = 0; t < p2.size(); ++t) {
        acc += p2[t] / (p2[t] + c * c * e2[t]);
    }
    return acc / static_cast<double>(p2.size());
}

}  // namespace detail

inline TrajectoryRecord synth_generate(const SynthConfig& cfg) {
    validate_synth_config(cfg);
    const int n = cfg.tokens;
    const int d = cfg.channels;
    const int t_steps = cfg.steps;
    const int k = cfg.planted_rank;
    const int m = cfg.residual_dirs;
    const double two_pi = 2.0 * std::numbers::pi;

    TrajectoryRecord rec = make_trajectory(cfg.blocks, t_steps, n, d);

    // Spectrum profile: linearly decaying amplitudes, shared across
    // prompts. Steep enough that the leading directions keep a stable
    // order from prompt to prompt.
    Eigen::VectorXd s(k);
    {
        double total = 0.0;
        for (int i = 0; i < k; ++i) {
            const double a = static_cast<double>(k + 1 - i);
            s(i) = a * a;
            total += a * a;
        }
        for (int i = 0; i < k; ++i) s(i) = std::sqrt(s(i) / total) * 8.0;
    }

    const double lambda = std::exp(-1.0 / cfg.jitter_corr_steps);
    const double sqrt_n = std::sqrt(static_cast<double>(n));
    // Residual levels wander with a correlation time of a fifth of the
    // trajectory: slow enough that the latest sample stays informative,
    // bounded enough that the residual energy never drifts far from its
    // mean. Levels start at zero and are normalized to unit mean variance.
    const double walk_tau = std::max(4.0, t_steps / 5.0);
    const double walk_lambda = std::exp(-1.0 / walk_tau);
    double walk_norm = 0.0;
    for (int t = 0; t < t_steps; ++t) {
        walk_norm += 1.0 - std::pow(walk_lambda, 2.0 * t);
    }
    walk_norm = std::sqrt(std::max(walk_norm / t_steps, 1e-12));

    for (int b = 0; b < cfg.blocks; ++b) {
        auto rng_shared = make_rng(cfg.basis_seed, 0xB517u, static_cast<std::uint64_t>(b));
        auto rng_prompt = make_rng(cfg.seed, 0x50127u, static_cast<std::uint64_t>(b));

        // Shared planted structure.
        Eigen::MatrixXd vp_and_comp = random_orthonormal(rng_shared, d, k + m);
        Eigen::MatrixXd v_p = vp_and_comp.leftCols(k);
        Eigen::MatrixXd v_comp = vp_and_comp.rightCols(m);
        std::uniform_real_distribution<double> freq_dist(0.5, 1.0);
        Eigen::VectorXd plane_freq(k / 2);
        for (int p = 0; p < k / 2; ++p) plane_freq(p) = freq_dist(rng_shared);

        // Prompt-specific draws, in a fixed order.
        Eigen::MatrixXd o_static = random_orthonormal(rng_prompt, n, k);
        Eigen::MatrixXd o_rot = random_orthonormal(rng_prompt, n, k);
        Eigen::MatrixXd w_res = random_orthonormal(rng_prompt, n, m);
        std::uniform_real_distribution<double> phase_dist(0.0, two_pi);
        Eigen::VectorXd phase(m);
        for (int i = 0; i < m; ++i) phase(i) = phase_dist(rng_prompt);

        // Jitter and walk streams. Jitter columns are kept orthogonal to
        // the static frame and unit-normalized so the planted spectrum's
        // gaps stay deterministic from prompt to prompt.
        std::vector<Eigen::MatrixXd> jitter(t_steps);
        jitter[0] = gaussian_matrix(rng_prompt, n, k);
        for (int t = 1; t < t_steps; ++t) {
            Eigen::MatrixXd g = gaussian_matrix(rng_prompt, n, k);
            jitter[t] = lambda * jitter[t - 1] + std::sqrt(1.0 - lambda * lambda) * g;
        }
        for (int t = 0; t < t_steps; ++t) {
            jitter[t] -= o_static * (o_static.transpose() * jitter[t]);
            for (int i = 0; i < k; ++i) {
                const double norm = jitter[t].col(i).norm();
                if (norm > 0.0) jitter[t].col(i) *= sqrt_n / norm;
            }
        }
        Eigen::MatrixXd walk(m, t_steps);
        walk.col(0).setZero();
        {
            std::normal_distribution<double> gauss(0.0, 1.0);
            const double drive = std::sqrt(1.0 - walk_lambda * walk_lambda);
            for (int t = 1; t < t_steps; ++t) {
                for (int i = 0; i < m; ++i) {
                    walk(i, t) = walk_lambda * walk(i, t - 1) + drive * gauss(rng_prompt);
                }
            }
            // Pin the endpoint back to the start so the level wanders
            // without net displacement over the trajectory.
            for (int t = 1; t < t_steps; ++t) {
                const double w = static_cast<double>(t) / (t_steps - 1);
                walk.col(t) -= w * walk.col(t_steps - 1);
            }
        }

        const double w_static = std::sqrt(1.0 - cfg.jitter_share - cfg.rotating_share);
        const double w_rot = std::sqrt(cfg.rotating_share);
        const double w_jit = std::sqrt(cfg.jitter_share);

        std::vector<Eigen::MatrixXd> principal_coeff(t_steps);
        std::vector<Eigen::MatrixXd> residual_part(t_steps);
        std::vector<double> p2(t_steps), e2(t_steps);
        for (int t = 0; t < t_steps; ++t) {
            // Rotating unit directions: plane p mixes columns (2p, 2p+1).
            Eigen::MatrixXd rot = o_rot;
            for (int p = 0; p + 1 < k; p += 2) {
                const double ang = cfg.drift_rate * plane_freq(p / 2) * t;
                const double ca = std::cos(ang), sa = std::sin(ang);
                rot.col(p) = ca * o_rot.col(p) + sa * o_rot.col(p + 1);
                rot.col(p + 1) = -sa * o_rot.col(p) + ca * o_rot.col(p + 1);
            }
            Eigen::MatrixXd coeff(n, k);
            for (int i = 0; i < k; ++i) {
                coeff.col(i) = s(i) * (w_static * o_static.col(i) + w_rot * rot.col(i) +
                                       w_jit * jitter[t].col(i) / sqrt_n);
            }
            principal_coeff[t] = std::move(coeff);
            p2[t] = principal_coeff[t].squaredNorm();

            Eigen::VectorXd level(m);
            for (int i = 0; i < m; ++i) {
                const double osc =
                    std::sqrt(2.0) * std::sin(two_pi * cfg.oscillation_freq * t + phase(i));
                level(i) = cfg.osc_weight * osc + cfg.walk_weight * walk(i, t) / walk_norm;
            }
            // Fix the residual energy per step; only its direction wanders.
            const double lnorm = level.norm();
            if (lnorm > 0.0) {
                level *= std::sqrt(static_cast<double>(m)) *
                         std::hypot(cfg.osc_weight, cfg.walk_weight) / lnorm;
            }
            residual_part[t] = w_res * level.asDiagonal() * v_comp.transpose();
            e2[t] = residual_part[t].squaredNorm();
        }

        // Scale the residual so the mean planted energy fraction hits rho.
        double scale = 0.0;
        double e2_total = 0.0;
        for (double v : e2) e2_total += v;
        if (e2_total > 0.0) {
            double lo = 0.0, hi = 1.0;
            while (detail::mean_planted_fraction(p2, e2, hi) > cfg.energy_split) hi *= 2.0;
            for (int it = 0; it < 200; ++it) {
                const double mid = 0.5 * (lo + hi);
                if (detail::mean_planted_fraction(p2, e2, mid) > cfg.energy_split) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            scale = 0.5 * (lo + hi);
        }

        for (int t = 0; t < t_steps; ++t) {
            rec.at(b, t) = principal_coeff[t] * v_p.transpose() + scale * residual_part[t];
        }
    }

    rec.provenance = nlohmann::json{{"kind", "synth"},
                                    {"tokens", cfg.tokens},
                                    {"channels", cfg.channels},
                                    {"steps", cfg.steps},
                                    {"blocks", cfg.blocks},
                                    {"planted_rank", cfg.planted_rank},
                                    {"energy_split", cfg.energy_split},
                                    {"drift_rate", cfg.drift_rate},
                                    {"oscillation_freq", cfg.oscillation_freq},
                                    {"seed", cfg.seed},
                                    {"basis_seed", cfg.basis_seed},
                                    {"residual_dirs", cfg.residual_dirs},
                                    {"jitter_share", cfg.jitter_share},
                                    {"rotating_share", cfg.rotating_share},
                                    {"jitter_corr_steps", cfg.jitter_corr_steps},
                                    {"walk_weight", cfg.walk_weight},
                                    {"osc_weight", cfg.osc_weight}};
    return rec;
}

// The planted right basis of one block; used by tests to compare the
// recovered spectral structure against ground truth.
inline Eigen::MatrixXd synth_planted_basis(const SynthConfig& cfg, int block) {
    validate_synth_config(cfg);
    auto rng_shared = make_rng(cfg.basis_seed, 0xB517u, static_cast<std::uint64_t>(block));
    Eigen::MatrixXd vp_and_comp =
        random_orthonormal(rng_shared, cfg.channels, cfg.planted_rank + cfg.residual_dirs);
    return vp_and_comp.leftCols(cfg.planted_rank);
}

}  // namespace svdcache

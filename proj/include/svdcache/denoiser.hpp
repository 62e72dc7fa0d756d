// SPDX-License-Identifier: Apache-2.0
//
// A tiny fixed-weight iterative denoiser. Each reverse step runs an
// L-block residual network (token mix, channel mix, tanh, residual add);
// the recorded features are the blocks' computed outputs (the bounded
// increments feeding the residual stream), and the noise estimate is
// their sum. Weights are seeded random; nothing is trained. The point is
// deterministic, temporally structured features at desk scale, not
// sample quality.

#pragma once

#include "svdcache/rng.hpp"
#include "svdcache/trajectory.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace svdcache {

struct DenoiserConfig {
    int tokens = 64;    // N
    int channels = 64;  // D
    int blocks = 4;     // L
    int steps = 50;     // T
    // Cumulative schedule: abar declines linearly from abar_start to
    // abar_end over the T diffusion times; per-step alpha is the ratio of
    // consecutive abar values.
    double abar_start = 0.9999;
    double abar_end = 0.01;
    // Residual noise scale; 0 gives the deterministic sampler. When
    // positive, per-step noise is a pure function of (seed, step) so
    // caching decisions cannot desynchronize the stream.
    double eta = 0.0;
    // Timestep conditioning: sinusoidal band patterns near ten-step
    // periods (embed_scale) plus a per-step stochastic texture channel
    // (embed_noise). Both are pure functions of (seed, step).
    double embed_scale = 0.7;
    int embed_bands = 6;
    double embed_noise = 1.0;
    // Weight of the (normalized) latent in the block input mix.
    double input_gain = 0.4;
    // Network output head: a linear skip proportional to the noisy latent
    // (the dominant part of any noise estimate) plus the summed block
    // increments with gain epsilon_scale.
    double skip_gain = 0.5;
    double epsilon_scale = 0.1;
    std::uint64_t seed = 1;
};

inline void validate_denoiser_config(const DenoiserConfig& c) {
    if (c.tokens < 1 || c.channels < 1 || c.blocks < 1 || c.steps < 2) {
        throw std::invalid_argument("denoiser: need tokens, channels, blocks >= 1 and steps >= 2");
    }
    if (!(c.abar_start > c.abar_end) || !(c.abar_start < 1.0) || !(c.abar_end > 0.0)) {
        throw std::invalid_argument("denoiser: need 0 < abar_end < abar_start < 1");
    }
    if (c.eta < 0.0) throw std::invalid_argument("denoiser: eta must be >= 0");
    if (c.embed_bands < 1) throw std::invalid_argument("denoiser: embed_bands must be >= 1");
    if (c.embed_scale < 0.0 || c.embed_noise < 0.0 || c.epsilon_scale <= 0.0 ||
        c.skip_gain < 0.0) {
        throw std::invalid_argument("denoiser: embedding/epsilon scales out of range");
    }
}

// Forward corruption at cumulative level abar.
inline FeatureMatrix forward_diffuse(const FeatureMatrix& x0, const FeatureMatrix& eps,
                                     double abar) {
    if (x0.rows() != eps.rows() || x0.cols() != eps.cols()) {
        throw std::invalid_argument("forward_diffuse: shape mismatch");
    }
    return std::sqrt(abar) * x0 + std::sqrt(1.0 - abar) * eps;
}

struct DenoiserRun {
    TrajectoryRecord trajectory;
    FeatureMatrix initial_latent;
    FeatureMatrix final_latent;
};

class ToyDenoiser {
  public:
    explicit ToyDenoiser(DenoiserConfig cfg) : cfg_(cfg) {
        validate_denoiser_config(cfg_);
        const int t = cfg_.steps;
        abar_.resize(t);
        alpha_.resize(t);
        for (int i = 0; i < t; ++i) {
            abar_[i] = cfg_.abar_start +
                       (cfg_.abar_end - cfg_.abar_start) * static_cast<double>(i) / (t - 1);
        }
        for (int i = 0; i < t; ++i) {
            alpha_[i] = i == 0 ? abar_[0] : abar_[i] / abar_[i - 1];
        }

        auto rng = make_rng(cfg_.seed, 0x7E16475u);
        // Mixing weights scaled so the tanh arguments stay responsive even
        // as the latent magnitude grows late in the reverse process.
        const double tok_scale = 0.45 / std::sqrt(static_cast<double>(cfg_.tokens));
        const double ch_scale = 1.0 / std::sqrt(static_cast<double>(cfg_.channels));
        for (int l = 0; l < cfg_.blocks; ++l) {
            w_tok_.push_back(tok_scale * gaussian_matrix(rng, cfg_.tokens, cfg_.tokens));
            w_ch_.push_back(ch_scale * gaussian_matrix(rng, cfg_.channels, cfg_.channels));
        }
        // Conditioning bands: fixed random sin/cos patterns at frequencies
        // clustered around ten-step periods, the mid-frequency rhythm of
        // the schedule. The conditioning is a pure function of the step, so
        // it replays identically whether or not steps are skipped.
        const double f_lo = 0.094;
        const double f_hi = 0.106;
        for (int k = 0; k < cfg_.embed_bands; ++k) {
            const double u = cfg_.embed_bands == 1
                                 ? 0.5
                                 : static_cast<double>(k) / (cfg_.embed_bands - 1);
            band_freq_.push_back(f_lo + (f_hi - f_lo) * u);
            band_sin_.push_back(gaussian_matrix(rng, cfg_.tokens, cfg_.channels));
            band_cos_.push_back(gaussian_matrix(rng, cfg_.tokens, cfg_.channels));
        }
        noise_level_pattern_ = gaussian_matrix(rng, cfg_.tokens, cfg_.channels);
    }

    const DenoiserConfig& config() const { return cfg_; }

    // Diffusion-time index for sampling step s (s = 0 is the noisiest).
    int time_index(int step) const { return cfg_.steps - 1 - step; }
    double abar_at(int step) const { return abar_[static_cast<std::size_t>(time_index(step))]; }
    double alpha_at(int step) const { return alpha_[static_cast<std::size_t>(time_index(step))]; }

    FeatureMatrix initial_latent() const {
        auto rng = make_rng(cfg_.seed, 0x1417E47u);
        return gaussian_matrix(rng, cfg_.tokens, cfg_.channels);
    }

    // Block input: the latent normalized to unit entry scale (pre-norm),
    // plus the timestep conditioning. Normalizing first keeps the blocks
    // in a stationary regime across the whole reverse process.
    FeatureMatrix embed(const FeatureMatrix& x, int step) const {
        const double rms =
            x.norm() / std::sqrt(static_cast<double>(x.rows()) * x.cols());
        FeatureMatrix h = rms > 0.0 ? FeatureMatrix(cfg_.input_gain / rms * x)
                                    : FeatureMatrix(cfg_.input_gain * x);
        h += std::sqrt(1.0 - abar_at(step)) * 0.2 * noise_level_pattern_;
        // Conditioning detail ramps in as denoising proceeds, the way fine
        // structure emerges late in a reverse process.
        const double ramp = static_cast<double>(step) / (cfg_.steps - 1);
        const double norm = ramp * cfg_.embed_scale / std::sqrt(2.0 * band_freq_.size());
        for (std::size_t k = 0; k < band_freq_.size(); ++k) {
            const double phase = 2.0 * std::numbers::pi * band_freq_[k] * (step + 1);
            h += norm * (std::sin(phase) * band_sin_[k] + std::cos(phase) * band_cos_[k]);
        }
        if (cfg_.embed_noise > 0.0) {
            auto rng = make_rng(cfg_.seed, 0x7E47E2Eu, static_cast<std::uint64_t>(step));
            h += ramp * cfg_.embed_noise * gaussian_matrix(rng, cfg_.tokens, cfg_.channels);
        }
        return h;
    }

    struct StepEval {
        std::vector<FeatureMatrix> features;  // per-block computed outputs
    };

    StepEval eval(const FeatureMatrix& x, int step) const {
        StepEval out;
        FeatureMatrix h = embed(x, step);
        out.features.reserve(w_tok_.size());
        for (std::size_t l = 0; l < w_tok_.size(); ++l) {
            FeatureMatrix g = ((w_tok_[l] * h) * w_ch_[l]).array().tanh().matrix();
            h += g;
            out.features.push_back(std::move(g));
        }
        return out;
    }

    // The noise estimate combines the latent skip with the summed block
    // outputs (the total increment the stack applies to the stream). Only
    // the block outputs are expensive; the skip needs just the current
    // latent, so cached runs evaluate it fresh at every step.
    FeatureMatrix epsilon_from(const std::vector<FeatureMatrix>& features,
                               const FeatureMatrix& x, int step) const {
        FeatureMatrix eps = features.front();
        for (std::size_t l = 1; l < features.size(); ++l) eps += features[l];
        return cfg_.skip_gain * std::sqrt(1.0 - abar_at(step)) * x +
               cfg_.epsilon_scale * eps;
    }

    FeatureMatrix update_latent(const FeatureMatrix& x, const FeatureMatrix& eps,
                                int step) const {
        const double a = alpha_at(step);
        const double ab = abar_at(step);
        FeatureMatrix next = (x - ((1.0 - a) / std::sqrt(1.0 - ab)) * eps) / std::sqrt(a);
        if (cfg_.eta > 0.0) {
            auto rng = make_rng(cfg_.seed, 0x9015Eu, static_cast<std::uint64_t>(step));
            next += cfg_.eta * std::sqrt(1.0 - a) *
                    gaussian_matrix(rng, cfg_.tokens, cfg_.channels);
        }
        return next;
    }

    DenoiserRun run() const { return run_from(initial_latent()); }

    DenoiserRun run_from(const FeatureMatrix& x_init) const {
        DenoiserRun out;
        out.trajectory = make_trajectory(cfg_.blocks, cfg_.steps, cfg_.tokens, cfg_.channels);
        out.initial_latent = x_init;
        FeatureMatrix x = x_init;
        for (int s = 0; s < cfg_.steps; ++s) {
            StepEval ev = eval(x, s);
            for (int l = 0; l < cfg_.blocks; ++l) {
                out.trajectory.at(l, s) = ev.features[static_cast<std::size_t>(l)];
            }
            x = update_latent(x, epsilon_from(ev.features, x, s), s);
        }
        out.final_latent = std::move(x);
        out.trajectory.provenance = nlohmann::json{{"kind", "toy_denoiser"},
                                                   {"tokens", cfg_.tokens},
                                                   {"channels", cfg_.channels},
                                                   {"blocks", cfg_.blocks},
                                                   {"steps", cfg_.steps},
                                                   {"abar_start", cfg_.abar_start},
                                                   {"abar_end", cfg_.abar_end},
                                                   {"eta", cfg_.eta},
                                                   {"embed_scale", cfg_.embed_scale},
                                                   {"embed_bands", cfg_.embed_bands},
                                                   {"seed", cfg_.seed}};
        return out;
    }

  private:
    DenoiserConfig cfg_;
    std::vector<double> abar_;
    std::vector<double> alpha_;
    std::vector<Eigen::MatrixXd> w_tok_;
    std::vector<Eigen::MatrixXd> w_ch_;
    std::vector<double> band_freq_;
    std::vector<Eigen::MatrixXd> band_sin_;
    std::vector<Eigen::MatrixXd> band_cos_;
    Eigen::MatrixXd noise_level_pattern_;
};

inline DenoiserRun toy_denoiser_run(const DenoiserConfig& cfg) {
    return ToyDenoiser(cfg).run();
}

}  // namespace svdcache

// SPDX-License-Identifier: Apache-2.0
//
// The caching state machine: interval scheduling, per-block subspace
// splits against cached bases, pluggable per-component prediction rules,
// and error accounting against ground truth. Open-loop runs score
// predictions against a recorded trajectory; closed-loop runs substitute
// them into the toy denoiser so errors propagate.

#pragma once

#include "svdcache/basis.hpp"
#include "svdcache/denoiser.hpp"
#include "svdcache/forecast.hpp"
#include "svdcache/metrics.hpp"
#include "svdcache/schedule.hpp"
#include "svdcache/trajectory.hpp"

#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace svdcache {

enum class RuleKind { ema, reuse, taylor, recompute };

struct Rule {
    RuleKind kind = RuleKind::reuse;
    int taylor_order = 1;
};

inline std::string rule_name(const Rule& r) {
    switch (r.kind) {
        case RuleKind::ema: return "ema";
        case RuleKind::reuse: return "reuse";
        case RuleKind::taylor: return "taylor" + std::to_string(r.taylor_order);
        case RuleKind::recompute: return "recompute";
    }
    return "?";
}

inline Rule parse_rule(const std::string& name) {
    if (name == "ema") return {RuleKind::ema, 1};
    if (name == "reuse") return {RuleKind::reuse, 1};
    if (name == "recompute") return {RuleKind::recompute, 1};
    if (name.rfind("taylor", 0) == 0) {
        int order = 1;
        if (name.size() > 6) {
            const std::string tail = name.substr(name[6] == ':' ? 7 : 6);
            order = std::stoi(tail);
        }
        if (order < 0) throw std::invalid_argument("rule: negative taylor order");
        return {RuleKind::taylor, order};
    }
    throw std::invalid_argument("rule: unknown kind '" + name +
                                "' (expected ema|reuse|taylor[:O]|recompute)");
}

enum class BasisMode { per_step, global };

struct StrategyConfig {
    Rule principal_rule{RuleKind::ema};
    Rule residual_rule{RuleKind::reuse};
    double tau = 0.85;
    double beta = 0.9;
    BasisMode basis_mode = BasisMode::per_step;
};

inline void validate_strategy(const StrategyConfig& s) {
    if (!(s.tau > 0.0) || s.tau > 1.0) {
        throw std::invalid_argument("strategy: tau must be in (0, 1]");
    }
    if (!(s.beta > 0.0 && s.beta < 1.0)) {
        throw std::invalid_argument("strategy: beta must be in (0, 1)");
    }
}

inline std::string strategy_name(const StrategyConfig& s) {
    return rule_name(s.principal_rule) + "+" + rule_name(s.residual_rule);
}

// Keyed basis collection. Per-step mode looks up (block, compute step);
// global mode looks up (block, kGlobalStep).
class BasisStore {
  public:
    void put(SpectralBasis basis) {
        const auto key = std::make_pair(basis.block_id, basis.step_id);
        store_.insert_or_assign(key, std::move(basis));
    }

    const SpectralBasis& get(int block, int step, BasisMode mode) const {
        const int key_step = mode == BasisMode::global ? kGlobalStep : step;
        const auto it = store_.find({block, key_step});
        if (it == store_.end()) {
            throw std::runtime_error("basis store: missing basis for block " +
                                     std::to_string(block) + ", step " +
                                     std::to_string(key_step));
        }
        return it->second;
    }

    bool contains(int block, int step) const { return store_.count({block, step}) > 0; }
    std::size_t size() const { return store_.size(); }
    const std::map<std::pair<int, int>, SpectralBasis>& entries() const { return store_; }

  private:
    std::map<std::pair<int, int>, SpectralBasis> store_;
};

// Builds a store from a reference trajectory: one basis per (block,
// compute step), or one per block from the row-stacked compute-step
// features in global mode.
inline BasisStore build_reference_store(const TrajectoryRecord& ref,
                                        const CacheSchedule& schedule, double tau,
                                        BasisMode mode, const std::string& source_id = {}) {
    validate_trajectory(ref);
    if (ref.steps != schedule.total_steps) {
        throw std::invalid_argument("build_reference_store: trajectory/schedule step mismatch");
    }
    BasisStore store;
    for (int b = 0; b < ref.blocks; ++b) {
        if (mode == BasisMode::per_step) {
            for (int t : schedule.compute_steps) {
                store.put(build_reference_basis(ref.at(b, t), tau, b, t, source_id));
            }
        } else {
            FeatureMatrix stacked(static_cast<Eigen::Index>(schedule.num_compute()) * ref.rows,
                                  ref.cols);
            Eigen::Index row = 0;
            for (int t : schedule.compute_steps) {
                stacked.middleRows(row, ref.rows) = ref.at(b, t);
                row += ref.rows;
            }
            store.put(build_reference_basis(stacked, tau, b, kGlobalStep, source_id));
        }
    }
    return store;
}

struct StepRecord {
    int step = 0;
    bool is_compute = false;
    double rel_error = 0.0;
    double similarity = 1.0;
    double principal_energy_fraction = 0.0;
};

struct RunReport {
    int total_steps = 0;
    int interval = 1;
    std::string strategy;
    double tau = 0.0;
    double beta = 0.0;
    std::string basis_mode;
    bool closed_loop = false;
    int compute_count = 0;    // scheduled full computations (per block)
    int predicted_count = 0;  // scheduled predicted steps (per block)
    std::vector<StepRecord> steps;  // averaged over blocks
    double final_latent_rel_error = 0.0;  // closed-loop only
};

namespace detail {

// Per-(block, component) predictor state.
class ComponentState {
  public:
    explicit ComponentState(const Rule& rule, double beta)
        : rule_(rule), ema_(make_ema_state(beta)), history_(rule.taylor_order) {}

    void observe(const FeatureMatrix& value, int step) {
        switch (rule_.kind) {
            case RuleKind::ema:
                ema_ = ema_update(std::move(ema_), value, step);
                break;
            case RuleKind::reuse:
                cached_ = value;
                break;
            case RuleKind::taylor:
                history_.push(step, value);
                break;
            case RuleKind::recompute:
                break;
        }
    }

    // Prediction for a skipped step; recompute is resolved by the caller.
    FeatureMatrix predict(int step) const {
        switch (rule_.kind) {
            case RuleKind::ema: return ema_predict(ema_);
            case RuleKind::reuse: return cached_;
            case RuleKind::taylor: return taylor_predict(history_, step);
            case RuleKind::recompute:
                throw std::logic_error("recompute rule has no stored prediction");
        }
        throw std::logic_error("unreachable");
    }

    const Rule& rule() const { return rule_; }

  private:
    Rule rule_;
    EmaState ema_;
    History history_;
    FeatureMatrix cached_;
};

inline double safe_rel_error(const FeatureMatrix& approx, const FeatureMatrix& truth) {
    const double nb = truth.norm();
    if (nb == 0.0) {
        return approx.norm() == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    }
    return (approx - truth).norm() / nb;
}

}  // namespace detail

// Open-loop run: read true features at compute steps, emit predictions at
// skipped steps, score each prediction against the recorded truth.
inline RunReport run_cached(const TrajectoryRecord& traj, const CacheSchedule& schedule,
                            const StrategyConfig& strategy, const BasisStore& store) {
    validate_trajectory(traj);
    validate_strategy(strategy);
    if (traj.steps != schedule.total_steps) {
        throw std::invalid_argument("run_cached: trajectory/schedule step mismatch");
    }

    RunReport report;
    report.total_steps = schedule.total_steps;
    report.interval = schedule.interval;
    report.strategy = strategy_name(strategy);
    report.tau = strategy.tau;
    report.beta = strategy.beta;
    report.basis_mode = strategy.basis_mode == BasisMode::global ? "global" : "per_step";
    report.compute_count = schedule.num_compute();
    report.predicted_count = schedule.num_predicted();
    report.steps.resize(static_cast<std::size_t>(schedule.total_steps));

    const bool full_recompute = strategy.principal_rule.kind == RuleKind::recompute &&
                                strategy.residual_rule.kind == RuleKind::recompute;

    std::vector<detail::ComponentState> principal_states;
    std::vector<detail::ComponentState> residual_states;
    std::vector<int> reads_per_block(static_cast<std::size_t>(traj.blocks), 0);
    for (int b = 0; b < traj.blocks; ++b) {
        principal_states.emplace_back(strategy.principal_rule, strategy.beta);
        residual_states.emplace_back(strategy.residual_rule, strategy.beta);
    }

    for (int s = 0; s < schedule.total_steps; ++s) {
        StepRecord rec;
        rec.step = s;
        rec.is_compute = schedule.is_compute(s);
        double err_acc = 0.0, sim_acc = 0.0, pef_acc = 0.0;

        for (int b = 0; b < traj.blocks; ++b) {
            const SpectralBasis& basis =
                store.get(b, schedule.compute_step_for(s), strategy.basis_mode);
            const Eigen::Index k = select_rank(basis.sigma, strategy.tau);
            const FeatureMatrix& truth = traj.at(b, s);

            if (rec.is_compute) {
                ++reads_per_block[static_cast<std::size_t>(b)];
                SubspaceSplit sp = split(truth, basis, k);
                principal_states[static_cast<std::size_t>(b)].observe(sp.principal, s);
                residual_states[static_cast<std::size_t>(b)].observe(sp.residual, s);
                sim_acc += 1.0;
                pef_acc += sp.principal_energy_fraction;
            } else {
                FeatureMatrix approx;
                std::optional<SubspaceSplit> true_split;
                const auto split_truth = [&]() -> const SubspaceSplit& {
                    if (!true_split) true_split = split(truth, basis, k);
                    return *true_split;
                };
                if (full_recompute) {
                    approx = truth;
                } else {
                    FeatureMatrix principal_hat =
                        strategy.principal_rule.kind == RuleKind::recompute
                            ? split_truth().principal
                            : principal_states[static_cast<std::size_t>(b)].predict(s);
                    FeatureMatrix residual_hat =
                        strategy.residual_rule.kind == RuleKind::recompute
                            ? split_truth().residual
                            : residual_states[static_cast<std::size_t>(b)].predict(s);
                    approx = principal_hat + residual_hat;
                }
                err_acc += detail::safe_rel_error(approx, truth);
                sim_acc += similarity(approx, truth).product;
                const double whole = truth.squaredNorm();
                pef_acc += whole > 0.0 ? split_truth().principal.squaredNorm() / whole : 0.0;
            }
        }

        rec.rel_error = rec.is_compute ? 0.0 : err_acc / traj.blocks;
        rec.similarity = sim_acc / traj.blocks;
        rec.principal_energy_fraction = pef_acc / traj.blocks;
        report.steps[static_cast<std::size_t>(s)] = rec;
    }

    for (int reads : reads_per_block) {
        if (reads != schedule.num_compute()) {
            throw std::logic_error("run_cached: compute-step read count drifted");
        }
    }
    return report;
}

// Closed-loop run on the toy denoiser: predictions replace the block
// outputs inside the sampler, so errors feed forward into later latents.
// Per-step errors compare against an uncached reference run; the summary
// carries the final-latent error.
inline RunReport run_cached_closed_loop(const ToyDenoiser& den, const CacheSchedule& schedule,
                                        const StrategyConfig& strategy,
                                        const BasisStore& store) {
    validate_strategy(strategy);
    const DenoiserConfig& cfg = den.config();
    if (cfg.steps != schedule.total_steps) {
        throw std::invalid_argument("run_cached_closed_loop: schedule/denoiser step mismatch");
    }

    const DenoiserRun reference = den.run();

    RunReport report;
    report.total_steps = schedule.total_steps;
    report.interval = schedule.interval;
    report.strategy = strategy_name(strategy);
    report.tau = strategy.tau;
    report.beta = strategy.beta;
    report.basis_mode = strategy.basis_mode == BasisMode::global ? "global" : "per_step";
    report.closed_loop = true;
    report.compute_count = schedule.num_compute();
    report.predicted_count = schedule.num_predicted();
    report.steps.resize(static_cast<std::size_t>(schedule.total_steps));

    const bool full_recompute = strategy.principal_rule.kind == RuleKind::recompute &&
                                strategy.residual_rule.kind == RuleKind::recompute;
    const bool needs_truth = strategy.principal_rule.kind == RuleKind::recompute ||
                             strategy.residual_rule.kind == RuleKind::recompute;

    std::vector<detail::ComponentState> principal_states;
    std::vector<detail::ComponentState> residual_states;
    for (int b = 0; b < cfg.blocks; ++b) {
        principal_states.emplace_back(strategy.principal_rule, strategy.beta);
        residual_states.emplace_back(strategy.residual_rule, strategy.beta);
    }

    FeatureMatrix x = den.initial_latent();
    for (int s = 0; s < schedule.total_steps; ++s) {
        StepRecord rec;
        rec.step = s;
        rec.is_compute = schedule.is_compute(s);
        double err_acc = 0.0, sim_acc = 0.0, pef_acc = 0.0;

        if (rec.is_compute) {
            ToyDenoiser::StepEval ev = den.eval(x, s);
            for (int b = 0; b < cfg.blocks; ++b) {
                const SpectralBasis& basis =
                    store.get(b, schedule.compute_step_for(s), strategy.basis_mode);
                const Eigen::Index k = select_rank(basis.sigma, strategy.tau);
                const FeatureMatrix& f = ev.features[static_cast<std::size_t>(b)];
                SubspaceSplit sp = split(f, basis, k);
                principal_states[static_cast<std::size_t>(b)].observe(sp.principal, s);
                residual_states[static_cast<std::size_t>(b)].observe(sp.residual, s);
                err_acc += detail::safe_rel_error(f, reference.trajectory.at(b, s));
                sim_acc += similarity(f, reference.trajectory.at(b, s)).product;
                pef_acc += sp.principal_energy_fraction;
            }
            x = den.update_latent(x, den.epsilon_from(ev.features, x, s), s);
        } else if (full_recompute) {
            // True features substituted everywhere: identical to reference.
            ToyDenoiser::StepEval ev = den.eval(x, s);
            for (int b = 0; b < cfg.blocks; ++b) {
                const FeatureMatrix& f = ev.features[static_cast<std::size_t>(b)];
                err_acc += detail::safe_rel_error(f, reference.trajectory.at(b, s));
                sim_acc += similarity(f, reference.trajectory.at(b, s)).product;
                const SpectralBasis& basis =
                    store.get(b, schedule.compute_step_for(s), strategy.basis_mode);
                const Eigen::Index k = select_rank(basis.sigma, strategy.tau);
                pef_acc += split(f, basis, k).principal_energy_fraction;
            }
            x = den.update_latent(x, den.epsilon_from(ev.features, x, s), s);
        } else {
            // Skipped step: substituted block outputs form the noise
            // estimate. Rules that demand the true component trigger a
            // network evaluation at the current latent.
            std::optional<ToyDenoiser::StepEval> ev;
            if (needs_truth) ev = den.eval(x, s);
            std::vector<FeatureMatrix> approx(static_cast<std::size_t>(cfg.blocks));
            for (int b = 0; b < cfg.blocks; ++b) {
                const SpectralBasis& basis =
                    store.get(b, schedule.compute_step_for(s), strategy.basis_mode);
                const Eigen::Index k = select_rank(basis.sigma, strategy.tau);
                std::optional<SubspaceSplit> true_split;
                if (ev) {
                    true_split = split(ev->features[static_cast<std::size_t>(b)], basis, k);
                }
                FeatureMatrix principal_hat =
                    strategy.principal_rule.kind == RuleKind::recompute
                        ? true_split->principal
                        : principal_states[static_cast<std::size_t>(b)].predict(s);
                FeatureMatrix residual_hat =
                    strategy.residual_rule.kind == RuleKind::recompute
                        ? true_split->residual
                        : residual_states[static_cast<std::size_t>(b)].predict(s);
                approx[static_cast<std::size_t>(b)] = principal_hat + residual_hat;
                const FeatureMatrix& a = approx[static_cast<std::size_t>(b)];
                err_acc += detail::safe_rel_error(a, reference.trajectory.at(b, s));
                sim_acc += similarity(a, reference.trajectory.at(b, s)).product;
                const double whole = a.squaredNorm();
                pef_acc += whole > 0.0
                               ? project_onto_basis(a, basis.V.leftCols(k)).squaredNorm() / whole
                               : 0.0;
            }
            x = den.update_latent(x, den.epsilon_from(approx, x, s), s);
        }

        rec.rel_error = err_acc / cfg.blocks;
        rec.similarity = sim_acc / cfg.blocks;
        rec.principal_energy_fraction = pef_acc / cfg.blocks;
        report.steps[static_cast<std::size_t>(s)] = rec;
    }

    report.final_latent_rel_error = detail::safe_rel_error(x, reference.final_latent);
    return report;
}

struct GridCell {
    StrategyConfig strategy;
    RunReport report;
};

// Cartesian product of strategies and energy thresholds, in deterministic
// order (strategies outer, thresholds inner). Cells are independent and
// may run on up to `jobs` threads; results land at fixed indices.
inline std::vector<GridCell> ablation_grid(const TrajectoryRecord& traj,
                                           const CacheSchedule& schedule,
                                           const std::vector<double>& tau_list,
                                           const std::vector<StrategyConfig>& strategy_list,
                                           const BasisStore& store, int jobs = 1) {
    if (tau_list.empty() || strategy_list.empty()) {
        throw std::invalid_argument("ablation_grid: empty tau or strategy list");
    }
    std::vector<GridCell> cells;
    for (const auto& strat : strategy_list) {
        for (double tau : tau_list) {
            StrategyConfig s = strat;
            s.tau = tau;
            cells.push_back(GridCell{s, RunReport{}});
        }
    }
    const auto run_cell = [&](std::size_t i) {
        cells[i].report = run_cached(traj, schedule, cells[i].strategy, store);
    };
    if (jobs <= 1) {
        for (std::size_t i = 0; i < cells.size(); ++i) run_cell(i);
    } else {
        std::vector<std::thread> workers;
        std::size_t next = 0;
        std::mutex mu;
        for (int w = 0; w < jobs; ++w) {
            workers.emplace_back([&] {
                for (;;) {
                    std::size_t i;
                    {
                        std::lock_guard<std::mutex> lock(mu);
                        if (next >= cells.size()) return;
                        i = next++;
                    }
                    run_cell(i);
                }
            });
        }
        for (auto& t : workers) t.join();
    }
    return cells;
}

}  // namespace svdcache

// SPDX-License-Identifier: Apache-2.0
//
// Command-line harness: trajectory generation, reference decomposition,
// cached runs, strategy comparison and analysis exports.
//
// Exit codes: 0 success, 1 validation/config error, 2 runtime error.

#include "svdcache/config.hpp"
#include "svdcache/selftest.hpp"
#include "svdcache/svdcache.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;
using namespace svdcache;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::vector<std::uint64_t> seeds;
    std::string out_dir;
    int jobs = 0;
};

void add_common_flags(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON config file");
    cmd->add_option("--set", args.overrides, "Override a config key, e.g. strategy.tau=0.9")
        ->take_all();
    cmd->add_option("--seed", args.seeds, "Seed (repeatable; overrides config seeds)")
        ->take_all();
    cmd->add_option("--out", args.out_dir, "Output directory (overrides config and SVDCACHE_OUT)");
    cmd->add_option("--jobs", args.jobs, "Max parallel runs");
}

json build_config(const CommonArgs& args) {
    json user = args.config_path.empty() ? json::object() : load_config_file(args.config_path);
    json cfg = canonical_config(user);
    for (const auto& ov : args.overrides) apply_override(cfg, ov);
    if (!args.seeds.empty()) {
        cfg["seeds"] = args.seeds;
    }
    if (args.jobs > 0) cfg["jobs"] = args.jobs;
    return cfg;
}

void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
    jobs = std::max(1, jobs);
    if (jobs == 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::mutex mu;
    std::size_t next = 0;
    std::vector<std::thread> workers;
    std::exception_ptr first_error;
    for (int w = 0; w < std::min<std::size_t>(jobs, count); ++w) {
        workers.emplace_back([&] {
            for (;;) {
                std::size_t i;
                {
                    std::lock_guard<std::mutex> lock(mu);
                    if (next >= count || first_error) return;
                    i = next++;
                }
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(mu);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : workers) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

std::string source_kind(const json& cfg) {
    return cfg.at("source").at("kind").get<std::string>();
}

TrajectoryRecord trajectory_for_seed(const json& cfg, std::uint64_t seed) {
    const std::string kind = source_kind(cfg);
    if (kind == "synth") {
        return synth_generate(synth_config_from(cfg, seed));
    }
    if (kind == "toy_denoiser") {
        return toy_denoiser_run(denoiser_config_from(cfg, seed)).trajectory;
    }
    if (kind == "file") {
        const std::string path = cfg.at("source").at("path").get<std::string>();
        if (path.empty()) throw std::invalid_argument("source.kind=file requires source.path");
        return load_trajectory(path);
    }
    throw std::invalid_argument("source.kind must be synth|toy_denoiser|file, got '" + kind + "'");
}

std::string basis_file_name(int block, int step) {
    return "basis_b" + std::to_string(block) + "_s" +
           (step == kGlobalStep ? std::string("global") : std::to_string(step)) + ".svdc";
}

BasisStore load_basis_dir(const fs::path& dir) {
    BasisStore store;
    if (!fs::is_directory(dir)) {
        throw std::runtime_error("basis_dir does not exist: " + dir.string());
    }
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() == ".svdc") store.put(load_basis(entry.path()));
    }
    if (store.size() == 0) {
        throw std::runtime_error("no .svdc basis files found in " + dir.string());
    }
    return store;
}

// Bases come from disk when basis_dir is set, otherwise from a reference
// trajectory built with the first seed (the reference prompt).
BasisStore acquire_store(const json& cfg, const CacheSchedule& schedule,
                         const StrategyConfig& strategy) {
    const std::string dir = cfg.at("basis_dir").get<std::string>();
    if (!dir.empty()) return load_basis_dir(dir);
    const auto seeds = seeds_from(cfg);
    TrajectoryRecord ref = trajectory_for_seed(cfg, seeds.front());
    return build_reference_store(ref, schedule, strategy.tau, strategy.basis_mode,
                                 "seed" + std::to_string(seeds.front()));
}

CacheSchedule schedule_for(const json& cfg, int trajectory_steps) {
    const json& s = cfg.at("schedule");
    const int interval = s.at("interval").get<int>();
    if (s.contains("steps") && s.at("steps").get<int>() != trajectory_steps) {
        throw std::invalid_argument("schedule.steps does not match the trajectory");
    }
    return make_schedule(trajectory_steps, interval);
}

int cmd_synth(const CommonArgs& args) {
    const json cfg = build_config(args);
    const fs::path out = resolve_out_dir(cfg, args.out_dir);
    fs::create_directories(out);
    for (std::uint64_t seed : seeds_from(cfg)) {
        TrajectoryRecord rec = trajectory_for_seed(cfg, seed);
        const fs::path path = out / ("trajectory_seed" + std::to_string(seed) + ".svct");
        save_trajectory(rec, path);
        std::printf("wrote %s (%d blocks x %d steps, %dx%d)\n", path.c_str(), rec.blocks,
                    rec.steps, rec.rows, rec.cols);
    }
    return 0;
}

int cmd_decompose(const CommonArgs& args) {
    const json cfg = build_config(args);
    const fs::path out = resolve_out_dir(cfg, args.out_dir);
    fs::create_directories(out);
    const StrategyConfig strategy = strategy_from(cfg.at("strategy"));
    const auto seeds = seeds_from(cfg);
    TrajectoryRecord ref = trajectory_for_seed(cfg, seeds.front());
    const CacheSchedule schedule = schedule_for(cfg, ref.steps);
    BasisStore store = build_reference_store(ref, schedule, strategy.tau, strategy.basis_mode,
                                             "seed" + std::to_string(seeds.front()));

    json manifest{{"tau", strategy.tau},
                  {"basis_mode", strategy.basis_mode == BasisMode::global ? "global" : "per_step"},
                  {"source_seed", seeds.front()},
                  {"interval", schedule.interval},
                  {"total_steps", schedule.total_steps},
                  {"files", json::array()}};
    for (const auto& [key, basis] : store.entries()) {
        const std::string name = basis_file_name(key.first, key.second);
        save_basis(basis, out / name);
        manifest["files"].push_back(name);
    }
    atomic_write_file(out / "manifest.json", manifest.dump(2) + "\n");
    std::printf("wrote %zu basis files + manifest to %s\n", store.size(), out.c_str());
    return 0;
}

int cmd_run(const CommonArgs& args) {
    const json cfg = build_config(args);
    const fs::path out = resolve_out_dir(cfg, args.out_dir);
    fs::create_directories(out);
    const StrategyConfig strategy = strategy_from(cfg.at("strategy"));
    const auto seeds = seeds_from(cfg);
    const std::string mode = cfg.at("mode").get<std::string>();
    if (mode != "open_loop" && mode != "closed_loop") {
        throw std::invalid_argument("mode must be open_loop|closed_loop");
    }
    if (mode == "closed_loop" && source_kind(cfg) != "toy_denoiser") {
        throw std::invalid_argument("closed_loop mode requires source.kind=toy_denoiser");
    }

    // Probe the first seed for shapes, then build/load bases once.
    TrajectoryRecord probe = trajectory_for_seed(cfg, seeds.front());
    const CacheSchedule schedule = schedule_for(cfg, probe.steps);
    const BasisStore store = acquire_store(cfg, schedule, strategy);

    const int jobs = cfg.at("jobs").get<int>();
    std::vector<RunReport> reports(seeds.size());
    parallel_for(seeds.size(), jobs, [&](std::size_t i) {
        if (mode == "closed_loop") {
            ToyDenoiser den(denoiser_config_from(cfg, seeds[i]));
            reports[i] = run_cached_closed_loop(den, schedule, strategy, store);
        } else {
            TrajectoryRecord traj =
                i == 0 ? probe : trajectory_for_seed(cfg, seeds[i]);
            reports[i] = run_cached(traj, schedule, strategy, store);
        }
    });

    for (std::size_t i = 0; i < seeds.size(); ++i) {
        const std::string stem = "report_seed" + std::to_string(seeds[i]);
        write_report_files(reports[i], out / (stem + ".json"), out / (stem + ".csv"));
        const RunSummary s = run_summary(reports[i]);
        std::printf("seed %llu: mean_rel_error=%.6g mean_similarity=%.6g speedup=%.2fx\n",
                    static_cast<unsigned long long>(seeds[i]), s.mean_rel_error,
                    s.mean_similarity, s.theoretical_speedup);
    }
    return 0;
}

int cmd_compare(const CommonArgs& args) {
    const json cfg = build_config(args);
    const fs::path out = resolve_out_dir(cfg, args.out_dir);
    fs::create_directories(out);
    const StrategyConfig base = strategy_from(cfg.at("strategy"));
    const auto seeds = seeds_from(cfg);

    std::vector<std::string> strategy_names;
    for (const auto& s : cfg.at("compare").at("strategies")) {
        strategy_names.push_back(s.get<std::string>());
    }
    std::vector<int> intervals;
    for (const auto& n : cfg.at("compare").at("intervals")) intervals.push_back(n.get<int>());
    if (strategy_names.empty() || intervals.empty()) {
        throw std::invalid_argument("compare: strategies and intervals must be nonempty");
    }

    struct Cell {
        std::string name;
        int interval = 0;
        double mean_rel_error = 0.0;
        double mean_similarity = 0.0;
        double speedup = 0.0;
    };

    // Trajectories are shared across cells; generate once per seed.
    std::vector<TrajectoryRecord> trajs;
    trajs.reserve(seeds.size());
    for (std::uint64_t seed : seeds) trajs.push_back(trajectory_for_seed(cfg, seed));

    std::vector<Cell> cells;
    for (int interval : intervals) {
        const CacheSchedule schedule = make_schedule(trajs.front().steps, interval);
        const BasisStore store = cfg.at("basis_dir").get<std::string>().empty()
                                     ? build_reference_store(trajs.front(), schedule, base.tau,
                                                             base.basis_mode)
                                     : load_basis_dir(cfg.at("basis_dir").get<std::string>());
        for (const auto& name : strategy_names) {
            const StrategyConfig strategy = strategy_from_name(name, base);
            Cell cell;
            cell.name = name;
            cell.interval = interval;
            cell.speedup = schedule.theoretical_speedup();
            std::vector<double> errs(seeds.size()), sims(seeds.size());
            parallel_for(seeds.size(), cfg.at("jobs").get<int>(), [&](std::size_t i) {
                const RunSummary s = run_summary(run_cached(trajs[i], schedule, strategy, store));
                errs[i] = s.mean_rel_error;
                sims[i] = s.mean_similarity;
            });
            for (std::size_t i = 0; i < seeds.size(); ++i) {
                cell.mean_rel_error += errs[i];
                cell.mean_similarity += sims[i];
            }
            cell.mean_rel_error /= static_cast<double>(seeds.size());
            cell.mean_similarity /= static_cast<double>(seeds.size());
            cells.push_back(std::move(cell));
        }
    }

    std::stable_sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) {
        return a.mean_rel_error < b.mean_rel_error;
    });

    std::string csv = "strategy,interval,speedup,mean_rel_error,mean_similarity\n";
    for (const auto& c : cells) {
        csv += c.name + ',' + std::to_string(c.interval) + ',' + format_double(c.speedup) + ',' +
               format_double(c.mean_rel_error) + ',' + format_double(c.mean_similarity) + '\n';
        std::printf("%-18s N=%-3d speedup=%-6.3g err=%-12.6g sim=%.6g\n", c.name.c_str(),
                    c.interval, c.speedup, c.mean_rel_error, c.mean_similarity);
    }
    atomic_write_file(out / "compare.csv", csv);
    return 0;
}

int cmd_analyze(const CommonArgs& args) {
    const json cfg = build_config(args);
    const fs::path out = resolve_out_dir(cfg, args.out_dir);
    fs::create_directories(out);
    const StrategyConfig strategy = strategy_from(cfg.at("strategy"));
    const auto seeds = seeds_from(cfg);
    const int block = cfg.at("analyze").at("block").get<int>();

    TrajectoryRecord traj = trajectory_for_seed(cfg, seeds.front());
    if (block < 0 || block >= traj.blocks) {
        throw std::invalid_argument("analyze.block out of range");
    }
    SpectralBasis basis = build_reference_basis(traj.at(block, 0), strategy.tau, block, 0,
                                                "seed" + std::to_string(seeds.front()));

    // 2-D traces of the full features and both subspace parts.
    std::string trace_csv = "part,step,x,y\n";
    const auto emit_trace = [&](const char* part, SubspacePart kind) {
        const auto pts = pca_trace(traj, block, kind == SubspacePart::full ? nullptr : &basis, 0,
                                   kind);
        for (std::size_t t = 0; t < pts.size(); ++t) {
            trace_csv += std::string(part) + ',' + std::to_string(t) + ',' +
                         format_double(pts[t](0)) + ',' + format_double(pts[t](1)) + '\n';
        }
    };
    emit_trace("full", SubspacePart::full);
    emit_trace("principal", SubspacePart::principal);
    emit_trace("residual", SubspacePart::residual);
    atomic_write_file(out / "pca_trace.csv", trace_csv);

    // Smoothness statistics per subspace.
    const SubspaceSmoothness sm = subspace_smoothness(traj, block, basis);
    std::string smooth_csv =
        "part,mean_step_rel_change,path_length,displacement,path_disp_ratio\n";
    const auto emit_stats = [&](const char* part, const SmoothnessStats& st) {
        smooth_csv += std::string(part) + ',' + format_double(st.mean_step_rel_change) + ',' +
                      format_double(st.path_length) + ',' + format_double(st.displacement) + ',' +
                      format_double(st.path_disp_ratio) + '\n';
    };
    emit_stats("full", sm.full);
    emit_stats("principal", sm.principal);
    emit_stats("residual", sm.residual);
    atomic_write_file(out / "smoothness.csv", smooth_csv);

    // Pairwise basis similarity across prompts (needs at least two seeds).
    if (seeds.size() >= 2) {
        std::vector<SpectralBasis> bases;
        bases.push_back(basis);
        for (std::size_t i = 1; i < seeds.size(); ++i) {
            TrajectoryRecord other = trajectory_for_seed(cfg, seeds[i]);
            bases.push_back(build_reference_basis(other.at(block, 0), strategy.tau, block, 0,
                                                  "seed" + std::to_string(seeds[i])));
        }
        std::string sim_csv = "seed_a,seed_b,sigma_similarity,summary\n";
        for (std::size_t i = 0; i < bases.size(); ++i) {
            for (std::size_t j = i + 1; j < bases.size(); ++j) {
                const BasisSimilarity s = basis_similarity(bases[i], bases[j]);
                sim_csv += std::to_string(seeds[i]) + ',' + std::to_string(seeds[j]) + ',' +
                           format_double(s.sigma_similarity) + ',' + format_double(s.summary) +
                           '\n';
            }
        }
        atomic_write_file(out / "basis_similarity.csv", sim_csv);
    } else {
        std::printf("note: basis similarity table needs >= 2 seeds, skipped\n");
    }
    std::printf("wrote analysis CSVs to %s\n", out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Subspace-aware feature caching harness"};
    app.require_subcommand(1);

    CommonArgs synth_args, decompose_args, run_args, compare_args, analyze_args;
    auto* synth_cmd = app.add_subcommand("synth", "Generate and save trajectories");
    add_common_flags(synth_cmd, synth_args);
    auto* decompose_cmd =
        app.add_subcommand("decompose", "Build reference bases from a trajectory");
    add_common_flags(decompose_cmd, decompose_args);
    auto* run_cmd = app.add_subcommand("run", "Run a cached schedule and write reports");
    add_common_flags(run_cmd, run_args);
    auto* compare_cmd = app.add_subcommand("compare", "Rank strategies over a config grid");
    add_common_flags(compare_cmd, compare_args);
    auto* analyze_cmd =
        app.add_subcommand("analyze", "Export PCA traces, smoothness and similarity tables");
    add_common_flags(analyze_cmd, analyze_args);
    auto* selftest_cmd = app.add_subcommand("selftest", "Run the built-in invariant suites");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (synth_cmd->parsed()) return cmd_synth(synth_args);
        if (decompose_cmd->parsed()) return cmd_decompose(decompose_args);
        if (run_cmd->parsed()) return cmd_run(run_args);
        if (compare_cmd->parsed()) return cmd_compare(compare_args);
        if (analyze_cmd->parsed()) return cmd_analyze(analyze_args);
        if (selftest_cmd->parsed()) return run_selftests() == 0 ? 0 : 1;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}

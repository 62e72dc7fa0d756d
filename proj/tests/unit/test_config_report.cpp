// SPDX-License-Identifier: Apache-2.0

#include "svdcache/config.hpp"
#include "svdcache/report.hpp"
#include "svdcache/rng.hpp"
#include "svdcache/synth.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace svdcache;

TEST_CASE("canonical_config fills defaults and is idempotent") {
    json user = {{"strategy", {{"tau", 0.7}}}};
    json cfg = canonical_config(user);
    REQUIRE(cfg["strategy"]["tau"] == 0.7);
    REQUIRE(cfg["strategy"]["beta"] == 0.9);
    REQUIRE(cfg["source"]["kind"] == "synth");
    REQUIRE(canonical_config(cfg) == cfg);
    REQUIRE(canonical_config(cfg).dump() == cfg.dump());
}

TEST_CASE("apply_override parses values and dotted paths") {
    json cfg = canonical_config(json::object());
    apply_override(cfg, "strategy.tau=0.95");
    REQUIRE(cfg["strategy"]["tau"] == 0.95);
    apply_override(cfg, "schedule.interval=7");
    REQUIRE(cfg["schedule"]["interval"] == 7);
    apply_override(cfg, "strategy.principal=taylor:2");
    REQUIRE(cfg["strategy"]["principal"] == "taylor:2");
    apply_override(cfg, "seeds=[3,4]");
    REQUIRE(cfg["seeds"] == json::array({3, 4}));
    REQUIRE_THROWS_AS(apply_override(cfg, "novalue"), std::invalid_argument);
    REQUIRE_THROWS_AS(apply_override(cfg, "=5"), std::invalid_argument);
}

TEST_CASE("typed config extraction round-trips the defaults") {
    json cfg = canonical_config(json::object());
    SynthConfig sc = synth_config_from(cfg, 42);
    REQUIRE(sc.seed == 42);
    REQUIRE(sc.tokens == 64);
    REQUIRE(sc.energy_split == 0.9);

    DenoiserConfig dc = denoiser_config_from(cfg, 7);
    REQUIRE(dc.steps == 101);
    REQUIRE(dc.seed == 7);

    StrategyConfig st = strategy_from(cfg.at("strategy"));
    REQUIRE(st.principal_rule.kind == RuleKind::ema);
    REQUIRE(st.residual_rule.kind == RuleKind::reuse);
    REQUIRE(st.tau == 0.85);
    REQUIRE(st.beta == 0.9);
}

TEST_CASE("strategy names parse into rule pairs") {
    StrategyConfig base;
    StrategyConfig s = strategy_from_name("reuse+ema", base);
    REQUIRE(s.principal_rule.kind == RuleKind::reuse);
    REQUIRE(s.residual_rule.kind == RuleKind::ema);
    REQUIRE(strategy_from_name("taylor:2+reuse", base).principal_rule.taylor_order == 2);
    REQUIRE_THROWS_AS(strategy_from_name("ema", base), std::invalid_argument);
}

TEST_CASE("seeds extraction rejects empty lists") {
    json cfg = canonical_config(json::object());
    cfg["seeds"] = json::array();
    REQUIRE_THROWS_AS(seeds_from(cfg), std::invalid_argument);
}

TEST_CASE("output directory resolution order") {
    json cfg = canonical_config(json::object());
    REQUIRE(resolve_out_dir(cfg, "cli_dir") == std::filesystem::path("cli_dir"));
    cfg["out"] = "config_dir";
    REQUIRE(resolve_out_dir(cfg, "") == std::filesystem::path("config_dir"));
    cfg["out"] = "out";  // the default defers to the environment
    setenv("SVDCACHE_OUT", "env_dir", 1);
    REQUIRE(resolve_out_dir(cfg, "") == std::filesystem::path("env_dir"));
    unsetenv("SVDCACHE_OUT");
    REQUIRE(resolve_out_dir(cfg, "") == std::filesystem::path("out"));
}

TEST_CASE("report serialization is deterministic") {
    SynthConfig sc;
    sc.tokens = 24;
    sc.channels = 16;
    sc.steps = 15;
    sc.blocks = 1;
    sc.planted_rank = 4;
    sc.residual_dirs = 4;
    sc.seed = 77;
    TrajectoryRecord traj = synth_generate(sc);
    CacheSchedule schedule = make_schedule(traj.steps, 3);
    BasisStore store = build_reference_store(traj, schedule, 0.85, BasisMode::per_step);
    StrategyConfig strat;
    RunReport rep = run_cached(traj, schedule, strat, store);

    const std::string json_a = report_to_json(rep).dump(2);
    const std::string csv_a = report_to_csv(rep);
    RunReport rep2 = run_cached(traj, schedule, strat, store);
    REQUIRE(report_to_json(rep2).dump(2) == json_a);
    REQUIRE(report_to_csv(rep2) == csv_a);

    REQUIRE(csv_a.rfind("step,is_compute,rel_error,similarity,principal_energy_fraction\n", 0) ==
            0);
    const json j = report_to_json(rep);
    REQUIRE(j["compute_count"] == schedule.num_compute());
    REQUIRE(j["theoretical_speedup"] == Catch::Approx(3.0).margin(1e-12));
}

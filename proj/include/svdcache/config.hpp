// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: JSON with defaults, dotted-path overrides and
// typed extraction into the library structs.

#pragma once

#include "svdcache/denoiser.hpp"
#include "svdcache/engine.hpp"
#include "svdcache/synth.hpp"

#include "json.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace svdcache {

using json = nlohmann::json;

inline json default_config() {
    return json{
        {"source",
         {{"kind", "synth"},
          {"path", ""},
          {"tokens", 64},
          {"channels", 48},
          {"steps", 101},
          {"blocks", 4},
          {"planted_rank", 8},
          {"energy_split", 0.9},
          {"drift_rate", 0.05},
          {"oscillation_freq", 0.45},
          {"basis_seed", 9001},
          {"residual_dirs", 12},
          {"jitter_share", 0.2},
          {"rotating_share", 0.0075},
          {"jitter_corr_steps", 1.5},
          {"walk_weight", 0.9836},
          {"osc_weight", 0.16},
          {"abar_start", 0.9999},
          {"abar_end", 0.01},
          {"eta", 0.0},
          {"embed_scale", 0.7},
          {"embed_bands", 6},
          {"embed_noise", 1.0},
          {"input_gain", 0.4},
          {"skip_gain", 0.5},
          {"epsilon_scale", 0.1}}},
        {"schedule", {{"interval", 5}}},
        {"strategy",
         {{"principal", "ema"},
          {"residual", "reuse"},
          {"tau", 0.85},
          {"beta", 0.9},
          {"basis_mode", "per_step"}}},
        {"mode", "open_loop"},
        {"basis_dir", ""},
        {"seeds", json::array({1})},
        {"jobs", 1},
        {"out", "out"},
        {"tau_list", json::array({0.85})},
        {"compare",
         {{"strategies", json::array({"ema+reuse", "reuse+reuse", "ema+ema", "taylor:1+reuse"})},
          {"intervals", json::array({5})}}},
        {"analyze", {{"block", 0}}}};
}

namespace detail {

inline void merge_into(json& base, const json& patch) {
    if (!patch.is_object() || !base.is_object()) {
        base = patch;
        return;
    }
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        if (base.contains(it.key())) {
            merge_into(base[it.key()], it.value());
        } else {
            base[it.key()] = it.value();
        }
    }
}

}  // namespace detail

// Defaults overlaid with the user document. Unknown keys are kept.
inline json canonical_config(const json& user) {
    json cfg = default_config();
    detail::merge_into(cfg, user);
    return cfg;
}

inline json load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw std::invalid_argument("config: " + path.string() + ": " + e.what());
    }
    if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
    return j;
}

// Applies one "a.b.c=value" override. The value is parsed as JSON when
// possible and falls back to a plain string.
inline void apply_override(json& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw std::invalid_argument("--set expects key.path=value, got '" + assignment + "'");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;

    json* node = &cfg;
    std::size_t start = 0;
    for (;;) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot - start);
        if (part.empty()) throw std::invalid_argument("--set: empty path segment in '" + key + "'");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        if (!node->is_object() && !node->is_null()) {
            throw std::invalid_argument("--set: '" + part + "' is not an object");
        }
        start = dot + 1;
    }
}

inline SynthConfig synth_config_from(const json& cfg, std::uint64_t seed) {
    const json& s = cfg.at("source");
    SynthConfig c;
    c.tokens = s.at("tokens").get<int>();
    c.channels = s.at("channels").get<int>();
    c.steps = s.at("steps").get<int>();
    c.blocks = s.at("blocks").get<int>();
    c.planted_rank = s.at("planted_rank").get<int>();
    c.energy_split = s.at("energy_split").get<double>();
    c.drift_rate = s.at("drift_rate").get<double>();
    c.oscillation_freq = s.at("oscillation_freq").get<double>();
    c.seed = seed;
    c.basis_seed = s.at("basis_seed").get<std::uint64_t>();
    c.residual_dirs = s.at("residual_dirs").get<int>();
    c.jitter_share = s.at("jitter_share").get<double>();
    c.rotating_share = s.at("rotating_share").get<double>();
    c.jitter_corr_steps = s.at("jitter_corr_steps").get<double>();
    c.walk_weight = s.at("walk_weight").get<double>();
    c.osc_weight = s.at("osc_weight").get<double>();
    validate_synth_config(c);
    return c;
}

inline DenoiserConfig denoiser_config_from(const json& cfg, std::uint64_t seed) {
    const json& s = cfg.at("source");
    DenoiserConfig c;
    c.tokens = s.at("tokens").get<int>();
    c.channels = s.at("channels").get<int>();
    c.blocks = s.at("blocks").get<int>();
    c.steps = s.at("steps").get<int>();
    c.abar_start = s.at("abar_start").get<double>();
    c.abar_end = s.at("abar_end").get<double>();
    c.eta = s.at("eta").get<double>();
    c.embed_scale = s.at("embed_scale").get<double>();
    c.embed_bands = s.at("embed_bands").get<int>();
    c.embed_noise = s.at("embed_noise").get<double>();
    c.input_gain = s.at("input_gain").get<double>();
    c.skip_gain = s.at("skip_gain").get<double>();
    c.epsilon_scale = s.at("epsilon_scale").get<double>();
    c.seed = seed;
    validate_denoiser_config(c);
    return c;
}

inline StrategyConfig strategy_from(const json& strat) {
    StrategyConfig s;
    s.principal_rule = parse_rule(strat.at("principal").get<std::string>());
    s.residual_rule = parse_rule(strat.at("residual").get<std::string>());
    s.tau = strat.at("tau").get<double>();
    s.beta = strat.at("beta").get<double>();
    const std::string mode = strat.at("basis_mode").get<std::string>();
    if (mode == "per_step") {
        s.basis_mode = BasisMode::per_step;
    } else if (mode == "global") {
        s.basis_mode = BasisMode::global;
    } else {
        throw std::invalid_argument("strategy: basis_mode must be per_step|global");
    }
    validate_strategy(s);
    return s;
}

// "ema+reuse" -> principal ema, residual reuse; other knobs from `base`.
inline StrategyConfig strategy_from_name(const std::string& name, const StrategyConfig& base) {
    const auto plus = name.find('+');
    if (plus == std::string::npos) {
        throw std::invalid_argument("strategy name must look like 'principal+residual': " + name);
    }
    StrategyConfig s = base;
    s.principal_rule = parse_rule(name.substr(0, plus));
    s.residual_rule = parse_rule(name.substr(plus + 1));
    return s;
}

inline std::vector<std::uint64_t> seeds_from(const json& cfg) {
    std::vector<std::uint64_t> seeds;
    for (const auto& s : cfg.at("seeds")) seeds.push_back(s.get<std::uint64_t>());
    if (seeds.empty()) throw std::invalid_argument("config: seeds must be nonempty");
    return seeds;
}

// Output directory resolution: --out flag beats config "out" beats
// SVDCACHE_OUT beats "./out".
inline std::filesystem::path resolve_out_dir(const json& cfg, const std::string& cli_out) {
    if (!cli_out.empty()) return cli_out;
    const std::string from_cfg = cfg.at("out").get<std::string>();
    if (from_cfg != "out" && !from_cfg.empty()) return from_cfg;
    if (const char* env = std::getenv("SVDCACHE_OUT"); env != nullptr && *env != '\0') {
        return env;
    }
    return from_cfg.empty() ? "out" : from_cfg;
}

}  // namespace svdcache

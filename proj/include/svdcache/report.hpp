// SPDX-License-Identifier: Apache-2.0
//
// Run-report aggregation and serialization: a JSON summary plus a
// per-step CSV. Output bytes are deterministic for identical reports.

#pragma once

#include "svdcache/engine.hpp"
#include "svdcache/io.hpp"

#include "json.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <string>

namespace svdcache {

struct RunSummary {
    double mean_rel_error = 0.0;  // over all steps; compute steps contribute 0
    double max_rel_error = 0.0;
    double mean_similarity = 0.0;
    double mean_predicted_rel_error = 0.0;  // over predicted steps only
    double compute_fraction = 0.0;
    double theoretical_speedup = 0.0;  // T / |compute steps|
};

inline RunSummary run_summary(const RunReport& report) {
    if (report.steps.empty()) {
        throw std::invalid_argument("run_summary: empty report");
    }
    RunSummary s;
    double err = 0.0, sim = 0.0, pred_err = 0.0;
    int predicted = 0;
    for (const auto& rec : report.steps) {
        err += rec.rel_error;
        sim += rec.similarity;
        s.max_rel_error = std::max(s.max_rel_error, rec.rel_error);
        if (!rec.is_compute) {
            pred_err += rec.rel_error;
            ++predicted;
        }
    }
    const double n = static_cast<double>(report.steps.size());
    s.mean_rel_error = err / n;
    s.mean_similarity = sim / n;
    s.mean_predicted_rel_error = predicted > 0 ? pred_err / predicted : 0.0;
    s.compute_fraction = static_cast<double>(report.compute_count) / n;
    s.theoretical_speedup = n / static_cast<double>(report.compute_count);
    return s;
}

inline nlohmann::json report_to_json(const RunReport& report) {
    const RunSummary s = run_summary(report);
    return nlohmann::json{{"total_steps", report.total_steps},
                          {"interval", report.interval},
                          {"strategy", report.strategy},
                          {"tau", report.tau},
                          {"beta", report.beta},
                          {"basis_mode", report.basis_mode},
                          {"closed_loop", report.closed_loop},
                          {"compute_count", report.compute_count},
                          {"predicted_count", report.predicted_count},
                          {"mean_rel_error", s.mean_rel_error},
                          {"max_rel_error", s.max_rel_error},
                          {"mean_similarity", s.mean_similarity},
                          {"mean_predicted_rel_error", s.mean_predicted_rel_error},
                          {"compute_fraction", s.compute_fraction},
                          {"theoretical_speedup", s.theoretical_speedup},
                          {"final_latent_rel_error", report.final_latent_rel_error}};
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string report_to_csv(const RunReport& report) {
    std::string out = "step,is_compute,rel_error,similarity,principal_energy_fraction\n";
    for (const auto& rec : report.steps) {
        out += std::to_string(rec.step);
        out += rec.is_compute ? ",1," : ",0,";
        out += format_double(rec.rel_error);
        out += ',';
        out += format_double(rec.similarity);
        out += ',';
        out += format_double(rec.principal_energy_fraction);
        out += '\n';
    }
    return out;
}

inline void write_report_files(const RunReport& report, const std::filesystem::path& json_path,
                               const std::filesystem::path& csv_path) {
    atomic_write_file(json_path, report_to_json(report).dump(2) + "\n");
    atomic_write_file(csv_path, report_to_csv(report));
}

}  // namespace svdcache

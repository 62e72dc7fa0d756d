// SPDX-License-Identifier: Apache-2.0
//
// Interval schedule: which timesteps run a full computation and which
// reuse predictions. Step 0 always computes.

#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace svdcache {

struct CacheSchedule {
    int total_steps = 0;             // T
    int interval = 1;                // N
    std::vector<int> compute_steps;  // {0, N, 2N, ...} intersect [0, T)

    bool is_compute(int step) const { return step % interval == 0; }

    // Latest compute step at or before `step`.
    int compute_step_for(int step) const { return (step / interval) * interval; }

    int num_compute() const { return static_cast<int>(compute_steps.size()); }
    int num_predicted() const { return total_steps - num_compute(); }

    // T / ceil(T/N): block-level reduction in full computations.
    double theoretical_speedup() const {
        return static_cast<double>(total_steps) / static_cast<double>(num_compute());
    }
};

inline CacheSchedule make_schedule(int total_steps, int interval) {
    if (total_steps < 1) {
        throw std::invalid_argument("make_schedule: total_steps must be >= 1");
    }
    if (interval < 1 || interval > total_steps) {
        throw std::invalid_argument("make_schedule: interval must be in [1, " +
                                    std::to_string(total_steps) + "]");
    }
    CacheSchedule s;
    s.total_steps = total_steps;
    s.interval = interval;
    for (int t = 0; t < total_steps; t += interval) s.compute_steps.push_back(t);
    return s;
}

}  // namespace svdcache

// SPDX-License-Identifier: Apache-2.0
//
// Temporal predictors for cached subspace components: exponential moving
// average, direct reuse, and polynomial extrapolation over a sliding
// window of past samples.

#pragma once

#include "svdcache/linalg.hpp"

#include <deque>
#include <stdexcept>
#include <utility>

namespace svdcache {

struct EmaState {
    FeatureMatrix state;  // smoothed estimate, valid once initialized
    double beta = 0.9;    // decay in (0, 1)
    long last_step = -1;
    bool initialized = false;
};

inline EmaState make_ema_state(double beta) {
    if (!(beta > 0.0 && beta < 1.0)) {
        throw std::invalid_argument("ema: beta must be in (0, 1)");
    }
    EmaState s;
    s.beta = beta;
    return s;
}

// state <- beta * state + (1 - beta) * observation. The first observation
// initializes the state directly.
inline EmaState ema_update(EmaState s, const FeatureMatrix& f_k, long step) {
    require_finite(f_k, "ema_update");
    if (s.initialized) {
        if (step <= s.last_step) {
            throw std::invalid_argument("ema_update: step must increase");
        }
        if (f_k.rows() != s.state.rows() || f_k.cols() != s.state.cols()) {
            throw std::invalid_argument("ema_update: shape mismatch");
        }
        s.state = s.beta * s.state + (1.0 - s.beta) * f_k;
    } else {
        s.state = f_k;
        s.initialized = true;
    }
    s.last_step = step;
    return s;
}

// Prediction rule: the smoothed state itself stands in for the component
// at upcoming skipped steps.
inline const FeatureMatrix& ema_predict(const EmaState& s) {
    if (!s.initialized) {
        throw std::logic_error("ema_predict: state not initialized");
    }
    return s.state;
}

inline const FeatureMatrix& reuse_predict(const FeatureMatrix& cached) { return cached; }

// Sliding window of (step, feature) samples for polynomial extrapolation.
// Capacity is order + 1; older samples are evicted.
class History {
  public:
    explicit History(int order) : capacity_(order + 1) {
        if (order < 0) throw std::invalid_argument("History: negative order");
    }

    void push(long step, FeatureMatrix f) {
        if (!samples_.empty() && step <= samples_.back().first) {
            throw std::invalid_argument("History: steps must strictly increase");
        }
        samples_.emplace_back(step, std::move(f));
        if (static_cast<int>(samples_.size()) > capacity_) samples_.pop_front();
    }

    std::size_t size() const { return samples_.size(); }
    bool empty() const { return samples_.empty(); }
    long last_step() const { return samples_.empty() ? -1 : samples_.back().first; }
    const std::deque<std::pair<long, FeatureMatrix>>& samples() const { return samples_; }

  private:
    int capacity_;
    std::deque<std::pair<long, FeatureMatrix>> samples_;
};

// Evaluates the unique polynomial through the retained samples at
// target_step, elementwise (Lagrange form). A single sample degenerates
// to direct reuse.
inline FeatureMatrix taylor_predict(const History& h, long target_step) {
    if (h.empty()) {
        throw std::invalid_argument("taylor_predict: empty history");
    }
    if (target_step <= h.last_step()) {
        throw std::invalid_argument("taylor_predict: target must lie beyond the history");
    }
    const auto& s = h.samples();
    const std::size_t n = s.size();
    FeatureMatrix out = FeatureMatrix::Zero(s.front().second.rows(), s.front().second.cols());
    const double x = static_cast<double>(target_step);
    for (std::size_t j = 0; j < n; ++j) {
        const double xj = static_cast<double>(s[j].first);
        double w = 1.0;
        for (std::size_t m = 0; m < n; ++m) {
            if (m == j) continue;
            const double xm = static_cast<double>(s[m].first);
            w *= (x - xm) / (xj - xm);
        }
        out += w * s[j].second;
    }
    return out;
}

}  // namespace svdcache

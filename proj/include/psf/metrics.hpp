#pragma once

// NRMSE and the per-variable / per-horizon error views used for reporting.
// Normalization is per variable by ground-truth range (max - min over the
// evaluated set), averaged over variables.

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "psf/common.hpp"
#include "psf/linalg.hpp"
#include "psf/measurement.hpp"
#include "psf/model.hpp"

namespace psf {

namespace detail {

struct NrmseAccum {
    std::vector<double> sq_err;
    std::vector<double> lo, hi;
    std::size_t count = 0;

    void init(std::size_t dim) {
        sq_err.assign(dim, 0.0);
        lo.assign(dim, std::numeric_limits<double>::infinity());
        hi.assign(dim, -std::numeric_limits<double>::infinity());
    }

    void add(const Vector& truth, const Vector& pred) {
        if (sq_err.empty()) init(truth.size());
        require_same_dim(truth.size(), sq_err.size(), "nrmse dim");
        require_same_dim(truth.size(), pred.size(), "nrmse truth vs pred");
        for (std::size_t i = 0; i < truth.size(); ++i) {
            const double e = truth[i] - pred[i];
            sq_err[i] += e * e;
            lo[i] = std::min(lo[i], truth[i]);
            hi[i] = std::max(hi[i], truth[i]);
        }
        ++count;
    }

    // strict: zero truth range is an error; guarded: normalizer falls back
    // to 1 (plain RMSE) for degenerate variables.
    std::vector<double> per_variable(bool strict) const {
        if (count == 0) throw ValueError("nrmse: empty collection");
        std::vector<double> out(sq_err.size());
        for (std::size_t i = 0; i < sq_err.size(); ++i) {
            const double range = hi[i] - lo[i];
            if (range <= 0.0 && strict)
                throw ValueError("nrmse: zero range in variable " + std::to_string(i));
            const double rmse = std::sqrt(sq_err[i] / static_cast<double>(count));
            out[i] = range > 0.0 ? rmse / range : rmse;
        }
        return out;
    }

    double overall(bool strict) const {
        const std::vector<double> pv = per_variable(strict);
        double s = 0.0;
        for (double v : pv) s += v;
        return s / static_cast<double>(pv.size());
    }
};

}  // namespace detail

// Per variable i: RMSE_i / (max_t truth_i - min_t truth_i); overall is the
// mean over variables. Errors out on a zero-range variable.
inline double nrmse(const std::vector<Vector>& truth, const std::vector<Vector>& pred) {
    require_same_dim(truth.size(), pred.size(), "nrmse collection length");
    if (truth.empty()) throw ValueError("nrmse: empty collection");
    detail::NrmseAccum acc;
    for (std::size_t t = 0; t < truth.size(); ++t) acc.add(truth[t], pred[t]);
    return acc.overall(/*strict=*/true);
}

// ---------------------------------------------------------------------------
// Model evaluation over a segment: slide a (window, target) pair over the
// segment, forecast each window in eval mode, aggregate errors.

struct EvalResult {
    double overall_nrmse = 0.0;
    std::vector<double> per_variable_nrmse;  // 2K
    std::vector<double> per_horizon_nrmse;   // horizon
    std::size_t bus = 0;                     // 1-based, for the traces below
    std::vector<double> bus_trace;           // per-step complex-error magnitude at `bus`
    std::size_t t_future = 0;                // segment index of the snapshot
    Vector snapshot_truth, snapshot_forecast, snapshot_abs_error;
};

namespace detail {

inline void check_segment(const StateSeries& segment, std::size_t l, std::size_t horizon) {
    if (segment.steps() < l + horizon)
        throw ValueError("segment of " + std::to_string(segment.steps()) +
                         " steps too short for seq_len " + std::to_string(l) + " + horizon " +
                         std::to_string(horizon));
}

}  // namespace detail

// Aggregate NRMSE of all forecast steps over all windows of the segment.
// Degenerate truth ranges fall back to plain RMSE so constant slices stay
// evaluable; training and the evaluate command share this path.
inline double evaluate_overall_nrmse(const Model& m, const StateSeries& segment,
                                     std::size_t horizon) {
    const std::size_t l = m.cfg.seq_len;
    detail::check_segment(segment, l, horizon);
    detail::NrmseAccum acc;
    for (std::size_t s = 0; s + l + horizon <= segment.steps(); ++s) {
        const std::vector<Vector> window(segment.states.begin() + s,
                                         segment.states.begin() + s + l);
        const std::vector<Vector> preds = forecast(m, window, horizon);
        for (std::size_t k = 0; k < horizon; ++k) acc.add(segment.states[s + l + k], preds[k]);
    }
    return acc.overall(/*strict=*/false);
}

// Step-k entry aggregates the k-th forecast step across all windows.
inline std::vector<double> horizon_error_profile(const Model& m, const StateSeries& segment,
                                                 std::size_t horizon) {
    const std::size_t l = m.cfg.seq_len;
    detail::check_segment(segment, l, horizon);
    std::vector<detail::NrmseAccum> acc(horizon);
    for (std::size_t s = 0; s + l + horizon <= segment.steps(); ++s) {
        const std::vector<Vector> window(segment.states.begin() + s,
                                         segment.states.begin() + s + l);
        const std::vector<Vector> preds = forecast(m, window, horizon);
        for (std::size_t k = 0; k < horizon; ++k) acc[k].add(segment.states[s + l + k], preds[k]);
    }
    std::vector<double> profile(horizon);
    for (std::size_t k = 0; k < horizon; ++k) profile[k] = acc[k].overall(/*strict=*/false);
    return profile;
}

struct SnapshotError {
    Vector truth, forecast, abs_error; // each 2K
};

// Error of the forecast whose final step lands exactly on segment index
// t_future: window = states[t_future+1-horizon-l .. t_future+1-horizon).
inline SnapshotError snapshot_error(const Model& m, const StateSeries& segment,
                                    std::size_t t_future, std::size_t horizon) {
    const std::size_t l = m.cfg.seq_len;
    if (t_future + 1 < l + horizon || t_future >= segment.steps())
        throw ValueError("t_future " + std::to_string(t_future) + " not reachable; need " +
                         std::to_string(l + horizon - 1) + " <= t < " +
                         std::to_string(segment.steps()));
    const std::size_t origin = t_future + 1 - horizon;
    const std::vector<Vector> window(segment.states.begin() + (origin - l),
                                     segment.states.begin() + origin);
    const std::vector<Vector> preds = forecast(m, window, horizon);
    SnapshotError snap;
    snap.truth = segment.states[t_future];
    snap.forecast = preds[horizon - 1];
    snap.abs_error.resize(snap.truth.size());
    for (std::size_t i = 0; i < snap.truth.size(); ++i)
        snap.abs_error[i] = std::abs(snap.truth[i] - snap.forecast[i]);
    return snap;
}

// Full evaluation bundle for reporting. `bus` is 1-based.
inline EvalResult evaluate_model(const Model& m, const StateSeries& segment, std::size_t horizon,
                                 std::size_t bus, std::size_t t_future) {
    const std::size_t l = m.cfg.seq_len;
    detail::check_segment(segment, l, horizon);
    const std::size_t k_buses = segment.bus_count;
    if (bus < 1 || bus > k_buses) throw ValueError("bus out of range: " + std::to_string(bus));

    EvalResult res;
    res.bus = bus;
    res.t_future = t_future;

    detail::NrmseAccum all;
    std::vector<detail::NrmseAccum> per_step(horizon);
    std::vector<double> bus_sq(horizon, 0.0);
    std::size_t windows = 0;
    for (std::size_t s = 0; s + l + horizon <= segment.steps(); ++s) {
        const std::vector<Vector> window(segment.states.begin() + s,
                                         segment.states.begin() + s + l);
        const std::vector<Vector> preds = forecast(m, window, horizon);
        for (std::size_t k = 0; k < horizon; ++k) {
            const Vector& truth = segment.states[s + l + k];
            all.add(truth, preds[k]);
            per_step[k].add(truth, preds[k]);
            const double er = truth[bus - 1] - preds[k][bus - 1];
            const double ei = truth[k_buses + bus - 1] - preds[k][k_buses + bus - 1];
            bus_sq[k] += er * er + ei * ei;
        }
        ++windows;
    }
    res.per_variable_nrmse = all.per_variable(/*strict=*/false);
    res.overall_nrmse = all.overall(/*strict=*/false);
    res.per_horizon_nrmse.resize(horizon);
    res.bus_trace.resize(horizon);
    for (std::size_t k = 0; k < horizon; ++k) {
        res.per_horizon_nrmse[k] = per_step[k].overall(/*strict=*/false);
        res.bus_trace[k] = std::sqrt(bus_sq[k] / static_cast<double>(windows));
    }

    const SnapshotError snap = snapshot_error(m, segment, t_future, horizon);
    res.snapshot_truth = snap.truth;
    res.snapshot_forecast = snap.forecast;
    res.snapshot_abs_error = snap.abs_error;
    return res;
}

}  // namespace psf

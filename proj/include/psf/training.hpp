#pragma once

// Least-squares objective, Adam, chronological dataset splitting, the epoch
// loop with patience-based early stopping, and the finite-difference
// gradient-verification harness.

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "psf/common.hpp"
#include "psf/linalg.hpp"
#include "psf/measurement.hpp"
#include "psf/metrics.hpp"
#include "psf/model.hpp"

namespace psf {

// L = sum over steps and components of 1/2 (y - yhat)^2
inline double least_squares_loss(const std::vector<Vector>& targets,
                                 const std::vector<Vector>& predictions) {
    require_same_dim(targets.size(), predictions.size(), "loss sequence length");
    double loss = 0.0;
    for (std::size_t t = 0; t < targets.size(); ++t) {
        require_same_dim(targets[t].size(), predictions[t].size(), "loss step dim");
        for (std::size_t i = 0; i < targets[t].size(); ++i) {
            const double e = targets[t][i] - predictions[t][i];
            loss += 0.5 * e * e;
        }
    }
    return loss;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t t = 0;
    std::vector<std::vector<double>> m, v; // first/second moments per tensor

    void init_like(const std::vector<TensorView>& views) {
        t = 0;
        m.clear();
        v.clear();
        for (const TensorView& view : views) {
            m.emplace_back(view.size(), 0.0);
            v.emplace_back(view.size(), 0.0);
        }
    }
};

// Standard Adam update with bias correction; increments the step counter.
inline void adam_step(std::vector<TensorView>& params, const std::vector<TensorView>& grads,
                      AdamState& s) {
    require_same_dim(params.size(), grads.size(), "adam tensor count");
    if (s.m.size() != params.size()) throw ShapeError("adam state not initialized for params");
    ++s.t;
    const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
    const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        require_same_dim(params[i].size(), grads[i].size(), "adam tensor size");
        std::vector<double>& p = *params[i].data;
        const std::vector<double>& g = *grads[i].data;
        std::vector<double>& mi = s.m[i];
        std::vector<double>& vi = s.v[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            mi[j] = s.beta1 * mi[j] + (1.0 - s.beta1) * g[j];
            vi[j] = s.beta2 * vi[j] + (1.0 - s.beta2) * g[j] * g[j];
            const double mhat = mi[j] / bc1;
            const double vhat = vi[j] / bc2;
            p[j] -= s.lr * mhat / (std::sqrt(vhat) + s.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Dataset protocol

struct SplitSpec {
    double train_frac = 0.75;
    double val_frac = 0.05;
    double test_frac = 0.20;

    void validate() const {
        if (train_frac <= 0.0 || val_frac <= 0.0 || test_frac <= 0.0)
            throw ValueError("split fractions must be positive");
        if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-12)
            throw ValueError("split fractions must sum to 1");
    }
};

struct DataSplit {
    StateSeries train, val, test;
};

// Contiguous chronological split, floor on boundaries, no shuffling.
inline DataSplit split_dataset(const StateSeries& series, const SplitSpec& spec) {
    spec.validate();
    const std::size_t total = series.steps();
    const std::size_t n_train = static_cast<std::size_t>(total * spec.train_frac);
    const std::size_t n_val = static_cast<std::size_t>(total * spec.val_frac);
    if (n_train == 0 || n_val == 0 || n_train + n_val >= total)
        throw ValueError("series of " + std::to_string(total) + " steps too short to split");
    DataSplit split;
    split.train.bus_count = split.val.bus_count = split.test.bus_count = series.bus_count;
    split.train.states.assign(series.states.begin(), series.states.begin() + n_train);
    split.val.states.assign(series.states.begin() + n_train,
                            series.states.begin() + n_train + n_val);
    split.test.states.assign(series.states.begin() + n_train + n_val, series.states.end());
    return split;
}

struct Example {
    std::vector<Vector> window; // l states
    std::vector<Vector> target; // horizon states
};

// One example per start index s in 0..T-l-horizon.
inline std::vector<Example> make_examples(const StateSeries& segment, std::size_t l,
                                          std::size_t horizon) {
    if (l < 1 || horizon < 1) throw ValueError("seq_len and horizon must be >= 1");
    if (segment.steps() < l + horizon)
        throw ValueError("segment of " + std::to_string(segment.steps()) +
                         " steps too short for seq_len " + std::to_string(l) + " + horizon " +
                         std::to_string(horizon));
    std::vector<Example> out;
    out.reserve(segment.steps() - l - horizon + 1);
    for (std::size_t s = 0; s + l + horizon <= segment.steps(); ++s) {
        Example ex;
        ex.window.assign(segment.states.begin() + s, segment.states.begin() + s + l);
        ex.target.assign(segment.states.begin() + s + l,
                         segment.states.begin() + s + l + horizon);
        out.push_back(std::move(ex));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainOptions {
    std::size_t epochs = 100;
    std::size_t batch_size = 32;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t patience = 10;
    bool teacher_forcing = false;
    double clip_norm = 0.0; // 0 = no clipping
    std::function<void(std::size_t epoch, double train_loss, double val_nrmse)> on_epoch;
};

struct TrainReport {
    std::vector<double> epoch_train_loss;
    std::vector<double> epoch_val_nrmse;
    std::size_t stopped_epoch = 0;
    std::size_t best_epoch = 0;
    double test_nrmse = 0.0;
    std::uint64_t seed = 0;
    double wall_clock_seconds = 0.0;
    std::size_t parameter_count = 0;
};

namespace detail {

inline void scale_grads(std::vector<TensorView>& grads, double factor) {
    for (TensorView& g : grads)
        for (double& v : *g.data) v *= factor;
}

inline double grad_norm(const std::vector<TensorView>& grads) {
    double sq = 0.0;
    for (const TensorView& g : grads)
        for (double v : *g.data) sq += v * v;
    return std::sqrt(sq);
}

inline void accumulate(std::vector<TensorView>& into, const std::vector<TensorView>& from) {
    for (std::size_t i = 0; i < into.size(); ++i) {
        std::vector<double>& a = *into[i].data;
        const std::vector<double>& b = *from[i].data;
        for (std::size_t j = 0; j < a.size(); ++j) a[j] += b[j];
    }
}

inline std::vector<std::vector<double>> snapshot_params(const std::vector<TensorView>& views) {
    std::vector<std::vector<double>> snap;
    snap.reserve(views.size());
    for (const TensorView& v : views) snap.push_back(*v.data);
    return snap;
}

inline void restore_params(std::vector<TensorView>& views,
                           const std::vector<std::vector<double>>& snap) {
    for (std::size_t i = 0; i < views.size(); ++i) *views[i].data = snap[i];
}

}  // namespace detail

// Seeded epoch loop: shuffle, batch-mean gradients, Adam, per-epoch
// validation NRMSE with patience-based early stopping, best-parameter
// restore, final test NRMSE. Deterministic in `seed`.
inline std::pair<Model, TrainReport> train(const ModelConfig& cfg, const StateSeries& data,
                                           const SplitSpec& split_spec, const TrainOptions& opts,
                                           std::uint64_t seed) {
    const auto t_start = std::chrono::steady_clock::now();
    cfg.validate();
    const DataSplit split = split_dataset(data, split_spec);
    const std::vector<Example> train_ex = make_examples(split.train, cfg.seq_len, cfg.horizon);
    make_examples(split.val, cfg.seq_len, cfg.horizon);  // validate segment lengths up front
    make_examples(split.test, cfg.seq_len, cfg.horizon);
    if (opts.batch_size < 1) throw ValueError("batch_size must be >= 1");

    Model model = build_model(cfg);
    std::vector<TensorView> params = param_views(model);

    AdamState adam;
    adam.lr = opts.lr;
    adam.beta1 = opts.beta1;
    adam.beta2 = opts.beta2;
    adam.eps = opts.eps;
    adam.init_like(params);

    TrainReport report;
    report.seed = seed;
    report.parameter_count = parameter_count(model);

    Rng rng(derive_seed(seed, 0x747261696eULL)); // "train"
    std::vector<std::size_t> order(train_ex.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    double best_val = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> best_params = detail::snapshot_params(params);
    std::size_t since_best = 0;

    for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
        shuffle(order, rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
            const std::size_t end = std::min(start + opts.batch_size, order.size());
            ModelGrads batch(model);
            std::vector<TensorView> batch_views = grad_views(batch, model);
            for (std::size_t i = start; i < end; ++i) {
                const Example& ex = train_ex[order[i]];
                ForwardOptions fopt;
                fopt.mode = DropoutMode::train;
                if (cfg.dropout_rate > 0.0) fopt.dropout_rng = &rng;
                if (opts.teacher_forcing) fopt.teacher = &ex.target;
                ModelCache cache;
                model_forward(model, ex.window, cfg.horizon, fopt, cache);
                epoch_loss += least_squares_loss(ex.target, cache.predictions);
                ModelGrads g = model_backward_cached(model, cache, ex.target);
                std::vector<TensorView> gv = grad_views(g, model);
                detail::accumulate(batch_views, gv);
            }
            detail::scale_grads(batch_views, 1.0 / static_cast<double>(end - start));
            if (opts.clip_norm > 0.0) {
                const double norm = detail::grad_norm(batch_views);
                if (norm > opts.clip_norm)
                    detail::scale_grads(batch_views, opts.clip_norm / norm);
            }
            adam_step(params, batch_views, adam);
        }
        report.epoch_train_loss.push_back(epoch_loss / static_cast<double>(train_ex.size()));

        const double val = evaluate_overall_nrmse(model, split.val, cfg.horizon);
        report.epoch_val_nrmse.push_back(val);
        report.stopped_epoch = epoch;
        if (opts.on_epoch) opts.on_epoch(epoch, report.epoch_train_loss.back(), val);
        if (val < best_val) {
            best_val = val;
            report.best_epoch = epoch;
            best_params = detail::snapshot_params(params);
            since_best = 0;
        } else if (++since_best >= opts.patience) {
            break;
        }
    }

    detail::restore_params(params, best_params);
    report.test_nrmse = evaluate_overall_nrmse(model, split.test, cfg.horizon);
    report.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return {std::move(model), std::move(report)};
}

// ---------------------------------------------------------------------------
// Finite-difference gradient verification

// Central finite differences of the total least-squares loss against the
// analytic gradient of every scalar parameter, over `trials` seeded random
// configurations. Returns the worst relative error, with denominator
// max(|analytic|, |numeric|, 1e-8). Dropout is disabled: the check compares
// the deterministic path.
//
// Coordinates whose base-step estimate disagrees are re-estimated at 10x and
// 100x the step: a near-zero gradient sits below the cancellation noise of
// the base step. Only the numeric side is refined; a wrong analytic gradient
// fails at every step size.
inline double gradcheck(const ModelConfig& cfg_in, double step, std::size_t trials,
                        std::uint64_t seed) {
    ModelConfig cfg = cfg_in;
    cfg.dropout_rate = 0.0;
    double worst = 0.0;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        cfg.seed = derive_seed(seed, 0x6763666700ULL + trial); // "gcfg"
        Model model = build_model(cfg);
        Rng rng(derive_seed(seed, 0x6764617461ULL + trial)); // "gdata"
        std::vector<Vector> window(cfg.seq_len, Vector(cfg.input_dim));
        for (Vector& x : window)
            for (double& v : x) v = rng.uniform(-1.0, 1.0);
        std::vector<Vector> targets(cfg.horizon, Vector(cfg.input_dim));
        for (Vector& y : targets)
            for (double& v : y) v = rng.uniform(-1.0, 1.0);

        ModelGrads analytic = model_backward(model, window, targets);
        std::vector<TensorView> avs = grad_views(analytic, model);
        std::vector<TensorView> pvs = param_views(model);
        for (std::size_t vi = 0; vi < pvs.size(); ++vi) {
            std::vector<double>& p = *pvs[vi].data;
            const std::vector<double>& a = *avs[vi].data;
            for (std::size_t j = 0; j < p.size(); ++j) {
                const double saved = p[j];
                double err = std::numeric_limits<double>::infinity();
                for (const double h : {step, 10.0 * step, 100.0 * step}) {
                    p[j] = saved + h;
                    const double up =
                        least_squares_loss(targets, forecast(model, window, cfg.horizon));
                    p[j] = saved - h;
                    const double dn =
                        least_squares_loss(targets, forecast(model, window, cfg.horizon));
                    p[j] = saved;
                    const double numeric = (up - dn) / (2.0 * h);
                    const double denom = std::max({std::abs(a[j]), std::abs(numeric), 1e-8});
                    err = std::min(err, std::abs(a[j] - numeric) / denom);
                    if (err < 1e-6) break;
                }
                worst = std::max(worst, err);
            }
        }
    }
    return worst;
}

}  // namespace psf

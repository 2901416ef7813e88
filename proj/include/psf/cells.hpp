#pragma once

// Recurrent and convolutional cells with hand-derived backward passes.
//
// GRU forward, per step:
//   z = sigmoid(W_zx x + W_zh h_prev + b_z)
//   r = sigmoid(W_rx x + W_rh h_prev + b_r)
//   hc = tanh(W_h (r . h_prev) + W_x x + b)
//   h = (1 - z) . h_prev + z . hc
//
// The backward pass reverses these exactly. Every parameter and input
// gradient below is covered by central-finite-difference checks in the test
// suites.

#include <cstddef>
#include <vector>

#include "psf/common.hpp"
#include "psf/linalg.hpp"

namespace psf {

// ---------------------------------------------------------------------------
// Parameter blocks

struct RnnParams {
    Matrix w; // n x n, hidden-to-hidden
    Matrix u; // n x d, input-to-hidden
    Vector b; // n
    Activation nonlinearity = Activation::tanh;

    std::size_t hidden() const { return w.rows; }
    std::size_t input() const { return u.cols; }
};

struct GruParams {
    Matrix w_zx, w_rx, w_x; // n x d
    Matrix w_zh, w_rh, w_h; // n x n
    Vector b_z, b_r, b;     // n

    std::size_t hidden() const { return w_zh.rows; }
    std::size_t input() const { return w_zx.cols; }
};

// Linear readout. For the bidirectional cell op, w_bwd maps the reverse
// hidden sequence; unidirectional use leaves it empty.
struct ReadoutParams {
    Matrix w_fwd; // out x n
    Matrix w_bwd; // out x n or empty
    Vector b;     // out

    std::size_t output() const { return w_fwd.rows; }
};

struct ConvParams {
    std::vector<Matrix> filters; // F kernels, each kernel_len x in_channels
    Vector biases;               // F
    std::size_t stride = 1;
    Activation nonlinearity = Activation::relu;

    std::size_t filter_count() const { return filters.size(); }
    std::size_t kernel_len() const { return filters.empty() ? 0 : filters[0].rows; }
    std::size_t in_channels() const { return filters.empty() ? 0 : filters[0].cols; }
};

// ---------------------------------------------------------------------------
// Gradient blocks, shape-congruent with their parameter blocks

struct RnnGrads {
    Matrix w, u;
    Vector b;

    explicit RnnGrads(const RnnParams& p)
        : w(p.w.rows, p.w.cols), u(p.u.rows, p.u.cols), b(p.b.size(), 0.0) {}
};

struct GruGrads {
    Matrix w_zx, w_rx, w_x, w_zh, w_rh, w_h;
    Vector b_z, b_r, b;

    explicit GruGrads(const GruParams& p)
        : w_zx(p.w_zx.rows, p.w_zx.cols), w_rx(p.w_rx.rows, p.w_rx.cols),
          w_x(p.w_x.rows, p.w_x.cols), w_zh(p.w_zh.rows, p.w_zh.cols),
          w_rh(p.w_rh.rows, p.w_rh.cols), w_h(p.w_h.rows, p.w_h.cols),
          b_z(p.b_z.size(), 0.0), b_r(p.b_r.size(), 0.0), b(p.b.size(), 0.0) {}
};

struct ReadoutGrads {
    Matrix w_fwd, w_bwd;
    Vector b;

    explicit ReadoutGrads(const ReadoutParams& p)
        : w_fwd(p.w_fwd.rows, p.w_fwd.cols), w_bwd(p.w_bwd.rows, p.w_bwd.cols),
          b(p.b.size(), 0.0) {}
};

struct ConvGrads {
    std::vector<Matrix> filters;
    Vector biases;

    explicit ConvGrads(const ConvParams& p) : biases(p.biases.size(), 0.0) {
        filters.reserve(p.filters.size());
        for (const Matrix& f : p.filters) filters.emplace_back(f.rows, f.cols);
    }
};

// ---------------------------------------------------------------------------
// RNN

struct RnnStepCache {
    Vector x, h_prev, h, dphi; // dphi = phi'(pre-activation)
};

// h = phi(W h_prev + U x + b)
inline Vector rnn_step(const RnnParams& p, const Vector& h_prev, const Vector& x,
                       RnnStepCache* cache = nullptr) {
    require_same_dim(p.w.cols, h_prev.size(), "rnn_step h_prev");
    require_same_dim(p.u.cols, x.size(), "rnn_step x");
    Vector pre = matvec(p.w, h_prev);
    matvec_add(p.u, x, pre);
    add_in_place(pre, p.b);
    Vector h, dphi;
    activation(p.nonlinearity, pre, h, dphi);
    if (cache) *cache = {x, h_prev, h, dphi};
    return h;
}

inline void rnn_step_backward(const RnnParams& p, const RnnStepCache& c, const Vector& dh,
                              RnnGrads& g, Vector& dh_prev, Vector& dx) {
    Vector da = hadamard(dh, c.dphi);
    outer_add(g.w, da, c.h_prev);
    outer_add(g.u, da, c.x);
    add_in_place(g.b, da);
    dh_prev = matvec_t(p.w, da);
    dx = matvec_t(p.u, da);
}

struct RnnScanCache {
    std::vector<RnnStepCache> steps;
};

inline std::vector<Vector> rnn_scan(const RnnParams& p, const std::vector<Vector>& xs,
                                    const Vector& h0, RnnScanCache* cache = nullptr) {
    if (cache) cache->steps.resize(xs.size());
    std::vector<Vector> hs(xs.size());
    Vector h = h0;
    for (std::size_t t = 0; t < xs.size(); ++t) {
        h = rnn_step(p, h, xs[t], cache ? &cache->steps[t] : nullptr);
        hs[t] = h;
    }
    return hs;
}

// dH[t] is the upstream gradient on h_t; returns dX and the gradient on h0.
inline Vector rnn_scan_backward(const RnnParams& p, const RnnScanCache& cache,
                                const std::vector<Vector>& dH, RnnGrads& g,
                                std::vector<Vector>& dX) {
    const std::size_t steps = cache.steps.size();
    require_same_dim(steps, dH.size(), "rnn_scan_backward dH");
    dX.resize(steps);
    Vector dh_next(p.hidden(), 0.0);
    for (std::size_t t = steps; t-- > 0;) {
        Vector dh = dH[t];
        add_in_place(dh, dh_next);
        rnn_step_backward(p, cache.steps[t], dh, g, dh_next, dX[t]);
    }
    return dh_next;
}

// ---------------------------------------------------------------------------
// GRU

// Saved per-step activations; dz/dr/dth are the gate nonlinearity derivatives
// at the pre-activations (the d-sigma and d-tanh terms of the backward pass).
struct GruStepCache {
    Vector x, h_prev, z, r, hc, h;
    Vector dz, dr, dth;
};

inline Vector gru_step(const GruParams& p, const Vector& h_prev, const Vector& x,
                       GruStepCache* cache = nullptr) {
    require_same_dim(p.w_zh.cols, h_prev.size(), "gru_step h_prev");
    require_same_dim(p.w_zx.cols, x.size(), "gru_step x");

    Vector az = matvec(p.w_zx, x);
    matvec_add(p.w_zh, h_prev, az);
    add_in_place(az, p.b_z);
    Vector z, dz;
    activation(Activation::sigmoid, az, z, dz);

    Vector ar = matvec(p.w_rx, x);
    matvec_add(p.w_rh, h_prev, ar);
    add_in_place(ar, p.b_r);
    Vector r, dr;
    activation(Activation::sigmoid, ar, r, dr);

    Vector ah = matvec(p.w_h, hadamard(r, h_prev));
    matvec_add(p.w_x, x, ah);
    add_in_place(ah, p.b);
    Vector hc, dth;
    activation(Activation::tanh, ah, hc, dth);

    const std::size_t n = h_prev.size();
    Vector h(n);
    for (std::size_t i = 0; i < n; ++i) h[i] = (1.0 - z[i]) * h_prev[i] + z[i] * hc[i];

    if (cache) *cache = {x, h_prev, z, r, hc, h, dz, dr, dth};
    return h;
}

// Single-step backward. dh is the full upstream gradient on h_t; accumulates
// parameter gradients and emits the gradients on h_{t-1} and x_t.
inline void gru_step_backward(const GruParams& p, const GruStepCache& c, const Vector& dh,
                              GruGrads& g, Vector& dh_prev, Vector& dx) {
    const std::size_t n = dh.size();

    // h = (1-z) . h_prev + z . hc
    Vector dah(n), daz(n);
    dh_prev.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        dah[i] = dh[i] * c.z[i] * c.dth[i];                      // through hc
        daz[i] = dh[i] * (c.hc[i] - c.h_prev[i]) * c.dz[i];      // through z
        dh_prev[i] = dh[i] * (1.0 - c.z[i]);                     // direct
    }

    // hc = tanh(W_h (r . h_prev) + W_x x + b)
    outer_add(g.w_h, dah, hadamard(c.r, c.h_prev));
    outer_add(g.w_x, dah, c.x);
    add_in_place(g.b, dah);
    Vector drh = matvec_t(p.w_h, dah); // gradient on (r . h_prev)
    Vector dar(n);
    for (std::size_t i = 0; i < n; ++i) {
        dar[i] = drh[i] * c.h_prev[i] * c.dr[i];
        dh_prev[i] += drh[i] * c.r[i];
    }

    // gate pre-activations
    outer_add(g.w_rx, dar, c.x);
    outer_add(g.w_rh, dar, c.h_prev);
    add_in_place(g.b_r, dar);
    outer_add(g.w_zx, daz, c.x);
    outer_add(g.w_zh, daz, c.h_prev);
    add_in_place(g.b_z, daz);
    matvec_t_add(p.w_rh, dar, dh_prev);
    matvec_t_add(p.w_zh, daz, dh_prev);

    dx = matvec_t(p.w_x, dah);
    matvec_t_add(p.w_rx, dar, dx);
    matvec_t_add(p.w_zx, daz, dx);
}

struct GruScanCache {
    std::vector<GruStepCache> steps;
};

inline std::vector<Vector> gru_scan(const GruParams& p, const std::vector<Vector>& xs,
                                    const Vector& h0, GruScanCache* cache = nullptr) {
    if (cache) cache->steps.resize(xs.size());
    std::vector<Vector> hs(xs.size());
    Vector h = h0;
    for (std::size_t t = 0; t < xs.size(); ++t) {
        h = gru_step(p, h, xs[t], cache ? &cache->steps[t] : nullptr);
        hs[t] = h;
    }
    return hs;
}

inline Vector gru_scan_backward(const GruParams& p, const GruScanCache& cache,
                                const std::vector<Vector>& dH, GruGrads& g,
                                std::vector<Vector>& dX) {
    const std::size_t steps = cache.steps.size();
    require_same_dim(steps, dH.size(), "gru_scan_backward dH");
    dX.resize(steps);
    Vector dh_next(p.hidden(), 0.0);
    for (std::size_t t = steps; t-- > 0;) {
        Vector dh = dH[t];
        add_in_place(dh, dh_next);
        gru_step_backward(p, cache.steps[t], dh, g, dh_next, dX[t]);
    }
    return dh_next;
}

// ---------------------------------------------------------------------------
// Unidirectional GRU layer with per-step readout, least-squares loss

struct GruCache {
    GruScanCache scan;
    std::vector<Vector> outputs; // y_hat per step
};

// Forward over a whole sequence from h0 = 0, with y_hat_t = W h_t + b.
inline std::vector<Vector> gru_forward(const GruParams& p, const ReadoutParams& ro,
                                       const std::vector<Vector>& xs, GruCache* cache = nullptr) {
    std::vector<Vector> hs =
        gru_scan(p, xs, Vector(p.hidden(), 0.0), cache ? &cache->scan : nullptr);
    std::vector<Vector> ys(hs.size());
    for (std::size_t t = 0; t < hs.size(); ++t) {
        ys[t] = matvec(ro.w_fwd, hs[t]);
        add_in_place(ys[t], ro.b);
    }
    if (cache) cache->outputs = ys;
    return ys;
}

struct GruBackwardResult {
    GruGrads cell;
    ReadoutGrads readout;
    std::vector<Vector> dX;

    GruBackwardResult(const GruParams& p, const ReadoutParams& ro) : cell(p), readout(ro) {}
};

// Backward for loss sum_t 1/2 |y_t - y_hat_t|^2 through the readout and the
// recurrence. Bias gradients ride along with their weight matrices.
inline GruBackwardResult gru_backward(const GruParams& p, const ReadoutParams& ro,
                                      const GruCache& cache, const std::vector<Vector>& targets) {
    const std::size_t steps = cache.scan.steps.size();
    require_same_dim(steps, targets.size(), "gru_backward targets");
    GruBackwardResult res(p, ro);
    std::vector<Vector> dH(steps);
    for (std::size_t t = 0; t < steps; ++t) {
        require_same_dim(targets[t].size(), cache.outputs[t].size(), "gru_backward target dim");
        Vector dy(targets[t].size());
        for (std::size_t i = 0; i < dy.size(); ++i) dy[i] = cache.outputs[t][i] - targets[t][i];
        outer_add(res.readout.w_fwd, dy, cache.scan.steps[t].h);
        add_in_place(res.readout.b, dy);
        dH[t] = matvec_t(ro.w_fwd, dy); // delta
    }
    gru_scan_backward(p, cache.scan, dH, res.cell, res.dX);
    return res;
}

// ---------------------------------------------------------------------------
// Bidirectional GRU

struct BiGruCache {
    GruScanCache fwd;
    GruScanCache bwd;              // over the reversed sequence
    std::vector<Vector> outputs;
};

// Forward scan t = 1..T and backward scan t = T..1; per-step output
// o_t = W_fwd h_fwd_t + W_bwd h_bwd_t + b.
inline std::vector<Vector> bigru_forward(const GruParams& fwd, const GruParams& bwd,
                                         const ReadoutParams& ro, const std::vector<Vector>& xs,
                                         BiGruCache* cache = nullptr) {
    if (xs.empty()) throw ValueError("bigru_forward: empty sequence");
    const std::size_t steps = xs.size();
    std::vector<Vector> rev(xs.rbegin(), xs.rend());
    std::vector<Vector> hf =
        gru_scan(fwd, xs, Vector(fwd.hidden(), 0.0), cache ? &cache->fwd : nullptr);
    std::vector<Vector> hb =
        gru_scan(bwd, rev, Vector(bwd.hidden(), 0.0), cache ? &cache->bwd : nullptr);

    std::vector<Vector> ys(steps);
    for (std::size_t t = 0; t < steps; ++t) {
        ys[t] = matvec(ro.w_fwd, hf[t]);
        matvec_add(ro.w_bwd, hb[steps - 1 - t], ys[t]);
        add_in_place(ys[t], ro.b);
    }
    if (cache) cache->outputs = ys;
    return ys;
}

struct BiGruBackwardResult {
    GruGrads fwd;
    GruGrads bwd;
    ReadoutGrads readout;
    std::vector<Vector> dX;

    BiGruBackwardResult(const GruParams& f, const GruParams& b, const ReadoutParams& ro)
        : fwd(f), bwd(b), readout(ro) {}
};

inline BiGruBackwardResult bigru_backward(const GruParams& fwd, const GruParams& bwd,
                                          const ReadoutParams& ro, const BiGruCache& cache,
                                          const std::vector<Vector>& targets) {
    const std::size_t steps = cache.fwd.steps.size();
    require_same_dim(steps, targets.size(), "bigru_backward targets");
    BiGruBackwardResult res(fwd, bwd, ro);

    std::vector<Vector> dHf(steps), dHb(steps); // dHb indexed in scan (reversed) order
    for (std::size_t t = 0; t < steps; ++t) {
        Vector dy(targets[t].size());
        for (std::size_t i = 0; i < dy.size(); ++i) dy[i] = cache.outputs[t][i] - targets[t][i];
        const Vector& h_f = cache.fwd.steps[t].h;
        const Vector& h_b = cache.bwd.steps[steps - 1 - t].h;
        outer_add(res.readout.w_fwd, dy, h_f);
        outer_add(res.readout.w_bwd, dy, h_b);
        add_in_place(res.readout.b, dy);
        dHf[t] = matvec_t(ro.w_fwd, dy);
        dHb[steps - 1 - t] = matvec_t(ro.w_bwd, dy);
    }

    std::vector<Vector> dXf, dXr;
    gru_scan_backward(fwd, cache.fwd, dHf, res.fwd, dXf);
    gru_scan_backward(bwd, cache.bwd, dHb, res.bwd, dXr);
    res.dX = std::move(dXf);
    for (std::size_t t = 0; t < steps; ++t) add_in_place(res.dX[t], dXr[steps - 1 - t]);
    return res;
}

// ---------------------------------------------------------------------------
// 1D convolution over a sequence of vectors (valid, no padding)

inline std::size_t conv1d_output_len(std::size_t seq_len, std::size_t kernel_len,
                                     std::size_t stride) {
    if (seq_len < kernel_len)
        throw ValueError("conv1d: sequence length " + std::to_string(seq_len) +
                         " shorter than kernel " + std::to_string(kernel_len));
    return (seq_len - kernel_len) / stride + 1;
}

struct ConvStepCache {
    Vector dphi; // F, nonlinearity derivative at the pre-activation
};

struct ConvCache {
    std::vector<Vector> inputs;
    std::vector<ConvStepCache> steps;
};

// One output position: filters applied to window[0..kernel_len).
inline Vector conv1d_window(const ConvParams& p, const Vector* window,
                            ConvStepCache* cache = nullptr) {
    const std::size_t f_count = p.filter_count();
    Vector pre(f_count);
    for (std::size_t f = 0; f < f_count; ++f) {
        const Matrix& ker = p.filters[f];
        double acc = p.biases[f];
        for (std::size_t tau = 0; tau < ker.rows; ++tau)
            acc += dot(ker.row(tau), window[tau].data(), ker.cols);
        pre[f] = acc;
    }
    Vector out, dphi;
    activation(p.nonlinearity, pre, out, dphi);
    if (cache) cache->dphi = std::move(dphi);
    return out;
}

// output_t[f] = phi(sum_tau w_f[tau] . x[t*stride + tau] + b_f); the same
// filter applied at every position (weight sharing).
inline std::vector<Vector> conv1d_forward(const ConvParams& p, const std::vector<Vector>& xs,
                                          ConvCache* cache = nullptr) {
    if (p.stride < 1) throw ValueError("conv1d: stride must be >= 1");
    for (const Vector& x : xs)
        require_same_dim(p.in_channels(), x.size(), "conv1d input channels");
    const std::size_t out_len = conv1d_output_len(xs.size(), p.kernel_len(), p.stride);
    if (cache) {
        cache->inputs = xs;
        cache->steps.resize(out_len);
    }
    std::vector<Vector> out(out_len);
    for (std::size_t t = 0; t < out_len; ++t)
        out[t] = conv1d_window(p, xs.data() + t * p.stride, cache ? &cache->steps[t] : nullptr);
    return out;
}

// Backward for one output position; scatters into dWindow[0..kernel_len).
inline void conv1d_window_backward(const ConvParams& p, const ConvStepCache& c,
                                   const Vector* window, const Vector& dOut, ConvGrads& g,
                                   Vector* dWindow) {
    for (std::size_t f = 0; f < p.filter_count(); ++f) {
        const double da = dOut[f] * c.dphi[f];
        g.biases[f] += da;
        Matrix& gk = g.filters[f];
        const Matrix& ker = p.filters[f];
        for (std::size_t tau = 0; tau < ker.rows; ++tau) {
            const double* xrow = window[tau].data();
            double* grow = gk.row(tau);
            const double* krow = ker.row(tau);
            double* drow = dWindow ? dWindow[tau].data() : nullptr;
            for (std::size_t i = 0; i < ker.cols; ++i) {
                grow[i] += da * xrow[i];
                if (drow) drow[i] += da * krow[i];
            }
        }
    }
}

// Filter gradients sum contributions from every output position.
inline std::vector<Vector> conv1d_backward(const ConvParams& p, const ConvCache& cache,
                                           const std::vector<Vector>& dOut, ConvGrads& g) {
    require_same_dim(cache.steps.size(), dOut.size(), "conv1d_backward dOut");
    std::vector<Vector> dX(cache.inputs.size(), Vector(p.in_channels(), 0.0));
    for (std::size_t t = 0; t < dOut.size(); ++t)
        conv1d_window_backward(p, cache.steps[t], cache.inputs.data() + t * p.stride, dOut[t], g,
                               dX.data() + t * p.stride);
    return dX;
}

// ---------------------------------------------------------------------------
// Dropout

// Inverted dropout: survivors scaled by 1/(1-rate) so eval needs no rescale.
inline Vector dropout_mask(std::size_t n, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw ValueError("dropout rate must be in [0, 1)");
    Vector mask(n);
    const double keep_scale = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < n; ++i)
        mask[i] = rng.uniform01() < rate ? 0.0 : keep_scale;
    return mask;
}

enum class DropoutMode { train, eval };

inline Vector dropout_apply(const Vector& v, double rate, std::uint64_t seed, DropoutMode mode) {
    if (rate < 0.0 || rate >= 1.0) throw ValueError("dropout rate must be in [0, 1)");
    if (mode == DropoutMode::eval || rate == 0.0) return v;
    Rng rng(derive_seed(seed, 0x64726f70ULL)); // "drop"
    return hadamard(v, dropout_mask(v.size(), rate, rng));
}

}  // namespace psf

#pragma once

// Sequence-to-sequence forecaster. The encoder consumes a window of length
// seq_len (Conv1D front end first when configured, then the recurrent stack);
// the decode phase continues the same stack autoregressively: each step feeds
// the previous prediction back in as input, the linear readout maps the top
// hidden state to the next state vector.
//
// Bidirectional layers scan both time directions during encoding and merge by
// elementwise sum, so every layer keeps hidden width n and the decode phase
// can run the forward-direction cells alone, each layer initialized with the
// sum of its final directional states.

#include <cstddef>
#include <string>
#include <vector>

#include "psf/cells.hpp"
#include "psf/common.hpp"
#include "psf/linalg.hpp"

namespace psf {

enum class Architecture { rnn, gru, bigru, conv_bigru };

inline const char* to_string(Architecture a) {
    switch (a) {
        case Architecture::rnn: return "rnn";
        case Architecture::gru: return "gru";
        case Architecture::bigru: return "bigru";
        case Architecture::conv_bigru: return "conv_bigru";
    }
    return "?";
}

inline Architecture architecture_from_string(const std::string& s) {
    if (s == "rnn") return Architecture::rnn;
    if (s == "gru") return Architecture::gru;
    if (s == "bigru") return Architecture::bigru;
    if (s == "conv_bigru") return Architecture::conv_bigru;
    throw ValueError("unknown architecture: " + s);
}

struct ConvSpec {
    std::size_t filters = 64;
    std::size_t kernel = 5;
    std::size_t stride = 1;
};

struct ModelConfig {
    Architecture architecture = Architecture::bigru;
    std::size_t input_dim = 0; // 2K
    std::size_t hidden_size = 32;
    std::size_t depth = 3;
    std::size_t seq_len = 5;
    std::size_t horizon = 1;
    ConvSpec conv; // used iff architecture == conv_bigru
    double dropout_rate = 0.05;
    std::uint64_t seed = 1;

    bool has_conv() const { return architecture == Architecture::conv_bigru; }
    bool bidirectional() const {
        return architecture == Architecture::bigru || architecture == Architecture::conv_bigru;
    }

    void validate() const {
        if (input_dim < 1)
            throw ValueError("input_dim must be >= 1 (got " + std::to_string(input_dim) + ")");
        if (hidden_size < 1) throw ValueError("hidden_size must be >= 1");
        if (depth < 1) throw ValueError("depth must be >= 1");
        if (seq_len < 1) throw ValueError("seq_len must be >= 1");
        if (horizon < 1) throw ValueError("horizon must be >= 1");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            throw ValueError("dropout_rate must be in [0, 1)");
        if (has_conv()) {
            if (conv.filters < 1 || conv.kernel < 1 || conv.stride < 1)
                throw ValueError("conv spec fields must be >= 1");
            if (seq_len < conv.kernel)
                throw ValueError("seq_len " + std::to_string(seq_len) +
                                 " shorter than conv kernel " + std::to_string(conv.kernel));
        }
    }
};

struct Model {
    ModelConfig cfg;
    ConvParams conv;                  // iff conv_bigru
    std::vector<RnnParams> rnn_layers;
    std::vector<GruParams> fwd_layers;
    std::vector<GruParams> bwd_layers; // iff bidirectional
    ReadoutParams readout;             // w_fwd: out x n, w_bwd unused
};

struct ModelGrads {
    ConvGrads conv;
    std::vector<RnnGrads> rnn_layers;
    std::vector<GruGrads> fwd_layers;
    std::vector<GruGrads> bwd_layers;
    ReadoutGrads readout;
    std::vector<Vector> dWindow;

    explicit ModelGrads(const Model& m) : conv(m.conv), readout(m.readout) {
        for (const auto& p : m.rnn_layers) rnn_layers.emplace_back(p);
        for (const auto& p : m.fwd_layers) fwd_layers.emplace_back(p);
        for (const auto& p : m.bwd_layers) bwd_layers.emplace_back(p);
    }
};

// ---------------------------------------------------------------------------
// Parameter enumeration: one flat, deterministic ordering shared by the
// initializer, the optimizer, the finite-difference harness, and the
// checkpoint format.

struct TensorView {
    std::string name;
    std::vector<double>* data;
    std::vector<std::size_t> dims;

    std::size_t size() const { return data->size(); }
};

namespace detail {

inline void push_view(std::vector<TensorView>& out, const std::string& name, Matrix& m) {
    if (m.size() == 0) return;
    out.push_back({name, &m.data, {m.rows, m.cols}});
}

inline void push_view(std::vector<TensorView>& out, const std::string& name, Vector& v) {
    out.push_back({name, &v, {v.size()}});
}

template <typename GruT>
void push_gru_views(std::vector<TensorView>& out, const std::string& prefix, GruT& p) {
    push_view(out, prefix + ".w_zx", p.w_zx);
    push_view(out, prefix + ".w_zh", p.w_zh);
    push_view(out, prefix + ".b_z", p.b_z);
    push_view(out, prefix + ".w_rx", p.w_rx);
    push_view(out, prefix + ".w_rh", p.w_rh);
    push_view(out, prefix + ".b_r", p.b_r);
    push_view(out, prefix + ".w_x", p.w_x);
    push_view(out, prefix + ".w_h", p.w_h);
    push_view(out, prefix + ".b", p.b);
}

template <typename ConvT, typename RnnT, typename GruT, typename RoT>
std::vector<TensorView> enumerate_views(bool has_conv, ConvT& conv, std::vector<RnnT>& rnn,
                                        std::vector<GruT>& fwd, std::vector<GruT>& bwd,
                                        RoT& readout) {
    std::vector<TensorView> out;
    if (has_conv) {
        for (std::size_t f = 0; f < conv.filters.size(); ++f)
            push_view(out, "conv.filter_" + std::to_string(f), conv.filters[f]);
        push_view(out, "conv.biases", conv.biases);
    }
    for (std::size_t k = 0; k < rnn.size(); ++k) {
        const std::string prefix = "layer_" + std::to_string(k);
        push_view(out, prefix + ".w", rnn[k].w);
        push_view(out, prefix + ".u", rnn[k].u);
        push_view(out, prefix + ".b", rnn[k].b);
    }
    for (std::size_t k = 0; k < fwd.size(); ++k)
        push_gru_views(out, "layer_" + std::to_string(k) + ".fwd", fwd[k]);
    for (std::size_t k = 0; k < bwd.size(); ++k)
        push_gru_views(out, "layer_" + std::to_string(k) + ".bwd", bwd[k]);
    push_view(out, "readout.w", readout.w_fwd);
    push_view(out, "readout.b", readout.b);
    return out;
}

}  // namespace detail

inline std::vector<TensorView> param_views(Model& m) {
    return detail::enumerate_views(m.cfg.has_conv(), m.conv, m.rnn_layers, m.fwd_layers,
                                   m.bwd_layers, m.readout);
}

inline std::vector<TensorView> grad_views(ModelGrads& g, const Model& owner) {
    return detail::enumerate_views(owner.cfg.has_conv(), g.conv, g.rnn_layers, g.fwd_layers,
                                   g.bwd_layers, g.readout);
}

inline std::size_t parameter_count(Model& m) {
    std::size_t n = 0;
    for (const TensorView& v : param_views(m)) n += v.size();
    return n;
}

// ---------------------------------------------------------------------------
// Construction

namespace detail {

// Uniform fan-based init; biases stay zero.
inline void init_weights(Matrix& w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : w.data) v = rng.uniform(-bound, bound);
}

inline GruParams make_gru(std::size_t hidden, std::size_t input) {
    GruParams p;
    p.w_zx = Matrix(hidden, input);
    p.w_rx = Matrix(hidden, input);
    p.w_x = Matrix(hidden, input);
    p.w_zh = Matrix(hidden, hidden);
    p.w_rh = Matrix(hidden, hidden);
    p.w_h = Matrix(hidden, hidden);
    p.b_z.assign(hidden, 0.0);
    p.b_r.assign(hidden, 0.0);
    p.b.assign(hidden, 0.0);
    return p;
}

inline void init_gru(GruParams& p, Rng& rng) {
    init_weights(p.w_zx, p.input(), p.hidden(), rng);
    init_weights(p.w_zh, p.hidden(), p.hidden(), rng);
    init_weights(p.w_rx, p.input(), p.hidden(), rng);
    init_weights(p.w_rh, p.hidden(), p.hidden(), rng);
    init_weights(p.w_x, p.input(), p.hidden(), rng);
    init_weights(p.w_h, p.hidden(), p.hidden(), rng);
}

}  // namespace detail

// Deterministic initialization from cfg.seed.
inline Model build_model(const ModelConfig& cfg) {
    cfg.validate();
    Model m;
    m.cfg = cfg;

    const std::size_t n = cfg.hidden_size;
    const std::size_t first_input = cfg.has_conv() ? cfg.conv.filters : cfg.input_dim;

    if (cfg.has_conv()) {
        m.conv.filters.assign(cfg.conv.filters, Matrix(cfg.conv.kernel, cfg.input_dim));
        m.conv.biases.assign(cfg.conv.filters, 0.0);
        m.conv.stride = cfg.conv.stride;
        m.conv.nonlinearity = Activation::relu;
    }
    for (std::size_t k = 0; k < cfg.depth; ++k) {
        const std::size_t in = k == 0 ? first_input : n;
        if (cfg.architecture == Architecture::rnn) {
            RnnParams p;
            p.w = Matrix(n, n);
            p.u = Matrix(n, in);
            p.b.assign(n, 0.0);
            p.nonlinearity = Activation::tanh;
            m.rnn_layers.push_back(std::move(p));
        } else {
            m.fwd_layers.push_back(detail::make_gru(n, in));
            if (cfg.bidirectional()) m.bwd_layers.push_back(detail::make_gru(n, in));
        }
    }
    m.readout.w_fwd = Matrix(cfg.input_dim, n);
    m.readout.b.assign(cfg.input_dim, 0.0);

    Rng rng(derive_seed(cfg.seed, 0x696e6974ULL)); // "init"
    if (cfg.has_conv()) {
        const std::size_t fan_in = cfg.conv.kernel * cfg.input_dim;
        for (Matrix& f : m.conv.filters) detail::init_weights(f, fan_in, cfg.conv.filters, rng);
    }
    for (RnnParams& p : m.rnn_layers) {
        detail::init_weights(p.w, p.hidden(), p.hidden(), rng);
        detail::init_weights(p.u, p.input(), p.hidden(), rng);
    }
    for (GruParams& p : m.fwd_layers) detail::init_gru(p, rng);
    for (GruParams& p : m.bwd_layers) detail::init_gru(p, rng);
    detail::init_weights(m.readout.w_fwd, n, cfg.input_dim, rng);
    return m;
}

// ---------------------------------------------------------------------------
// Forward

struct ForwardOptions {
    DropoutMode mode = DropoutMode::eval;
    Rng* dropout_rng = nullptr;               // required when training with rate > 0
    const std::vector<Vector>* teacher = nullptr; // teacher-forcing targets
};

struct ModelCache {
    // encode
    ConvCache conv;
    std::vector<std::vector<Vector>> masks; // dropout, one list per inter-layer connection
    std::vector<RnnScanCache> rnn_scans;
    std::vector<GruScanCache> fwd_scans;
    std::vector<GruScanCache> bwd_scans;
    std::size_t enc_len = 0;
    // decode
    std::vector<Vector> raw; // window ++ fed-back states
    std::vector<std::vector<RnnStepCache>> dec_rnn;
    std::vector<std::vector<GruStepCache>> dec_gru;
    std::vector<ConvStepCache> dec_conv;
    std::vector<Vector> predictions;
    bool teacher_forced = false;
};

namespace detail {

// Dropout on non-recurrent inter-layer connections of the encoder only;
// masks carry the 1/(1-rate) scale.
inline void apply_encoder_dropout(std::vector<Vector>& seq, double rate,
                                  const ForwardOptions& opt, ModelCache& cache) {
    if (opt.mode != DropoutMode::train || rate == 0.0) {
        cache.masks.emplace_back(); // empty = identity
        return;
    }
    if (!opt.dropout_rng) throw ValueError("train-mode forward needs a dropout rng");
    std::vector<Vector> masks(seq.size());
    for (std::size_t t = 0; t < seq.size(); ++t) {
        masks[t] = dropout_mask(seq[t].size(), rate, *opt.dropout_rng);
        seq[t] = hadamard(seq[t], masks[t]);
    }
    cache.masks.push_back(std::move(masks));
}

}  // namespace detail

// Runs encoder + decoder; returns `horizon` predicted state vectors.
inline std::vector<Vector> model_forward(const Model& m, const std::vector<Vector>& window,
                                         std::size_t horizon, const ForwardOptions& opt,
                                         ModelCache& cache) {
    const ModelConfig& cfg = m.cfg;
    if (window.size() != cfg.seq_len)
        throw ShapeError("window length " + std::to_string(window.size()) + " vs seq_len " +
                         std::to_string(cfg.seq_len));
    for (const Vector& x : window) require_same_dim(cfg.input_dim, x.size(), "window state dim");
    if (horizon < 1) throw ValueError("horizon must be >= 1");
    if (opt.teacher && opt.teacher->size() < horizon)
        throw ShapeError("teacher targets " + std::to_string(opt.teacher->size()) +
                         " vs horizon " + std::to_string(horizon));

    const std::size_t depth = cfg.depth;
    const std::size_t n = cfg.hidden_size;
    cache = ModelCache{};
    cache.teacher_forced = opt.teacher != nullptr;

    // --- encode
    std::vector<Vector> cur;
    if (cfg.has_conv()) {
        cur = conv1d_forward(m.conv, window, &cache.conv);
        detail::apply_encoder_dropout(cur, cfg.dropout_rate, opt, cache);
    } else {
        cur = window;
    }
    cache.enc_len = cur.size();

    std::vector<Vector> enc_final(depth);
    if (cfg.architecture == Architecture::rnn) {
        cache.rnn_scans.resize(depth);
        for (std::size_t k = 0; k < depth; ++k) {
            cur = rnn_scan(m.rnn_layers[k], cur, Vector(n, 0.0), &cache.rnn_scans[k]);
            enc_final[k] = cur.back();
            if (k + 1 < depth) detail::apply_encoder_dropout(cur, cfg.dropout_rate, opt, cache);
        }
    } else {
        cache.fwd_scans.resize(depth);
        if (cfg.bidirectional()) cache.bwd_scans.resize(depth);
        for (std::size_t k = 0; k < depth; ++k) {
            std::vector<Vector> hf =
                gru_scan(m.fwd_layers[k], cur, Vector(n, 0.0), &cache.fwd_scans[k]);
            if (cfg.bidirectional()) {
                std::vector<Vector> rev(cur.rbegin(), cur.rend());
                std::vector<Vector> hb =
                    gru_scan(m.bwd_layers[k], rev, Vector(n, 0.0), &cache.bwd_scans[k]);
                enc_final[k] = hf.back();
                add_in_place(enc_final[k], hb.back());
                const std::size_t steps = hf.size();
                for (std::size_t t = 0; t < steps; ++t)
                    add_in_place(hf[t], hb[steps - 1 - t]); // sum merge
            } else {
                enc_final[k] = hf.back();
            }
            cur = std::move(hf);
            if (k + 1 < depth) detail::apply_encoder_dropout(cur, cfg.dropout_rate, opt, cache);
        }
    }

    // --- decode: continue the stack, feeding predictions (or teacher
    // targets) back as raw inputs.
    const std::size_t l = cfg.seq_len;
    cache.raw = window;
    cache.raw.reserve(l + horizon);
    cache.predictions.reserve(horizon);
    if (cfg.architecture == Architecture::rnn)
        cache.dec_rnn.assign(depth, std::vector<RnnStepCache>(horizon));
    else
        cache.dec_gru.assign(depth, std::vector<GruStepCache>(horizon));
    if (cfg.has_conv()) cache.dec_conv.resize(horizon);

    std::vector<Vector> h = enc_final;
    for (std::size_t t = 1; t <= horizon; ++t) {
        Vector input;
        if (cfg.has_conv()) {
            // trailing kernel-length window ending at the newest raw state
            const std::size_t begin = l + t - 1 - cfg.conv.kernel;
            input = conv1d_window(m.conv, cache.raw.data() + begin, &cache.dec_conv[t - 1]);
        } else {
            input = cache.raw[l + t - 2];
        }
        for (std::size_t k = 0; k < depth; ++k) {
            if (cfg.architecture == Architecture::rnn)
                h[k] = rnn_step(m.rnn_layers[k], h[k], input, &cache.dec_rnn[k][t - 1]);
            else
                h[k] = gru_step(m.fwd_layers[k], h[k], input, &cache.dec_gru[k][t - 1]);
            input = h[k];
        }
        Vector y = matvec(m.readout.w_fwd, input);
        add_in_place(y, m.readout.b);
        cache.predictions.push_back(y);
        cache.raw.push_back(opt.teacher ? (*opt.teacher)[t - 1] : std::move(y));
    }
    return cache.predictions;
}

// Multi-step forecast from one window. Deterministic in eval mode; train
// mode draws dropout masks from the seed.
inline std::vector<Vector> forecast(const Model& m, const std::vector<Vector>& window,
                                    std::size_t horizon,
                                    DropoutMode mode = DropoutMode::eval,
                                    std::uint64_t seed = 0) {
    ForwardOptions opt;
    opt.mode = mode;
    Rng rng(derive_seed(seed, 0x666f7265ULL)); // "fore"
    if (mode == DropoutMode::train && m.cfg.dropout_rate > 0.0) opt.dropout_rng = &rng;
    ModelCache cache;
    return model_forward(m, window, horizon, opt, cache);
}

// ---------------------------------------------------------------------------
// Backward

// Gradients of L = sum_t 1/2 |y_t - yhat_t|^2 for a cached forward pass.
// The autoregressive feedback (prediction t feeding step t+1, and, with a
// conv front end, steps t+1..t+kernel) is differentiated unless the pass was
// teacher-forced.
inline ModelGrads model_backward_cached(const Model& m, const ModelCache& cache,
                                        const std::vector<Vector>& targets) {
    const ModelConfig& cfg = m.cfg;
    const std::size_t horizon = cache.predictions.size();
    if (horizon == 0) throw ValueError("model_backward: missing forward cache");
    require_same_dim(horizon, targets.size(), "model_backward targets");
    for (const Vector& y : targets) require_same_dim(cfg.input_dim, y.size(), "target dim");

    const std::size_t depth = cfg.depth;
    const std::size_t n = cfg.hidden_size;
    const std::size_t l = cfg.seq_len;
    ModelGrads g(m);

    // --- decode phase, t descending. dh_dec[k] carries the gradient flowing
    // into layer k's hidden state from later decode steps; dRaw collects
    // gradients on raw sequence entries (window tail and fed-back
    // predictions).
    std::vector<Vector> dh_dec(depth, Vector(n, 0.0));
    std::vector<Vector> dRaw(l + horizon, Vector(cfg.input_dim, 0.0));

    for (std::size_t t = horizon; t >= 1; --t) {
        Vector dy(cfg.input_dim);
        const Vector& pred = cache.predictions[t - 1];
        for (std::size_t i = 0; i < cfg.input_dim; ++i) dy[i] = pred[i] - targets[t - 1][i];
        if (!cache.teacher_forced && t < horizon) add_in_place(dy, dRaw[l + t - 1]);

        const Vector& h_top = cfg.architecture == Architecture::rnn
                                  ? cache.dec_rnn[depth - 1][t - 1].h
                                  : cache.dec_gru[depth - 1][t - 1].h;
        outer_add(g.readout.w_fwd, dy, h_top);
        add_in_place(g.readout.b, dy);
        Vector dcur = matvec_t(m.readout.w_fwd, dy);

        for (std::size_t k = depth; k-- > 0;) {
            add_in_place(dcur, dh_dec[k]);
            Vector dinput;
            if (cfg.architecture == Architecture::rnn)
                rnn_step_backward(m.rnn_layers[k], cache.dec_rnn[k][t - 1], dcur,
                                  g.rnn_layers[k], dh_dec[k], dinput);
            else
                gru_step_backward(m.fwd_layers[k], cache.dec_gru[k][t - 1], dcur,
                                  g.fwd_layers[k], dh_dec[k], dinput);
            dcur = std::move(dinput);
        }

        if (cfg.has_conv()) {
            const std::size_t begin = l + t - 1 - cfg.conv.kernel;
            conv1d_window_backward(m.conv, cache.dec_conv[t - 1], cache.raw.data() + begin,
                                   dcur, g.conv, dRaw.data() + begin);
        } else {
            add_in_place(dRaw[l + t - 2], dcur);
        }
    }

    // --- encoder stack, top layer down. dh_dec[k] now holds the gradient on
    // layer k's decode-initial hidden, i.e. its encoder-final state.
    const std::size_t enc_len = cache.enc_len;
    std::vector<Vector> dS(enc_len, Vector(n, 0.0)); // grads on the layer's merged outputs
    std::size_t mask_idx = cache.masks.size();

    auto apply_mask_backward = [&](std::vector<Vector>& dseq) {
        --mask_idx;
        const std::vector<Vector>& masks = cache.masks[mask_idx];
        if (masks.empty()) return;
        for (std::size_t t = 0; t < dseq.size(); ++t) dseq[t] = hadamard(dseq[t], masks[t]);
    };

    for (std::size_t k = depth; k-- > 0;) {
        std::vector<Vector> dX;
        if (cfg.architecture == Architecture::rnn) {
            std::vector<Vector> dH = dS;
            add_in_place(dH[enc_len - 1], dh_dec[k]);
            rnn_scan_backward(m.rnn_layers[k], cache.rnn_scans[k], dH, g.rnn_layers[k], dX);
        } else if (!cfg.bidirectional()) {
            std::vector<Vector> dH = dS;
            add_in_place(dH[enc_len - 1], dh_dec[k]);
            gru_scan_backward(m.fwd_layers[k], cache.fwd_scans[k], dH, g.fwd_layers[k], dX);
        } else {
            // sum merge: both directions see the same per-step gradient; the
            // decode-init gradient lands on each direction's scan-final step.
            std::vector<Vector> dHf = dS;
            std::vector<Vector> dHb(enc_len);
            for (std::size_t t = 0; t < enc_len; ++t) dHb[enc_len - 1 - t] = dS[t];
            add_in_place(dHf[enc_len - 1], dh_dec[k]);
            add_in_place(dHb[enc_len - 1], dh_dec[k]);
            std::vector<Vector> dXr;
            gru_scan_backward(m.fwd_layers[k], cache.fwd_scans[k], dHf, g.fwd_layers[k], dX);
            gru_scan_backward(m.bwd_layers[k], cache.bwd_scans[k], dHb, g.bwd_layers[k], dXr);
            for (std::size_t t = 0; t < enc_len; ++t)
                add_in_place(dX[t], dXr[enc_len - 1 - t]);
        }
        if (k > 0) {
            apply_mask_backward(dX);
            dS = std::move(dX);
        } else if (cfg.has_conv()) {
            apply_mask_backward(dX);
            g.dWindow = conv1d_backward(m.conv, cache.conv, dX, g.conv);
        } else {
            g.dWindow = std::move(dX);
        }
    }
    for (std::size_t t = 0; t < l; ++t) add_in_place(g.dWindow[t], dRaw[t]);
    return g;
}

// Spec surface: eval-mode forward (fresh cache) then backward.
inline ModelGrads model_backward(const Model& m, const std::vector<Vector>& window,
                                 const std::vector<Vector>& targets) {
    ModelCache cache;
    ForwardOptions opt;
    model_forward(m, window, targets.size(), opt, cache);
    return model_backward_cached(m, cache, targets);
}

}  // namespace psf

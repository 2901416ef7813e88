#pragma once

// File formats: canonical JSON (sorted keys, 17-significant-digit reals),
// the versioned binary checkpoint, and plot-ready CSV profiles.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "psf/common.hpp"
#include "psf/metrics.hpp"
#include "psf/model.hpp"
#include "psf/training.hpp"

namespace psf {

// ---------------------------------------------------------------------------
// Canonical JSON writing. Keys are emitted in sorted order by construction;
// reals use %.17g so every double round-trips exactly.

namespace canon {

inline std::string num(double v) { return format_g17(v); }

inline std::string arr(const std::vector<double>& xs) {
    std::string s = "[";
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) s += ",";
        s += num(xs[i]);
    }
    return s + "]";
}

}  // namespace canon

inline std::string model_config_to_json(const ModelConfig& cfg) {
    std::ostringstream os;
    os << "{\"architecture\":\"" << to_string(cfg.architecture) << "\""
       << ",\"conv_filters\":" << (cfg.has_conv() ? cfg.conv.filters : 0)
       << ",\"conv_kernel\":" << (cfg.has_conv() ? cfg.conv.kernel : 0)
       << ",\"conv_stride\":" << (cfg.has_conv() ? cfg.conv.stride : 0)
       << ",\"depth\":" << cfg.depth
       << ",\"dropout_rate\":" << canon::num(cfg.dropout_rate)
       << ",\"hidden_size\":" << cfg.hidden_size
       << ",\"horizon\":" << cfg.horizon
       << ",\"input_dim\":" << cfg.input_dim
       << ",\"seed\":" << cfg.seed
       << ",\"seq_len\":" << cfg.seq_len << "}";
    return os.str();
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    static const char* keys[] = {"architecture", "conv_filters", "conv_kernel", "conv_stride",
                                 "depth",        "dropout_rate", "hidden_size", "horizon",
                                 "input_dim",    "seed",         "seq_len"};
    for (const auto& [key, val] : j.items()) {
        bool known = false;
        for (const char* k : keys) known = known || key == k;
        if (!known) throw ParseError("unknown model config key: " + key);
    }
    ModelConfig cfg;
    cfg.architecture = architecture_from_string(j.at("architecture").get<std::string>());
    cfg.input_dim = j.at("input_dim").get<std::size_t>();
    cfg.hidden_size = j.at("hidden_size").get<std::size_t>();
    cfg.depth = j.at("depth").get<std::size_t>();
    cfg.seq_len = j.at("seq_len").get<std::size_t>();
    cfg.horizon = j.at("horizon").get<std::size_t>();
    cfg.dropout_rate = j.at("dropout_rate").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    if (cfg.has_conv()) {
        cfg.conv.filters = j.at("conv_filters").get<std::size_t>();
        cfg.conv.kernel = j.at("conv_kernel").get<std::size_t>();
        cfg.conv.stride = j.at("conv_stride").get<std::size_t>();
    }
    cfg.validate();
    return cfg;
}

inline std::string train_report_to_json(const TrainReport& r) {
    std::ostringstream os;
    os << "{\"best_epoch\":" << r.best_epoch
       << ",\"epoch_train_loss\":" << canon::arr(r.epoch_train_loss)
       << ",\"epoch_val_nrmse\":" << canon::arr(r.epoch_val_nrmse)
       << ",\"parameter_count\":" << r.parameter_count
       << ",\"seed\":" << r.seed
       << ",\"stopped_epoch\":" << r.stopped_epoch
       << ",\"test_nrmse\":" << canon::num(r.test_nrmse)
       << ",\"wall_clock_seconds\":" << canon::num(r.wall_clock_seconds) << "}";
    return os.str();
}

inline TrainReport train_report_from_json(const nlohmann::json& j) {
    TrainReport r;
    r.best_epoch = j.at("best_epoch").get<std::size_t>();
    r.epoch_train_loss = j.at("epoch_train_loss").get<std::vector<double>>();
    r.epoch_val_nrmse = j.at("epoch_val_nrmse").get<std::vector<double>>();
    r.parameter_count = j.at("parameter_count").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.stopped_epoch = j.at("stopped_epoch").get<std::size_t>();
    r.test_nrmse = j.at("test_nrmse").get<double>();
    r.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
    return r;
}

inline std::string eval_result_to_json(const EvalResult& r) {
    std::ostringstream os;
    os << "{\"bus\":" << r.bus
       << ",\"bus_trace\":" << canon::arr(r.bus_trace)
       << ",\"overall_nrmse\":" << canon::num(r.overall_nrmse)
       << ",\"per_horizon_nrmse\":" << canon::arr(r.per_horizon_nrmse)
       << ",\"per_variable_nrmse\":" << canon::arr(r.per_variable_nrmse)
       << ",\"snapshot_abs_error\":" << canon::arr(r.snapshot_abs_error)
       << ",\"snapshot_forecast\":" << canon::arr(r.snapshot_forecast)
       << ",\"snapshot_truth\":" << canon::arr(r.snapshot_truth)
       << ",\"t_future\":" << r.t_future << "}";
    return os.str();
}

inline EvalResult eval_result_from_json(const nlohmann::json& j) {
    EvalResult r;
    r.bus = j.at("bus").get<std::size_t>();
    r.bus_trace = j.at("bus_trace").get<std::vector<double>>();
    r.overall_nrmse = j.at("overall_nrmse").get<double>();
    r.per_horizon_nrmse = j.at("per_horizon_nrmse").get<std::vector<double>>();
    r.per_variable_nrmse = j.at("per_variable_nrmse").get<std::vector<double>>();
    r.snapshot_abs_error = j.at("snapshot_abs_error").get<std::vector<double>>();
    r.snapshot_forecast = j.at("snapshot_forecast").get<std::vector<double>>();
    r.snapshot_truth = j.at("snapshot_truth").get<std::vector<double>>();
    r.t_future = j.at("t_future").get<std::size_t>();
    return r;
}

// ---------------------------------------------------------------------------
// Checkpoint: magic, version, canonical config JSON, then every parameter
// tensor dimension-prefixed as little-endian 64-bit reals in the fixed
// enumeration order.

namespace detail {

constexpr char kCheckpointMagic[8] = {'P', 'S', 'F', 'C', 'H', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(os, bits);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

inline std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline double get_f64(std::istream& is) {
    const std::uint64_t bits = get_u64(is);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace detail

inline void save_checkpoint(Model& m, std::ostream& os) {
    os.write(detail::kCheckpointMagic, 8);
    detail::put_u32(os, detail::kCheckpointVersion);
    const std::string cfg_json = model_config_to_json(m.cfg);
    detail::put_u64(os, cfg_json.size());
    os.write(cfg_json.data(), static_cast<std::streamsize>(cfg_json.size()));
    const std::vector<TensorView> views = param_views(m);
    detail::put_u64(os, views.size());
    for (const TensorView& v : views) {
        detail::put_u32(os, static_cast<std::uint32_t>(v.dims.size()));
        for (std::size_t d : v.dims) detail::put_u64(os, d);
        for (double x : *v.data) detail::put_f64(os, x);
    }
}

inline void save_checkpoint(Model& m, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ParseError("cannot open for writing: " + path);
    save_checkpoint(m, os);
    if (!os.good()) throw ParseError("write failed: " + path);
}

inline Model load_checkpoint(std::istream& is, const std::string& name = "<stream>") {
    char magic[8];
    is.read(magic, 8);
    if (!is.good() || std::memcmp(magic, detail::kCheckpointMagic, 8) != 0)
        throw ParseError(name + ": not a checkpoint file (bad magic)");
    const std::uint32_t version = detail::get_u32(is);
    if (version != detail::kCheckpointVersion)
        throw ParseError(name + ": unsupported checkpoint version " + std::to_string(version));
    const std::uint64_t json_len = detail::get_u64(is);
    std::string cfg_json(json_len, '\0');
    is.read(cfg_json.data(), static_cast<std::streamsize>(json_len));
    if (!is.good()) throw ParseError(name + ": truncated config block");

    ModelConfig cfg;
    try {
        cfg = model_config_from_json(nlohmann::json::parse(cfg_json));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(name + ": bad config json: " + e.what());
    }

    Model m = build_model(cfg);
    std::vector<TensorView> views = param_views(m);
    const std::uint64_t count = detail::get_u64(is);
    if (count != views.size())
        throw ParseError(name + ": tensor count " + std::to_string(count) + ", expected " +
                         std::to_string(views.size()));
    for (TensorView& v : views) {
        const std::uint32_t rank = detail::get_u32(is);
        if (rank != v.dims.size()) throw ParseError(name + ": rank mismatch in " + v.name);
        for (std::size_t d : v.dims) {
            const std::uint64_t got = detail::get_u64(is);
            if (got != d)
                throw ParseError(name + ": dim mismatch in " + v.name + ": " +
                                 std::to_string(got) + " vs " + std::to_string(d));
        }
        for (double& x : *v.data) x = detail::get_f64(is);
        if (!is.good()) throw ParseError(name + ": truncated tensor " + v.name);
    }
    return m;
}

inline Model load_checkpoint_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("cannot open: " + path);
    return load_checkpoint(is, path);
}

// ---------------------------------------------------------------------------
// Plot-ready CSV profiles

inline void write_horizon_profile_csv(const std::vector<double>& profile, std::ostream& os) {
    os << "step,nrmse\n";
    for (std::size_t k = 0; k < profile.size(); ++k)
        os << k + 1 << "," << format_g17(profile[k]) << "\n";
}

inline void write_bus_trace_csv(const std::vector<double>& trace, std::ostream& os) {
    os << "step,abs_error\n";
    for (std::size_t k = 0; k < trace.size(); ++k)
        os << k + 1 << "," << format_g17(trace[k]) << "\n";
}

inline void write_snapshot_csv(const EvalResult& r, std::size_t bus_count, std::ostream& os) {
    os << "variable,truth,forecast,abs_error\n";
    for (std::size_t i = 0; i < r.snapshot_truth.size(); ++i) {
        const std::string var = i < bus_count ? "x_r_" + std::to_string(i + 1)
                                              : "x_i_" + std::to_string(i + 1 - bus_count);
        os << var << "," << format_g17(r.snapshot_truth[i]) << ","
           << format_g17(r.snapshot_forecast[i]) << "," << format_g17(r.snapshot_abs_error[i])
           << "\n";
    }
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ParseError("cannot open for writing: " + path);
    os << content;
    if (!os.good()) throw ParseError("write failed: " + path);
}

}  // namespace psf

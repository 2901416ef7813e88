#pragma once

// Quadratic measurement model and synthetic state-series generation.
//
// States are complex bus voltages packed as [real parts | imaginary parts],
// dim 2K. Each measurement channel j is the quadratic form x^T H_j x of one
// tensor slice; channels follow the conventional ordering: per-bus squared
// voltage magnitudes, active/reactive injections, then per-line flows at both
// line ends.

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "psf/common.hpp"
#include "psf/linalg.hpp"

namespace psf {

struct GridTopology {
    std::size_t bus_count = 0;                              // K >= 2
    std::vector<std::pair<std::size_t, std::size_t>> lines; // 1-based (k, j), k != j

    void validate() const {
        if (bus_count < 2) throw ValueError("topology needs at least 2 buses");
        for (std::size_t i = 0; i < lines.size(); ++i) {
            const auto& [k, j] = lines[i];
            if (k == j) throw ValueError("topology has a self-loop at bus " + std::to_string(k));
            if (k < 1 || k > bus_count || j < 1 || j > bus_count)
                throw ValueError("line endpoint out of range");
            for (std::size_t m = i + 1; m < lines.size(); ++m)
                if (lines[m] == lines[i]) throw ValueError("duplicate line in topology");
        }
    }
};

// A ring over all buses; the default CLI topology.
inline GridTopology ring_topology(std::size_t bus_count) {
    GridTopology topo;
    topo.bus_count = bus_count;
    for (std::size_t k = 1; k <= bus_count; ++k)
        topo.lines.emplace_back(k, k % bus_count + 1);
    return topo;
}

enum class ChannelKind { vmag2, p_inj, q_inj, pf_begin, qf_begin, pf_end, qf_end };

inline const char* to_string(ChannelKind k) {
    switch (k) {
        case ChannelKind::vmag2: return "vmag2";
        case ChannelKind::p_inj: return "p_inj";
        case ChannelKind::q_inj: return "q_inj";
        case ChannelKind::pf_begin: return "pf_begin";
        case ChannelKind::qf_begin: return "qf_begin";
        case ChannelKind::pf_end: return "pf_end";
        case ChannelKind::qf_end: return "qf_end";
    }
    return "?";
}

struct ChannelLabel {
    ChannelKind kind;
    std::size_t bus = 0;  // injection / vmag2 channels
    std::size_t from = 0; // line channels
    std::size_t to = 0;

    std::string tag() const {
        std::string s = to_string(kind);
        if (kind == ChannelKind::vmag2 || kind == ChannelKind::p_inj || kind == ChannelKind::q_inj)
            return s + "_" + std::to_string(bus);
        return s + "_" + std::to_string(from) + "_" + std::to_string(to);
    }
};

struct MeasurementTensor {
    Tensor3 h;                        // 2K x 2K x M, every slice symmetric
    std::vector<ChannelLabel> labels; // one per slice
};

struct StateSeries {
    std::size_t bus_count = 0;
    std::vector<Vector> states; // each of dim 2K

    std::size_t steps() const { return states.size(); }
    std::size_t state_dim() const { return 2 * bus_count; }
};

inline const std::vector<ChannelKind>& all_channel_kinds() {
    static const std::vector<ChannelKind> kinds = {
        ChannelKind::vmag2, ChannelKind::p_inj, ChannelKind::q_inj,
        ChannelKind::pf_begin, ChannelKind::qf_begin, ChannelKind::pf_end, ChannelKind::qf_end};
    return kinds;
}

namespace detail {

// Uniform [-1, 1] symmetric matrix supported on the given state coordinates,
// written into slice k. Upper triangle drawn, then mirrored.
inline void fill_symmetric_support(Tensor3& h, std::size_t k,
                                   const std::vector<std::size_t>& support, Rng& rng) {
    for (std::size_t a = 0; a < support.size(); ++a) {
        for (std::size_t b = a; b < support.size(); ++b) {
            const double v = rng.uniform(-1.0, 1.0);
            h.at(support[a], support[b], k) = v;
            h.at(support[b], support[a], k) = v;
        }
    }
}

// State coordinates (real, imag) of one bus, 0-based.
inline void push_bus_coords(std::vector<std::size_t>& coords, std::size_t bus,
                            std::size_t bus_count) {
    coords.push_back(bus - 1);
    coords.push_back(bus_count + bus - 1);
}

}  // namespace detail

// Builds one symmetric slice per channel. vmag2 slices are exact (identity
// block on the bus's coordinates); injection slices are random symmetric
// matrices supported on the bus and its line neighbors; line slices on the
// two endpoint buses. `kinds` selects which channel groups to include.
inline MeasurementTensor build_measurement_tensor(
    const GridTopology& topo, std::uint64_t seed,
    const std::vector<ChannelKind>& kinds = all_channel_kinds()) {
    topo.validate();
    const std::size_t k2 = 2 * topo.bus_count;

    std::vector<ChannelLabel> labels;
    for (ChannelKind kind : kinds) {
        switch (kind) {
            case ChannelKind::vmag2:
            case ChannelKind::p_inj:
            case ChannelKind::q_inj:
                for (std::size_t b = 1; b <= topo.bus_count; ++b)
                    labels.push_back({kind, b, 0, 0});
                break;
            default:
                for (const auto& [f, t] : topo.lines)
                    labels.push_back({kind, 0, f, t});
                break;
        }
    }

    MeasurementTensor mt;
    mt.h = Tensor3(k2, k2, labels.size());
    mt.labels = labels;

    Rng rng(derive_seed(seed, 0x7463656e736f72ULL)); // "tensor"
    for (std::size_t c = 0; c < labels.size(); ++c) {
        const ChannelLabel& lab = labels[c];
        if (lab.kind == ChannelKind::vmag2) {
            // |V_k|^2 = (x^r_k)^2 + (x^i_k)^2
            mt.h.at(lab.bus - 1, lab.bus - 1, c) = 1.0;
            mt.h.at(topo.bus_count + lab.bus - 1, topo.bus_count + lab.bus - 1, c) = 1.0;
            continue;
        }
        std::vector<std::size_t> support;
        if (lab.kind == ChannelKind::p_inj || lab.kind == ChannelKind::q_inj) {
            detail::push_bus_coords(support, lab.bus, topo.bus_count);
            for (const auto& [f, t] : topo.lines) {
                if (f == lab.bus) detail::push_bus_coords(support, t, topo.bus_count);
                if (t == lab.bus) detail::push_bus_coords(support, f, topo.bus_count);
            }
        } else {
            detail::push_bus_coords(support, lab.from, topo.bus_count);
            detail::push_bus_coords(support, lab.to, topo.bus_count);
        }
        detail::fill_symmetric_support(mt.h, c, support, rng);
    }
    return mt;
}

// z = H x1 x2 + eps, eps ~ N(0, noise_sigma^2) i.i.d. per channel.
inline Vector measure(const MeasurementTensor& mt, const Vector& x, double noise_sigma,
                      std::uint64_t seed) {
    if (noise_sigma < 0.0) throw ValueError("noise_sigma must be >= 0");
    Vector z = mode_product_quadratic(mt.h, x);
    if (noise_sigma > 0.0) {
        Rng rng(derive_seed(seed, 0x6d656173757265ULL)); // "measure"
        for (double& v : z) v += rng.normal(0.0, noise_sigma);
    }
    return z;
}

enum class SeriesProfile { sinusoidal_load, random_walk };

inline SeriesProfile profile_from_string(const std::string& s) {
    if (s == "sinusoidal_load") return SeriesProfile::sinusoidal_load;
    if (s == "random_walk") return SeriesProfile::random_walk;
    throw ValueError("unknown profile: " + s);
}

// Synthetic per-bus complex voltage trajectories. Magnitudes stay near 1.0
// (clamped to [0.9, 1.1]); angles vary smoothly. `jitter` is the per-step
// Gaussian disturbance on the magnitude.
inline StateSeries generate_state_series(const GridTopology& topo, std::size_t steps,
                                         std::uint64_t seed, SeriesProfile profile,
                                         double jitter = 0.01) {
    topo.validate();
    if (steps < 1) throw ValueError("steps must be >= 1");
    const std::size_t k = topo.bus_count;
    constexpr double kTwoPi = 6.283185307179586476925286766559;
    constexpr double kDay = 24.0;   // samples per daily cycle
    constexpr double kWeek = 168.0; // samples per weekly cycle

    Rng rng(derive_seed(seed, 0x73657269657300ULL)); // "series"
    // Per-bus phases and amplitudes, drawn once.
    std::vector<double> day_phase(k), week_phase(k), ang_phase(k), ang_amp(k), base_ang(k);
    for (std::size_t b = 0; b < k; ++b) {
        day_phase[b] = rng.uniform(0.0, kTwoPi);
        week_phase[b] = rng.uniform(0.0, kTwoPi);
        ang_phase[b] = rng.uniform(0.0, kTwoPi);
        ang_amp[b] = rng.uniform(0.05, 0.15);
        base_ang[b] = rng.uniform(-0.3, 0.3);
    }

    StateSeries series;
    series.bus_count = k;
    series.states.assign(steps, Vector(2 * k, 0.0));

    // random_walk state, mean-reverting around (1.0, base angle)
    std::vector<double> walk_mag(k, 1.0), walk_ang = base_ang;

    for (std::size_t t = 0; t < steps; ++t) {
        Vector& x = series.states[t];
        for (std::size_t b = 0; b < k; ++b) {
            double mag, ang;
            if (profile == SeriesProfile::sinusoidal_load) {
                mag = 1.0 + 0.05 * std::sin(kTwoPi * t / kDay + day_phase[b]) +
                      0.03 * std::sin(kTwoPi * t / kWeek + week_phase[b]) +
                      rng.normal(0.0, jitter);
                ang = base_ang[b] + ang_amp[b] * std::sin(kTwoPi * t / kDay + ang_phase[b]);
            } else {
                walk_mag[b] += 0.05 * (1.0 - walk_mag[b]) + rng.normal(0.0, jitter);
                walk_ang[b] += 0.05 * (base_ang[b] - walk_ang[b]) + rng.normal(0.0, jitter);
                mag = walk_mag[b];
                ang = walk_ang[b];
            }
            mag = std::clamp(mag, 0.9, 1.1);
            if (profile == SeriesProfile::random_walk) walk_mag[b] = mag;
            x[b] = mag * std::cos(ang);
            x[k + b] = mag * std::sin(ang);
        }
    }
    return series;
}

// CSV: header `t,x_r_1..x_r_K,x_i_1..x_i_K`, one row per step, %.17g reals.
inline void write_state_series_csv(const StateSeries& series, std::ostream& os) {
    os << "t";
    for (std::size_t b = 1; b <= series.bus_count; ++b) os << ",x_r_" << b;
    for (std::size_t b = 1; b <= series.bus_count; ++b) os << ",x_i_" << b;
    os << "\n";
    for (std::size_t t = 0; t < series.steps(); ++t) {
        os << t;
        for (double v : series.states[t]) os << "," << format_g17(v);
        os << "\n";
    }
}

inline void write_state_series_csv(const StateSeries& series, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw ParseError("cannot open for writing: " + path);
    write_state_series_csv(series, os);
    if (!os.good()) throw ParseError("write failed: " + path);
}

inline StateSeries read_state_series_csv(std::istream& is, const std::string& name = "<stream>") {
    std::string line;
    if (!std::getline(is, line)) throw ParseError(name + ": empty file", 1);

    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    if (header.size() < 3 || header[0] != "t" || (header.size() - 1) % 2 != 0)
        throw ParseError(name + ": bad header, want t,x_r_1..,x_i_..", 1);
    const std::size_t k = (header.size() - 1) / 2;
    for (std::size_t b = 1; b <= k; ++b) {
        if (header[b] != "x_r_" + std::to_string(b) ||
            header[k + b] != "x_i_" + std::to_string(b))
            throw ParseError(name + ": bad header column " + header[b], 1);
    }

    StateSeries series;
    series.bus_count = k;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::size_t commas =
            static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
        if (commas != 2 * k)
            throw ParseError(name + ": expected " + std::to_string(2 * k + 1) +
                                 " columns, got " + std::to_string(commas + 1),
                             line_no);
        Vector x(2 * k);
        std::size_t pos = 0, col = 0;
        while (col <= 2 * k) {
            std::size_t next = line.find(',', pos);
            std::string cell = line.substr(pos, next == std::string::npos ? next : next - pos);
            if (cell.empty()) throw ParseError(name + ": empty cell", line_no);
            char* end = nullptr;
            const double v = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str() || *end != '\0')
                throw ParseError(name + ": bad number '" + cell + "'", line_no);
            if (col > 0) {
                if (!std::isfinite(v)) throw ParseError(name + ": non-finite value", line_no);
                x[col - 1] = v;
            }
            ++col;
            if (next == std::string::npos) break;
            pos = next + 1;
        }
        if (col != 2 * k + 1)
            throw ParseError(name + ": expected " + std::to_string(2 * k + 1) + " columns, got " +
                                 std::to_string(col),
                             line_no);
        series.states.push_back(std::move(x));
    }
    if (series.states.empty()) throw ParseError(name + ": no data rows", line_no);
    return series;
}

inline StateSeries read_state_series_csv_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ParseError("cannot open: " + path);
    return read_state_series_csv(is, path);
}

}  // namespace psf

// psf: synthetic power-system state forecasting pipeline.
//
// Subcommands: generate, train, evaluate, forecast, gradcheck, benchmark.
// Every command takes --config FILE (flat JSON mirroring the long flags,
// underscores for dashes); explicit flags win over config values.
//
// Exit codes: 0 success, 1 check failure, 2 argument validation,
// 3 data parse / I-O, 4 checkpoint-data mismatch.

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "psf/measurement.hpp"
#include "psf/metrics.hpp"
#include "psf/model.hpp"
#include "psf/serialize.hpp"
#include "psf/training.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitBadArgs = 2;
constexpr int kExitParse = 3;
constexpr int kExitMismatch = 4;

// Checkpoint problems (missing file, wrong dims vs data) map to exit 4.
struct MismatchError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string json_value_to_token(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number_float()) return psf::format_g17(v.get<double>());
    if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
    if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
    if (v.is_array()) {
        std::string joined;
        for (const auto& item : v) {
            if (!joined.empty()) joined += ",";
            joined += json_value_to_token(item);
        }
        return joined;
    }
    throw psf::ValueError("unsupported config value type");
}

// Expands --config FILE into synthetic tokens prepended to the user's args,
// so later (explicit) flags win and unknown keys are rejected here.
std::vector<std::string> merge_config_args(CLI::App& app, std::vector<std::string> args) {
    std::string config_path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
    }
    if (config_path.empty()) return args;

    std::ifstream is(config_path);
    if (!is) throw psf::ValueError("cannot open config: " + config_path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw psf::ValueError("bad config json: " + std::string(e.what()));
    }
    if (!j.is_object()) throw psf::ValueError("config must be a flat json object");

    std::vector<std::string> merged;
    for (const auto& [key, value] : j.items()) {
        std::string flag = "--" + key;
        for (char& c : flag)
            if (c == '_') c = '-';
        if (!app.get_option_no_throw(flag))
            throw psf::ValueError("unknown config key: " + key);
        if (value.is_boolean()) {
            merged.push_back(flag + "=" + (value.get<bool>() ? "true" : "false"));
        } else {
            merged.push_back(flag);
            merged.push_back(json_value_to_token(value));
        }
    }
    merged.insert(merged.end(), args.begin(), args.end());
    return merged;
}

void parse_or_exit(CLI::App& app, std::vector<std::string> args) {
    // config tokens come first and explicit flags later, so last-one-wins
    // gives flags precedence
    for (CLI::Option* opt : app.get_options())
        opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    std::reverse(args.begin(), args.end()); // CLI11 consumes args back to front
    try {
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        std::exit(app.exit(e));
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::exit(kExitBadArgs);
    }
}

fs::path ensure_out_dir(const std::string& out) {
    fs::path dir(out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw psf::ParseError("cannot create output directory: " + out);
    return dir;
}

psf::SplitSpec parse_split(const std::string& spec) {
    psf::SplitSpec s;
    if (std::sscanf(spec.c_str(), "%lf,%lf,%lf", &s.train_frac, &s.val_frac, &s.test_frac) != 3)
        throw psf::ValueError("bad --split, want three comma-separated fractions");
    s.validate();
    return s;
}

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

// ---------------------------------------------------------------------------

struct TrainFlags {
    std::string data, out = "out", arch = "bigru", split = "0.75,0.05,0.2";
    std::size_t seq_len = 5, horizon = 5, hidden = 32, depth = 3;
    std::size_t epochs = 100, batch = 32, patience = 10;
    std::size_t filters = 64, kernel = 5, stride = 1;
    double lr = 1e-3, dropout = 0.05, clip = 0.0;
    bool teacher_forcing = false;
    std::uint64_t seed = 1;
    bool quiet = false;
};

void add_train_flags(CLI::App& cmd, TrainFlags& f) {
    cmd.add_option("--data", f.data, "input state-series csv")->required();
    cmd.add_option("--out", f.out, "output directory");
    cmd.add_option("--arch", f.arch, "rnn|gru|bigru|conv_bigru");
    cmd.add_option("--seq-len", f.seq_len, "input window length");
    cmd.add_option("--horizon", f.horizon, "forecast steps");
    cmd.add_option("--hidden", f.hidden, "hidden units per layer");
    cmd.add_option("--depth", f.depth, "recurrent layers");
    cmd.add_option("--epochs", f.epochs, "max training epochs");
    cmd.add_option("--batch", f.batch, "batch size");
    cmd.add_option("--patience", f.patience, "early-stopping patience");
    cmd.add_option("--lr", f.lr, "Adam learning rate");
    cmd.add_option("--dropout", f.dropout, "inter-layer dropout rate");
    cmd.add_option("--clip", f.clip, "max-norm gradient clip, 0 = off");
    cmd.add_option("--filters", f.filters, "conv filters (conv_bigru)");
    cmd.add_option("--kernel", f.kernel, "conv kernel length (conv_bigru)");
    cmd.add_option("--stride", f.stride, "conv stride (conv_bigru)");
    cmd.add_option("--split", f.split, "train,val,test fractions");
    cmd.add_flag("--teacher-forcing", f.teacher_forcing, "feed targets to the decoder");
    cmd.add_option("--seed", f.seed, "rng seed");
    cmd.add_flag("--quiet", f.quiet, "suppress epoch lines");
}

psf::ModelConfig config_from_flags(const TrainFlags& f, std::size_t input_dim,
                                   std::uint64_t seed) {
    psf::ModelConfig cfg;
    cfg.architecture = psf::architecture_from_string(f.arch);
    cfg.input_dim = input_dim;
    cfg.hidden_size = f.hidden;
    cfg.depth = f.depth;
    cfg.seq_len = f.seq_len;
    cfg.horizon = f.horizon;
    cfg.dropout_rate = f.dropout;
    cfg.seed = seed;
    if (cfg.has_conv()) {
        cfg.conv.filters = f.filters;
        cfg.conv.kernel = f.kernel;
        cfg.conv.stride = f.stride;
    }
    return cfg;
}

psf::TrainOptions options_from_flags(const TrainFlags& f) {
    psf::TrainOptions opts;
    opts.epochs = f.epochs;
    opts.batch_size = f.batch;
    opts.lr = f.lr;
    opts.patience = f.patience;
    opts.teacher_forcing = f.teacher_forcing;
    opts.clip_norm = f.clip;
    return opts;
}

// ---------------------------------------------------------------------------

int cmd_generate(std::vector<std::string> args) {
    CLI::App app{"generate a synthetic state series"};
    std::string config, out = "out", profile = "sinusoidal_load";
    std::size_t buses = 6, steps = 2000;
    std::uint64_t seed = 1;
    double noise = 0.01;
    app.add_option("--config", config, "json config file");
    app.add_option("--buses", buses, "bus count K");
    app.add_option("--steps", steps, "time steps T");
    app.add_option("--seed", seed, "rng seed");
    app.add_option("--profile", profile, "sinusoidal_load|random_walk");
    app.add_option("--noise", noise, "per-step magnitude jitter stddev");
    app.add_option("--out", out, "output directory");
    parse_or_exit(app, merge_config_args(app, std::move(args)));

    if (steps < 1) throw psf::ValueError("--steps must be >= 1");
    if (buses < 2) throw psf::ValueError("--buses must be >= 2");
    if (noise < 0.0) throw psf::ValueError("--noise must be >= 0");

    const psf::GridTopology topo = psf::ring_topology(buses);
    const psf::StateSeries series =
        psf::generate_state_series(topo, steps, seed, psf::profile_from_string(profile), noise);

    const fs::path dir = ensure_out_dir(out);
    psf::write_state_series_csv(series, (dir / "series.csv").string());

    double lo = 1e300, hi = -1e300;
    for (const psf::Vector& x : series.states)
        for (std::size_t b = 0; b < buses; ++b) {
            const double mag = std::hypot(x[b], x[buses + b]);
            lo = std::min(lo, mag);
            hi = std::max(hi, mag);
        }
    std::cout << "wrote " << (dir / "series.csv").string() << "\n"
              << "steps=" << steps << " buses=" << buses << " min_mag=" << psf::format_g17(lo)
              << " max_mag=" << psf::format_g17(hi) << "\n";
    return kExitOk;
}

int cmd_train(std::vector<std::string> args) {
    CLI::App app{"train a forecaster"};
    std::string config;
    TrainFlags f;
    app.add_option("--config", config, "json config file");
    add_train_flags(app, f);
    parse_or_exit(app, merge_config_args(app, std::move(args)));

    const psf::StateSeries data = psf::read_state_series_csv_file(f.data);
    const psf::ModelConfig cfg = config_from_flags(f, data.state_dim(), f.seed);
    psf::TrainOptions opts = options_from_flags(f);
    if (!f.quiet)
        opts.on_epoch = [](std::size_t epoch, double loss, double val) {
            std::cout << "epoch " << epoch << " train_loss=" << loss << " val_nrmse=" << val
                      << "\n";
        };

    auto [model, report] = psf::train(cfg, data, parse_split(f.split), opts, f.seed);

    const fs::path dir = ensure_out_dir(f.out);
    psf::save_checkpoint(model, (dir / "checkpoint.bin").string());
    psf::write_text_file((dir / "report.json").string(), psf::train_report_to_json(report));
    std::cout << "test_nrmse=" << psf::format_g17(report.test_nrmse)
              << " stopped_epoch=" << report.stopped_epoch
              << " params=" << report.parameter_count << "\n"
              << "wrote " << (dir / "checkpoint.bin").string() << " and "
              << (dir / "report.json").string() << "\n";
    return kExitOk;
}

psf::Model load_checkpoint_or_mismatch(const std::string& path) {
    try {
        return psf::load_checkpoint_file(path);
    } catch (const psf::ParseError& e) {
        throw MismatchError("checkpoint: " + std::string(e.what()));
    }
}

int cmd_evaluate(std::vector<std::string> args) {
    CLI::App app{"evaluate a checkpoint on the test split"};
    std::string config, checkpoint, data, out = "out", split = "0.75,0.05,0.2";
    std::size_t bus = 1;
    std::int64_t t_future = -1;
    app.add_option("--config", config, "json config file");
    app.add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    app.add_option("--data", data, "state-series csv")->required();
    app.add_option("--split", split, "train,val,test fractions");
    app.add_option("--bus", bus, "bus for the error trace (1-based)");
    app.add_option("--t-future", t_future, "test-segment index for the snapshot");
    app.add_option("--out", out, "output directory");
    parse_or_exit(app, merge_config_args(app, std::move(args)));

    psf::Model model = load_checkpoint_or_mismatch(checkpoint);
    const psf::StateSeries series = psf::read_state_series_csv_file(data);
    if (series.state_dim() != model.cfg.input_dim)
        throw MismatchError("checkpoint expects state dim " +
                            std::to_string(model.cfg.input_dim) + ", data has " +
                            std::to_string(series.state_dim()));

    const psf::DataSplit ds = psf::split_dataset(series, parse_split(split));
    const std::size_t horizon = model.cfg.horizon;
    const std::size_t t_snap = t_future >= 0 ? static_cast<std::size_t>(t_future)
                                             : model.cfg.seq_len + horizon - 1;
    const psf::EvalResult res = psf::evaluate_model(model, ds.test, horizon, bus, t_snap);

    const fs::path dir = ensure_out_dir(out);
    psf::write_text_file((dir / "eval.json").string(), psf::eval_result_to_json(res));
    {
        std::ofstream os(dir / "horizon_profile.csv");
        psf::write_horizon_profile_csv(res.per_horizon_nrmse, os);
    }
    {
        std::ofstream os(dir / "bus_trace.csv");
        psf::write_bus_trace_csv(res.bus_trace, os);
    }
    {
        std::ofstream os(dir / "snapshot.csv");
        psf::write_snapshot_csv(res, series.bus_count, os);
    }
    std::cout << "overall_nrmse=" << psf::format_g17(res.overall_nrmse) << "\n"
              << "wrote eval.json, horizon_profile.csv, bus_trace.csv, snapshot.csv in " << out
              << "\n";
    return kExitOk;
}

int cmd_forecast(std::vector<std::string> args) {
    CLI::App app{"forecast from the latest window of a series"};
    std::string config, checkpoint, data, out = "out";
    std::size_t horizon = 0; // 0 = use checkpoint's
    app.add_option("--config", config, "json config file");
    app.add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    app.add_option("--data", data, "state-series csv")->required();
    app.add_option("--horizon", horizon, "forecast steps (default: checkpoint's)");
    app.add_option("--out", out, "output directory");
    parse_or_exit(app, merge_config_args(app, std::move(args)));

    psf::Model model = load_checkpoint_or_mismatch(checkpoint);
    const psf::StateSeries series = psf::read_state_series_csv_file(data);
    if (series.state_dim() != model.cfg.input_dim)
        throw MismatchError("checkpoint expects state dim " +
                            std::to_string(model.cfg.input_dim) + ", data has " +
                            std::to_string(series.state_dim()));
    const std::size_t l = model.cfg.seq_len;
    if (series.steps() < l)
        throw MismatchError("series of " + std::to_string(series.steps()) +
                            " steps shorter than window " + std::to_string(l));
    if (horizon == 0) horizon = model.cfg.horizon;

    const std::vector<psf::Vector> window(series.states.end() - l, series.states.end());
    const std::vector<psf::Vector> preds = psf::forecast(model, window, horizon);

    psf::StateSeries out_series;
    out_series.bus_count = series.bus_count;
    out_series.states = preds;
    const fs::path dir = ensure_out_dir(out);
    psf::write_state_series_csv(out_series, (dir / "forecast.csv").string());
    std::cout << "wrote " << (dir / "forecast.csv").string() << " (" << horizon << " rows)\n";
    return kExitOk;
}

psf::ModelConfig gradcheck_config(const std::string& arch) {
    psf::ModelConfig cfg;
    cfg.architecture = psf::architecture_from_string(arch);
    cfg.input_dim = 4;
    cfg.hidden_size = cfg.architecture == psf::Architecture::conv_bigru ? 5 : 4;
    cfg.depth = 2;
    cfg.seq_len = cfg.architecture == psf::Architecture::conv_bigru ? 6 : 5;
    cfg.horizon = 2;
    cfg.dropout_rate = 0.0;
    if (cfg.has_conv()) {
        cfg.conv.filters = 2;
        cfg.conv.kernel = 3;
        cfg.conv.stride = 1;
    }
    return cfg;
}

int cmd_gradcheck(std::vector<std::string> args) {
    CLI::App app{"verify analytic gradients against finite differences"};
    std::string config, arch = "all";
    double step = 1e-5, threshold = 1e-4;
    std::size_t trials = 20;
    std::uint64_t seed = 1;
    app.add_option("--config", config, "json config file");
    app.add_option("--arch", arch, "rnn|gru|bigru|conv_bigru|all");
    app.add_option("--step", step, "finite-difference step");
    app.add_option("--trials", trials, "random configurations per architecture");
    app.add_option("--threshold", threshold, "max relative error to pass");
    app.add_option("--seed", seed, "rng seed");
    parse_or_exit(app, merge_config_args(app, std::move(args)));

    std::vector<std::string> archs =
        arch == "all" ? std::vector<std::string>{"rnn", "gru", "bigru", "conv_bigru"}
                      : std::vector<std::string>{arch};
    bool ok = true;
    for (const std::string& a : archs) {
        const double err = psf::gradcheck(gradcheck_config(a), step, trials, seed);
        const bool pass = err < threshold;
        ok = ok && pass;
        std::cout << a << " max_rel_err=" << psf::format_g17(err) << " "
                  << (pass ? "PASS" : "FAIL") << "\n";
    }
    return ok ? kExitOk : kExitCheckFailed;
}

int cmd_benchmark(std::vector<std::string> args) {
    CLI::App app{"train arch x seq-len grid with repetitions, emit mean-NRMSE table"};
    std::string config;
    TrainFlags f;
    std::string archs = "rnn,bigru", seq_lens = "5,10,15,20";
    std::size_t reps = 30, jobs = std::max(1u, std::thread::hardware_concurrency());
    app.add_option("--config", config, "json config file");
    add_train_flags(app, f);
    app.add_option("--archs", archs, "comma-separated architectures");
    app.add_option("--seq-lens", seq_lens, "comma-separated window lengths");
    app.add_option("--reps", reps, "repetitions per cell");
    app.add_option("--jobs", jobs, "parallel training runs");
    parse_or_exit(app, merge_config_args(app, std::move(args)));
    if (reps < 1) throw psf::ValueError("--reps must be >= 1");
    if (jobs < 1) throw psf::ValueError("--jobs must be >= 1");

    const psf::StateSeries data = psf::read_state_series_csv_file(f.data);
    const std::vector<std::string> arch_list = split_commas(archs);
    std::vector<std::size_t> lens;
    for (const std::string& s : split_commas(seq_lens)) lens.push_back(std::stoul(s));
    if (arch_list.empty() || lens.empty())
        throw psf::ValueError("--archs and --seq-lens must be non-empty");

    struct Run {
        std::string arch;
        std::size_t seq_len = 0, rep = 0;
        std::uint64_t seed = 0;
        psf::TrainReport report;
    };
    std::vector<Run> runs;
    for (const std::string& a : arch_list)
        for (std::size_t l : lens)
            for (std::size_t r = 0; r < reps; ++r) {
                Run run;
                run.arch = a;
                run.seq_len = l;
                run.rep = r;
                run.seed = f.seed + runs.size(); // sequential seeding by run index
                runs.push_back(run);
            }

    const psf::SplitSpec split = parse_split(f.split);
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::string first_error;
    std::mutex err_mu;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= runs.size() || failed.load()) return;
            Run& run = runs[i];
            try {
                TrainFlags rf = f;
                rf.arch = run.arch;
                rf.seq_len = run.seq_len;
                const psf::ModelConfig cfg = config_from_flags(rf, data.state_dim(), run.seed);
                psf::TrainOptions opts = options_from_flags(rf);
                auto [model, report] = psf::train(cfg, data, split, opts, run.seed);
                run.report = report;
                std::printf("run %zu/%zu %s l=%zu rep=%zu nrmse=%.6g\n", i + 1, runs.size(),
                            run.arch.c_str(), run.seq_len, run.rep, report.test_nrmse);
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(err_mu);
                failed.store(true);
                if (first_error.empty()) first_error = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    const std::size_t n_workers = std::min(jobs, runs.size());
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
    if (failed.load()) throw psf::ValueError("benchmark run failed: " + first_error);

    const fs::path dir = ensure_out_dir(f.out);
    {
        std::ofstream os(dir / "benchmark_runs.csv");
        os << "run_index,arch,seq_len,rep,seed,test_nrmse,stopped_epoch,wall_clock_seconds\n";
        for (std::size_t i = 0; i < runs.size(); ++i) {
            const Run& r = runs[i];
            os << i << "," << r.arch << "," << r.seq_len << "," << r.rep << "," << r.seed << ","
               << psf::format_g17(r.report.test_nrmse) << "," << r.report.stopped_epoch << ","
               << psf::format_g17(r.report.wall_clock_seconds) << "\n";
        }
    }
    std::ofstream table(dir / "benchmark.csv");
    std::ostringstream pretty;
    table << "model";
    pretty << "model";
    for (std::size_t l : lens) {
        table << ",l=" << l;
        pretty << "\tl=" << l;
    }
    table << "\n";
    pretty << "\n";
    for (const std::string& a : arch_list) {
        table << a;
        pretty << a;
        for (std::size_t l : lens) {
            double mean = 0.0;
            std::size_t n = 0;
            for (const Run& r : runs)
                if (r.arch == a && r.seq_len == l) {
                    mean += r.report.test_nrmse;
                    ++n;
                }
            mean /= static_cast<double>(n);
            table << "," << psf::format_g17(mean);
            pretty << "\t" << mean;
        }
        table << "\n";
        pretty << "\n";
    }
    std::cout << pretty.str() << "wrote " << (dir / "benchmark.csv").string() << " and "
              << (dir / "benchmark_runs.csv").string() << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    const std::string usage =
        "usage: psf <generate|train|evaluate|forecast|gradcheck|benchmark> [flags]\n"
        "run `psf <command> --help` for per-command flags\n";
    if (argc < 2) {
        std::cerr << usage;
        return kExitBadArgs;
    }
    const std::string cmd = argv[1];
    std::vector<std::string> args(argv + 2, argv + argc);
    try {
        if (cmd == "generate") return cmd_generate(std::move(args));
        if (cmd == "train") return cmd_train(std::move(args));
        if (cmd == "evaluate") return cmd_evaluate(std::move(args));
        if (cmd == "forecast") return cmd_forecast(std::move(args));
        if (cmd == "gradcheck") return cmd_gradcheck(std::move(args));
        if (cmd == "benchmark") return cmd_benchmark(std::move(args));
        if (cmd == "--help" || cmd == "-h" || cmd == "help") {
            std::cout << usage;
            return kExitOk;
        }
        std::cerr << "unknown command: " << cmd << "\n" << usage;
        return kExitBadArgs;
    } catch (const MismatchError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitMismatch;
    } catch (const psf::ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitMismatch;
    } catch (const psf::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitParse;
    } catch (const psf::ValueError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadArgs;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitCheckFailed;
    }
}

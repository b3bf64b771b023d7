#pragma once

#include "esm/backtest.hpp"
#include "esm/config.hpp"
#include "esm/error.hpp"
#include "esm/esmsim.hpp"
#include "esm/log.hpp"
#include "esm/marketdata.hpp"
#include "esm/ned.hpp"
#include "esm/signals.hpp"
#include "esm/states.hpp"
#include "esm/turningpoints.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

namespace esm::cli {

/// Process exit codes.
enum ExitCode : int {
    exit_ok = 0,
    // Bad command line or config.
    exit_usage = 1,
    // Unreadable or invalid input data.
    exit_data = 2,
    // Unexpected failure inside the engine.
    exit_internal = 3,
};

struct CommonOptions {
    std::string config;
    std::vector<std::string> sets;
    std::string out;
    std::string input;
    std::string timezone;
    std::string proxy;
    std::string base;
    std::string fine;
    std::string mid;
    std::string coarse;
    bool skip_bad{false};
};

inline void add_common(CLI::App* sub, CommonOptions& c) {
    sub->add_option("input", c.input, "Bar CSV (overrides data=)");
    sub->add_option("-c,--config", c.config, "Config file of key=value lines");
    sub->add_option("--set", c.sets, "Override one config key (key=value), repeatable");
    sub->add_option("-o,--out", c.out, "Output directory or .csv file; '-' writes to stdout");
    sub->add_option("--timezone", c.timezone, "Session timezone: UTC, +HH:MM or an IANA name");
    sub->add_option("--proxy", c.proxy, "Flow split: candle, flow or auto");
    sub->add_option("--base", c.base, "Timeframe of the input bars");
    sub->add_option("--fine", c.fine, "Fine timeframe of the trio");
    sub->add_option("--mid", c.mid, "Mid timeframe of the trio");
    sub->add_option("--coarse", c.coarse, "Coarse timeframe of the trio");
    sub->add_flag("--skip-bad", c.skip_bad, "Skip malformed rows instead of failing");
}

/// Defaults, then the config file, then --set assignments, then dedicated flags.
inline RunConfig resolve_config(const CommonOptions& c) {
    RunConfig cfg;
    if (!c.config.empty()) cfg.apply_file(c.config);
    for (const auto& s : c.sets) cfg.set_assignment(s);
    const std::pair<const char*, const std::string*> flags[] = {
        {"timezone", &c.timezone}, {"proxy", &c.proxy}, {"base", &c.base},
        {"fine", &c.fine},         {"mid", &c.mid},     {"coarse", &c.coarse}};
    for (const auto& [key, value] : flags)
        if (!value->empty()) cfg.set(key, *value);
    if (!c.input.empty()) {
        cfg.data = c.input;
        cfg.ticks.reset();
    }
    if (!c.out.empty()) cfg.out = c.out;
    if (c.skip_bad) cfg.skip_bad = true;
    cfg.validate();
    return cfg;
}

inline std::vector<Bar> load_input_bars(const RunConfig& cfg) {
    std::vector<RowDiagnostic> diags;
    const ParseOptions opts{cfg.skip_bad, &diags};
    std::vector<Bar> bars;
    std::filesystem::path source;
    try {
        if (cfg.data) {
            source = *cfg.data;
            bars = load_bars(source, {}, opts);
        } else if (cfg.ticks) {
            source = *cfg.ticks;
            const auto ticks = tick_rule_classify(load_ticks(source, opts), cfg.tick_default_side);
            bars = bars_from_ticks(ticks, cfg.base);
        } else {
            throw ArgumentError("no input data: pass a bar CSV or set data= in the config");
        }
    } catch (const DataError& e) {
        if (source.empty()) throw;
        const std::string what = e.what();
        throw DataError(what.rfind("file not found", 0) == 0 ? what : source.string() + ": " + what);
    }
    for (const auto& d : diags) logger().warn("{}: row {} skipped: {}", source.string(), d.row, d.reason);
    logger().info("loaded {} bars from {}", bars.size(), source.string());
    return bars;
}

/// Writes one table to stdout (`-`), to a `.csv` path, or as `name` inside a directory.
inline void write_table(const std::filesystem::path& target, std::ostream& out, const std::string& name,
                        const std::function<void(std::ostream&)>& fill) {
    if (target == "-") {
        fill(out);
        return;
    }
    std::filesystem::path file = target;
    std::error_code ec;
    if (target.extension() == ".csv" || target.extension() == ".json") {
        if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path(), ec);
    } else {
        std::filesystem::create_directories(target, ec);
        file = target / name;
    }
    std::ofstream f(file, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + file.string());
    fill(f);
    if (!f) throw DataError("write failed: " + file.string());
    logger().info("wrote {}", file.string());
}

struct SimulateOptions {
    std::size_t bars{390};
    std::size_t substeps{10};
    double lambda{1.0};
    double dt{1.0 / 3900.0};
    double p0{100.0};
    std::string ned{"const:0.2"};
    std::string m{"zero"};
    std::string start{"2025-01-02T14:30:00Z"};
    long long bar_seconds{60};
    double volume{1000.0};
    bool no_flow{false};
    std::string out{"-"};
};

namespace detail {

inline std::vector<double> spec_numbers(std::string_view body, std::string_view what) {
    std::vector<double> out;
    for (auto part : esm::detail::split_csv(body)) {
        auto v = esm::detail::parse_double(part);
        if (!v) throw ArgumentError("bad number in " + std::string(what) + " spec: '" + std::string(part) + "'");
        out.push_back(*v);
    }
    return out;
}

/// `const:c` or `sine:amplitude,period` (period in simulation time units).
inline NedPath parse_ned_spec(std::string_view s) {
    if (s.rfind("const:", 0) == 0) {
        const auto v = spec_numbers(s.substr(6), "--ned");
        if (v.size() != 1) throw ArgumentError("--ned const takes one value");
        return NedPath::constant(v[0]);
    }
    if (s.rfind("sine:", 0) == 0) {
        const auto v = spec_numbers(s.substr(5), "--ned");
        if (v.size() != 2 || !(v[1] > 0.0)) throw ArgumentError("--ned sine takes amplitude,period with period > 0");
        const double amp = v[0], period = v[1];
        return NedPath::function([amp, period](double t) { return amp * std::sin(2.0 * std::numbers::pi * t / period); });
    }
    throw ArgumentError("--ned expects const:c or sine:amplitude,period");
}

inline MTerm parse_m_spec(std::string_view s) {
    if (s == "zero" || s == "0") return MTerm::zero();
    if (s.rfind("const:", 0) == 0) {
        const auto v = spec_numbers(s.substr(6), "--m");
        if (v.size() != 1) throw ArgumentError("--m const takes one value");
        return MTerm::constant(v[0]);
    }
    if (s.rfind("sine:", 0) == 0) {
        const auto v = spec_numbers(s.substr(5), "--m");
        if (v.size() != 2) throw ArgumentError("--m sine takes amplitude,period");
        return MTerm::sinusoid(v[0], v[1]);
    }
    throw ArgumentError("--m expects zero, const:c or sine:amplitude,period");
}

}  // namespace detail

inline std::vector<Bar> simulate_bars(const SimulateOptions& o) {
    if (o.bar_seconds <= 0) throw ArgumentError("--bar-seconds must be positive");
    const auto start = try_parse_timestamp(o.start);
    if (!start) throw ArgumentError("--start is not a timestamp: '" + o.start + "'");
    EsmParams params;
    params.h_gain = o.lambda;
    params.dt = o.dt;
    params.p0 = o.p0;
    params.ned_path = detail::parse_ned_spec(o.ned);
    params.m_term = detail::parse_m_spec(o.m);
    std::vector<Timestamp> stamps;
    if (o.bar_seconds == 86400) {
        stamps = business_days(std::chrono::floor<std::chrono::days>(*start), o.bars);
    } else {
        for (std::size_t i = 0; i < o.bars; ++i)
            stamps.push_back(*start + std::chrono::seconds{o.bar_seconds * static_cast<long long>(i)});
    }
    SyntheticBarOptions bo;
    bo.substeps = o.substeps;
    bo.volume = o.volume;
    bo.flow_columns = !o.no_flow;
    return synthetic_bars(params, stamps, bo);
}

inline EventLog run_replay(const RunConfig& cfg, std::span<const Bar> bars) {
    return replay(bars, cfg.pipeline(cfg.resolve_proxy(bars)));
}

inline BacktestReport run_report(const RunConfig& cfg, std::span<const Bar> bars, const EventLog& log) {
    return build_report(bars, log, cfg.reversal, cfg.clock(), cfg.first_prev_close, cfg.hash());
}

/// Entry point shared by the executable and the tests.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Extended Samuelson Model signal engine"};
    app.name("esm");
    app.require_subcommand(1);
    app.footer("Exit codes: 0 ok, 1 usage or config error, 2 data error, 3 internal error.\n"
               "ESM_LOG=error|info|debug|off sets stderr verbosity.");

    CommonOptions common;
    SimulateOptions sim;
    std::string ned_tf;

    auto* ingest = app.add_subcommand("ingest", "Validate bar or tick input and write canonical bars.csv");
    add_common(ingest, common);
    auto* simulate = app.add_subcommand("simulate", "Generate synthetic bars from the rate equation");
    simulate->add_option("--bars", sim.bars, "Number of bars")->capture_default_str();
    simulate->add_option("--substeps", sim.substeps, "Euler steps per bar")->capture_default_str();
    simulate->add_option("--lambda", sim.lambda, "Gain of the NED term")->capture_default_str();
    simulate->add_option("--dt", sim.dt, "Euler step in simulation time")->capture_default_str();
    simulate->add_option("--p0", sim.p0, "Initial price")->capture_default_str();
    simulate->add_option("--ned", sim.ned, "Driving NED: const:c or sine:amplitude,period")->capture_default_str();
    simulate->add_option("--m", sim.m, "M term: zero, const:c or sine:amplitude,period")->capture_default_str();
    simulate->add_option("--start", sim.start, "First bar timestamp")->capture_default_str();
    simulate->add_option("--bar-seconds", sim.bar_seconds, "Bar spacing; 86400 gives weekdays")->capture_default_str();
    simulate->add_option("--volume", sim.volume, "Volume per bar")->capture_default_str();
    simulate->add_flag("--no-flow", sim.no_flow, "Omit buy/sell volume columns");
    simulate->add_option("-o,--out", sim.out, "Output directory or .csv file; '-' writes to stdout")->capture_default_str();
    auto* ned = app.add_subcommand("ned", "NED series on one timeframe");
    add_common(ned, common);
    ned->add_option("--timeframe", ned_tf, "Timeframe of the series (default: fine)");
    auto* states = app.add_subcommand("states", "Market state per fine window");
    add_common(states, common);
    auto* signals = app.add_subcommand("signals", "S1-S6 events on the fine timeframe");
    add_common(signals, common);
    auto* turnpoints = app.add_subcommand("turnpoints", "T2/T4 turning levels per fine window");
    add_common(turnpoints, common);
    auto* backtest = app.add_subcommand("backtest", "Full replay with reports, chart and run.json");
    add_common(backtest, common);
    auto* report = app.add_subcommand("report", "Reversal scores and volatility table");
    add_common(report, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? exit_ok : exit_usage;
    }

    try {
        if (simulate->parsed()) {
            const auto bars = simulate_bars(sim);
            write_table(sim.out, out, "bars.csv", [&](std::ostream& o) { write_bar_csv(o, bars); });
            return exit_ok;
        }

        const RunConfig cfg = resolve_config(common);
        const auto bars = load_input_bars(cfg);

        if (ingest->parsed()) {
            write_table(cfg.out, out, "bars.csv", [&](std::ostream& o) { write_bar_csv(o, bars); });
        } else if (ned->parsed()) {
            const Timeframe tf = ned_tf.empty() ? cfg.fine : Timeframe::parse(ned_tf);
            const auto series =
                ned_series(bars, cfg.base, tf, cfg.resolve_proxy(bars), {cfg.clock(), cfg.recompute_proxy_on_coarse});
            write_table(cfg.out, out, "ned.csv", [&](std::ostream& o) { write_ned_csv(o, series); });
        } else if (states->parsed()) {
            const auto s = state_series(bars, cfg.pipeline(cfg.resolve_proxy(bars)).trio);
            write_table(cfg.out, out, "states.csv", [&](std::ostream& o) { write_state_csv(o, s); });
        } else if (signals->parsed()) {
            const auto p = cfg.pipeline(cfg.resolve_proxy(bars));
            const auto fine_bars = resample_bars(bars, p.trio.base, p.trio.fine, p.trio.clock);
            const auto series = ned_series(bars, p.trio.base, p.trio.fine, p.trio.proxy, {p.trio.clock, false});
            const auto events = detect_signals(fine_bars, series, p.detector);
            write_table(cfg.out, out, "signals.csv", [&](std::ostream& o) { write_signal_csv(o, events); });
        } else if (turnpoints->parsed()) {
            const auto p = cfg.pipeline(cfg.resolve_proxy(bars));
            const auto pairs = turning_points(bars, p.trio, p.solver);
            write_table(cfg.out, out, "turning_points.csv", [&](std::ostream& o) { write_turning_csv(o, pairs); });
        } else if (backtest->parsed()) {
            if (cfg.out == "-") throw ArgumentError("backtest writes a directory; '-' is not accepted for --out");
            const auto log = run_replay(cfg, bars);
            const auto rep = run_report(cfg, bars, log);
            emit_report(rep, log, cfg.out, cfg.echo());
            logger().info("backtest: {} fine windows, {} signals, outputs in {}", log.rows.size(), log.signals().size(),
                          cfg.out.string());
        } else if (report->parsed()) {
            const auto log = run_replay(cfg, bars);
            const auto rep = run_report(cfg, bars, log);
            if (cfg.out == "-") {
                write_reversal_csv(out, rep.reversals);
                out << '\n';
                write_volatility_csv(out, rep.volatility);
            } else {
                write_table(cfg.out, out, "reversals.csv", [&](std::ostream& o) { write_reversal_csv(o, rep.reversals); });
                write_table(cfg.out, out, "volatility.csv",
                            [&](std::ostream& o) { write_volatility_csv(o, rep.volatility); });
                write_table(cfg.out, out, "run.json", [&](std::ostream& o) { o << run_json(rep, log, cfg.echo()); });
            }
        }
        return exit_ok;
    } catch (const ArgumentError& e) {
        err << "esm: " << e.what() << '\n';
        return exit_usage;
    } catch (const ConfigError& e) {
        err << "esm: config: " << e.what() << '\n';
        return exit_usage;
    } catch (const DataError& e) {
        err << "esm: data: " << e.what() << '\n';
        return exit_data;
    } catch (const UndefinedFlowError& e) {
        err << "esm: data: " << e.what() << '\n';
        return exit_data;
    } catch (const std::exception& e) {
        err << "esm: internal error: " << e.what() << '\n';
        return exit_internal;
    }
}

}  // namespace esm::cli

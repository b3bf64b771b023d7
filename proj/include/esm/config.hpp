#pragma once

#include "esm/backtest.hpp"
#include "esm/error.hpp"
#include "esm/marketdata.hpp"
#include "esm/ned.hpp"
#include "esm/states.hpp"
#include "esm/timeframe.hpp"

#include "json.hpp"

#include <charconv>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>

namespace esm {

/// Resolved run settings. Built from defaults, then a `key = value` file, then
/// command-line overrides, each layer replacing the previous one.
struct RunConfig {
    std::optional<std::filesystem::path> data;
    std::optional<std::filesystem::path> ticks;
    Timeframe base{Timeframe::day()};
    Timeframe fine{Timeframe::day()};
    Timeframe mid{Timeframe::week()};
    Timeframe coarse{Timeframe::month()};
    // candle, flow, or auto (flow when every bar has buy/sell columns).
    std::string proxy{"auto"};
    ZeroRule zero_rule{ZeroRule::treat_as_n};
    std::string timezone{"UTC"};
    bool skip_bad{false};
    bool recompute_proxy_on_coarse{false};
    DetectorConfig detector{};
    SolverOptions solver{};
    double proximity{5e-3};
    std::size_t signal_ttl{5};
    ReversalSpec reversal{};
    std::optional<double> first_prev_close;
    TradeSide tick_default_side{TradeSide::buy};
    std::filesystem::path out{"esm-out"};

    static const std::vector<std::string_view>& keys() {
        static const std::vector<std::string_view> k{
            "data",      "ticks",     "base",        "fine",           "mid",         "coarse",
            "proxy",     "zero_rule", "timezone",    "skip_bad",       "recompute_proxy_on_coarse",
            "k",         "eps_price", "eps_ned",     "pair_window",    "trend_lookback",
            "proximity", "signal_ttl", "bracket_width", "tp_tol",      "horizon",     "move_threshold",
            "first_prev_close", "tick_default_side", "out"};
        return k;
    }

    /// Sets one key. Relative paths resolve against `base_dir`.
    void set(std::string_view key, std::string_view value, const std::filesystem::path& base_dir = {}) {
        const std::string v{detail::trim(value)};
        auto path = [&] {
            std::filesystem::path p(v);
            return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
        };
        if (key == "data") data = path();
        else if (key == "ticks") ticks = path();
        else if (key == "base") base = parse_tf(key, v);
        else if (key == "fine") fine = parse_tf(key, v);
        else if (key == "mid") mid = parse_tf(key, v);
        else if (key == "coarse") coarse = parse_tf(key, v);
        else if (key == "proxy") {
            if (v != "auto") parse_proxy(v);
            proxy = v;
        } else if (key == "zero_rule") zero_rule = parse_zero_rule(v);
        else if (key == "timezone") {
            SessionClock::parse(v);
            timezone = v;
        } else if (key == "skip_bad") skip_bad = parse_bool(key, v);
        else if (key == "recompute_proxy_on_coarse") recompute_proxy_on_coarse = parse_bool(key, v);
        else if (key == "k") detector.k = parse_count(key, v);
        else if (key == "eps_price") detector.eps_price = parse_real(key, v);
        else if (key == "eps_ned") detector.eps_ned = parse_real(key, v);
        else if (key == "pair_window") detector.pair_window = parse_count(key, v);
        else if (key == "trend_lookback") detector.trend_lookback = parse_count(key, v);
        else if (key == "proximity") proximity = parse_real(key, v);
        else if (key == "signal_ttl") signal_ttl = parse_count(key, v);
        else if (key == "bracket_width") solver.bracket_width = parse_real(key, v);
        else if (key == "tp_tol") solver.tol = parse_real(key, v);
        else if (key == "horizon") reversal.horizon = parse_count(key, v);
        else if (key == "move_threshold") reversal.move_threshold = parse_real(key, v);
        else if (key == "first_prev_close") {
            if (v.empty() || v == "none") first_prev_close.reset();
            else first_prev_close = parse_real(key, v);
        } else if (key == "tick_default_side") {
            if (v == "buy") tick_default_side = TradeSide::buy;
            else if (v == "sell") tick_default_side = TradeSide::sell;
            else throw ConfigError("tick_default_side must be buy or sell");
        } else if (key == "out") out = path();
        else throw ConfigError("unknown config key '" + std::string(key) + "'");
    }

    /// `key=value` assignment as given on the command line.
    void set_assignment(std::string_view kv, const std::filesystem::path& base_dir = {}) {
        const auto eq = kv.find('=');
        if (eq == std::string_view::npos) throw ConfigError("expected key=value, got '" + std::string(kv) + "'");
        set(detail::trim(kv.substr(0, eq)), kv.substr(eq + 1), base_dir);
    }

    /// Applies a config file: one `key = value` per line, `#` starts a comment.
    void apply_file(const std::filesystem::path& path) {
        const std::string text = read_input(path);
        std::istringstream in(text);
        std::string line;
        std::size_t n = 0;
        const auto dir = path.parent_path();
        while (std::getline(in, line)) {
            ++n;
            if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            const auto body = detail::trim(line);
            if (body.empty()) continue;
            try {
                set_assignment(body, dir);
            } catch (const ConfigError& e) {
                throw ConfigError(path.string() + ":" + std::to_string(n) + ": " + e.what());
            }
        }
    }

    SessionClock clock() const { return SessionClock::parse(timezone); }

    ProxyKind resolve_proxy(std::span<const Bar> bars) const {
        if (proxy == "auto") return has_flow_columns(bars) ? ProxyKind::flow : ProxyKind::candle;
        return parse_proxy(proxy);
    }

    PipelineConfig pipeline(ProxyKind resolved) const {
        PipelineConfig p;
        p.trio.base = base;
        p.trio.fine = fine;
        p.trio.mid = mid;
        p.trio.coarse = coarse;
        p.trio.proxy = resolved;
        p.trio.zero_rule = zero_rule;
        p.trio.clock = clock();
        p.detector = detector;
        p.solver = solver;
        p.proximity = proximity;
        p.signal_ttl = signal_ttl;
        return p;
    }

    void validate() const {
        pipeline(ProxyKind::candle).validate();
        reversal.validate();
        if (!(solver.bracket_width > 0.0 && solver.bracket_width < 1.0))
            throw ConfigError("bracket_width must be in (0, 1)");
        if (!(solver.tol > 0.0)) throw ConfigError("tp_tol must be positive");
        if (first_prev_close && !(*first_prev_close > 0.0)) throw ConfigError("first_prev_close must be positive");
    }

    /// Every key with its resolved value, as strings. Paths are echoed as given.
    nlohmann::json echo() const {
        nlohmann::json j = nlohmann::json::object();
        j["data"] = data ? data->generic_string() : "";
        j["ticks"] = ticks ? ticks->generic_string() : "";
        j["base"] = base.label();
        j["fine"] = fine.label();
        j["mid"] = mid.label();
        j["coarse"] = coarse.label();
        j["proxy"] = proxy;
        j["zero_rule"] = std::string(to_string(zero_rule));
        j["timezone"] = timezone;
        j["skip_bad"] = skip_bad ? "true" : "false";
        j["recompute_proxy_on_coarse"] = recompute_proxy_on_coarse ? "true" : "false";
        j["k"] = std::to_string(detector.k);
        j["eps_price"] = format_number(detector.eps_price);
        j["eps_ned"] = format_number(detector.eps_ned);
        j["pair_window"] = std::to_string(detector.pair_window);
        j["trend_lookback"] = std::to_string(detector.trend_lookback);
        j["proximity"] = format_number(proximity);
        j["signal_ttl"] = std::to_string(signal_ttl);
        j["bracket_width"] = format_number(solver.bracket_width);
        j["tp_tol"] = format_number(solver.tol);
        j["horizon"] = std::to_string(reversal.horizon);
        j["move_threshold"] = format_number(reversal.move_threshold);
        j["first_prev_close"] = first_prev_close ? format_number(*first_prev_close) : "none";
        j["tick_default_side"] = tick_default_side == TradeSide::sell ? "sell" : "buy";
        return j;
    }

    /// Hash of the settings that shape the outputs (paths excluded).
    std::string hash() const {
        auto j = echo();
        j.erase("data");
        j.erase("ticks");
        return hex64(fnv1a64(j.dump()));
    }

private:
    static Timeframe parse_tf(std::string_view key, const std::string& v) {
        try {
            return Timeframe::parse(v);
        } catch (const Error& e) {
            throw ConfigError(std::string(key) + ": " + e.what());
        }
    }

    static bool parse_bool(std::string_view key, const std::string& v) {
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw ConfigError(std::string(key) + " expects true or false, got '" + v + "'");
    }

    static double parse_real(std::string_view key, const std::string& v) {
        auto d = detail::parse_double(v);
        if (!d || !std::isfinite(*d)) throw ConfigError(std::string(key) + " expects a number, got '" + v + "'");
        return *d;
    }

    static std::size_t parse_count(std::string_view key, const std::string& v) {
        std::size_t n = 0;
        const auto* end = v.data() + v.size();
        const auto r = std::from_chars(v.data(), end, n);
        if (v.empty() || r.ec != std::errc{} || r.ptr != end)
            throw ConfigError(std::string(key) + " expects a non-negative integer, got '" + v + "'");
        return n;
    }
};

}  // namespace esm

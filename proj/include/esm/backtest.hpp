#pragma once

#include "esm/error.hpp"
#include "esm/marketdata.hpp"
#include "esm/ned.hpp"
#include "esm/signals.hpp"
#include "esm/states.hpp"
#include "esm/turningpoints.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace esm {

struct PipelineConfig {
    TrioConfig trio{};
    DetectorConfig detector{};
    SolverOptions solver{};
    // Relative distance within which a turning level counts as near the price.
    double proximity{5e-3};
    // Signals stay active for this many fine bars, the emitting bar included.
    std::size_t signal_ttl{5};

    void validate() const {
        trio.validate();
        detector.validate();
        if (!(proximity >= 0.0)) throw ConfigError("proximity must be >= 0");
        if (signal_ttl < 1) throw ConfigError("signal_ttl must be >= 1");
    }
};

/// Everything known at the close of one fine window.
struct LogRow {
    std::size_t index{};
    Timestamp at{};
    double close{};
    std::optional<double> fine_ned;
    std::optional<double> mid_ned;
    std::optional<double> coarse_ned;
    MarketState state{};
    TurningPair turning{};
    std::vector<SignalEvent> signals;
    Outlook outlook{};

    friend bool operator==(const LogRow&, const LogRow&) = default;
};

struct EventLog {
    Timeframe timeframe{};
    // Fine-window candles the detector and the scorer run on.
    std::vector<Bar> fine_bars;
    std::vector<LogRow> rows;

    std::vector<SignalEvent> signals() const {
        std::vector<SignalEvent> out;
        for (const auto& r : rows) out.insert(out.end(), r.signals.begin(), r.signals.end());
        return out;
    }

    friend bool operator==(const EventLog&, const EventLog&) = default;
};

/// Runs states, turning points, signals and the outlook over the bars, one row per
/// fine window. Every row only depends on bars up to that window's last bar.
inline EventLog replay(std::span<const Bar> bars, const PipelineConfig& cfg) {
    cfg.validate();
    EventLog log;
    log.timeframe = cfg.trio.fine;
    if (bars.empty()) return log;

    TrioSigner signer(cfg.trio.zero_rule);
    SignalDetector detector(cfg.detector, cfg.trio.fine);
    std::vector<SignalEvent> active;
    double carried_ned = 0.0;
    for (const TrioStep& s : trio_steps(bars, cfg.trio)) {
        LogRow row;
        row.index = s.fine_index;
        row.at = bars[s.bar].timestamp;
        row.close = bars[s.bar].close;
        row.fine_ned = try_ned(s.fine_flow);
        row.mid_ned = try_ned(s.mid_flow);
        row.coarse_ned = try_ned(s.coarse_flow);
        const SignTrio trio = signer.next(s);
        row.state = {classify_state(trio), trio, row.at};
        try {
            row.turning = turning_pair(bars, s, cfg.solver);
        } catch (const InternalError& e) {
            throw InternalError(std::string(e.what()) + " (bar " + format_timestamp(row.at) + ")");
        }

        Bar fine_bar = aggregate(bars, s.fine);
        fine_bar.partial = false;
        log.fine_bars.push_back(fine_bar);
        if (row.fine_ned) carried_ned = *row.fine_ned;
        row.signals = detector.step(fine_bar, carried_ned);

        std::erase_if(active, [&](const SignalEvent& e) { return row.index - e.bar >= cfg.signal_ttl; });
        active.insert(active.end(), row.signals.begin(), row.signals.end());
        row.outlook = combine_outlook(row.state, active, row.turning, row.close, cfg.proximity);
        log.rows.push_back(std::move(row));
    }
    return log;
}

// ─── reversal scoring ────────────────────────────────────────────────────────

struct ReversalSpec {
    std::size_t horizon{7};
    double move_threshold{5e-3};

    void validate() const {
        if (horizon < 1) throw ConfigError("horizon must be >= 1");
        if (!(move_threshold > 0.0)) throw ConfigError("move_threshold must be > 0");
    }
};

enum class Outcome { hit, miss, unresolved };

inline std::string_view to_string(Outcome o) {
    return o == Outcome::hit ? "hit" : o == Outcome::miss ? "miss" : "unresolved";
}

struct KindScore {
    std::size_t emitted{};
    std::size_t hits{};
    std::size_t misses{};
    std::size_t unresolved{};

    std::optional<double> hit_rate() const {
        if (hits + misses == 0) return std::nullopt;
        return static_cast<double>(hits) / static_cast<double>(hits + misses);
    }

    void add(Outcome o) {
        ++emitted;
        (o == Outcome::hit ? hits : o == Outcome::miss ? misses : unresolved)++;
    }

    friend bool operator==(const KindScore&, const KindScore&) = default;
};

struct ScoredEvent {
    SignalKind kind{};
    std::size_t bar{};
    Outcome outcome{};

    friend bool operator==(const ScoredEvent&, const ScoredEvent&) = default;
};

/// Reversal kinds only: S3 and S6 forecast a rise, S4 and S5 a fall.
inline constexpr std::array<SignalKind, 4> reversal_kinds{SignalKind::s3, SignalKind::s4, SignalKind::s5,
                                                          SignalKind::s6};

struct ReversalScores {
    std::map<SignalKind, KindScore> by_kind;
    KindScore total;
    std::vector<ScoredEvent> events;

    friend bool operator==(const ReversalScores&, const ReversalScores&) = default;
};

/// Outcome of a reversal forecast at fine bar `t` against the following closes.
inline Outcome score_reversal(std::span<const Bar> fine_bars, std::size_t t, SignalKind kind, const ReversalSpec& spec) {
    if (t + spec.horizon >= fine_bars.size()) return Outcome::unresolved;
    const double base = fine_bars[t].close;
    for (std::size_t j = t + 1; j <= t + spec.horizon; ++j) {
        const double c = fine_bars[j].close;
        if (polarity(kind) > 0 ? c >= base * (1.0 + spec.move_threshold) : c <= base * (1.0 - spec.move_threshold))
            return Outcome::hit;
    }
    return Outcome::miss;
}

inline ReversalScores evaluate_reversals(const EventLog& log, std::span<const Bar> fine_bars, const ReversalSpec& spec = {}) {
    spec.validate();
    if (log.rows.size() != fine_bars.size())
        throw ArgumentError("evaluate_reversals: log has " + std::to_string(log.rows.size()) + " rows but " +
                            std::to_string(fine_bars.size()) + " bars were given");
    for (std::size_t i = 0; i < fine_bars.size(); ++i)
        if (log.rows[i].at < fine_bars[i].timestamp)
            throw ArgumentError("evaluate_reversals: log row " + std::to_string(i) + " does not match the bars");
    for (std::size_t i = 0; i + 1 < fine_bars.size(); ++i)
        if (log.rows[i].at >= fine_bars[i + 1].timestamp)
            throw ArgumentError("evaluate_reversals: log row " + std::to_string(i) + " does not match the bars");

    ReversalScores scores;
    for (auto k : reversal_kinds) scores.by_kind[k];
    for (const auto& row : log.rows) {
        for (const auto& e : row.signals) {
            if (e.kind == SignalKind::s1 || e.kind == SignalKind::s2) continue;
            const Outcome o = score_reversal(fine_bars, e.bar, e.kind, spec);
            scores.by_kind[e.kind].add(o);
            scores.total.add(o);
            scores.events.push_back({e.kind, e.bar, o});
        }
    }
    return scores;
}

inline ReversalScores evaluate_reversals(const EventLog& log, const ReversalSpec& spec = {}) {
    return evaluate_reversals(log, log.fine_bars, spec);
}

// ─── volatility ──────────────────────────────────────────────────────────────

struct VolatilityRow {
    Date date{};
    double high{};
    double low{};
    double prev_close{};
    double value{};

    friend bool operator==(const VolatilityRow&, const VolatilityRow&) = default;
};

struct VolatilityTable {
    std::vector<VolatilityRow> rows;
    std::optional<double> mean;
    std::vector<std::string> notes;

    friend bool operator==(const VolatilityTable&, const VolatilityTable&) = default;
};

/// Session V with the previous session's last close as the reference. The first
/// session needs `first_prev_close` and is omitted with a note otherwise.
inline VolatilityTable volatility_report(std::span<const Bar> bars, const SessionClock& clock = {},
                                         std::optional<double> first_prev_close = std::nullopt) {
    VolatilityTable table;
    const auto sessions = split_sessions(bars, clock);
    double sum = 0.0;
    for (std::size_t s = 0; s < sessions.size(); ++s) {
        const auto& sess = sessions[s];
        std::optional<double> prev = s == 0 ? first_prev_close : std::optional<double>(bars[sessions[s - 1].last].close);
        if (!prev) {
            table.notes.push_back("session " + format_date(sess.date) + " omitted: no previous close");
            continue;
        }
        const auto day = bars.subspan(sess.first, sess.last - sess.first + 1);
        VolatilityRow row{sess.date, day.front().high, day.front().low, *prev, session_volatility(day, *prev)};
        for (const Bar& b : day) {
            row.high = std::max(row.high, b.high);
            row.low = std::min(row.low, b.low);
        }
        sum += row.value;
        table.rows.push_back(row);
    }
    if (!table.rows.empty()) table.mean = sum / static_cast<double>(table.rows.size());
    return table;
}

// ─── report ──────────────────────────────────────────────────────────────────

inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Hash of the canonical bar CSV, so formatting differences in the input do not matter.
inline std::string data_hash(std::span<const Bar> bars) {
    std::ostringstream ss;
    write_bar_csv(ss, bars);
    return hex64(fnv1a64(ss.str()));
}

struct RunMetadata {
    std::string config_hash;
    std::string data_hash;
    std::optional<Timestamp> first;
    std::optional<Timestamp> last;
    std::size_t base_bars{};
};

struct BacktestReport {
    ReversalScores reversals;
    VolatilityTable volatility;
    // occupancy[i]: fine windows spent in state i + 1.
    std::array<std::size_t, 8> occupancy{};
    RunMetadata meta;
};

inline std::array<std::size_t, 8> state_occupancy(const EventLog& log) {
    std::array<std::size_t, 8> h{};
    for (const auto& r : log.rows) ++h[static_cast<std::size_t>(r.state.index - 1)];
    return h;
}

inline void write_states_csv(std::ostream& out, const EventLog& log) {
    std::vector<MarketState> states;
    for (const auto& r : log.rows) states.push_back(r.state);
    write_state_csv(out, states);
}

inline void write_signals_csv(std::ostream& out, const EventLog& log) { write_signal_csv(out, log.signals()); }

inline void write_turning_points_csv(std::ostream& out, const EventLog& log) {
    std::vector<TurningPair> pairs;
    for (const auto& r : log.rows) pairs.push_back(r.turning);
    write_turning_csv(out, pairs);
}

inline void write_outlooks_csv(std::ostream& out, const EventLog& log) {
    std::vector<Outlook> o;
    for (const auto& r : log.rows) o.push_back(r.outlook);
    write_outlook_csv(out, o);
}

inline void write_reversal_csv(std::ostream& out, const ReversalScores& s) {
    out << "kind,emitted,hits,misses,unresolved,hit_rate\n";
    auto line = [&](std::string_view name, const KindScore& k) {
        const auto rate = k.hit_rate();
        out << name << ',' << k.emitted << ',' << k.hits << ',' << k.misses << ',' << k.unresolved << ','
            << (rate ? format_number(*rate) : std::string("NA")) << '\n';
    };
    for (auto k : reversal_kinds) {
        const auto it = s.by_kind.find(k);
        line(to_string(k), it == s.by_kind.end() ? KindScore{} : it->second);
    }
    line("all", s.total);
}

inline void write_volatility_csv(std::ostream& out, const VolatilityTable& t) {
    out << "date,high,low,prev_close,v\n";
    for (const auto& r : t.rows)
        out << format_date(r.date) << ',' << format_number(r.high) << ',' << format_number(r.low) << ','
            << format_number(r.prev_close) << ',' << format_number(r.value) << '\n';
    out << "mean,,,," << (t.mean ? format_number(*t.mean) : std::string("NA")) << '\n';
}

namespace detail {

inline std::string fixed2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline const char* state_colour(int index) {
    static constexpr const char* colours[] = {"#b2182b", "#d6604d", "#f4a582", "#fddbc7",
                                              "#d1e5f0", "#92c5de", "#4393c3", "#2166ac"};
    return colours[std::clamp(index, 1, 8) - 1];
}

}  // namespace detail

/// Price line over a band coloured by state, short ticks at solved T2/T4 levels
/// and one marker per signal event (up triangles bullish, down triangles bearish).
inline std::string render_chart_svg(const EventLog& log) {
    using detail::fixed2;
    constexpr double width = 1000, height = 420, left = 60, right = 20, top = 20, band = 24, bottom = 40;
    const double plot_w = width - left - right;
    const double plot_h = height - top - bottom - band;
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
    svg << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"#ffffff\"/>\n";
    svg << "<line class=\"axis\" x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w
        << "\" y2=\"" << top + plot_h << "\" stroke=\"#000000\"/>\n";
    svg << "<line class=\"axis\" x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h
        << "\" stroke=\"#000000\"/>\n";
    if (log.rows.empty()) {
        svg << "</svg>\n";
        return svg.str();
    }

    double lo = log.fine_bars.front().low, hi = log.fine_bars.front().high;
    for (const Bar& b : log.fine_bars) {
        lo = std::min(lo, b.low);
        hi = std::max(hi, b.high);
    }
    if (hi <= lo) {
        hi += 0.5;
        lo -= 0.5;
    }
    const std::size_t n = log.rows.size();
    const double step = plot_w / static_cast<double>(n);
    auto x_of = [&](std::size_t i) { return left + step * (static_cast<double>(i) + 0.5); };
    auto y_of = [&](double p) { return top + plot_h * (hi - p) / (hi - lo); };

    svg << "<text x=\"" << left - 4 << "\" y=\"" << top + 4 << "\" font-size=\"10\" text-anchor=\"end\">"
        << fixed2(hi) << "</text>\n";
    svg << "<text x=\"" << left - 4 << "\" y=\"" << top + plot_h << "\" font-size=\"10\" text-anchor=\"end\">"
        << fixed2(lo) << "</text>\n";
    svg << "<text x=\"" << left << "\" y=\"" << height - 8 << "\" font-size=\"10\">"
        << format_timestamp(log.rows.front().at) << "</text>\n";
    svg << "<text x=\"" << left + plot_w << "\" y=\"" << height - 8 << "\" font-size=\"10\" text-anchor=\"end\">"
        << format_timestamp(log.rows.back().at) << "</text>\n";

    svg << "<g class=\"state-band\">\n";
    for (std::size_t i = 0; i < n; ++i)
        svg << "<rect x=\"" << fixed2(left + step * static_cast<double>(i)) << "\" y=\"" << fixed2(top + plot_h + 4)
            << "\" width=\"" << fixed2(step) << "\" height=\"" << band - 8 << "\" fill=\""
            << detail::state_colour(log.rows[i].state.index) << "\"><title>state " << log.rows[i].state.index
            << "</title></rect>\n";
    svg << "</g>\n";

    svg << "<polyline class=\"price\" fill=\"none\" stroke=\"#333333\" stroke-width=\"1\" points=\"";
    for (std::size_t i = 0; i < n; ++i) svg << (i ? " " : "") << fixed2(x_of(i)) << ',' << fixed2(y_of(log.rows[i].close));
    svg << "\"/>\n";

    svg << "<g class=\"turning-levels\">\n";
    for (std::size_t i = 0; i < n; ++i) {
        for (const auto* f : {&log.rows[i].turning.t2, &log.rows[i].turning.t4}) {
            if (f->status != TurnStatus::solved || !f->level || *f->level < lo || *f->level > hi) continue;
            const bool t2 = f->kind == TurnKind::t2;
            svg << "<line class=\"" << (t2 ? "t2-level" : "t4-level") << "\" x1=\"" << fixed2(x_of(i) - step / 2)
                << "\" y1=\"" << fixed2(y_of(*f->level)) << "\" x2=\"" << fixed2(x_of(i) + step / 2) << "\" y2=\""
                << fixed2(y_of(*f->level)) << "\" stroke=\"" << (t2 ? "#1b7837" : "#762a83") << "\"/>\n";
        }
    }
    svg << "</g>\n";

    svg << "<g class=\"signals\">\n";
    for (const auto& row : log.rows) {
        for (const auto& e : row.signals) {
            const double x = x_of(e.bar);
            const bool up = polarity(e.kind) > 0;
            const double y = up ? y_of(log.fine_bars[e.bar].low) + 8 : y_of(log.fine_bars[e.bar].high) - 8;
            const double d = up ? 5 : -5;
            svg << "<path class=\"signal-marker\" data-kind=\"" << to_string(e.kind) << "\" d=\"M" << fixed2(x) << ','
                << fixed2(y - d) << " L" << fixed2(x - 4) << ',' << fixed2(y + d) << " L" << fixed2(x + 4) << ','
                << fixed2(y + d) << " Z\" fill=\"" << (up ? "#1a9850" : "#d73027") << "\"><title>" << to_string(e.kind)
                << ' ' << format_timestamp(e.at) << "</title></path>\n";
        }
    }
    svg << "</g>\n</svg>\n";
    return svg.str();
}

inline nlohmann::json report_summary(const BacktestReport& report, const EventLog& log) {
    nlohmann::json j;
    j["fine_windows"] = log.rows.size();
    j["signals"] = log.signals().size();
    nlohmann::json occ = nlohmann::json::object();
    for (std::size_t i = 0; i < 8; ++i) occ[std::to_string(i + 1)] = report.occupancy[i];
    j["state_occupancy"] = occ;
    const auto rate = report.reversals.total.hit_rate();
    j["reversals"] = {{"emitted", report.reversals.total.emitted},
                      {"hits", report.reversals.total.hits},
                      {"misses", report.reversals.total.misses},
                      {"unresolved", report.reversals.total.unresolved},
                      {"hit_rate", rate ? nlohmann::json(*rate) : nlohmann::json(nullptr)}};
    j["volatility_mean"] = report.volatility.mean ? nlohmann::json(*report.volatility.mean) : nlohmann::json(nullptr);
    j["notes"] = report.volatility.notes;
    return j;
}

inline std::string run_json(const BacktestReport& report, const EventLog& log, const nlohmann::json& config_echo) {
    nlohmann::json j;
    j["config"] = config_echo;
    j["config_hash"] = report.meta.config_hash;
    j["data_hash"] = report.meta.data_hash;
    j["data_span"] = {{"first", report.meta.first ? format_timestamp(*report.meta.first) : std::string()},
                      {"last", report.meta.last ? format_timestamp(*report.meta.last) : std::string()},
                      {"base_bars", report.meta.base_bars}};
    j["summary"] = report_summary(report, log);
    return j.dump(2) + "\n";
}

/// Writes the full output set into `dir`, creating it if needed.
inline void emit_report(const BacktestReport& report, const EventLog& log, const std::filesystem::path& dir,
                        const nlohmann::json& config_echo) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) throw DataError("cannot create output directory " + dir.string());
    auto write = [&](const char* name, auto&& fill) {
        const auto path = dir / name;
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + path.string());
        fill(out);
        if (!out) throw DataError("write failed: " + path.string());
    };
    write("states.csv", [&](std::ostream& o) { write_states_csv(o, log); });
    write("signals.csv", [&](std::ostream& o) { write_signals_csv(o, log); });
    write("turning_points.csv", [&](std::ostream& o) { write_turning_points_csv(o, log); });
    write("outlooks.csv", [&](std::ostream& o) { write_outlooks_csv(o, log); });
    write("reversals.csv", [&](std::ostream& o) { write_reversal_csv(o, report.reversals); });
    write("volatility.csv", [&](std::ostream& o) { write_volatility_csv(o, report.volatility); });
    write("chart.svg", [&](std::ostream& o) { o << render_chart_svg(log); });
    write("run.json", [&](std::ostream& o) { o << run_json(report, log, config_echo); });
}

/// Replay, scoring and the volatility table in one call.
inline BacktestReport build_report(std::span<const Bar> bars, const EventLog& log, const ReversalSpec& spec,
                                   const SessionClock& clock, std::optional<double> first_prev_close,
                                   std::string config_hash) {
    BacktestReport r;
    r.reversals = evaluate_reversals(log, spec);
    r.volatility = volatility_report(bars, clock, first_prev_close);
    r.occupancy = state_occupancy(log);
    r.meta.config_hash = std::move(config_hash);
    r.meta.data_hash = data_hash(bars);
    if (!bars.empty()) {
        r.meta.first = bars.front().timestamp;
        r.meta.last = bars.back().timestamp;
    }
    r.meta.base_bars = bars.size();
    return r;
}

}  // namespace esm

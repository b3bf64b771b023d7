#pragma once

#include "esm/error.hpp"
#include "esm/log.hpp"
#include "esm/time.hpp"
#include "esm/timeframe.hpp"

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace esm {

/// One OHLCV candle. `timestamp` is the bar open time.
struct Bar {
    Timestamp timestamp{};
    double open{};
    double high{};
    double low{};
    double close{};
    double volume{};
    std::optional<double> buy_volume;
    std::optional<double> sell_volume;
    // Set by resampling on a trailing group that did not fill its window.
    bool partial{false};

    bool has_flow() const noexcept { return buy_volume.has_value() && sell_volume.has_value(); }

    friend bool operator==(const Bar&, const Bar&) = default;
};

enum class TradeSide { unknown, buy, sell };

struct TradeTick {
    Timestamp timestamp{};
    double price{};
    double size{};
    TradeSide side{TradeSide::unknown};

    friend bool operator==(const TradeTick&, const TradeTick&) = default;
};

/// Returns the first violated Bar invariant, if any.
inline std::optional<std::string> check_bar(const Bar& b) {
    for (double v : {b.open, b.high, b.low, b.close, b.volume})
        if (!std::isfinite(v)) return "non-finite field";
    if (b.low <= 0.0) return "prices must be positive";
    if (b.high < b.low) return "high < low";
    if (b.open < b.low || b.open > b.high) return "open outside [low, high]";
    if (b.close < b.low || b.close > b.high) return "close outside [low, high]";
    if (b.volume < 0.0) return "negative volume";
    if (b.buy_volume.has_value() != b.sell_volume.has_value()) return "buy_volume and sell_volume must appear together";
    if (b.has_flow()) {
        if (!std::isfinite(*b.buy_volume) || !std::isfinite(*b.sell_volume)) return "non-finite flow";
        if (*b.buy_volume < 0.0 || *b.sell_volume < 0.0) return "negative flow volume";
        if (std::abs(*b.buy_volume + *b.sell_volume - b.volume) > 1e-9 * b.volume)
            return "buy_volume + sell_volume != volume";
    }
    return std::nullopt;
}

// ─── windows ─────────────────────────────────────────────────────────────────

/// Inclusive range of base bars forming one window of a coarser timeframe.
struct Window {
    std::size_t first{};
    std::size_t last{};
    bool partial{false};

    std::size_t size() const noexcept { return last - first + 1; }
    friend bool operator==(const Window&, const Window&) = default;
};

/// Groups base bars into windows of `target`.
///
/// - custom `kx`: consecutive groups of k bars from the start of the series;
/// - intraday from intraday: buckets of the target duration anchored at each
///   session's first bar;
/// - calendar: session date, ISO week, month, quarter or year of the bar.
///
/// Only the last window can be partial: a short count group or intraday
/// bucket, or any open calendar period.
inline std::vector<Window> make_windows(std::span<const Bar> bars, const Timeframe& base, const Timeframe& target,
                                        const SessionClock& clock = {}) {
    using namespace std::chrono;
    if (!can_aggregate(base, target))
        throw ConfigError("cannot build " + target.label() + " windows from " + base.label() + " bars");
    std::vector<Window> out;
    if (bars.empty()) return out;

    if (base == target) {
        out.reserve(bars.size());
        for (std::size_t i = 0; i < bars.size(); ++i) out.push_back({i, i, false});
        return out;
    }
    if (target.custom()) {
        const auto k = static_cast<std::size_t>(target.count());
        for (std::size_t i = 0; i < bars.size(); i += k) {
            const std::size_t last = std::min(bars.size(), i + k) - 1;
            out.push_back({i, last, last - i + 1 < k});
        }
        return out;
    }

    auto key_of = [&](std::size_t i, Date session, Timestamp session_open) -> long long {
        if (target.intraday()) return (bars[i].timestamp - session_open) / target.duration();
        const year_month_day ymd{session};
        const int y = static_cast<int>(ymd.year());
        const int m = static_cast<int>(static_cast<unsigned>(ymd.month()));
        switch (target.unit()) {
            case Timeframe::Unit::day: return session.time_since_epoch().count();
            case Timeframe::Unit::week: {
                // Monday-based weeks; 1970-01-01 was a Thursday.
                return static_cast<long long>(std::floor((session.time_since_epoch().count() + 3) / 7.0));
            }
            case Timeframe::Unit::month: return y * 12LL + (m - 1);
            case Timeframe::Unit::quarter: return y * 4LL + (m - 1) / 3;
            case Timeframe::Unit::year: return y;
            default: return 0;
        }
    };

    Date current_session{};
    Timestamp session_open{};
    long long current_key = 0;
    for (std::size_t i = 0; i < bars.size(); ++i) {
        const Date session = clock.session_date(bars[i].timestamp);
        const bool new_session = i == 0 || session != current_session;
        if (new_session) {
            current_session = session;
            session_open = bars[i].timestamp;
        }
        const long long key = key_of(i, session, session_open);
        if (i == 0 || key != current_key || (target.intraday() && new_session)) {
            out.push_back({i, i, false});
            current_key = key;
        } else {
            out.back().last = i;
        }
    }
    if (target.intraday() && base.intraday()) {
        out.back().partial = static_cast<long long>(out.back().size()) < target.duration() / base.duration();
    } else {
        out.back().partial = true;
    }
    return out;
}

/// OHLCV aggregate of bars[w.first..w.last]; flow columns are summed when every bar has them.
inline Bar aggregate(std::span<const Bar> bars, const Window& w) {
    Bar out = bars[w.first];
    bool flow = out.has_flow();
    for (std::size_t i = w.first + 1; i <= w.last; ++i) {
        const Bar& b = bars[i];
        out.high = std::max(out.high, b.high);
        out.low = std::min(out.low, b.low);
        out.close = b.close;
        out.volume += b.volume;
        if (flow && b.has_flow()) {
            *out.buy_volume += *b.buy_volume;
            *out.sell_volume += *b.sell_volume;
        } else {
            flow = false;
        }
    }
    if (!flow) {
        out.buy_volume.reset();
        out.sell_volume.reset();
    }
    out.partial = w.partial;
    return out;
}

inline std::vector<Bar> aggregate(std::span<const Bar> bars, std::span<const Window> windows) {
    std::vector<Bar> out;
    out.reserve(windows.size());
    for (const auto& w : windows) out.push_back(aggregate(bars, w));
    return out;
}

/// Groups `factor` consecutive bars; the trailing short group is emitted with `partial` set.
inline std::vector<Bar> resample_bars(std::span<const Bar> bars, int factor) {
    if (factor < 2) throw ArgumentError("resample factor must be >= 2");
    std::vector<Window> windows;
    const auto k = static_cast<std::size_t>(factor);
    for (std::size_t i = 0; i < bars.size(); i += k) {
        const std::size_t last = std::min(bars.size(), i + k) - 1;
        windows.push_back({i, last, last - i + 1 < k});
    }
    return aggregate(bars, windows);
}

/// Resamples base bars onto `target` windows (see make_windows).
inline std::vector<Bar> resample_bars(std::span<const Bar> bars, const Timeframe& base, const Timeframe& target,
                                      const SessionClock& clock = {}) {
    const auto windows = make_windows(bars, base, target, clock);
    return aggregate(bars, windows);
}

// ─── CSV ─────────────────────────────────────────────────────────────────────

/// Column names looked up in the header row.
struct BarSchema {
    std::string timestamp{"timestamp"};
    std::string open{"open"};
    std::string high{"high"};
    std::string low{"low"};
    std::string close{"close"};
    std::string volume{"volume"};
    std::string buy_volume{"buy_volume"};
    std::string sell_volume{"sell_volume"};
};

struct RowDiagnostic {
    std::size_t row{};
    std::string reason;
};

struct ParseOptions {
    // Reject bad rows with a diagnostic instead of aborting.
    bool skip_bad{false};
    std::vector<RowDiagnostic>* diagnostics{nullptr};
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::optional<double> parse_double(std::string_view s) {
    double v = 0.0;
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

inline std::map<std::string, std::size_t, std::less<>> header_index(std::string_view header) {
    std::map<std::string, std::size_t, std::less<>> idx;
    auto cols = split_csv(header);
    for (std::size_t i = 0; i < cols.size(); ++i) {
        std::string_view c = cols[i];
        if (i == 0 && c.size() >= 3 && c.substr(0, 3) == "\xEF\xBB\xBF") c.remove_prefix(3);
        idx.emplace(std::string(c), i);
    }
    return idx;
}

// Runs `parse_row` on each data line; handles skip-bad policy and diagnostics.
template <typename Row, typename ParseRow, typename Accept>
void for_each_row(std::istream& in, const ParseOptions& opts, ParseRow&& parse_row, Accept&& accept) {
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        std::optional<Row> value;
        std::string reason;
        try {
            value = parse_row(std::string_view(line), row);
            if (value) reason = accept(*value, row);
        } catch (const DataError& e) {
            reason = e.what();
        }
        if (!reason.empty()) {
            if (!opts.skip_bad) throw DataError(reason, row);
            logger().debug("skipping row {}: {}", row, reason);
            if (opts.diagnostics) opts.diagnostics->push_back({row, reason});
        }
    }
}

}  // namespace detail

/// Reads a bar CSV with a header row. Rows are numbered from 1 after the header.
inline std::vector<Bar> parse_bar_csv(std::istream& in, const BarSchema& schema = {}, const ParseOptions& opts = {}) {
    std::string header;
    if (!std::getline(in, header)) return {};
    const auto idx = detail::header_index(header);
    auto column = [&](const std::string& name, bool required) -> std::optional<std::size_t> {
        auto it = idx.find(name);
        if (it == idx.end()) {
            if (required) throw DataError("missing column '" + name + "'", std::size_t{0});
            return std::nullopt;
        }
        return it->second;
    };
    const auto c_ts = *column(schema.timestamp, true);
    const auto c_open = *column(schema.open, true);
    const auto c_high = *column(schema.high, true);
    const auto c_low = *column(schema.low, true);
    const auto c_close = *column(schema.close, true);
    const auto c_vol = *column(schema.volume, true);
    const auto c_buy = column(schema.buy_volume, false);
    const auto c_sell = column(schema.sell_volume, false);
    if (c_buy.has_value() != c_sell.has_value()) throw DataError("buy_volume and sell_volume columns must appear together", std::size_t{0});

    std::vector<Bar> bars;
    auto parse_row = [&](std::string_view line, std::size_t) -> std::optional<Bar> {
        const auto cells = detail::split_csv(line);
        auto cell = [&](std::size_t c) -> std::string_view {
            if (c >= cells.size()) throw DataError("expected at least " + std::to_string(c + 1) + " fields");
            return cells[c];
        };
        auto number = [&](std::size_t c, const char* what) {
            auto v = detail::parse_double(cell(c));
            if (!v) throw DataError(std::string("malformed ") + what + " '" + std::string(cell(c)) + "'");
            return *v;
        };
        Bar b;
        auto ts = try_parse_timestamp(cell(c_ts));
        if (!ts) throw DataError("malformed timestamp '" + std::string(cell(c_ts)) + "'");
        b.timestamp = *ts;
        b.open = number(c_open, "open");
        b.high = number(c_high, "high");
        b.low = number(c_low, "low");
        b.close = number(c_close, "close");
        b.volume = number(c_vol, "volume");
        if (c_buy && *c_buy < cells.size() && *c_sell < cells.size() && !cells[*c_buy].empty() &&
            !cells[*c_sell].empty()) {
            b.buy_volume = number(*c_buy, "buy_volume");
            b.sell_volume = number(*c_sell, "sell_volume");
        }
        return b;
    };
    auto accept = [&](const Bar& b, std::size_t) -> std::string {
        if (auto bad = check_bar(b)) return *bad;
        if (!bars.empty() && b.timestamp <= bars.back().timestamp) return "timestamps not strictly increasing";
        bars.push_back(b);
        return {};
    };
    detail::for_each_row<Bar>(in, opts, parse_row, accept);
    return bars;
}

/// Writes bars in the canonical schema with shortest round-trip decimals.
/// Flow columns are written when any bar carries them.
inline void write_bar_csv(std::ostream& out, std::span<const Bar> bars) {
    const bool flow = std::any_of(bars.begin(), bars.end(), [](const Bar& b) { return b.has_flow(); });
    out << "timestamp,open,high,low,close,volume";
    if (flow) out << ",buy_volume,sell_volume";
    out << '\n';
    for (const Bar& b : bars) {
        out << format_timestamp(b.timestamp) << ',' << format_number(b.open) << ',' << format_number(b.high) << ','
            << format_number(b.low) << ',' << format_number(b.close) << ',' << format_number(b.volume);
        if (flow) {
            out << ',';
            if (b.buy_volume) out << format_number(*b.buy_volume);
            out << ',';
            if (b.sell_volume) out << format_number(*b.sell_volume);
        }
        out << '\n';
    }
}

/// Tick CSV: `timestamp,price,size[,side]`, side in {B, S}; anything else is unknown.
inline std::vector<TradeTick> parse_tick_csv(std::istream& in, const ParseOptions& opts = {}) {
    std::string header;
    if (!std::getline(in, header)) return {};
    const auto idx = detail::header_index(header);
    for (const char* required : {"timestamp", "price", "size"})
        if (!idx.count(std::string_view(required))) throw DataError(std::string("missing column '") + required + "'", std::size_t{0});
    const auto c_ts = idx.find("timestamp")->second;
    const auto c_price = idx.find("price")->second;
    const auto c_size = idx.find("size")->second;
    const auto side_it = idx.find("side");
    const std::optional<std::size_t> c_side =
        side_it == idx.end() ? std::nullopt : std::optional<std::size_t>(side_it->second);

    std::vector<TradeTick> ticks;
    auto parse_row = [&](std::string_view line, std::size_t) -> std::optional<TradeTick> {
        const auto cells = detail::split_csv(line);
        const std::size_t needed = std::max({c_ts, c_price, c_size}) + 1;
        if (cells.size() < needed) throw DataError("expected at least " + std::to_string(needed) + " fields");
        TradeTick t;
        auto ts = try_parse_timestamp(cells[c_ts]);
        if (!ts) throw DataError("malformed timestamp '" + std::string(cells[c_ts]) + "'");
        t.timestamp = *ts;
        auto price = detail::parse_double(cells[c_price]);
        auto size = detail::parse_double(cells[c_size]);
        if (!price || !size) throw DataError("malformed price or size");
        t.price = *price;
        t.size = *size;
        if (c_side && *c_side < cells.size()) {
            if (cells[*c_side] == "B") t.side = TradeSide::buy;
            else if (cells[*c_side] == "S") t.side = TradeSide::sell;
        }
        return t;
    };
    auto accept = [&](const TradeTick& t, std::size_t) -> std::string {
        if (!(t.price > 0.0) || !std::isfinite(t.price)) return "price must be positive";
        if (!(t.size > 0.0) || !std::isfinite(t.size)) return "size must be positive";
        if (!ticks.empty() && t.timestamp < ticks.back().timestamp) return "ticks out of time order";
        ticks.push_back(t);
        return {};
    };
    detail::for_each_row<TradeTick>(in, opts, parse_row, accept);
    return ticks;
}

/// Reads a whole file; `.gz` files are inflated.
inline std::string read_input(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw DataError("file not found: " + path.string());
    if (path.extension() == ".gz") {
        gzFile f = gzopen(path.string().c_str(), "rb");
        if (!f) throw DataError("cannot open " + path.string());
        std::string data;
        char buf[1 << 16];
        int n = 0;
        while ((n = gzread(f, buf, sizeof buf)) > 0) data.append(buf, static_cast<std::size_t>(n));
        const bool failed = n < 0;
        gzclose(f);
        if (failed) throw DataError("corrupt gzip stream in " + path.string());
        return data;
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::vector<Bar> load_bars(const std::filesystem::path& path, const BarSchema& schema = {},
                                  const ParseOptions& opts = {}) {
    std::istringstream in(read_input(path));
    return parse_bar_csv(in, schema, opts);
}

inline std::vector<TradeTick> load_ticks(const std::filesystem::path& path, const ParseOptions& opts = {}) {
    std::istringstream in(read_input(path));
    return parse_tick_csv(in, opts);
}

// ─── ticks ──────────────────────────────────────────────────────────────────

/// Tick rule: uptick -> buy, downtick -> sell, zero tick -> previous resolved side.
/// Pre-tagged sides pass through. The first unresolved tick takes `first_side`.
inline std::vector<TradeTick> tick_rule_classify(std::span<const TradeTick> ticks,
                                                 TradeSide first_side = TradeSide::buy) {
    if (first_side == TradeSide::unknown) throw ArgumentError("tick rule default side must be buy or sell");
    std::vector<TradeTick> out(ticks.begin(), ticks.end());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (out[i].side != TradeSide::unknown) continue;
        if (i == 0) {
            out[i].side = first_side;
        } else if (out[i].price > out[i - 1].price) {
            out[i].side = TradeSide::buy;
        } else if (out[i].price < out[i - 1].price) {
            out[i].side = TradeSide::sell;
        } else {
            out[i].side = out[i - 1].side;
        }
    }
    return out;
}

/// Buckets classified ticks into bars of an intraday timeframe (aligned to the epoch),
/// with buy/sell volume from the tick sides.
inline std::vector<Bar> bars_from_ticks(std::span<const TradeTick> ticks, const Timeframe& tf) {
    const auto dur = tf.duration();
    std::vector<Bar> bars;
    for (const TradeTick& t : ticks) {
        if (t.side == TradeSide::unknown) throw ArgumentError("bars_from_ticks needs classified ticks");
        const Timestamp bucket{std::chrono::floor<std::chrono::seconds>(t.timestamp.time_since_epoch() / dur * dur)};
        if (bars.empty() || bars.back().timestamp != bucket) {
            Bar b;
            b.timestamp = bucket;
            b.open = b.high = b.low = b.close = t.price;
            b.volume = 0.0;
            b.buy_volume = 0.0;
            b.sell_volume = 0.0;
            bars.push_back(b);
        }
        Bar& b = bars.back();
        b.high = std::max(b.high, t.price);
        b.low = std::min(b.low, t.price);
        b.close = t.price;
        b.volume += t.size;
        (t.side == TradeSide::buy ? *b.buy_volume : *b.sell_volume) += t.size;
    }
    return bars;
}

// ─── sessions and volatility ─────────────────────────────────────────────────

struct Session {
    Date date{};
    std::size_t first{};
    std::size_t last{};
};

inline std::vector<Session> split_sessions(std::span<const Bar> bars, const SessionClock& clock = {}) {
    std::vector<Session> out;
    for (std::size_t i = 0; i < bars.size(); ++i) {
        const Date d = clock.session_date(bars[i].timestamp);
        if (out.empty() || out.back().date != d)
            out.push_back({d, i, i});
        else
            out.back().last = i;
    }
    return out;
}

/// Intraday volatility V = (session high - session low) / previous close.
inline double session_volatility(std::span<const Bar> day_bars, double prev_close) {
    if (day_bars.empty()) throw ArgumentError("session_volatility: empty session");
    if (!(prev_close > 0.0)) throw ArgumentError("session_volatility: prev_close must be positive");
    double hi = day_bars.front().high;
    double lo = day_bars.front().low;
    for (const Bar& b : day_bars) {
        hi = std::max(hi, b.high);
        lo = std::min(lo, b.low);
    }
    return (hi - lo) / prev_close;
}

}  // namespace esm

#pragma once

#include "esm/error.hpp"
#include "esm/log.hpp"
#include "esm/marketdata.hpp"
#include "esm/time.hpp"
#include "esm/timeframe.hpp"

#include <algorithm>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace esm {

/// Buy-side (demand) and sell-side (supply) volume of a window.
struct FlowSplit {
    double buy_volume{};
    double sell_volume{};

    double total() const noexcept { return buy_volume + sell_volume; }

    FlowSplit& operator+=(const FlowSplit& o) noexcept {
        buy_volume += o.buy_volume;
        sell_volume += o.sell_volume;
        return *this;
    }
    friend FlowSplit operator+(FlowSplit a, const FlowSplit& b) noexcept { return a += b; }
    friend bool operator==(const FlowSplit&, const FlowSplit&) = default;
};

/// How a bar's flow split is obtained: recorded buy/sell columns, or the candle shape.
enum class ProxyKind { flow, candle };

inline std::string_view to_string(ProxyKind p) { return p == ProxyKind::flow ? "flow" : "candle"; }

inline ProxyKind parse_proxy(std::string_view s) {
    if (s == "flow") return ProxyKind::flow;
    if (s == "candle") return ProxyKind::candle;
    throw ConfigError("unknown proxy '" + std::string(s) + "'");
}

/// NED = (buy - sell) / (buy + sell); nullopt when the window has no flow.
inline std::optional<double> try_ned(const FlowSplit& f) noexcept {
    const double total = f.total();
    if (!(total > 0.0)) return std::nullopt;
    return (f.buy_volume - f.sell_volume) / total;
}

inline double ned_from_flow(const FlowSplit& f) {
    if (f.buy_volume < 0.0 || f.sell_volume < 0.0) throw ArgumentError("flow volumes must be non-negative");
    auto v = try_ned(f);
    if (!v) throw UndefinedFlowError("NED undefined: zero total flow");
    return *v;
}

/// Buy fraction from where the close sits in the bar's range; 0.5 for a zero range.
inline double candle_buy_fraction(const Bar& bar) noexcept {
    const double range = bar.high - bar.low;
    return range > 0.0 ? (bar.close - bar.low) / range : 0.5;
}

inline FlowSplit candle_flow_proxy(const Bar& bar) noexcept {
    const double f = candle_buy_fraction(bar);
    return {f * bar.volume, (1.0 - f) * bar.volume};
}

inline FlowSplit bar_flow(const Bar& bar, ProxyKind proxy) {
    if (proxy == ProxyKind::candle) return candle_flow_proxy(bar);
    if (!bar.has_flow()) throw ConfigError("flow proxy requires buy_volume/sell_volume columns");
    return {*bar.buy_volume, *bar.sell_volume};
}

/// Left-to-right sum of per-bar splits.
inline FlowSplit window_flow(std::span<const Bar> bars, ProxyKind proxy) {
    if (bars.empty()) throw ArgumentError("window_flow: empty window");
    FlowSplit sum;
    for (const Bar& b : bars) sum += bar_flow(b, proxy);
    return sum;
}

/// True when every bar carries flow columns (so the flow proxy can be used).
inline bool has_flow_columns(std::span<const Bar> bars) {
    return !bars.empty() && std::all_of(bars.begin(), bars.end(), [](const Bar& b) { return b.has_flow(); });
}

struct NedPoint {
    // Timestamp of the last bar included in the window.
    Timestamp window_end{};
    Timeframe timeframe{};
    double value{};
    FlowSplit window_flow{};
    bool partial{false};
    std::size_t first_bar{};
    std::size_t last_bar{};

    friend bool operator==(const NedPoint&, const NedPoint&) = default;
};

struct NedSeries {
    Timeframe timeframe{};
    std::vector<NedPoint> points;
};

struct NedOptions {
    SessionClock clock{};
    // Derive the candle split from the aggregated coarse candle instead of summing
    // per-bar splits. Breaks resampling consistency; for experimentation only.
    bool recompute_proxy_on_coarse{false};
};

/// One NED point per `target` window over base bars. Windows with zero flow are omitted.
inline NedSeries ned_series(std::span<const Bar> bars, const Timeframe& base, const Timeframe& target, ProxyKind proxy,
                            const NedOptions& opts = {}) {
    NedSeries series{target, {}};
    const auto windows = make_windows(bars, base, target, opts.clock);
    series.points.reserve(windows.size());
    for (const Window& w : windows) {
        const auto slice = bars.subspan(w.first, w.size());
        const FlowSplit flow = opts.recompute_proxy_on_coarse && proxy == ProxyKind::candle
                                   ? candle_flow_proxy(aggregate(bars, w))
                                   : window_flow(slice, proxy);
        const auto value = try_ned(flow);
        if (!value) {
            logger().debug("zero-flow {} window ending {} omitted", target.label(),
                           format_timestamp(bars[w.last].timestamp));
            continue;
        }
        series.points.push_back({bars[w.last].timestamp, target, *value, flow, w.partial, w.first, w.last});
    }
    return series;
}

inline void write_ned_csv(std::ostream& out, const NedSeries& series) {
    out << "window_end,timeframe,value,buy_volume,sell_volume,partial\n";
    for (const NedPoint& p : series.points) {
        out << format_timestamp(p.window_end) << ',' << p.timeframe.label() << ',' << format_number(p.value) << ','
            << format_number(p.window_flow.buy_volume) << ',' << format_number(p.window_flow.sell_volume) << ','
            << (p.partial ? 1 : 0) << '\n';
    }
}

}  // namespace esm

#pragma once

// Synthetic fixture suite shared by unit tests, acceptance checks and the
// generator that writes data/fixtures/*.csv.

#include "esm/esm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace esmtest {

using namespace esm;

inline constexpr Date daily_start{std::chrono::year{2024} / std::chrono::January / 1};
inline constexpr Date intraday_start{std::chrono::year{2025} / std::chrono::April / 7};
inline constexpr std::size_t daily_count = 130;

struct Fixture {
    std::string name;
    std::vector<Bar> bars;
    PipelineConfig pipeline;
    // Coarser timeframe for the fine-vs-coarse signal embedding check.
    Timeframe compat_coarse;
};

inline PipelineConfig daily_pipeline() {
    PipelineConfig p;
    p.trio.base = p.trio.fine = Timeframe::day();
    p.trio.mid = Timeframe::week();
    p.trio.coarse = Timeframe::month();
    p.trio.proxy = ProxyKind::flow;
    return p;
}

inline PipelineConfig april_pipeline(ProxyKind proxy = ProxyKind::flow) {
    PipelineConfig p;
    p.trio.base = p.trio.fine = Timeframe::minutes(5);
    p.trio.mid = Timeframe::minutes(15);
    p.trio.coarse = Timeframe::minutes(30);
    p.trio.proxy = proxy;
    p.trio.clock = SessionClock::parse("America/New_York");
    return p;
}

inline std::vector<Bar> daily_bars(NedPath ned, MTerm m = MTerm::zero(), std::size_t count = daily_count) {
    EsmParams p;
    p.dt = 3e-4;
    p.ned_path = std::move(ned);
    p.m_term = m;
    const auto stamps = business_days(daily_start, count);
    return synthetic_bars(p, stamps);
}

/// Buy-only flow throughout: price rises on every bar.
inline std::vector<Bar> uptrend_bars() { return daily_bars(NedPath::constant(1.0)); }

/// Sell-only flow throughout.
inline std::vector<Bar> downtrend_bars() { return daily_bars(NedPath::constant(-1.0)); }

inline double daily_span() { return static_cast<double>(daily_count * 10) * 3e-4; }

/// Demand dominates the first half, supply the second.
inline std::vector<Bar> rise_fall_bars() {
    const double span = daily_span();
    return daily_bars(NedPath::function([span](double t) { return 0.8 * std::cos(std::numbers::pi * t / span); }));
}

inline std::vector<Bar> fall_rise_bars() {
    const double span = daily_span();
    return daily_bars(NedPath::function([span](double t) { return -0.8 * std::cos(std::numbers::pi * t / span); }));
}

/// Oscillating demand on a rising ramp, plus a price-maker cycle that makes
/// price and NED extrema drift apart: three sessions of 5-minute bars.
inline std::vector<Bar> april_bars() {
    EsmParams p;
    p.h_gain = 0.04;
    p.dt = 1.0 / 780.0;
    p.ned_path = NedPath::function([](double t) {
        return 0.7 * std::sin(2.0 * std::numbers::pi * t / 0.3) + 0.15 * std::sin(2.0 * std::numbers::pi * t / 1.5);
    });
    p.m_term = MTerm::sinusoid(0.03, 0.31);
    const auto stamps =
        intraday_stamps(intraday_start, 3, std::chrono::minutes{5}, std::chrono::minutes{14 * 60 + 30}, 78);
    return synthetic_bars(p, stamps);
}

/// Daily bars with flow alternating (9, 1) and (4, 6): positive over any two-bar group.
inline std::vector<Bar> alternating_bars(std::size_t count = 40) {
    std::vector<Bar> bars;
    const auto stamps = business_days(daily_start, count);
    double price = 100.0;
    for (std::size_t i = 0; i < count; ++i) {
        const bool buy = i % 2 == 0;
        Bar b;
        b.timestamp = stamps[i];
        b.open = price;
        price *= buy ? 1.01 : 0.995;
        b.close = price;
        b.high = std::max(b.open, b.close) + 0.1;
        b.low = std::min(b.open, b.close) - 0.1;
        b.volume = 10.0;
        b.buy_volume = buy ? 9.0 : 4.0;
        b.sell_volume = buy ? 1.0 : 6.0;
        bars.push_back(b);
    }
    return bars;
}

inline PipelineConfig alternating_pipeline() {
    PipelineConfig p;
    p.trio.base = p.trio.fine = Timeframe::day();
    p.trio.mid = Timeframe::bars(2);
    p.trio.coarse = Timeframe::bars(4);
    p.trio.proxy = ProxyKind::flow;
    return p;
}

/// The bundled fixture suite.
inline std::vector<Fixture> fixture_suite() {
    return {
        {"uptrend", uptrend_bars(), daily_pipeline(), Timeframe::week()},
        {"downtrend", downtrend_bars(), daily_pipeline(), Timeframe::week()},
        {"rise_fall", rise_fall_bars(), daily_pipeline(), Timeframe::week()},
        {"fall_rise", fall_rise_bars(), daily_pipeline(), Timeframe::week()},
        {"april", april_bars(), april_pipeline(), Timeframe::minutes(15)},
        {"alternating", alternating_bars(), alternating_pipeline(), Timeframe::bars(2)},
    };
}

/// Signals detected on `tf` windows of the fixture's base bars.
inline std::vector<SignalEvent> signals_at(const Fixture& fx, const Timeframe& tf) {
    const auto& trio = fx.pipeline.trio;
    const auto windows = make_windows(fx.bars, trio.base, tf, trio.clock);
    const auto bars = aggregate(fx.bars, windows);
    const auto ned = ned_series(fx.bars, trio.base, tf, trio.proxy, {trio.clock});
    return detect_signals(bars, ned, fx.pipeline.detector);
}

struct Compatibility {
    std::size_t fine_events{};
    std::size_t coarse_events{};
    // Coarse events with no same-kind fine event within one coarse bar.
    std::vector<SignalEvent> unmatched;
};

// Bar of the latest extremum behind an event. Confirmation lags by k bars of
// the event's own timeframe, so events are placed at their extremum instead.
inline std::size_t event_anchor(const SignalEvent& e) {
    return e.evidence.empty() ? e.bar : *std::max_element(e.evidence.begin(), e.evidence.end());
}

/// A fine event matches a coarse event anchored in coarse window j when its own
/// anchor falls in coarse window j - 1, j or j + 1.
inline Compatibility temporal_compatibility(const Fixture& fx) {
    const auto& trio = fx.pipeline.trio;
    Compatibility out;
    const auto fine = signals_at(fx, trio.fine);
    const auto coarse = signals_at(fx, fx.compat_coarse);
    out.fine_events = fine.size();
    out.coarse_events = coarse.size();
    const auto fine_w = make_windows(fx.bars, trio.base, trio.fine, trio.clock);
    const auto coarse_w = make_windows(fx.bars, trio.base, fx.compat_coarse, trio.clock);
    auto coarse_of = [&](std::size_t base_index) {
        for (std::size_t j = 0; j < coarse_w.size(); ++j)
            if (base_index >= coarse_w[j].first && base_index <= coarse_w[j].last) return j;
        return coarse_w.size();
    };
    for (const auto& c : coarse) {
        const std::size_t cj = event_anchor(c);
        const bool found = std::any_of(fine.begin(), fine.end(), [&](const SignalEvent& f) {
            if (f.kind != c.kind) return false;
            const std::size_t j = coarse_of(fine_w[event_anchor(f)].last);
            return j + 1 >= cj && j <= cj + 1;
        });
        if (!found) out.unmatched.push_back(c);
    }
    return out;
}

inline std::string fixture_csv_name(const std::string& name) { return name + ".csv"; }

}  // namespace esmtest

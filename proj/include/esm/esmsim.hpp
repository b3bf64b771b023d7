#pragma once

#include "esm/error.hpp"
#include "esm/marketdata.hpp"
#include "esm/ned.hpp"
#include "esm/time.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <variant>
#include <vector>

namespace esm {

/// Price-maker term M(t) of the rate equation.
class MTerm {
public:
    static MTerm zero() { return MTerm{}; }
    static MTerm constant(double c) {
        MTerm m;
        m.kind_ = Kind::constant;
        m.value_ = c;
        return m;
    }
    static MTerm sinusoid(double amplitude, double period) {
        if (!(period > 0.0)) throw ArgumentError("sinusoid period must be positive");
        MTerm m;
        m.kind_ = Kind::sinusoid;
        m.value_ = amplitude;
        m.period_ = period;
        return m;
    }

    double at(double t) const {
        switch (kind_) {
            case Kind::zero: return 0.0;
            case Kind::constant: return value_;
            case Kind::sinusoid: return value_ * std::sin(2.0 * std::numbers::pi * t / period_);
        }
        return 0.0;
    }

private:
    enum class Kind { zero, constant, sinusoid };
    Kind kind_{Kind::zero};
    double value_{0.0};
    double period_{1.0};
};

/// Driving NED as a function of simulation time.
class NedPath {
public:
    static NedPath constant(double c) {
        NedPath p;
        p.source_ = c;
        return p;
    }
    static NedPath function(std::function<double(double)> f) {
        NedPath p;
        p.source_ = std::move(f);
        return p;
    }
    /// Piecewise constant: values[i] holds on [i*step, (i+1)*step); the last value holds afterwards.
    static NedPath recorded(std::vector<double> values, double step) {
        if (values.empty()) throw ArgumentError("recorded NED path is empty");
        if (!(step > 0.0)) throw ArgumentError("recorded NED path step must be positive");
        NedPath p;
        p.source_ = Recorded{std::move(values), step};
        return p;
    }
    static NedPath recorded(const NedSeries& series, double step) {
        std::vector<double> v;
        v.reserve(series.points.size());
        for (const auto& pt : series.points) v.push_back(pt.value);
        return recorded(std::move(v), step);
    }

    double at(double t) const {
        if (const double* c = std::get_if<double>(&source_)) return *c;
        if (const auto* f = std::get_if<std::function<double(double)>>(&source_)) return (*f)(t);
        const auto& r = std::get<Recorded>(source_);
        const double idx = std::floor(t / r.step + 1e-9);
        const auto i = idx <= 0.0 ? std::size_t{0} : static_cast<std::size_t>(idx);
        return r.values[std::min(i, r.values.size() - 1)];
    }

private:
    struct Recorded {
        std::vector<double> values;
        double step;
    };
    std::variant<double, std::function<double(double)>, Recorded> source_{0.0};
};

/// Parameters of d ln p / dt = H(NED) + M with H(x) = h_gain * x.
struct EsmParams {
    double h_gain{1.0};
    MTerm m_term{};
    double dt{1.0 / 390.0};
    double p0{100.0};
    NedPath ned_path{};
};

struct PricePoint {
    double time{};
    double price{};
};

/// Explicit Euler in log price. Returns steps + 1 points, starting with (0, p0).
inline std::vector<PricePoint> simulate_prices(const EsmParams& params, std::size_t steps) {
    if (!(params.h_gain > 0.0)) throw ArgumentError("h_gain must be positive");
    if (!(params.dt > 0.0)) throw ArgumentError("dt must be positive");
    if (!(params.p0 > 0.0)) throw ArgumentError("p0 must be positive");
    if (steps < 1) throw ArgumentError("steps must be >= 1");

    std::vector<PricePoint> path;
    path.reserve(steps + 1);
    const double log_p0 = std::log(params.p0);
    double log_p = log_p0;
    path.push_back({0.0, params.p0});
    for (std::size_t k = 0; k < steps; ++k) {
        const double t = static_cast<double>(k) * params.dt;
        const double ned = params.ned_path.at(t);
        if (!(ned >= -1.0 && ned <= 1.0)) throw ArgumentError("NED path left [-1, 1] at t=" + format_number(t));
        log_p += (params.h_gain * ned + params.m_term.at(t)) * params.dt;
        path.push_back({static_cast<double>(k + 1) * params.dt, params.p0 * std::exp(log_p - log_p0)});
    }
    return path;
}

// ─── fixture helpers ─────────────────────────────────────────────────────────

/// `count` weekday dates (Mon-Fri) from `start`, stamped at midnight UTC.
inline std::vector<Timestamp> business_days(Date start, std::size_t count) {
    using namespace std::chrono;
    std::vector<Timestamp> out;
    for (Date d = start; out.size() < count; d += days{1}) {
        const weekday wd{d};
        if (wd != Saturday && wd != Sunday) out.emplace_back(d);
    }
    return out;
}

/// Intraday bar stamps: `bars_per_session` bars of `bar` length per weekday session opening at `open_utc`.
inline std::vector<Timestamp> intraday_stamps(Date first_session, std::size_t sessions, std::chrono::minutes bar,
                                              std::chrono::minutes open_utc, std::size_t bars_per_session) {
    std::vector<Timestamp> out;
    for (Timestamp day : business_days(first_session, sessions))
        for (std::size_t i = 0; i < bars_per_session; ++i)
            out.push_back(day + open_utc + bar * static_cast<long long>(i));
    return out;
}

struct SyntheticBarOptions {
    // Integration steps per bar.
    std::size_t substeps{10};
    double volume{1000.0};
    // Emit buy/sell columns matching the driving NED.
    bool flow_columns{true};
};

/// Builds bars from a simulated path: OHLC from the substeps inside each bar,
/// flow split (1 + v)/2 and (1 - v)/2 of the volume where v is the mean driving
/// NED over the bar. When v != 0 the low (v > 0) or high (v < 0) is widened if
/// needed so the candle proxy has the same sign as v.
inline std::vector<Bar> synthetic_bars(const EsmParams& params, std::span<const Timestamp> stamps,
                                       const SyntheticBarOptions& opts = {}) {
    if (opts.substeps < 1) throw ArgumentError("substeps must be >= 1");
    if (!(opts.volume > 0.0)) throw ArgumentError("volume must be positive");
    if (stamps.empty()) return {};
    const auto path = simulate_prices(params, stamps.size() * opts.substeps);
    std::vector<Bar> bars;
    bars.reserve(stamps.size());
    for (std::size_t b = 0; b < stamps.size(); ++b) {
        const std::size_t k0 = b * opts.substeps;
        const std::size_t k1 = k0 + opts.substeps;
        Bar bar;
        bar.timestamp = stamps[b];
        bar.open = path[k0].price;
        bar.close = path[k1].price;
        bar.high = bar.low = bar.open;
        double drive = 0.0;
        for (std::size_t k = k0; k <= k1; ++k) {
            bar.high = std::max(bar.high, path[k].price);
            bar.low = std::min(bar.low, path[k].price);
            if (k < k1) drive += params.ned_path.at(path[k].time);
        }
        drive /= static_cast<double>(opts.substeps);

        const double pad = 1e-4 * bar.close;
        if (drive > 0.0 && 2.0 * bar.close - bar.high - bar.low <= 0.0)
            bar.low = std::min(bar.low, 2.0 * bar.close - bar.high - pad);
        if (drive < 0.0 && 2.0 * bar.close - bar.high - bar.low >= 0.0)
            bar.high = std::max(bar.high, 2.0 * bar.close - bar.low + pad);
        if (!(bar.low > 0.0)) throw ArgumentError("synthetic bar low is not positive; reduce the bar range");

        bar.volume = opts.volume;
        if (opts.flow_columns) {
            bar.buy_volume = opts.volume * (1.0 + drive) / 2.0;
            bar.sell_volume = opts.volume - *bar.buy_volume;
        }
        bars.push_back(bar);
    }
    return bars;
}

}  // namespace esm

#pragma once

#include "esm/error.hpp"
#include "esm/marketdata.hpp"
#include "esm/ned.hpp"
#include "esm/states.hpp"

#include <cmath>
#include <optional>
#include <ostream>
#include <span>
#include <string_view>
#include <vector>

namespace esm {

enum class TurnKind { t2, t4 };
enum class FlipDirection { up, down };
enum class TurnStatus { solved, unreachable, undefined };

inline std::string_view to_string(TurnKind k) { return k == TurnKind::t2 ? "T2" : "T4"; }
inline std::string_view to_string(FlipDirection d) { return d == FlipDirection::up ? "up" : "down"; }

/// Window NED as a function of a hypothetical price for the window's last bar.
///
/// Completed bars keep their flow (per the proxy). The last bar keeps its volume,
/// takes close = p, high = max(high, p), low = min(low, p), and is re-split with
/// the candle formula in both proxy modes. Evaluated as (C + 2 * buy(p)) / D with
/// C and D fixed, which makes it monotone nondecreasing in p in floating point too.
class HypotheticalWindow {
public:
    HypotheticalWindow(const FlowSplit& completed, const Bar& last)
        : last_(last),
          offset_(completed.buy_volume - completed.sell_volume - last.volume),
          total_(completed.total() + last.volume) {}

    bool defined() const noexcept { return total_ > 0.0; }

    double operator()(double p) const {
        if (!defined()) throw UndefinedFlowError("NED undefined: zero total flow in turning-point window");
        const double hi = std::max(last_.high, p);
        const double lo = std::min(last_.low, p);
        const double f = hi > lo ? (p - lo) / (hi - lo) : 0.5;
        return (offset_ + 2.0 * (f * last_.volume)) / total_;
    }

    double current_price() const noexcept { return last_.close; }

private:
    Bar last_;
    double offset_;
    double total_;
};

inline HypotheticalWindow make_hypothetical(std::span<const Bar> window, ProxyKind proxy) {
    if (window.empty()) throw ArgumentError("turning-point window is empty");
    const FlowSplit completed = window.size() > 1 ? window_flow(window.first(window.size() - 1), proxy) : FlowSplit{};
    return HypotheticalWindow(completed, window.back());
}

inline double window_ned_at_price(std::span<const Bar> window, double p, ProxyKind proxy) {
    if (!(p > 0.0)) throw ArgumentError("hypothetical price must be positive");
    return make_hypothetical(window, proxy)(p);
}

struct SolverOptions {
    double bracket_width{0.20};
    // Relative price tolerance of the bracket at termination.
    double tol{1e-6};
};

struct TurningLevel {
    TurnStatus status{TurnStatus::undefined};
    std::optional<double> level;
    FlipDirection direction{FlipDirection::up};
    double ned_at_close{};
};

// Root below this magnitude counts as already at zero.
inline constexpr double turning_zero_eps = 1e-9;
// Sought bound on |NED(level)|.
inline constexpr double turning_root_eps = 1e-6;

/// Bisection for the price where the window NED crosses zero, searched on the
/// side of the current close that the sign points to (negative NED: above).
/// A flat last bar (high == low) makes the NED jump at the close; a sign change
/// across that jump resolves to the close itself, with a nonzero residual.
inline TurningLevel solve_turning_price(const HypotheticalWindow& f, const SolverOptions& opts = {}) {
    if (!(opts.bracket_width > 0.0 && opts.bracket_width < 1.0)) throw ArgumentError("bracket_width must be in (0, 1)");
    if (!(opts.tol > 0.0)) throw ArgumentError("tol must be positive");
    TurningLevel out;
    if (!f.defined()) return out;
    const double close = f.current_price();
    const double f0 = f(close);
    out.ned_at_close = f0;
    out.direction = f0 > 0.0 ? FlipDirection::down : FlipDirection::up;
    if (std::abs(f0) < turning_zero_eps) {
        out.status = TurnStatus::solved;
        out.level = close;
        return out;
    }
    double lo = f0 < 0.0 ? close : close * (1.0 - opts.bracket_width);
    double hi = f0 < 0.0 ? close * (1.0 + opts.bracket_width) : close;
    double f_lo = f(lo);
    double f_hi = f(hi);
    constexpr double slack = 1e-12;
    if (f_lo > f_hi + slack) throw InternalError("turning-point function is not monotone on the bracket");
    if (f_lo > 0.0 || f_hi < 0.0) {
        out.status = TurnStatus::unreachable;
        return out;
    }
    const double width_tol = opts.tol * close;
    for (int iter = 0; iter < 400; ++iter) {
        if (f_lo == 0.0 || f_hi == 0.0) break;
        const bool narrow = hi - lo <= width_tol;
        if (narrow && std::min(std::abs(f_lo), std::abs(f_hi)) <= turning_root_eps) break;
        const double mid = lo + (hi - lo) / 2.0;
        if (mid <= lo || mid >= hi) break;
        const double f_mid = f(mid);
        if (f_mid < f_lo - slack || f_mid > f_hi + slack)
            throw InternalError("turning-point function is not monotone during bisection");
        if (f_mid < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
            f_hi = f_mid;
        }
    }
    out.status = TurnStatus::solved;
    out.level = std::abs(f_lo) <= std::abs(f_hi) ? lo : hi;
    // The function is linear in p inside the last bar's range, where any root lies,
    // so one interpolation step polishes the bracket endpoint.
    if (f_lo < 0.0 && f_hi > 0.0) {
        const double p = lo - f_lo * (hi - lo) / (f_hi - f_lo);
        if (p >= lo && p <= hi && std::abs(f(p)) <= std::abs(f(*out.level))) out.level = p;
    }
    return out;
}

inline TurningLevel solve_turning_price(std::span<const Bar> window, ProxyKind proxy, const SolverOptions& opts = {}) {
    return solve_turning_price(make_hypothetical(window, proxy), opts);
}

struct TurningPointForecast {
    TurnKind kind{TurnKind::t2};
    TurnStatus status{TurnStatus::undefined};
    std::optional<double> level;
    FlipDirection direction{FlipDirection::up};
    Timestamp as_of{};
    // Index of the mid (T2) or coarse (T4) window the forecast was solved on.
    std::size_t window_id{};
    double price{};
    double ned_at_close{};

    friend bool operator==(const TurningPointForecast&, const TurningPointForecast&) = default;
};

struct TurningPair {
    TurningPointForecast t2;
    TurningPointForecast t4;

    friend bool operator==(const TurningPair&, const TurningPair&) = default;
};

inline TurningPointForecast make_forecast(TurnKind kind, const TurningLevel& lvl, const Bar& bar, std::size_t window_id) {
    return {kind, lvl.status, lvl.level, lvl.direction, bar.timestamp, window_id, bar.close, lvl.ned_at_close};
}

/// T2 from the current mid window and T4 from the current coarse window, per fine-window close.
inline TurningPair turning_pair(std::span<const Bar> bars, const TrioStep& s, const SolverOptions& opts) {
    const Bar& bar = bars[s.bar];
    const auto t2 = solve_turning_price(HypotheticalWindow(s.mid_before, bar), opts);
    const auto t4 = solve_turning_price(HypotheticalWindow(s.coarse_before, bar), opts);
    return {make_forecast(TurnKind::t2, t2, bar, s.mid_window), make_forecast(TurnKind::t4, t4, bar, s.coarse_window)};
}

inline std::vector<TurningPair> turning_points(std::span<const Bar> bars, const TrioConfig& cfg,
                                               const SolverOptions& opts = {}) {
    std::vector<TurningPair> out;
    for (const TrioStep& s : trio_steps(bars, cfg)) out.push_back(turning_pair(bars, s, opts));
    return out;
}

inline void write_turning_csv(std::ostream& out, std::span<const TurningPair> pairs) {
    out << "as_of,kind,direction,level\n";
    for (const auto& p : pairs) {
        for (const auto* f : {&p.t2, &p.t4}) {
            out << format_timestamp(f->as_of) << ',' << to_string(f->kind) << ',' << to_string(f->direction) << ','
                << (f->level ? format_number(*f->level) : std::string("NA")) << '\n';
        }
    }
}

}  // namespace esm

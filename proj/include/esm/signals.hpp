#pragma once

#include "esm/error.hpp"
#include "esm/marketdata.hpp"
#include "esm/ned.hpp"
#include "esm/states.hpp"
#include "esm/timeframe.hpp"
#include "esm/turningpoints.hpp"

#include <algorithm>
#include <array>
#include <utility>
#include <cmath>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace esm {

// ─── extrema ─────────────────────────────────────────────────────────────────

enum class ExtremumKind { peak, trough };
enum class SeriesKind { price_high, price_low, ned };

struct Extremum {
    std::size_t index{};
    Timestamp at{};
    ExtremumKind kind{ExtremumKind::peak};
    double value{};
    SeriesKind series{SeriesKind::ned};
    // Bar at which the extremum becomes known (index + k).
    std::size_t confirmed_at{};

    friend bool operator==(const Extremum&, const Extremum&) = default;
};

namespace detail {

// Peak at i: strictly above the k values before it and at least as high as the k after it,
// so a flat top is reported once, at its first index.
inline bool is_peak_at(std::span<const double> x, std::size_t i, std::size_t k) {
    for (std::size_t j = i - k; j < i; ++j)
        if (!(x[i] > x[j])) return false;
    for (std::size_t j = i + 1; j <= i + k; ++j)
        if (!(x[i] >= x[j])) return false;
    return true;
}

inline bool is_trough_at(std::span<const double> x, std::size_t i, std::size_t k) {
    for (std::size_t j = i - k; j < i; ++j)
        if (!(x[i] < x[j])) return false;
    for (std::size_t j = i + 1; j <= i + k; ++j)
        if (!(x[i] <= x[j])) return false;
    return true;
}

}  // namespace detail

/// Peaks and troughs over interior indices [k, n-1-k], in index order.
inline std::vector<Extremum> find_extrema(std::span<const double> series, std::size_t k,
                                          SeriesKind kind = SeriesKind::ned) {
    if (k < 1) throw ArgumentError("extremum half-window k must be >= 1");
    std::vector<Extremum> out;
    if (series.size() < 2 * k + 1) return out;
    for (std::size_t i = k; i + k < series.size(); ++i) {
        if (detail::is_peak_at(series, i, k))
            out.push_back({i, {}, ExtremumKind::peak, series[i], kind, i + k});
        else if (detail::is_trough_at(series, i, k))
            out.push_back({i, {}, ExtremumKind::trough, series[i], kind, i + k});
    }
    return out;
}

// ─── signals ─────────────────────────────────────────────────────────────────

enum class SignalKind : int { s1 = 1, s2, s3, s4, s5, s6 };

inline constexpr std::array<SignalKind, 6> all_signal_kinds{SignalKind::s1, SignalKind::s2, SignalKind::s3,
                                                            SignalKind::s4, SignalKind::s5, SignalKind::s6};

inline std::string_view to_string(SignalKind k) {
    static constexpr std::string_view names[] = {"S1", "S2", "S3", "S4", "S5", "S6"};
    return names[static_cast<int>(k) - 1];
}

inline SignalKind parse_signal_kind(std::string_view s) {
    for (auto k : all_signal_kinds)
        if (to_string(k) == s) return k;
    throw ArgumentError("unknown signal kind '" + std::string(s) + "'");
}

/// +1 for S1/S3/S6, -1 for S2/S4/S5.
constexpr int polarity(SignalKind k) noexcept {
    return (k == SignalKind::s1 || k == SignalKind::s3 || k == SignalKind::s6) ? 1 : -1;
}

/// Tie-break order when opposite signals land on the same bar: S3/S4 > S5/S6 > S1/S2.
constexpr int severity(SignalKind k) noexcept {
    switch (k) {
        case SignalKind::s3:
        case SignalKind::s4: return 3;
        case SignalKind::s5:
        case SignalKind::s6: return 2;
        default: return 1;
    }
}

struct SignalEvent {
    SignalKind kind{SignalKind::s1};
    Timestamp at{};
    std::size_t bar{};
    Timeframe timeframe{};
    // Bar indices of the extrema behind the rule, previous before latest.
    std::vector<std::size_t> evidence;
    double strength{};

    friend bool operator==(const SignalEvent&, const SignalEvent&) = default;
};

struct DetectorConfig {
    std::size_t k{2};
    double eps_price{5e-4};
    double eps_ned{0.02};
    std::size_t pair_window{2};
    std::size_t trend_lookback{20};

    void validate() const {
        if (k < 1) throw ConfigError("detector k must be >= 1");
        if (!(eps_price >= 0.0) || !(eps_ned >= 0.0)) throw ConfigError("detector tolerances must be >= 0");
        if (trend_lookback <= 2 * k) throw ConfigError("trend_lookback must exceed 2k");
    }
};

/// Incremental S1-S6 detector over one series.
///
/// Each `step` appends a bar and its NED value and returns the events that
/// fire at that bar, sorted by kind. Extrema at index i are confirmed at
/// bar i + k; a rule is evaluated only on bars that confirm an extremum it
/// depends on.
///
/// - S1/S2: last two price peaks (highs), price troughs (lows), NED peaks and
///   NED troughs all rise (fall) beyond tolerance.
/// - S3: S2 fired within the lookback; latest NED trough <= previous + eps_ned;
///   latest price low > previous * (1 + eps_price).
/// - S4: S1 fired within the lookback; latest NED peak >= previous - eps_ned;
///   latest price high < previous * (1 - eps_price).
/// - S5: a newly confirmed price peak at or near the previous high, whose
///   paired NED is below the previous pair by eps_ned. S6 mirrors it at troughs.
///
/// A price extremum pairs with the latest same-type NED extremum at most
/// `pair_window` bars before it, else with the NED value on its own bar.
class SignalDetector {
public:
    explicit SignalDetector(DetectorConfig cfg = {}, Timeframe timeframe = {})
        : cfg_(cfg), timeframe_(timeframe) {
        cfg_.validate();
    }

    std::vector<SignalEvent> step(const Bar& bar, double ned) {
        highs_.push_back(bar.high);
        lows_.push_back(bar.low);
        neds_.push_back(ned);
        stamps_.push_back(bar.timestamp);
        std::vector<SignalEvent> events;
        const std::size_t t = highs_.size() - 1;
        const std::size_t k = cfg_.k;
        if (t < 2 * k) return events;

        const std::size_t i = t - k;
        const bool new_pp = detail::is_peak_at(highs_, i, k);
        const bool new_pt = detail::is_trough_at(lows_, i, k);
        const bool new_np = detail::is_peak_at(neds_, i, k);
        const bool new_nt = detail::is_trough_at(neds_, i, k);
        if (new_pp) price_peaks_.push_back({i, highs_[i]});
        if (new_pt) price_troughs_.push_back({i, lows_[i]});
        if (new_np) ned_peaks_.push_back({i, neds_[i]});
        if (new_nt) ned_troughs_.push_back({i, neds_[i]});
        if (!(new_pp || new_pt || new_np || new_nt)) return events;

        auto emit = [&](SignalKind kind, std::vector<std::size_t> evidence, double gap) {
            const double strength = std::max(0.0, gap) / (cfg_.eps_ned > 0.0 ? cfg_.eps_ned : 1.0);
            events.push_back({kind, stamps_[t], t, timeframe_, std::move(evidence), strength});
        };
        const bool four_pairs =
            price_peaks_.size() >= 2 && price_troughs_.size() >= 2 && ned_peaks_.size() >= 2 && ned_troughs_.size() >= 2;
        auto trend_evidence = [&] {
            return std::vector<std::size_t>{prev(price_peaks_).index, last(price_peaks_).index,
                                            prev(price_troughs_).index, last(price_troughs_).index,
                                            prev(ned_peaks_).index,   last(ned_peaks_).index,
                                            prev(ned_troughs_).index, last(ned_troughs_).index};
        };

        // S1
        if (four_pairs && price_rises(price_peaks_) && price_rises(price_troughs_) && ned_rises(ned_peaks_) &&
            ned_rises(ned_troughs_)) {
            emit(SignalKind::s1, trend_evidence(),
                 std::min(last(ned_peaks_).value - prev(ned_peaks_).value,
                          last(ned_troughs_).value - prev(ned_troughs_).value));
            last_s1_ = t;
        }
        // S2
        if (four_pairs && price_falls(price_peaks_) && price_falls(price_troughs_) && ned_falls(ned_peaks_) &&
            ned_falls(ned_troughs_)) {
            emit(SignalKind::s2, trend_evidence(),
                 std::min(prev(ned_peaks_).value - last(ned_peaks_).value,
                          prev(ned_troughs_).value - last(ned_troughs_).value));
            last_s2_ = t;
        }
        // S3
        if ((new_pt || new_nt) && within_lookback(last_s2_, t) && price_troughs_.size() >= 2 &&
            ned_troughs_.size() >= 2 && last(ned_troughs_).value <= prev(ned_troughs_).value + cfg_.eps_ned &&
            last(price_troughs_).value > prev(price_troughs_).value * (1.0 + cfg_.eps_price)) {
            emit(SignalKind::s3,
                 {prev(price_troughs_).index, last(price_troughs_).index, prev(ned_troughs_).index,
                  last(ned_troughs_).index},
                 prev(ned_troughs_).value - last(ned_troughs_).value);
        }
        // S4
        if ((new_pp || new_np) && within_lookback(last_s1_, t) && price_peaks_.size() >= 2 && ned_peaks_.size() >= 2 &&
            last(ned_peaks_).value >= prev(ned_peaks_).value - cfg_.eps_ned &&
            last(price_peaks_).value < prev(price_peaks_).value * (1.0 - cfg_.eps_price)) {
            emit(SignalKind::s4,
                 {prev(price_peaks_).index, last(price_peaks_).index, prev(ned_peaks_).index, last(ned_peaks_).index},
                 last(ned_peaks_).value - prev(ned_peaks_).value);
        }
        // S5
        if (new_pp && price_peaks_.size() >= 2) {
            const auto& cur = last(price_peaks_);
            const auto& before = prev(price_peaks_);
            const auto [cur_idx, cur_ned] = paired(ned_peaks_, cur.index);
            const auto [before_idx, before_ned] = paired(ned_peaks_, before.index);
            if (cur.value >= before.value * (1.0 - cfg_.eps_price) && cur_ned < before_ned - cfg_.eps_ned)
                emit(SignalKind::s5, {before.index, cur.index, before_idx, cur_idx}, before_ned - cur_ned);
        }
        // S6
        if (new_pt && price_troughs_.size() >= 2) {
            const auto& cur = last(price_troughs_);
            const auto& before = prev(price_troughs_);
            const auto [cur_idx, cur_ned] = paired(ned_troughs_, cur.index);
            const auto [before_idx, before_ned] = paired(ned_troughs_, before.index);
            if (cur.value <= before.value * (1.0 + cfg_.eps_price) && cur_ned > before_ned + cfg_.eps_ned)
                emit(SignalKind::s6, {before.index, cur.index, before_idx, cur_idx}, cur_ned - before_ned);
        }
        return events;
    }

    std::size_t size() const noexcept { return highs_.size(); }
    const DetectorConfig& config() const noexcept { return cfg_; }

private:
    struct Point {
        std::size_t index;
        double value;
    };

    static const Point& last(const std::vector<Point>& v) { return v[v.size() - 1]; }
    static const Point& prev(const std::vector<Point>& v) { return v[v.size() - 2]; }

    bool price_rises(const std::vector<Point>& v) const { return last(v).value > prev(v).value * (1.0 + cfg_.eps_price); }
    bool price_falls(const std::vector<Point>& v) const { return last(v).value < prev(v).value * (1.0 - cfg_.eps_price); }
    bool ned_rises(const std::vector<Point>& v) const { return last(v).value > prev(v).value + cfg_.eps_ned; }
    bool ned_falls(const std::vector<Point>& v) const { return last(v).value < prev(v).value - cfg_.eps_ned; }

    bool within_lookback(std::optional<std::size_t> fired, std::size_t t) const {
        return fired && t - *fired <= cfg_.trend_lookback;
    }

    std::pair<std::size_t, double> paired(const std::vector<Point>& ned_extrema, std::size_t price_index) const {
        for (auto it = ned_extrema.rbegin(); it != ned_extrema.rend(); ++it) {
            if (it->index > price_index) continue;
            if (price_index - it->index <= cfg_.pair_window) return {it->index, it->value};
            break;
        }
        return {price_index, neds_[price_index]};
    }

    DetectorConfig cfg_;
    Timeframe timeframe_;
    std::vector<double> highs_, lows_, neds_;
    std::vector<Timestamp> stamps_;
    std::vector<Point> price_peaks_, price_troughs_, ned_peaks_, ned_troughs_;
    std::optional<std::size_t> last_s1_, last_s2_;
};

inline std::vector<SignalEvent> detect_signals(std::span<const Bar> price_bars, std::span<const double> ned,
                                               const DetectorConfig& cfg = {}, const Timeframe& timeframe = {}) {
    if (price_bars.size() != ned.size()) throw ArgumentError("detect_signals: bars and NED values are not aligned");
    SignalDetector det(cfg, timeframe);
    std::vector<SignalEvent> out;
    for (std::size_t i = 0; i < price_bars.size(); ++i) {
        auto ev = det.step(price_bars[i], ned[i]);
        out.insert(out.end(), std::make_move_iterator(ev.begin()), std::make_move_iterator(ev.end()));
    }
    return out;
}

/// NED values per bar from a series on the bars' timeframe. A point belongs to the
/// bar whose span [open, next open) holds its window end. Bars without a point
/// (zero-flow windows) carry the previous value, 0 before the first.
inline std::vector<double> align_ned(std::span<const Bar> bars, const NedSeries& ned) {
    std::vector<double> out;
    out.reserve(bars.size());
    std::size_t j = 0;
    double carry = 0.0;
    for (std::size_t i = 0; i < bars.size(); ++i) {
        while (j < ned.points.size() && ned.points[j].window_end < bars[i].timestamp) ++j;
        if (j < ned.points.size() && (i + 1 == bars.size() || ned.points[j].window_end < bars[i + 1].timestamp))
            carry = ned.points[j].value;
        out.push_back(carry);
    }
    return out;
}

inline std::vector<SignalEvent> detect_signals(std::span<const Bar> price_bars, const NedSeries& ned,
                                               const DetectorConfig& cfg = {}) {
    const auto values = align_ned(price_bars, ned);
    return detect_signals(price_bars, values, cfg, ned.timeframe);
}

inline void write_signal_csv(std::ostream& out, std::span<const SignalEvent> events) {
    out << "at,timeframe,kind,strength,evidence_indices\n";
    for (const auto& e : events) {
        out << format_timestamp(e.at) << ',' << e.timeframe.label() << ',' << to_string(e.kind) << ','
            << format_number(e.strength) << ',';
        for (std::size_t i = 0; i < e.evidence.size(); ++i) out << (i ? ";" : "") << e.evidence[i];
        out << '\n';
    }
}

// ─── outlook ─────────────────────────────────────────────────────────────────

enum class Direction { up, down, neutral };

inline std::string_view to_string(Direction d) {
    return d == Direction::up ? "up" : d == Direction::down ? "down" : "neutral";
}

struct Outlook {
    Timestamp at{};
    Direction direction{Direction::neutral};
    std::optional<int> expected_state;
    std::vector<std::string> rationale;

    friend bool operator==(const Outlook&, const Outlook&) = default;
};

/// Turning levels near the price set the base expectation; active signals
/// override it. With both polarities active the latest event wins, then the
/// more severe one; a same-bar, same-severity conflict defers to the levels.
/// The expected state applies the flip of the nearest agreeing level within
/// `proximity`.
inline Outlook combine_outlook(const MarketState& state, std::span<const SignalEvent> recent, const TurningPair& tps,
                               double price, double proximity = 5e-3) {
    if (!(price > 0.0)) throw ArgumentError("combine_outlook: price must be positive");
    Outlook out;
    out.at = state.at;

    struct Near {
        const TurningPointForecast* f;
        double distance;
    };
    std::vector<Near> near;
    for (const auto* f : {&tps.t2, &tps.t4}) {
        if (f->status != TurnStatus::solved || !f->level) continue;
        const double d = std::abs(*f->level - price) / price;
        if (d <= proximity) near.push_back({f, d});
    }
    std::stable_sort(near.begin(), near.end(), [](const Near& a, const Near& b) { return a.distance < b.distance; });

    std::optional<Direction> base;
    if (!near.empty()) base = near.front().f->direction == FlipDirection::up ? Direction::up : Direction::down;

    const SignalEvent* winner = nullptr;
    bool conflict = false;
    for (const auto& e : recent) {
        if (!winner || e.bar > winner->bar || (e.bar == winner->bar && severity(e.kind) > severity(winner->kind))) {
            winner = &e;
            conflict = false;
        } else if (e.bar == winner->bar && severity(e.kind) == severity(winner->kind) &&
                   polarity(e.kind) != polarity(winner->kind)) {
            conflict = true;
        }
    }
    const bool bullish = std::any_of(recent.begin(), recent.end(), [](const auto& e) { return polarity(e.kind) > 0; });
    const bool bearish = std::any_of(recent.begin(), recent.end(), [](const auto& e) { return polarity(e.kind) < 0; });

    std::optional<Direction> from_signals;
    if (bullish != bearish) from_signals = bullish ? Direction::up : Direction::down;
    else if (winner && !conflict) from_signals = polarity(winner->kind) > 0 ? Direction::up : Direction::down;

    if (from_signals) {
        out.direction = *from_signals;
        out.rationale.emplace_back(to_string(winner->kind));
    } else if (base) {
        out.direction = *base;
    }
    for (const auto& n : near)
        out.rationale.push_back(std::string(to_string(n.f->kind)) + "-" + std::string(to_string(n.f->direction)));
    if (from_signals && base && *from_signals != *base)
        out.rationale.push_back(std::string(to_string(winner->kind)) + "-overrides-" +
                                std::string(to_string(near.front().f->kind)));

    if (out.direction != Direction::neutral) {
        const FlipDirection want = out.direction == Direction::up ? FlipDirection::up : FlipDirection::down;
        for (const auto& n : near) {
            if (n.f->direction != want) continue;
            const bool is_t2 = n.f->kind == TurnKind::t2;
            const Sign current = is_t2 ? state.trio.mid : state.trio.coarse;
            if ((want == FlipDirection::up) != (current == Sign::N)) continue;
            const int magnitude = is_t2 ? 2 : 4;
            out.expected_state = state.index + (want == FlipDirection::up ? magnitude : -magnitude);
            break;
        }
    }
    return out;
}

inline void write_outlook_csv(std::ostream& out, std::span<const Outlook> outlooks) {
    out << "at,direction,expected_state,rationale\n";
    for (const auto& o : outlooks) {
        out << format_timestamp(o.at) << ',' << to_string(o.direction) << ','
            << (o.expected_state ? std::to_string(*o.expected_state) : std::string("NA")) << ',';
        for (std::size_t i = 0; i < o.rationale.size(); ++i) out << (i ? ";" : "") << o.rationale[i];
        out << '\n';
    }
}

}  // namespace esm

#pragma once

#include "esm/error.hpp"

#include <charconv>
#include <chrono>
#include <string>
#include <string_view>

namespace esm {

/// Bar duration. Fixed intraday durations (1m..1h), calendar periods (1d..1y),
/// or a custom count of base bars (`3x`).
class Timeframe {
public:
    enum class Unit { minute, hour, day, week, month, quarter, year, bars };

    constexpr Timeframe() = default;
    constexpr Timeframe(Unit unit, int count) : unit_(unit), count_(count) {}

    static constexpr Timeframe minutes(int n) { return {Unit::minute, n}; }
    static constexpr Timeframe hour() { return {Unit::hour, 1}; }
    static constexpr Timeframe day() { return {Unit::day, 1}; }
    static constexpr Timeframe week() { return {Unit::week, 1}; }
    static constexpr Timeframe month() { return {Unit::month, 1}; }
    static constexpr Timeframe quarter() { return {Unit::quarter, 1}; }
    static constexpr Timeframe year() { return {Unit::year, 1}; }

    static Timeframe bars(int multiple) {
        if (multiple < 2) throw ConfigError("custom timeframe multiple must be >= 2");
        return {Unit::bars, multiple};
    }

    static Timeframe parse(std::string_view label) {
        if (label == "1m") return minutes(1);
        if (label == "5m") return minutes(5);
        if (label == "15m") return minutes(15);
        if (label == "30m") return minutes(30);
        if (label == "1h") return hour();
        if (label == "1d") return day();
        if (label == "1w") return week();
        if (label == "1mo") return month();
        if (label == "1q") return quarter();
        if (label == "1y") return year();
        if (label.size() >= 2 && label.back() == 'x') {
            int k = 0;
            auto [ptr, ec] = std::from_chars(label.data(), label.data() + label.size() - 1, k);
            if (ec == std::errc{} && ptr == label.data() + label.size() - 1) return bars(k);
        }
        throw ConfigError("unknown timeframe '" + std::string(label) + "'");
    }

    constexpr Unit unit() const noexcept { return unit_; }
    constexpr int count() const noexcept { return count_; }

    constexpr bool intraday() const noexcept { return unit_ == Unit::minute || unit_ == Unit::hour; }
    constexpr bool custom() const noexcept { return unit_ == Unit::bars; }
    constexpr bool calendar() const noexcept { return !intraday() && !custom(); }

    std::chrono::seconds duration() const {
        if (unit_ == Unit::minute) return std::chrono::minutes{count_};
        if (unit_ == Unit::hour) return std::chrono::hours{count_};
        throw ArgumentError("timeframe " + label() + " has no fixed duration");
    }

    // day < week < month < quarter < year
    int calendar_rank() const noexcept { return static_cast<int>(unit_) - static_cast<int>(Unit::day); }

    std::string label() const {
        switch (unit_) {
            case Unit::minute: return std::to_string(count_) + "m";
            case Unit::hour: return std::to_string(count_) + "h";
            case Unit::day: return "1d";
            case Unit::week: return "1w";
            case Unit::month: return "1mo";
            case Unit::quarter: return "1q";
            case Unit::year: return "1y";
            case Unit::bars: return std::to_string(count_) + "x";
        }
        return "?";
    }

    friend constexpr bool operator==(const Timeframe&, const Timeframe&) = default;

private:
    Unit unit_{Unit::day};
    int count_{1};
};

/// True when windows of `target` can be built from bars of `base`.
inline bool can_aggregate(const Timeframe& base, const Timeframe& target) {
    if (base == target) return true;
    if (base.custom()) return false;
    if (target.custom()) return true;
    if (base.intraday() && target.intraday())
        return target.duration() > base.duration() && target.duration() % base.duration() == std::chrono::seconds{0};
    if (base.intraday()) return true;
    if (target.intraday()) return false;
    return target.calendar_rank() > base.calendar_rank();
}

/// Strict "finer than" between two members of a trio built on `base`.
/// Calendar periods are ordered by rank; weeks do not nest inside months,
/// which is harmless because every window is built directly from base bars.
inline bool finer_than(const Timeframe& a, const Timeframe& b, const Timeframe& base) {
    if (a == b) return false;
    if (a.custom() || b.custom()) {
        const int ka = a.custom() ? a.count() : (a == base ? 1 : 0);
        const int kb = b.custom() ? b.count() : (b == base ? 1 : 0);
        if (ka == 0 || kb == 0) throw ConfigError("custom timeframes cannot be mixed with " + (ka == 0 ? a : b).label());
        return kb > ka && kb % ka == 0;
    }
    if (a.intraday() && b.intraday())
        return b.duration() > a.duration() && b.duration() % a.duration() == std::chrono::seconds{0};
    if (a.intraday()) return true;
    if (b.intraday()) return false;
    return a.calendar_rank() < b.calendar_rank();
}

}  // namespace esm

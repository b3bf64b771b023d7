#pragma once

#include "esm/error.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

namespace esm {

using Timestamp = std::chrono::sys_seconds;
using Date = std::chrono::sys_days;

namespace detail {

inline bool parse_fixed_int(std::string_view s, std::size_t pos, std::size_t len, int& out) {
    if (pos + len > s.size()) return false;
    const char* first = s.data() + pos;
    auto [ptr, ec] = std::from_chars(first, first + len, out);
    return ec == std::errc{} && ptr == first + len;
}

}  // namespace detail

/// Parses `YYYY-MM-DD`, `YYYY-MM-DDTHH:MM:SS` followed by `Z` or `±HH:MM`
/// (a space is accepted in place of `T`). A missing zone designator means UTC.
inline std::optional<Timestamp> try_parse_timestamp(std::string_view s) {
    using namespace std::chrono;
    int y = 0, mo = 0, d = 0;
    if (s.size() < 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
    if (!detail::parse_fixed_int(s, 0, 4, y) || !detail::parse_fixed_int(s, 5, 2, mo) ||
        !detail::parse_fixed_int(s, 8, 2, d))
        return std::nullopt;
    const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok()) return std::nullopt;
    Timestamp t{sys_days{ymd}};
    if (s.size() == 10) return t;

    if (s.size() < 19 || (s[10] != 'T' && s[10] != ' ') || s[13] != ':' || s[16] != ':') return std::nullopt;
    int hh = 0, mm = 0, ss = 0;
    if (!detail::parse_fixed_int(s, 11, 2, hh) || !detail::parse_fixed_int(s, 14, 2, mm) ||
        !detail::parse_fixed_int(s, 17, 2, ss))
        return std::nullopt;
    if (hh > 23 || mm > 59 || ss > 60) return std::nullopt;
    t += hours{hh} + minutes{mm} + seconds{ss};

    std::string_view zone = s.substr(19);
    if (zone.empty() || zone == "Z") return t;
    if (zone.size() != 6 || (zone[0] != '+' && zone[0] != '-') || zone[3] != ':') return std::nullopt;
    int oh = 0, om = 0;
    if (!detail::parse_fixed_int(zone, 1, 2, oh) || !detail::parse_fixed_int(zone, 4, 2, om)) return std::nullopt;
    const auto offset = hours{oh} + minutes{om};
    return zone[0] == '+' ? t - offset : t + offset;
}

inline Timestamp parse_timestamp(std::string_view s) {
    auto t = try_parse_timestamp(s);
    if (!t) throw ArgumentError("invalid timestamp '" + std::string(s) + "'");
    return *t;
}

inline std::string format_timestamp(Timestamp t) {
    using namespace std::chrono;
    const auto day_start = floor<days>(t);
    const year_month_day ymd{day_start};
    const hh_mm_ss tod{t - day_start};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<int>(tod.hours().count()), static_cast<int>(tod.minutes().count()),
                  static_cast<int>(tod.seconds().count()));
    return buf;
}

inline std::string format_date(Date d) {
    using namespace std::chrono;
    const year_month_day ymd{d};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

/// Shortest decimal text that parses back to the same double.
inline std::string format_number(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, ptr);
}

/// Maps instants to session dates in one timezone.
///
/// Accepts `UTC`, fixed offsets (`+05:30`, `-05:00`), or an IANA zone name
/// resolved through the system zoneinfo database. IANA lookups go through the
/// C library and are serialized by a process-wide mutex; results are cached
/// per hour.
class SessionClock {
public:
    SessionClock() = default;

    static SessionClock utc() { return SessionClock{}; }

    static SessionClock fixed(std::chrono::minutes offset) {
        SessionClock c;
        c.offset_ = offset;
        const auto total = offset.count();
        char buf[16];
        std::snprintf(buf, sizeof buf, "%c%02lld:%02lld", total < 0 ? '-' : '+',
                      static_cast<long long>(std::abs(total) / 60), static_cast<long long>(std::abs(total) % 60));
        c.name_ = buf;
        return c;
    }

    static SessionClock parse(std::string_view tz) {
        if (tz.empty() || tz == "UTC" || tz == "Z" || tz == "Etc/UTC") return utc();
        if ((tz[0] == '+' || tz[0] == '-') && tz.size() == 6 && tz[3] == ':') {
            int h = 0, m = 0;
            if (!detail::parse_fixed_int(tz, 1, 2, h) || !detail::parse_fixed_int(tz, 4, 2, m))
                throw ConfigError("invalid timezone offset '" + std::string(tz) + "'");
            const std::chrono::minutes off{h * 60 + m};
            return fixed(tz[0] == '-' ? -off : off);
        }
        const char* dir = std::getenv("TZDIR");
        const std::filesystem::path base = dir ? dir : "/usr/share/zoneinfo";
        if (tz.find("..") != std::string_view::npos || !std::filesystem::is_regular_file(base / std::string(tz)))
            throw ConfigError("unknown timezone '" + std::string(tz) + "'");
        SessionClock c;
        c.name_ = std::string(tz);
        c.cache_ = std::make_shared<ZoneCache>();
        return c;
    }

    const std::string& name() const noexcept { return name_; }

    std::chrono::seconds offset_at(Timestamp t) const {
        if (!cache_) return offset_;
        return cache_->lookup(name_, t);
    }

    Date session_date(Timestamp t) const { return std::chrono::floor<std::chrono::days>(t + offset_at(t)); }

private:
    struct ZoneCache {
        std::mutex mutex;
        std::map<long long, std::chrono::seconds> by_hour;

        std::chrono::seconds lookup(const std::string& zone, Timestamp t) {
            const long long hour = std::chrono::floor<std::chrono::hours>(t).time_since_epoch().count();
            {
                std::lock_guard lock(mutex);
                if (auto it = by_hour.find(hour); it != by_hour.end()) return it->second;
            }
            const auto off = system_offset(zone, t);
            std::lock_guard lock(mutex);
            by_hour.emplace(hour, off);
            return off;
        }
    };

    static std::chrono::seconds system_offset(const std::string& zone, Timestamp t) {
        static std::mutex env_mutex;
        std::lock_guard lock(env_mutex);
        const char* prev = std::getenv("TZ");
        const std::optional<std::string> saved = prev ? std::optional<std::string>(prev) : std::nullopt;
        ::setenv("TZ", zone.c_str(), 1);
        ::tzset();
        const std::time_t raw = static_cast<std::time_t>(t.time_since_epoch().count());
        std::tm local{};
        ::localtime_r(&raw, &local);
        const long gmtoff = local.tm_gmtoff;
        if (saved)
            ::setenv("TZ", saved->c_str(), 1);
        else
            ::unsetenv("TZ");
        ::tzset();
        return std::chrono::seconds{gmtoff};
    }

    std::string name_{"UTC"};
    std::chrono::seconds offset_{0};
    std::shared_ptr<ZoneCache> cache_;
};

}  // namespace esm

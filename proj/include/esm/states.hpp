#pragma once

#include "esm/error.hpp"
#include "esm/marketdata.hpp"
#include "esm/ned.hpp"
#include "esm/timeframe.hpp"

#include <array>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace esm {

/// Sign of a NED value. N covers negative and (by default) zero.
enum class Sign : std::uint8_t { N, P };

inline char to_char(Sign s) { return s == Sign::P ? 'P' : 'N'; }

enum class ZeroRule { treat_as_n, carry_previous };

inline ZeroRule parse_zero_rule(std::string_view s) {
    if (s == "treat-as-n" || s == "treat-as-N") return ZeroRule::treat_as_n;
    if (s == "carry-previous") return ZeroRule::carry_previous;
    throw ConfigError("unknown zero rule '" + std::string(s) + "'");
}

inline std::string_view to_string(ZeroRule z) { return z == ZeroRule::treat_as_n ? "treat-as-n" : "carry-previous"; }

struct SignTrio {
    Sign fine{Sign::N};
    Sign mid{Sign::N};
    Sign coarse{Sign::N};

    friend bool operator==(const SignTrio&, const SignTrio&) = default;
};

/// Three nested timeframes over bars of `base`. Table defaults: daily / weekly / monthly.
struct TrioConfig {
    Timeframe base{Timeframe::day()};
    Timeframe fine{Timeframe::day()};
    Timeframe mid{Timeframe::week()};
    Timeframe coarse{Timeframe::month()};
    ProxyKind proxy{ProxyKind::candle};
    ZeroRule zero_rule{ZeroRule::treat_as_n};
    SessionClock clock{};

    void validate() const {
        if (!can_aggregate(base, fine)) throw ConfigError("fine timeframe " + fine.label() + " cannot be built from " + base.label());
        if (!finer_than(fine, mid, base) || !finer_than(mid, coarse, base))
            throw ConfigError("timeframe trio must satisfy fine < mid < coarse with integer nesting: " + fine.label() +
                              " / " + mid.label() + " / " + coarse.label());
        if (!can_aggregate(base, mid) || !can_aggregate(base, coarse))
            throw ConfigError("trio timeframes cannot be built from " + base.label());
    }
};

struct MarketState {
    int index{1};
    SignTrio trio{};
    Timestamp at{};

    friend bool operator==(const MarketState&, const MarketState&) = default;
};

/// P for positive, N for negative; exact zero follows the zero rule
/// (carry-previous falls back to N without a previous sign).
inline Sign sign_of(double value, ZeroRule rule = ZeroRule::treat_as_n, std::optional<Sign> previous = std::nullopt) {
    if (value > 0.0) return Sign::P;
    if (value < 0.0) return Sign::N;
    if (rule == ZeroRule::carry_previous && previous) return *previous;
    return Sign::N;
}

/// 1 + [fine=P] + 2[mid=P] + 4[coarse=P]: state 1 is NNN, state 8 is PPP.
constexpr int classify_state(SignTrio t) noexcept {
    return 1 + (t.fine == Sign::P ? 1 : 0) + (t.mid == Sign::P ? 2 : 0) + (t.coarse == Sign::P ? 4 : 0);
}

constexpr SignTrio trio_of_state(int index) {
    if (index < 1 || index > 8) throw ArgumentError("market state index must be in 1..8");
    const int bits = index - 1;
    return {(bits & 1) ? Sign::P : Sign::N, (bits & 2) ? Sign::P : Sign::N, (bits & 4) ? Sign::P : Sign::N};
}

/// Per fine-window close: the window ranges and accumulated flows the trio sees.
/// Mid and coarse flows cover their current window up to the fine window's last bar.
struct TrioStep {
    std::size_t fine_index{};
    std::size_t bar{};
    Window fine{};
    std::size_t mid_window{};
    std::size_t mid_first{};
    std::size_t coarse_window{};
    std::size_t coarse_first{};
    FlowSplit fine_flow{};
    FlowSplit mid_flow{};
    FlowSplit coarse_flow{};
    // Mid/coarse flow of completed bars before `bar` in the current window.
    FlowSplit mid_before{};
    FlowSplit coarse_before{};
};

inline std::vector<TrioStep> trio_steps(std::span<const Bar> bars, const TrioConfig& cfg) {
    cfg.validate();
    std::vector<TrioStep> steps;
    if (bars.empty()) return steps;
    const auto fine_w = make_windows(bars, cfg.base, cfg.fine, cfg.clock);
    const auto mid_w = make_windows(bars, cfg.base, cfg.mid, cfg.clock);
    const auto coarse_w = make_windows(bars, cfg.base, cfg.coarse, cfg.clock);
    steps.reserve(fine_w.size());

    std::size_t fi = 0, mi = 0, ci = 0;
    FlowSplit fine_acc, mid_acc, coarse_acc, mid_prev, coarse_prev;
    for (std::size_t i = 0; i < bars.size(); ++i) {
        if (i == fine_w[fi].first && i != 0) fine_acc = {};
        if (i > mid_w[mi].last) {
            ++mi;
            mid_acc = {};
        }
        if (i > coarse_w[ci].last) {
            ++ci;
            coarse_acc = {};
        }
        const FlowSplit f = bar_flow(bars[i], cfg.proxy);
        mid_prev = mid_acc;
        coarse_prev = coarse_acc;
        fine_acc += f;
        mid_acc += f;
        coarse_acc += f;
        if (i == fine_w[fi].last) {
            steps.push_back({fi, i, fine_w[fi], mi, mid_w[mi].first, ci, coarse_w[ci].first, fine_acc, mid_acc,
                             coarse_acc, mid_prev, coarse_prev});
            ++fi;
        }
    }
    return steps;
}

/// Signs per timeframe with the zero rule applied; undefined NED (zero flow)
/// is handled like an exact zero.
class TrioSigner {
public:
    explicit TrioSigner(ZeroRule rule) : rule_(rule) {}

    SignTrio next(const TrioStep& s) {
        return {apply(try_ned(s.fine_flow), prev_[0]), apply(try_ned(s.mid_flow), prev_[1]),
                apply(try_ned(s.coarse_flow), prev_[2])};
    }

private:
    Sign apply(std::optional<double> v, std::optional<Sign>& prev) {
        const Sign s = sign_of(v.value_or(0.0), rule_, prev);
        prev = s;
        return s;
    }

    ZeroRule rule_;
    std::array<std::optional<Sign>, 3> prev_{};
};

/// One state per fine window, classified from the fine NED and the current
/// (possibly partial) mid and coarse NED at the fine window's close.
inline std::vector<MarketState> state_series(std::span<const Bar> bars, const TrioConfig& cfg) {
    std::vector<MarketState> out;
    TrioSigner signer(cfg.zero_rule);
    for (const TrioStep& s : trio_steps(bars, cfg)) {
        const SignTrio trio = signer.next(s);
        out.push_back({classify_state(trio), trio, bars[s.bar].timestamp});
    }
    return out;
}

inline void write_state_csv(std::ostream& out, std::span<const MarketState> states) {
    out << "at,fine_sign,mid_sign,coarse_sign,state\n";
    for (const auto& s : states)
        out << format_timestamp(s.at) << ',' << to_char(s.trio.fine) << ',' << to_char(s.trio.mid) << ','
            << to_char(s.trio.coarse) << ',' << s.index << '\n';
}

}  // namespace esm

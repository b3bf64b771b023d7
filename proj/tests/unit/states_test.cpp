#include "esm/states.hpp"

#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace esm;

TEST(SignOf, Examples) {
    EXPECT_EQ(sign_of(0.3), Sign::P);
    EXPECT_EQ(sign_of(-0.3), Sign::N);
    EXPECT_EQ(sign_of(0.0), Sign::N);
    EXPECT_EQ(sign_of(0.0, ZeroRule::carry_previous, Sign::P), Sign::P);
    EXPECT_EQ(sign_of(0.0, ZeroRule::carry_previous), Sign::N);
    EXPECT_EQ(sign_of(-0.0, ZeroRule::treat_as_n, Sign::P), Sign::N);
}

TEST(ClassifyState, TableOfEightStates) {
    // Columns 1..8: (fine, mid, coarse).
    const char* table[8] = {"NNN", "PNN", "NPN", "PPN", "NNP", "PNP", "NPP", "PPP"};
    for (int col = 0; col < 8; ++col) {
        auto s = [&](int i) { return table[col][i] == 'P' ? Sign::P : Sign::N; };
        const SignTrio trio{s(0), s(1), s(2)};
        EXPECT_EQ(classify_state(trio), col + 1);
        EXPECT_EQ(trio_of_state(col + 1), trio);
    }
    EXPECT_EQ(classify_state({Sign::P, Sign::N, Sign::P}), 6);
    EXPECT_THROW(trio_of_state(0), ArgumentError);
}

TEST(ClassifyState, SingleFlipChangesIndexByOneTwoFour) {
    for (int idx = 1; idx <= 8; ++idx) {
        const SignTrio t = trio_of_state(idx);
        if (t.fine == Sign::N) EXPECT_EQ(classify_state({Sign::P, t.mid, t.coarse}) - idx, 1);
        if (t.mid == Sign::N) EXPECT_EQ(classify_state({t.fine, Sign::P, t.coarse}) - idx, 2);
        if (t.coarse == Sign::N) EXPECT_EQ(classify_state({t.fine, t.mid, Sign::P}) - idx, 4);
    }
}

TEST(StateSeries, AllBuyIsStateEight) {
    const auto bars = esmtest::uptrend_bars();
    const auto states = state_series(bars, esmtest::daily_pipeline().trio);
    ASSERT_EQ(states.size(), bars.size());
    for (const auto& s : states) EXPECT_EQ(s.index, 8);
    auto candle = esmtest::daily_pipeline().trio;
    candle.proxy = ProxyKind::candle;
    for (const auto& s : state_series(bars, candle)) EXPECT_EQ(s.index, 8);
}

TEST(StateSeries, AllSellIsStateOne) {
    const auto bars = esmtest::downtrend_bars();
    for (const auto& s : state_series(bars, esmtest::daily_pipeline().trio)) EXPECT_EQ(s.index, 1);
}

TEST(StateSeries, FineFlipAlternatesSevenAndEight) {
    const auto bars = esmtest::alternating_bars();
    const auto states = state_series(bars, esmtest::alternating_pipeline().trio);
    ASSERT_EQ(states.size(), bars.size());
    for (std::size_t i = 0; i < states.size(); ++i) EXPECT_EQ(states[i].index, i % 2 == 0 ? 8 : 7) << i;
}

TEST(StateSeries, GlobalExtremesOnRiseFallFixtures) {
    const auto rise = esmtest::rise_fall_bars();
    const auto rs = state_series(rise, esmtest::daily_pipeline().trio);
    const auto top = std::max_element(rise.begin(), rise.end(), [](auto& a, auto& b) { return a.close < b.close; });
    EXPECT_EQ(rs[static_cast<std::size_t>(top - rise.begin())].index, 8);
    const auto fall = esmtest::fall_rise_bars();
    const auto fs = state_series(fall, esmtest::daily_pipeline().trio);
    const auto bottom = std::min_element(fall.begin(), fall.end(), [](auto& a, auto& b) { return a.close < b.close; });
    EXPECT_EQ(fs[static_cast<std::size_t>(bottom - fall.begin())].index, 1);
}

TEST(StateSeries, IsCausal) {
    const auto bars = esmtest::april_bars();
    const auto cfg = esmtest::april_pipeline().trio;
    const auto full = state_series(bars, cfg);
    for (std::size_t n = 1; n <= bars.size(); n += 7) {
        const auto prefix = state_series(std::span<const Bar>(bars).first(n), cfg);
        ASSERT_EQ(prefix.size(), n);
        EXPECT_TRUE(std::equal(prefix.begin(), prefix.end(), full.begin())) << n;
    }
}

TEST(StateSeries, UsesPartialMidAndCoarseWindows) {
    // Week of 5 bars: buy, sell, sell, buy, buy (flow 9/1 vs 2/8). The mid sign at each
    // fine close follows the running weekly sum.
    std::vector<Bar> bars;
    const auto stamps = business_days(esmtest::daily_start, 5);
    const double buys[] = {9, 2, 2, 9, 9};
    for (int i = 0; i < 5; ++i) {
        Bar b;
        b.timestamp = stamps[static_cast<std::size_t>(i)];
        b.open = b.high = b.low = b.close = 100;
        b.volume = 10;
        b.buy_volume = buys[i];
        b.sell_volume = 10 - buys[i];
        bars.push_back(b);
    }
    const auto states = state_series(bars, esmtest::daily_pipeline().trio);
    // Running weekly buy-sell: +8, +2, -4, +4, +12.
    const Sign mids[] = {Sign::P, Sign::P, Sign::N, Sign::P, Sign::P};
    for (int i = 0; i < 5; ++i) {
        EXPECT_EQ(states[static_cast<std::size_t>(i)].trio.mid, mids[i]) << i;
        EXPECT_EQ(states[static_cast<std::size_t>(i)].trio.coarse, mids[i]) << i;
    }
}

TEST(StateSeries, CarryPreviousOnZeroFlow) {
    std::vector<Bar> bars;
    const auto stamps = business_days(esmtest::daily_start, 3);
    const double buys[] = {9, 5, 5};
    for (int i = 0; i < 3; ++i) {
        Bar b;
        b.timestamp = stamps[static_cast<std::size_t>(i)];
        b.open = b.high = b.low = b.close = 100;
        b.volume = 10;
        b.buy_volume = buys[i];
        b.sell_volume = 10 - buys[i];
        bars.push_back(b);
    }
    auto cfg = esmtest::daily_pipeline().trio;
    EXPECT_EQ(state_series(bars, cfg)[1].trio.fine, Sign::N);
    cfg.zero_rule = ZeroRule::carry_previous;
    const auto carried = state_series(bars, cfg);
    EXPECT_EQ(carried[1].trio.fine, Sign::P);
    EXPECT_EQ(carried[2].trio.fine, Sign::P);
}

TEST(TrioConfig, Validation) {
    TrioConfig c;
    EXPECT_NO_THROW(c.validate());
    c.mid = Timeframe::month();
    c.coarse = Timeframe::week();
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrioConfig{};
    c.base = Timeframe::minutes(5);
    c.fine = Timeframe::minutes(15);
    c.mid = Timeframe::minutes(20);
    c.coarse = Timeframe::hour();
    EXPECT_THROW(c.validate(), ConfigError);
    c.mid = Timeframe::minutes(30);
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(parse_zero_rule("carry-previous"), ZeroRule::carry_previous);
    EXPECT_THROW(parse_zero_rule("zero"), ConfigError);
}

TEST(StateCsv, Format) {
    std::vector<MarketState> states{{6, {Sign::P, Sign::N, Sign::P}, parse_timestamp("2025-03-21")}};
    std::ostringstream out;
    write_state_csv(out, states);
    EXPECT_EQ(out.str(), "at,fine_sign,mid_sign,coarse_sign,state\n2025-03-21T00:00:00Z,P,N,P,6\n");
}

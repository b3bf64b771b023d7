#include "esm/backtest.hpp"

#include "fixtures.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

using namespace esm;
namespace fs = std::filesystem;

namespace {

std::vector<Bar> closes_to_bars(const std::vector<double>& closes) { return esmtest::flat_bars(closes); }

EventLog log_with(const std::vector<Bar>& bars, const std::vector<std::pair<SignalKind, std::size_t>>& events) {
    EventLog log;
    log.fine_bars = bars;
    for (std::size_t i = 0; i < bars.size(); ++i) {
        LogRow r;
        r.index = i;
        r.at = bars[i].timestamp;
        r.close = bars[i].close;
        log.rows.push_back(r);
    }
    for (auto [k, bar] : events) log.rows[bar].signals.push_back({k, bars[bar].timestamp, bar, Timeframe::day(), {}, 1});
    return log;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("esm_backtest_test_" + name);
    fs::remove_all(dir);
    return dir;
}

std::size_t count_of(const std::string& text, const std::string& needle) {
    std::size_t n = 0;
    for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
    return n;
}

}  // namespace

TEST(Replay, EmptyInputGivesEmptyLog) {
    const auto log = replay(std::vector<Bar>{}, esmtest::daily_pipeline());
    EXPECT_TRUE(log.rows.empty());
    EXPECT_TRUE(log.fine_bars.empty());
}

TEST(Replay, OneRowPerFineWindow) {
    const auto fx = esmtest::fixture_suite()[4];
    const auto log = replay(fx.bars, fx.pipeline);
    const auto windows = make_windows(fx.bars, fx.pipeline.trio.base, fx.pipeline.trio.fine, fx.pipeline.trio.clock);
    ASSERT_EQ(log.rows.size(), windows.size());
    EXPECT_EQ(log.rows.size(), 234u);
    for (std::size_t i = 0; i < log.rows.size(); ++i) {
        EXPECT_EQ(log.rows[i].index, i);
        EXPECT_EQ(log.rows[i].at, fx.bars[windows[i].last].timestamp);
    }
}

TEST(Replay, MatchesModuleOperations) {
    const auto fx = esmtest::fixture_suite()[4];
    const auto log = replay(fx.bars, fx.pipeline);
    const auto states = state_series(fx.bars, fx.pipeline.trio);
    const auto tps = turning_points(fx.bars, fx.pipeline.trio, fx.pipeline.solver);
    const auto ned = ned_series(fx.bars, fx.pipeline.trio.base, fx.pipeline.trio.fine, fx.pipeline.trio.proxy,
                                {fx.pipeline.trio.clock});
    const auto signals = detect_signals(log.fine_bars, ned, fx.pipeline.detector);
    ASSERT_EQ(states.size(), log.rows.size());
    for (std::size_t i = 0; i < log.rows.size(); ++i) {
        EXPECT_EQ(log.rows[i].state, states[i]);
        EXPECT_EQ(log.rows[i].turning, tps[i]);
    }
    EXPECT_EQ(log.signals(), signals);
}

TEST(Replay, PrefixOfLogEqualsLogOfPrefix) {
    auto fx = esmtest::fixture_suite()[4];
    // A fine timeframe coarser than the base so trailing partial windows occur.
    fx.pipeline.trio.fine = Timeframe::minutes(10);
    fx.pipeline.trio.mid = Timeframe::minutes(30);
    fx.pipeline.trio.coarse = Timeframe::hour();
    const auto full = replay(fx.bars, fx.pipeline);
    const auto windows = make_windows(fx.bars, fx.pipeline.trio.base, fx.pipeline.trio.fine, fx.pipeline.trio.clock);
    for (std::size_t n = 1; n <= fx.bars.size(); ++n) {
        const auto part = replay(std::span<const Bar>(fx.bars).first(n), fx.pipeline);
        ASSERT_FALSE(part.rows.empty());
        const std::size_t last = part.rows.size() - 1;
        const bool boundary = windows[last].last + 1 == n;
        const std::size_t exact = boundary ? part.rows.size() : last;
        for (std::size_t i = 0; i < exact; ++i) ASSERT_EQ(part.rows[i], full.rows[i]) << "prefix " << n << " row " << i;
        EXPECT_TRUE(std::equal(part.fine_bars.begin(), part.fine_bars.begin() + static_cast<long>(exact),
                               full.fine_bars.begin()));
    }
}

TEST(Replay, Deterministic) {
    const auto fx = esmtest::fixture_suite()[4];
    EXPECT_EQ(replay(fx.bars, fx.pipeline), replay(fx.bars, fx.pipeline));
}

TEST(Replay, SignalsExpireAfterTtl) {
    const auto fx = esmtest::fixture_suite()[4];
    const auto log = replay(fx.bars, fx.pipeline);
    ASSERT_FALSE(log.signals().empty());
    const auto all = log.signals();
    for (const auto& r : log.rows) {
        std::vector<SignalEvent> recent;
        for (const auto& e : all)
            if (e.bar <= r.index && r.index - e.bar < fx.pipeline.signal_ttl) recent.push_back(e);
        EXPECT_EQ(r.outlook, combine_outlook(r.state, recent, r.turning, r.close, fx.pipeline.proximity));
    }
}

TEST(Reversals, SingleHit) {
    const auto bars = closes_to_bars({100, 100, 99.9, 100.2, 100.6, 100, 100, 100, 100, 100});
    const auto s = evaluate_reversals(log_with(bars, {{SignalKind::s3, 1}}));
    EXPECT_EQ(s.total.emitted, 1u);
    EXPECT_EQ(s.total.hits, 1u);
    EXPECT_EQ(*s.total.hit_rate(), 1.0);
    EXPECT_EQ(s.by_kind.at(SignalKind::s3).hits, 1u);
}

TEST(Reversals, FinalBarIsUnresolved) {
    const auto bars = closes_to_bars({100, 101, 102, 103, 104, 105, 106, 107, 108, 109});
    const auto s = evaluate_reversals(log_with(bars, {{SignalKind::s3, 9}}));
    EXPECT_EQ(s.total.unresolved, 1u);
    EXPECT_FALSE(s.total.hit_rate().has_value());
    std::ostringstream out;
    write_reversal_csv(out, s);
    EXPECT_EQ(out.str(), "kind,emitted,hits,misses,unresolved,hit_rate\nS3,1,0,0,1,NA\nS4,0,0,0,0,NA\n"
                         "S5,0,0,0,0,NA\nS6,0,0,0,0,NA\nall,1,0,0,1,NA\n");
}

TEST(Reversals, HorizonBoundary) {
    // Seven later bars exist for bar 2 of 10, so it resolves; bar 3 does not.
    const auto bars = closes_to_bars({100, 100, 100, 100, 100, 100, 100, 100, 100, 99});
    EXPECT_EQ(score_reversal(bars, 2, SignalKind::s4, {}), Outcome::hit);
    EXPECT_EQ(score_reversal(bars, 2, SignalKind::s6, {}), Outcome::miss);
    EXPECT_EQ(score_reversal(bars, 3, SignalKind::s4, {}), Outcome::unresolved);
    // Exactly 0.5% counts.
    EXPECT_EQ(score_reversal(closes_to_bars({200, 100}), 0, SignalKind::s5, {1, 0.5}), Outcome::hit);
}

TEST(Reversals, TrendSignalsExcluded) {
    const auto bars = closes_to_bars({100, 100, 100, 100, 100, 100, 100, 100, 100, 100});
    const auto s = evaluate_reversals(log_with(bars, {{SignalKind::s1, 0}, {SignalKind::s2, 1}, {SignalKind::s5, 1}}));
    EXPECT_EQ(s.total.emitted, 1u);
    EXPECT_EQ(s.total.misses, 1u);
}

TEST(Reversals, MatchBruteForceScan) {
    std::mt19937_64 rng(23);
    std::normal_distribution<double> step(0.0, 0.004);
    std::uniform_int_distribution<int> kind(1, 6);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 5 + static_cast<std::size_t>(trial % 40);
        std::vector<double> closes{100};
        for (std::size_t i = 1; i < n; ++i) closes.push_back(closes.back() * (1 + step(rng)));
        const auto bars = closes_to_bars(closes);
        std::vector<std::pair<SignalKind, std::size_t>> ev;
        std::uniform_int_distribution<std::size_t> at(0, n - 1);
        for (int k = 0; k < 8; ++k) ev.push_back({static_cast<SignalKind>(kind(rng)), at(rng)});
        ReversalSpec spec{1 + static_cast<std::size_t>(trial % 9), 2e-3 + 1e-3 * (trial % 5)};
        const auto log = log_with(bars, ev);
        const auto s = evaluate_reversals(log, spec);
        const auto oracle = esmtest::oracle_reversal_counts(log.signals(), bars, spec);
        KindScore total;
        for (auto k : reversal_kinds) {
            const auto& got = s.by_kind.at(k);
            const auto it = oracle.find(static_cast<int>(k));
            const esmtest::OracleCounts want = it == oracle.end() ? esmtest::OracleCounts{} : it->second;
            EXPECT_EQ(got.emitted, want.emitted);
            EXPECT_EQ(got.hits, want.hits);
            EXPECT_EQ(got.misses, want.misses);
            EXPECT_EQ(got.unresolved, want.unresolved);
            EXPECT_EQ(got.emitted, got.hits + got.misses + got.unresolved);
            total.emitted += got.emitted;
            total.hits += got.hits;
        }
        EXPECT_EQ(s.total.emitted, total.emitted);
        EXPECT_EQ(s.total.hits, total.hits);
        EXPECT_EQ(s.total.emitted, s.total.hits + s.total.misses + s.total.unresolved);
    }
}

TEST(Reversals, MismatchedBarsRejected) {
    const auto bars = closes_to_bars({100, 101, 102});
    const auto log = log_with(bars, {});
    EXPECT_THROW(evaluate_reversals(log, std::span<const Bar>(bars).first(2)), ArgumentError);
    auto shifted = bars;
    for (auto& b : shifted) b.timestamp += std::chrono::hours{48};
    EXPECT_THROW(evaluate_reversals(log, shifted), ArgumentError);
    EXPECT_THROW(evaluate_reversals(log, bars, {0, 5e-3}), ConfigError);
    EXPECT_THROW(evaluate_reversals(log, bars, {7, 0.0}), ConfigError);
}

TEST(Volatility, SingleSession) {
    Bar b;
    b.timestamp = parse_timestamp("2025-04-07T14:30:00Z");
    b.open = b.close = 100.5;
    b.high = 101.49;
    b.low = 100.0;
    b.volume = 1;
    const auto t = volatility_report(std::vector<Bar>{b}, {}, 100.0);
    ASSERT_EQ(t.rows.size(), 1u);
    EXPECT_NEAR(t.rows[0].value, 0.0149, 1e-15);
    EXPECT_NEAR(*t.mean, 0.0149, 1e-15);
    const auto none = volatility_report(std::vector<Bar>{b});
    EXPECT_TRUE(none.rows.empty());
    EXPECT_FALSE(none.mean.has_value());
    ASSERT_EQ(none.notes.size(), 1u);
    EXPECT_NE(none.notes[0].find("2025-04-07"), std::string::npos);
}

TEST(Volatility, IdenticalSessionsShareTheMean) {
    std::vector<Bar> bars;
    for (int d = 0; d < 2; ++d) {
        for (int i = 0; i < 3; ++i) {
            Bar b;
            b.timestamp = parse_timestamp("2025-04-07T14:30:00Z") + std::chrono::hours{24 * d} + std::chrono::minutes{5 * i};
            b.open = b.close = 100;
            b.high = i == 1 ? 101.0 : 100.2;
            b.low = i == 2 ? 99.5 : 99.9;
            b.volume = 1;
            bars.push_back(b);
        }
    }
    const auto t = volatility_report(bars, {}, 100.0);
    ASSERT_EQ(t.rows.size(), 2u);
    EXPECT_EQ(t.rows[0].value, t.rows[1].value);
    EXPECT_NEAR(*t.mean, 0.015, 1e-15);
    std::ostringstream out;
    write_volatility_csv(out, t);
    EXPECT_EQ(out.str(), "date,high,low,prev_close,v\n2025-04-07,101,99.5,100,0.015\n2025-04-08,101,99.5,100,0.015\n"
                         "mean,,,,0.015\n");
}

TEST(Report, EmptyLogWritesHeadersAndAxes) {
    const auto dir = scratch_dir("empty");
    const EventLog log;
    const auto report = build_report({}, log, {}, {}, std::nullopt, "0");
    emit_report(report, log, dir, nlohmann::json::object());
    EXPECT_EQ(slurp(dir / "states.csv"), "at,fine_sign,mid_sign,coarse_sign,state\n");
    EXPECT_EQ(slurp(dir / "signals.csv"), "at,timeframe,kind,strength,evidence_indices\n");
    EXPECT_EQ(slurp(dir / "turning_points.csv"), "as_of,kind,direction,level\n");
    EXPECT_EQ(slurp(dir / "outlooks.csv"), "at,direction,expected_state,rationale\n");
    EXPECT_EQ(slurp(dir / "volatility.csv"), "date,high,low,prev_close,v\nmean,,,,NA\n");
    const auto svg = slurp(dir / "chart.svg");
    EXPECT_EQ(count_of(svg, "class=\"axis\""), 2u);
    EXPECT_EQ(count_of(svg, "signal-marker"), 0u);
    const auto run = nlohmann::json::parse(slurp(dir / "run.json"));
    EXPECT_EQ(run["summary"]["fine_windows"], 0);
    fs::remove_all(dir);
}

TEST(Report, OneMarkerPerSignalAndLevelLines) {
    const auto fx = esmtest::fixture_suite()[4];
    const auto log = replay(fx.bars, fx.pipeline);
    const auto svg = render_chart_svg(log);
    ASSERT_GT(log.signals().size(), 0u);
    EXPECT_EQ(count_of(svg, "class=\"signal-marker\""), log.signals().size());
    EXPECT_GT(count_of(svg, "class=\"t2-level\""), 0u);
    EXPECT_GT(count_of(svg, "class=\"t4-level\""), 0u);
    EXPECT_EQ(count_of(svg, "<title>state "), log.rows.size());
    EXPECT_EQ(count_of(svg, "class=\"price\""), 1u);
}

TEST(Report, ByteIdenticalAcrossRuns) {
    const auto fx = esmtest::fixture_suite()[4];
    std::vector<fs::path> dirs{scratch_dir("a"), scratch_dir("b")};
    for (const auto& dir : dirs) {
        const auto log = replay(fx.bars, fx.pipeline);
        const auto report = build_report(fx.bars, log, {}, fx.pipeline.trio.clock, std::nullopt, "cafe");
        emit_report(report, log, dir, {{"fine", "5m"}});
    }
    std::size_t files = 0;
    for (const auto& entry : fs::directory_iterator(dirs[0])) {
        ++files;
        EXPECT_EQ(slurp(entry.path()), slurp(dirs[1] / entry.path().filename())) << entry.path();
    }
    EXPECT_EQ(files, 8u);
    const auto run = nlohmann::json::parse(slurp(dirs[0] / "run.json"));
    EXPECT_EQ(run["config_hash"], "cafe");
    EXPECT_EQ(run["data_hash"], data_hash(fx.bars));
    EXPECT_EQ(run["data_span"]["base_bars"], fx.bars.size());
    for (const auto& d : dirs) fs::remove_all(d);
}

TEST(Report, UnwritableDirectoryIsDataError) {
    const auto blocker = scratch_dir("blocker");
    { std::ofstream(blocker) << "x"; }
    EXPECT_THROW(emit_report({}, EventLog{}, blocker / "sub", nlohmann::json::object()), DataError);
    fs::remove_all(blocker);
}

TEST(Report, OccupancyAndHashes) {
    const auto fx = esmtest::fixture_suite()[0];
    const auto log = replay(fx.bars, fx.pipeline);
    const auto occ = state_occupancy(log);
    EXPECT_EQ(occ[7], log.rows.size());
    EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(hex64(fnv1a64("a")), "af63dc4c8601ec8c");
    EXPECT_NE(data_hash(fx.bars), data_hash(esmtest::fixture_suite()[1].bars));
}

#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "breakout/analytics.hpp"
#include "oracles.hpp"

using namespace breakout;

namespace {

SpeakingSegment seg(const char* p, std::int64_t a, std::int64_t b) { return {p, Timestamp{a}, Timestamp{b}}; }

std::vector<ParticipantEvent> joins(std::initializer_list<const char*> names, std::int64_t t = 0) {
    std::vector<ParticipantEvent> out;
    for (const char* n : names) out.push_back({n, Timestamp{t}, PresenceKind::join});
    return out;
}

std::vector<Turn> random_turns(std::mt19937_64& rng, const std::vector<ParticipantId>& names, std::size_t n) {
    std::vector<Turn> out;
    std::int64_t t = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const auto len = 100 + static_cast<std::int64_t>(rng() % 3000);
        out.push_back({names[rng() % names.size()], Timestamp{t}, Timestamp{t + len}});
        t += len + static_cast<std::int64_t>(rng() % 2000);
    }
    return out;
}

}  // namespace

TEST(Turns, Examples) {
    AnalyticsConfig cfg;
    std::vector<SpeakingSegment> close{seg("A", 0, 1000), seg("A", 1500, 2000)};
    EXPECT_EQ(derive_turns(close, cfg), (std::vector<Turn>{{"A", Timestamp{0}, Timestamp{2000}}}));
    std::vector<SpeakingSegment> far{seg("A", 0, 1000), seg("A", 3000, 4000)};
    EXPECT_EQ(derive_turns(far, cfg).size(), 2u);
    EXPECT_TRUE(derive_turns({}, cfg).empty());
}

TEST(Turns, AnotherSpeakerInTheGapSplitsTheTurn) {
    AnalyticsConfig cfg;
    std::vector<SpeakingSegment> segs{seg("A", 0, 1000), seg("B", 1100, 1400), seg("A", 1500, 2500)};
    const auto turns = derive_turns(segs, cfg);
    ASSERT_EQ(turns.size(), 3u);
    EXPECT_EQ(turns[1].participant, "B");
}

TEST(Turns, MatchesPairwiseOracle) {
    std::mt19937_64 rng(17);
    for (int i = 0; i < 500; ++i) {
        auto s = oracle::random_session(rng);
        ASSERT_EQ(derive_turns(s.segments, s.cfg), oracle::turns(s.segments, s.cfg.turn_merge_gap_ms)) << i;
    }
}

TEST(Transitions, AlternatingSpeakers) {
    const std::vector<ParticipantId> names{"A", "B"};
    std::vector<Turn> seq{{"A", Timestamp{0}, Timestamp{1}}, {"B", Timestamp{2}, Timestamp{3}},
                          {"A", Timestamp{4}, Timestamp{5}}, {"B", Timestamp{6}, Timestamp{7}}};
    const auto m = transition_matrix(seq, names);
    EXPECT_EQ(m.probabilities, (std::vector<std::vector<double>>{{0.0, 1.0}, {1.0, 0.0}}));
}

TEST(Transitions, SingleTurnHasNoPairs) {
    const std::vector<ParticipantId> names{"A", "B"};
    std::vector<Turn> seq{{"A", Timestamp{0}, Timestamp{1}}};
    EXPECT_EQ(transition_matrix(seq, names).total(), 0);
}

TEST(Transitions, MatchesPairCountOracle) {
    std::mt19937_64 rng(23);
    for (int i = 0; i < 500; ++i) {
        std::vector<ParticipantId> names;
        const auto n = 1 + rng() % 8;
        for (std::size_t k = 0; k < n; ++k) names.push_back("q" + std::to_string(k));
        const auto seq = random_turns(rng, names, rng() % 200);
        const auto m = transition_matrix(seq, names);
        ASSERT_EQ(m.counts, oracle::pair_counts(seq, names)) << i;
    }
}

TEST(Transitions, RowsAreDistributionsAndCountsMatchTurns) {
    std::mt19937_64 rng(29);
    for (int i = 0; i < 500; ++i) {
        std::vector<ParticipantId> names;
        const auto n = 1 + rng() % 8;
        for (std::size_t k = 0; k < n; ++k) names.push_back("q" + std::to_string(k));
        const auto seq = random_turns(rng, names, rng() % 200);
        const auto m = transition_matrix(seq, names);
        EXPECT_EQ(m.total(), std::max<std::int64_t>(0, static_cast<std::int64_t>(seq.size()) - 1));
        for (std::size_t r = 0; r < n; ++r) {
            const double sum = std::accumulate(m.probabilities[r].begin(), m.probabilities[r].end(), 0.0);
            const auto count = std::accumulate(m.counts[r].begin(), m.counts[r].end(), std::int64_t{0});
            for (double p : m.probabilities[r]) {
                EXPECT_GE(p, 0.0);
                EXPECT_LE(p, 1.0);
            }
            if (count > 0) {
                EXPECT_NEAR(sum, 1.0, 1e-9);
            } else {
                EXPECT_EQ(sum, 0.0);
            }
        }
    }
}

TEST(Transitions, RelabelingPermutesRowsAndColumns) {
    std::mt19937_64 rng(31);
    for (int i = 0; i < 300; ++i) {
        std::vector<ParticipantId> names;
        const auto n = 1 + rng() % 8;
        for (std::size_t k = 0; k < n; ++k) names.push_back("q" + std::to_string(k));
        const auto seq = random_turns(rng, names, rng() % 200);
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<ParticipantId> permuted(n);
        for (std::size_t k = 0; k < n; ++k) permuted[k] = names[perm[k]];
        const auto a = transition_matrix(seq, names);
        const auto b = transition_matrix(seq, permuted);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < n; ++c) {
                ASSERT_EQ(b.counts[r][c], a.counts[perm[r]][perm[c]]);
                ASSERT_EQ(b.probabilities[r][c], a.probabilities[perm[r]][perm[c]]);
            }
    }
}

TEST(IntervalStats, OverlapExample) {
    AnalyticsConfig cfg;
    std::vector<SpeakingSegment> segs{seg("A", 0, 10000), seg("B", 5000, 15000)};
    const auto st = compute_interval_stats("s", segs, joins({"A", "B"}), {Timestamp{0}, Timestamp{60000}}, cfg);
    EXPECT_DOUBLE_EQ(st.overlap_pct, 1.0 / 3.0);
    EXPECT_EQ(st.speaking_time_ms.at("A"), 10000);
    EXPECT_EQ(st.speaking_events.at("B"), 1);
}

TEST(IntervalStats, TwelveTurnsPerMinute) {
    AnalyticsConfig cfg;
    std::vector<SpeakingSegment> segs;
    for (int k = 0; k < 12; ++k) segs.push_back(seg(k % 2 ? "A" : "B", k * 5000, k * 5000 + 1000));
    const auto st = compute_interval_stats("s", segs, joins({"A", "B"}), {Timestamp{0}, Timestamp{60000}}, cfg);
    EXPECT_DOUBLE_EQ(st.turn_taking_per_min, 12.0);
    EXPECT_EQ(st.transitions.total(), 11);
}

TEST(IntervalStats, EmptyWindow) {
    AnalyticsConfig cfg;
    const auto st = compute_interval_stats("s", {}, joins({"A"}), {Timestamp{0}, Timestamp{60000}}, cfg);
    EXPECT_EQ(st.speaking_events.at("A"), 0);
    EXPECT_EQ(st.turns.at("A"), 0);
    EXPECT_EQ(st.overlap_pct, 0.0);
    EXPECT_EQ(st.turn_taking_per_min, 0.0);
    EXPECT_EQ(st.participants_present, std::vector<ParticipantId>{"A"});
}

TEST(IntervalStats, IdenticalSegmentsOverlapFully) {
    AnalyticsConfig cfg;
    std::vector<SpeakingSegment> segs{seg("A", 100, 900), seg("B", 100, 900)};
    EXPECT_EQ(compute_interval_stats("s", segs, joins({"A", "B"}), {Timestamp{0}, Timestamp{1000}}, cfg).overlap_pct, 1.0);
}

TEST(IntervalStats, MatchesTimelineOracle) {
    std::mt19937_64 rng(41);
    for (int i = 0; i < 200; ++i) {
        const auto s = oracle::random_session(rng);
        const auto st = compute_interval_stats("s", s.segments, s.events, s.window, s.cfg);
        const auto want = oracle::stats(s.segments, s.events, s.window.start.ms, s.window.end.ms, s.cfg);
        ASSERT_EQ(st.participants_present, want.participants) << i;
        EXPECT_EQ(st.speaking_events, want.speaking_events) << i;
        EXPECT_EQ(st.turns, want.turns) << i;
        EXPECT_EQ(st.transitions.counts, want.counts) << i;
        EXPECT_DOUBLE_EQ(st.turn_taking_per_min, want.turn_taking_per_min) << i;
        EXPECT_NEAR(st.overlap_pct, want.overlap_pct, 0.01) << i;
        for (const auto& [p, ms] : want.speaking_time_ms) EXPECT_NEAR(st.speaking_time_ms.at(p), ms, 50) << i;
        EXPECT_GE(st.overlap_pct, 0.0);
        EXPECT_LE(st.overlap_pct, 1.0);
    }
}

TEST(IntervalStats, QuietStretchLeavesStatsUnchanged) {
    // Nothing happens in (t1, t2] and both windows see the same segments.
    AnalyticsConfig cfg;
    std::vector<SpeakingSegment> segs{seg("A", 70000, 72000), seg("B", 73000, 75000)};
    const auto ev = joins({"A", "B"}, 60000);
    auto a = compute_interval_stats("s", segs, ev, tick_window(Timestamp{80000}, cfg), cfg);
    auto b = compute_interval_stats("s", segs, ev, tick_window(Timestamp{90000}, cfg), cfg);
    EXPECT_EQ(a.speaking_events, b.speaking_events);
    EXPECT_EQ(a.speaking_time_ms, b.speaking_time_ms);
    EXPECT_EQ(a.transitions, b.transitions);
    EXPECT_EQ(a.overlap_pct, b.overlap_pct);
    EXPECT_EQ(a.turn_taking_per_min, b.turn_taking_per_min);
}

TEST(IntervalStats, SegmentsAcrossTheEdgeAreClippedButCountedOnce) {
    AnalyticsConfig cfg;
    cfg.window_ms = 10000;
    std::vector<SpeakingSegment> segs{seg("A", 5000, 15000)};
    const auto ev = joins({"A"});
    const auto first = compute_interval_stats("s", segs, ev, {Timestamp{0}, Timestamp{10000}}, cfg);
    const auto second = compute_interval_stats("s", segs, ev, {Timestamp{10000}, Timestamp{20000}}, cfg);
    EXPECT_EQ(first.speaking_time_ms.at("A") + second.speaking_time_ms.at("A"), 10000);
    EXPECT_EQ(first.speaking_events.at("A") + second.speaking_events.at("A"), 1);
}

TEST(IntervalStats, JsonRoundTrip) {
    std::mt19937_64 rng(43);
    const auto s = oracle::random_session(rng);
    const auto st = compute_interval_stats("s", s.segments, s.events, s.window, s.cfg);
    EXPECT_EQ(json::parse(json(st).dump()).get<IntervalStats>(), st);
}

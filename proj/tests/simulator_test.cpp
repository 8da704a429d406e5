#include <sstream>

#include <gtest/gtest.h>

#include "breakout/analytics.hpp"
#include "breakout/segmenter.hpp"
#include "breakout/simulator.hpp"

using namespace breakout;

namespace {

sim::Matrix empirical(const std::vector<Turn>& turns, std::size_t n) {
    std::vector<ParticipantId> names;
    for (std::size_t i = 0; i < n; ++i) names.push_back(sim::participant_name(i));
    return transition_matrix(turns, names).probabilities;
}

}  // namespace

TEST(Simulator, SameSeedSameOutput) {
    sim::ConversationModel m;
    m.seed = 42;
    const auto a = sim::generate(m, 300000, SegmenterConfig{});
    const auto b = sim::generate(m, 300000, SegmenterConfig{});
    EXPECT_EQ(a.samples, b.samples);
    EXPECT_EQ(a.truth, b.truth);
    m.seed = 43;
    EXPECT_NE(sim::generate(m, 300000, SegmenterConfig{}).samples, a.samples);
}

TEST(Simulator, SoleParticipantOwnsEveryTurn) {
    sim::ConversationModel m;
    m.n = 1;
    const auto g = sim::generate(m, 600000, SegmenterConfig{});
    ASSERT_GT(g.truth.size(), 10u);
    for (const auto& t : g.truth) EXPECT_EQ(t.participant, "p0");
    EXPECT_EQ(empirical(g.truth, 1), (sim::Matrix{{1.0}}));
}

TEST(Simulator, ThreeWayUniformConvergesToModel) {
    sim::ConversationModel m;
    m.n = 3;
    double mean_worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        m.seed = seed;
        const auto g = sim::generate(m, 30 * 60000, SegmenterConfig{});
        const auto l1 = sim::row_l1(empirical(g.truth, 3), sim::uniform_off_diagonal(3));
        mean_worst += *std::max_element(l1.begin(), l1.end()) / 5.0;
    }
    EXPECT_LE(mean_worst, 0.1);
}

TEST(Simulator, CustomMatrixWithSelfTransitions) {
    sim::ConversationModel m;
    m.n = 2;
    m.M = {{0.5, 0.5}, {0.2, 0.8}};
    m.seed = 3;
    const auto g = sim::generate(m, 60 * 60000, SegmenterConfig{});
    const auto l1 = sim::row_l1(empirical(g.truth, 2), m.M);
    for (double d : l1) EXPECT_LE(d, 0.1);
}

TEST(Simulator, VolumesStayInRangeAndTurnsNeverOverlap) {
    sim::ConversationModel m;
    m.n = 5;
    m.jitter = 0.2;
    m.noise_volume = 0.0;
    m.speak_volume = 0.95;
    const auto g = sim::generate(m, 600000, SegmenterConfig{});
    for (const auto& s : g.samples) {
        EXPECT_GE(s.volume, 0.0);
        EXPECT_LE(s.volume, 1.0);
    }
    for (std::size_t i = 1; i < g.truth.size(); ++i) EXPECT_LE(g.truth[i - 1].end, g.truth[i].start);
}

TEST(Simulator, OverlapOptionCreatesSimultaneousSpeech) {
    sim::ConversationModel m;
    m.overlap_prob = 0.5;
    const auto g = sim::generate(m, 600000, SegmenterConfig{});
    std::vector<SpeakingSegment> segs;
    for (const auto& t : g.truth) segs.push_back({t.participant, t.start, t.end});
    const TimeRange all{Timestamp{0}, Timestamp{600000}};
    EXPECT_GT(total_length(overlap_intervals(segs, all)), 0);
}

TEST(Simulator, SegmenterRecoversTruthTurns) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        sim::ConversationModel m;
        m.seed = seed;
        const auto g = sim::generate(m, 30 * 60000, SegmenterConfig{});
        const auto segs = segment_stream(g.samples, SegmenterConfig{});
        EXPECT_EQ(sim::match_turns(g.truth, segs), g.truth.size()) << seed;
        const TimeRange all{Timestamp{0}, Timestamp{30 * 60000}};
        EXPECT_EQ(total_length(overlap_intervals(segs, all)), 0);
    }
}

TEST(Simulator, MatchingNeedsHalfCoverage) {
    const std::vector<Turn> truth{{"a", Timestamp{0}, Timestamp{1000}}, {"a", Timestamp{2000}, Timestamp{3000}}};
    const std::vector<SpeakingSegment> half{{"a", Timestamp{500}, Timestamp{1000}},
                                            {"a", Timestamp{2000}, Timestamp{2400}}};
    EXPECT_EQ(sim::match_turns(truth, half), 1u);
    const std::vector<SpeakingSegment> merged{{"a", Timestamp{0}, Timestamp{3000}}};
    EXPECT_EQ(sim::match_turns(truth, merged), 1u);
    const std::vector<SpeakingSegment> wrong{{"b", Timestamp{0}, Timestamp{3000}}};
    EXPECT_EQ(sim::match_turns(truth, wrong), 0u);
}

TEST(Simulator, FilesUseStoreSchema) {
    sim::ConversationModel m;
    m.n = 3;
    const auto g = sim::generate(m, 60000, SegmenterConfig{}, Timestamp{5000});
    std::stringstream samples;
    sim::write_samples_jsonl(samples, g, Timestamp{5000}, 60000);
    std::size_t count = 0;
    std::uint64_t seq = 0;
    std::size_t joins = 0;
    for (std::string line; std::getline(samples, line);) {
        const auto ev = json::parse(line).get<SessionEvent>();
        EXPECT_EQ(ev.seq, ++seq);
        if (const auto* b = std::get_if<SampleBatch>(&ev.payload)) {
            EXPECT_LE(b->samples.size(), 1000u);
            count += b->samples.size();
        }
        if (const auto* p = std::get_if<ParticipantEvent>(&ev.payload); p && p->kind == PresenceKind::join) ++joins;
    }
    EXPECT_EQ(count, g.samples.size());
    EXPECT_EQ(joins, 3u);

    std::stringstream truth;
    sim::write_truth_jsonl(truth, g.truth);
    EXPECT_EQ(sim::read_truth_jsonl(truth), g.truth);
}

TEST(Simulator, RejectsBadMatrix) {
    sim::ConversationModel m;
    m.n = 2;
    m.M = {{0.5, 0.4}, {0.5, 0.5}};
    EXPECT_THROW(sim::generate(m, 1000, SegmenterConfig{}), std::invalid_argument);
    m.M = {{1.0}};
    EXPECT_THROW(sim::generate(m, 1000, SegmenterConfig{}), std::invalid_argument);
}

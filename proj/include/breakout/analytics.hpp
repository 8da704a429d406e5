#pragma once

// Windowed group-dynamics statistics: speaking events per person, the
// next-speaker transition graph, turn-taking frequency and overlapped speech.

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "core.hpp"
#include "segmenter.hpp"

namespace breakout {

/// One or more consecutive segments of one speaker, coalesced.
struct Turn {
    ParticipantId participant;
    Timestamp start;
    Timestamp end;

    bool operator==(const Turn&) const = default;
};

inline void to_json(json& j, const Turn& t) {
    j = json{{"participant", t.participant}, {"start", t.start}, {"end", t.end}};
}
inline void from_json(const json& j, Turn& t) {
    t.participant = j.at("participant").get<std::string>();
    t.start = j.at("start").get<Timestamp>();
    t.end = j.at("end").get<Timestamp>();
}

struct TransitionMatrix {
    std::vector<ParticipantId> participants;
    std::vector<std::vector<std::int64_t>> counts;
    std::vector<std::vector<double>> probabilities;

    std::int64_t total() const {
        std::int64_t sum = 0;
        for (const auto& row : counts)
            for (auto c : row) sum += c;
        return sum;
    }
    bool operator==(const TransitionMatrix&) const = default;
};

inline void to_json(json& j, const TransitionMatrix& m) {
    j = json{{"participants", m.participants},
             {"counts", m.counts},
             {"probabilities", m.probabilities}};
}
inline void from_json(const json& j, TransitionMatrix& m) {
    m.participants = j.at("participants").get<std::vector<ParticipantId>>();
    m.counts = j.at("counts").get<std::vector<std::vector<std::int64_t>>>();
    m.probabilities = j.at("probabilities").get<std::vector<std::vector<double>>>();
}

struct IntervalStats {
    SessionId session;
    Timestamp tick;
    TimeRange window;
    std::map<ParticipantId, std::int64_t> speaking_events;
    std::map<ParticipantId, std::int64_t> speaking_time_ms;
    std::map<ParticipantId, std::int64_t> turns;
    TransitionMatrix transitions;
    double turn_taking_per_min = 0.0;
    double overlap_pct = 0.0;
    std::vector<ParticipantId> participants_present;

    bool operator==(const IntervalStats&) const = default;
};

inline void to_json(json& j, const IntervalStats& s) {
    j = json{{"session", s.session},
             {"tick", s.tick},
             {"window", s.window},
             {"speaking_events", s.speaking_events},
             {"speaking_time_ms", s.speaking_time_ms},
             {"turns", s.turns},
             {"transitions", s.transitions},
             {"turn_taking_per_min", s.turn_taking_per_min},
             {"overlap_pct", s.overlap_pct},
             {"participants_present", s.participants_present}};
}
inline void from_json(const json& j, IntervalStats& s) {
    s.session = j.at("session").get<std::string>();
    s.tick = j.at("tick").get<Timestamp>();
    s.window = j.at("window").get<TimeRange>();
    s.speaking_events = j.at("speaking_events").get<std::map<ParticipantId, std::int64_t>>();
    s.speaking_time_ms = j.at("speaking_time_ms").get<std::map<ParticipantId, std::int64_t>>();
    s.turns = j.at("turns").get<std::map<ParticipantId, std::int64_t>>();
    s.transitions = j.at("transitions").get<TransitionMatrix>();
    s.turn_taking_per_min = j.at("turn_taking_per_min").get<double>();
    s.overlap_pct = j.at("overlap_pct").get<double>();
    s.participants_present = j.at("participants_present").get<std::vector<ParticipantId>>();
}

/// Coalesces a speaker's consecutive segments into turns.
///
/// Two segments of the same participant join one turn when the gap between them is
/// at most turn_merge_gap_ms and no other participant starts a segment inside that
/// gap (closed interval [previous end, next start]). Output is sorted by
/// (start, participant). Input order does not matter.
inline std::vector<Turn> derive_turns(std::span<const SpeakingSegment> segments,
                                      const AnalyticsConfig& cfg) {
    std::vector<const SpeakingSegment*> order;
    order.reserve(segments.size());
    for (const auto& s : segments) order.push_back(&s);
    std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) {
        return std::tie(a->start, a->participant) < std::tie(b->start, b->participant);
    });

    struct Open {
        std::size_t turn_index;
        bool interrupted;
    };
    std::vector<Turn> turns;
    std::unordered_map<ParticipantId, Open> open;

    for (std::size_t g = 0; g < order.size();) {
        // Segments sharing a start time all count as interruptions before any merges.
        std::size_t g_end = g;
        while (g_end < order.size() && order[g_end]->start == order[g]->start) ++g_end;
        for (std::size_t k = g; k < g_end; ++k)
            for (auto& [pid, o] : open)
                if (pid != order[k]->participant && order[k]->start >= turns[o.turn_index].end) o.interrupted = true;

        for (std::size_t k = g; k < g_end; ++k) {
            const auto* seg = order[k];
            auto it = open.find(seg->participant);
            if (it != open.end()) {
                Turn& t = turns[it->second.turn_index];
                if (!it->second.interrupted && seg->start - t.end <= cfg.turn_merge_gap_ms) {
                    t.end = std::max(t.end, seg->end);
                    continue;
                }
            }
            turns.push_back(Turn{seg->participant, seg->start, seg->end});
            open[seg->participant] = Open{turns.size() - 1, false};
        }
        g = g_end;
    }
    // Already in start order since segments were visited that way.
    return turns;
}

inline void normalize_rows(TransitionMatrix& m) {
    m.probabilities.assign(m.counts.size(), std::vector<double>(m.counts.size(), 0.0));
    for (std::size_t i = 0; i < m.counts.size(); ++i) {
        std::int64_t row = 0;
        for (auto c : m.counts[i]) row += c;
        if (row == 0) continue;
        for (std::size_t j = 0; j < m.counts[i].size(); ++j)
            m.probabilities[i][j] = static_cast<double>(m.counts[i][j]) / static_cast<double>(row);
    }
}

/// Counts speaker_k -> speaker_{k+1} over consecutive turns (self-pairs included).
/// Pairs touching a speaker outside `participants` are skipped.
inline TransitionMatrix transition_matrix(std::span<const Turn> turns,
                                          std::span<const ParticipantId> participants) {
    TransitionMatrix m;
    m.participants.assign(participants.begin(), participants.end());
    const std::size_t n = participants.size();
    m.counts.assign(n, std::vector<std::int64_t>(n, 0));

    std::unordered_map<ParticipantId, std::size_t> index;
    for (std::size_t i = 0; i < n; ++i) index.emplace(participants[i], i);

    for (std::size_t k = 0; k + 1 < turns.size(); ++k) {
        auto from = index.find(turns[k].participant);
        auto to = index.find(turns[k + 1].participant);
        if (from == index.end() || to == index.end()) continue;
        ++m.counts[from->second][to->second];
    }
    normalize_rows(m);
    return m;
}

/// Participants whose latest presence event at or before `at` is a JOIN, ordered by
/// that join time (ties keep event order).
inline std::vector<ParticipantId> present_at(std::span<const ParticipantEvent> events, Timestamp at) {
    std::vector<std::pair<Timestamp, ParticipantId>> joined;
    for (const auto& e : events) {
        if (e.t > at) continue;
        auto it = std::find_if(joined.begin(), joined.end(),
                               [&](const auto& p) { return p.second == e.participant; });
        if (it != joined.end()) joined.erase(it);
        if (e.kind == PresenceKind::join) joined.emplace_back(e.t, e.participant);
    }
    std::stable_sort(joined.begin(), joined.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<ParticipantId> out;
    out.reserve(joined.size());
    for (auto& p : joined) out.push_back(std::move(p.second));
    return out;
}

/// Statistics for one window [window.start, window.end).
///
/// The turn rate is normalized by cfg.window_ms even when the window was clipped at
/// the epoch; see tick_window().
/// `segments` should contain every segment intersecting
/// [window.start - turn_merge_gap_ms, window.end); earlier history only matters for
/// deciding whether an in-window segment continues a turn. Events and time sums are
/// computed on segments clipped to the window; counts use segment/turn starts inside it.
inline IntervalStats compute_interval_stats(const SessionId& session,
                                            std::span<const SpeakingSegment> segments,
                                            std::span<const ParticipantEvent> events,
                                            TimeRange window, const AnalyticsConfig& cfg) {
    IntervalStats st;
    st.session = session;
    st.tick = window.end;
    st.window = window;
    st.participants_present = present_at(events, window.end);
    for (const auto& p : st.participants_present) {
        st.speaking_events[p] = 0;
        st.speaking_time_ms[p] = 0;
        st.turns[p] = 0;
    }

    auto in_window = [&](Timestamp t) { return t >= window.start && t < window.end; };

    std::vector<SpeakingSegment> clipped;
    for (const auto& s : segments) {
        const Timestamp a = std::max(s.start, window.start);
        const Timestamp b = std::min(s.end, window.end);
        if (a < b) clipped.push_back(SpeakingSegment{s.participant, a, b});
        auto ev = st.speaking_events.find(s.participant);
        if (ev == st.speaking_events.end()) continue;
        if (in_window(s.start)) ++ev->second;
        if (a < b) st.speaking_time_ms[s.participant] += b - a;
    }

    const auto all_turns = derive_turns(segments, cfg);
    std::vector<Turn> window_turns;
    for (const auto& t : all_turns) {
        if (!in_window(t.start)) continue;
        window_turns.push_back(t);
        if (auto it = st.turns.find(t.participant); it != st.turns.end()) ++it->second;
    }
    st.transitions = transition_matrix(window_turns, st.participants_present);
    st.turn_taking_per_min = static_cast<double>(window_turns.size()) * 60000.0 /
                             static_cast<double>(cfg.window_ms);

    const auto overlap = total_length(overlap_intervals(clipped, window));
    const auto speech = total_length(speech_union(clipped, window));
    st.overlap_pct = speech > 0 ? static_cast<double>(overlap) / static_cast<double>(speech) : 0.0;
    return st;
}

/// The sliding window ending at `now`, clipped so it never starts before the epoch.
inline TimeRange tick_window(Timestamp now, const AnalyticsConfig& cfg) {
    return TimeRange{Timestamp{std::max<std::int64_t>(0, now.ms - cfg.window_ms)}, now};
}

/// Zeroed statistics for a session that has not ticked yet.
inline IntervalStats empty_stats(const SessionId& session, Timestamp tick,
                                 std::span<const ParticipantEvent> events,
                                 const AnalyticsConfig& cfg) {
    return compute_interval_stats(session, {}, events, tick_window(tick, cfg), cfg);
}

}  // namespace breakout

#pragma once

// Deterministic synthetic meetings with known ground truth.
//
// A Markov chain over speakers picks who talks next; turn lengths and pauses are
// exponential. Every participant produces one volume sample per sample period:
// loud during their own turns, near-silent otherwise.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "analytics.hpp"
#include "core.hpp"
#include "store.hpp"

namespace breakout::sim {

using Matrix = std::vector<std::vector<double>>;

struct ConversationModel {
    std::size_t n = 4;
    Matrix M;  // empty means uniform off-diagonal
    double turn_length_ms = 1200.0;
    double pause_ms = 300.0;
    double speak_volume = 0.7;
    double noise_volume = 0.05;
    double jitter = 0.04;
    std::uint64_t seed = 1;
    double overlap_prob = 0.0;
    // A speaker who keeps the floor waits at least this long, so the repeat is a
    // separate turn rather than a continuation.
    std::int64_t self_pause_floor_ms = 1500;
};

struct Generated {
    std::vector<ParticipantId> participants;
    std::vector<VolumeSample> samples;  // time order, participants interleaved
    std::vector<Turn> truth;            // start order
};

inline ParticipantId participant_name(std::size_t i) { return "p" + std::to_string(i); }

inline Matrix uniform_off_diagonal(std::size_t n) {
    if (n == 1) return {{1.0}};
    Matrix m(n, std::vector<double>(n, 1.0 / static_cast<double>(n - 1)));
    for (std::size_t i = 0; i < n; ++i) m[i][i] = 0.0;
    return m;
}

/// Empty when M is a valid n x n row-stochastic matrix.
inline std::vector<std::string> validate_model(const ConversationModel& m) {
    std::vector<std::string> errors;
    if (m.n == 0) errors.emplace_back("participants must be positive");
    if (m.M.size() != m.n) errors.emplace_back("matrix must have one row per participant");
    for (std::size_t i = 0; i < m.M.size(); ++i) {
        if (m.M[i].size() != m.n) {
            errors.push_back("matrix row " + std::to_string(i) + " has wrong length");
            continue;
        }
        double sum = 0.0;
        for (double p : m.M[i]) {
            if (!(p >= 0.0)) errors.push_back("matrix row " + std::to_string(i) + " has a negative entry");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-9) errors.push_back("matrix row " + std::to_string(i) + " does not sum to 1");
    }
    if (!(m.turn_length_ms > 0.0) || !(m.pause_ms >= 0.0)) errors.emplace_back("durations must be positive");
    if (!(m.overlap_prob >= 0.0 && m.overlap_prob <= 1.0)) errors.emplace_back("overlap_prob out of [0,1]");
    return errors;
}

inline Matrix load_matrix(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open matrix file " + path);
    return json::parse(in).get<Matrix>();
}

/// Portable RNG: mt19937_64 output mapped by hand so results do not depend on the
/// standard library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double exponential(double mean) { return mean <= 0.0 ? 0.0 : -mean * std::log1p(-uniform()); }

    std::size_t categorical(std::span<const double> weights) {
        const double u = uniform();
        double acc = 0.0;
        std::size_t last = 0;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            if (weights[i] <= 0.0) continue;
            acc += weights[i];
            last = i;
            if (u < acc) return i;
        }
        return last;
    }

private:
    std::mt19937_64 engine_;
};

/// Shortest turn that always survives segmentation: the sampling grid can shave up
/// to two periods off the detected length.
inline std::int64_t min_turn_ms(const SegmenterConfig& cfg) {
    return cfg.min_segment_ms + 2 * cfg.sample_period_ms;
}

inline Generated generate(ConversationModel model, std::int64_t duration_ms, const SegmenterConfig& cfg,
                          Timestamp base = Timestamp{0}) {
    if (model.M.empty()) model.M = uniform_off_diagonal(model.n);
    if (auto errors = validate_model(model); !errors.empty()) throw std::invalid_argument(errors.front());

    Generated g;
    for (std::size_t i = 0; i < model.n; ++i) g.participants.push_back(participant_name(i));

    Rng rng(model.seed);
    const std::int64_t floor_ms = min_turn_ms(cfg);
    const double extra_mean = std::max(0.0, model.turn_length_ms - static_cast<double>(floor_ms));
    const Timestamp stop = base + duration_ms;

    // Turn sequence.
    std::size_t speaker = std::min<std::size_t>(model.n - 1, static_cast<std::size_t>(rng.uniform() * model.n));
    Timestamp start = base;
    std::vector<std::vector<Turn>> by_speaker(model.n);
    while (true) {
        const auto len = floor_ms + static_cast<std::int64_t>(std::llround(rng.exponential(extra_mean)));
        const Timestamp end = start + len;
        if (end > stop) break;
        g.truth.push_back(Turn{g.participants[speaker], start, end});
        by_speaker[speaker].push_back(g.truth.back());

        const std::size_t next = rng.categorical(model.M[speaker]);
        auto pause = static_cast<std::int64_t>(std::llround(rng.exponential(model.pause_ms)));
        Timestamp next_start = end + pause;
        if (next == speaker) {
            next_start = std::max(next_start, end + model.self_pause_floor_ms);
        } else if (model.overlap_prob > 0.0 && rng.uniform() < model.overlap_prob) {
            const auto overlap = static_cast<std::int64_t>(rng.uniform() * static_cast<double>(len) / 2.0);
            next_start = end - overlap;
        }
        // Keep each speaker's own turns far enough apart to stay distinct segments.
        if (!by_speaker[next].empty())
            next_start = std::max(next_start, by_speaker[next].back().end + cfg.merge_gap_ms + cfg.sample_period_ms);
        speaker = next;
        start = next_start;
    }
    std::stable_sort(g.truth.begin(), g.truth.end(), [](const Turn& a, const Turn& b) { return a.start < b.start; });

    // Volume streams on a shared grid.
    std::vector<std::size_t> cursor(model.n, 0);
    for (Timestamp t = base; t < stop; t = t + cfg.sample_period_ms) {
        for (std::size_t p = 0; p < model.n; ++p) {
            auto& turns = by_speaker[p];
            auto& c = cursor[p];
            while (c < turns.size() && turns[c].end <= t) ++c;
            const bool speaking = c < turns.size() && turns[c].start <= t;
            const double mean = speaking ? model.speak_volume : model.noise_volume;
            const double v = mean + (2.0 * rng.uniform() - 1.0) * model.jitter;
            g.samples.push_back(VolumeSample{g.participants[p], t, std::clamp(v, 0.0, 1.0)});
        }
    }
    return g;
}

/// Writes the generated meeting as store-format SessionEvent lines: joins, one
/// SAMPLE_BATCH per `batch_ms` of media time, leaves.
inline void write_samples_jsonl(std::ostream& out, const Generated& g, Timestamp base, std::int64_t duration_ms,
                                std::int64_t batch_ms = 1000) {
    std::uint64_t seq = 0;
    auto line = [&](Timestamp t, EventPayload payload) {
        out << json(SessionEvent{++seq, t, std::move(payload)}).dump() << '\n';
    };
    for (const auto& p : g.participants) line(base, ParticipantEvent{p, base, PresenceKind::join});
    std::size_t i = 0;
    for (Timestamp from = base; i < g.samples.size(); from = from + batch_ms) {
        SampleBatch batch;
        while (i < g.samples.size() && g.samples[i].t < from + batch_ms && batch.samples.size() < 1000)
            batch.samples.push_back(g.samples[i++]);
        if (batch.samples.empty()) continue;
        const Timestamp last = batch.samples.back().t;
        line(last, std::move(batch));
    }
    const Timestamp end = base + duration_ms;
    for (const auto& p : g.participants) line(end, ParticipantEvent{p, end, PresenceKind::leave});
}

/// Truth turns as SEGMENT lines.
inline void write_truth_jsonl(std::ostream& out, const std::vector<Turn>& truth) {
    std::uint64_t seq = 0;
    for (const auto& t : truth)
        out << json(SessionEvent{++seq, t.start, SpeakingSegment{t.participant, t.start, t.end}}).dump() << '\n';
}

inline std::vector<Turn> read_truth_jsonl(std::istream& in) {
    std::vector<Turn> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto ev = json::parse(line).get<SessionEvent>();
        const auto& seg = std::get<SpeakingSegment>(ev.payload);
        out.push_back(Turn{seg.participant, seg.start, seg.end});
    }
    return out;
}

/// Sum of |a - b| per row.
inline std::vector<double> row_l1(const Matrix& a, const Matrix& b) {
    std::vector<double> out(a.size(), 0.0);
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i].size(); ++j) out[i] += std::abs(a[i][j] - b[i][j]);
    return out;
}

/// Number of truth turns matched one-to-one by a same-participant segment that
/// covers at least `min_fraction` of the turn.
inline std::size_t match_turns(std::span<const Turn> truth, std::span<const SpeakingSegment> segments,
                               double min_fraction = 0.5) {
    std::map<ParticipantId, std::vector<const SpeakingSegment*>> by_participant;
    for (const auto& s : segments) by_participant[s.participant].push_back(&s);
    for (auto& [_, v] : by_participant)
        std::sort(v.begin(), v.end(), [](const auto* a, const auto* b) { return a->start < b->start; });

    std::map<ParticipantId, std::size_t> cursor;
    std::vector<const Turn*> ordered;
    for (const auto& t : truth) ordered.push_back(&t);
    std::sort(ordered.begin(), ordered.end(), [](const auto* a, const auto* b) { return a->start < b->start; });

    std::size_t matched = 0;
    for (const auto* t : ordered) {
        auto it = by_participant.find(t->participant);
        if (it == by_participant.end()) continue;
        auto& segs = it->second;
        auto& c = cursor[t->participant];
        while (c < segs.size() && segs[c]->end < t->start) ++c;
        for (std::size_t k = c; k < segs.size() && segs[k]->start < t->end; ++k) {
            const auto covered = std::min(segs[k]->end, t->end) - std::max(segs[k]->start, t->start);
            if (static_cast<double>(covered) >= min_fraction * static_cast<double>(t->end - t->start)) {
                ++matched;
                c = k + 1;
                break;
            }
        }
    }
    return matched;
}

}  // namespace breakout::sim

#pragma once

// Volume-threshold speech segmentation with gap bridging, a minimum-duration
// filter, and overlap detection across participants.
//
// A run is a maximal chain of above-threshold samples whose consecutive gaps are
// at most merge_gap_ms. The run becomes a segment [first, last] if
// last - first >= min_segment_ms. Bridging happens before the duration filter,
// so two short bursts close together can form one valid segment.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <tuple>
#include <utility>
#include <vector>

#include "core.hpp"

namespace breakout {

enum class SampleOutcome { accepted, out_of_order, out_of_range };

class Segmenter {
public:
    struct Counters {
        std::uint64_t accepted = 0;
        std::uint64_t out_of_order = 0;
        std::uint64_t out_of_range = 0;
    };

    explicit Segmenter(SegmenterConfig cfg = {}) : cfg_(cfg) {}

    const SegmenterConfig& config() const { return cfg_; }
    const Counters& counters() const { return counters_; }

    /// Checks ordering and range without mutating anything.
    SampleOutcome classify(const VolumeSample& s) const {
        if (!(s.volume >= 0.0 && s.volume <= 1.0)) return SampleOutcome::out_of_range;
        auto it = runs_.find(s.participant);
        if (it != runs_.end() && it->second.last_sample && s.t < *it->second.last_sample)
            return SampleOutcome::out_of_order;
        return SampleOutcome::accepted;
    }

    /// Feeds one sample. Segments closed by it are appended to `emitted`.
    SampleOutcome ingest(const VolumeSample& s, std::vector<SpeakingSegment>& emitted) {
        const auto outcome = classify(s);
        if (outcome == SampleOutcome::out_of_order) {
            ++counters_.out_of_order;
            return outcome;
        }
        if (outcome == SampleOutcome::out_of_range) {
            ++counters_.out_of_range;
            return outcome;
        }
        ++counters_.accepted;

        auto& run = runs_[s.participant];
        run.last_sample = s.t;

        if (run.start && s.t - *run.last_above > cfg_.merge_gap_ms) close(s.participant, run, emitted);

        if (s.volume >= cfg_.volume_threshold) {
            if (!run.start) run.start = s.t;
            run.last_above = s.t;
        }
        return outcome;
    }

    /// Closes every open run.
    void flush(std::vector<SpeakingSegment>& emitted) {
        const auto first_new = static_cast<std::ptrdiff_t>(emitted.size());
        for (auto& [pid, run] : runs_)
            if (run.start) close(pid, run, emitted);
        std::sort(emitted.begin() + first_new, emitted.end(),
                  [](const SpeakingSegment& a, const SpeakingSegment& b) {
                      return std::tie(a.start, a.participant) < std::tie(b.start, b.participant);
                  });
    }

    /// Closes the open run of one participant (used when they leave).
    void flush(const ParticipantId& pid, std::vector<SpeakingSegment>& emitted) {
        auto it = runs_.find(pid);
        if (it != runs_.end() && it->second.start) close(pid, it->second, emitted);
    }

    std::optional<Timestamp> last_sample(const ParticipantId& pid) const {
        auto it = runs_.find(pid);
        return it == runs_.end() ? std::nullopt : it->second.last_sample;
    }

    bool has_open_run(const ParticipantId& pid) const {
        auto it = runs_.find(pid);
        return it != runs_.end() && it->second.start.has_value();
    }

private:
    struct Run {
        std::optional<Timestamp> start;
        std::optional<Timestamp> last_above;
        std::optional<Timestamp> last_sample;
    };

    void close(const ParticipantId& pid, Run& run, std::vector<SpeakingSegment>& emitted) {
        const Timestamp start = *run.start;
        const Timestamp end = *run.last_above;
        run.start.reset();
        run.last_above.reset();
        if (end - start >= cfg_.min_segment_ms)
            emitted.push_back(SpeakingSegment{pid, start, end});
    }

    SegmenterConfig cfg_;
    std::map<ParticipantId, Run> runs_;
    Counters counters_;
};

/// Convenience batch form: ingest everything in order, then flush.
inline std::vector<SpeakingSegment> segment_stream(std::span<const VolumeSample> samples,
                                                   const SegmenterConfig& cfg) {
    Segmenter seg(cfg);
    std::vector<SpeakingSegment> out;
    for (const auto& s : samples) seg.ingest(s, out);
    seg.flush(out);
    return out;
}

struct TimeRange {
    Timestamp start;
    Timestamp end;

    std::int64_t length() const { return end - start; }
    bool operator==(const TimeRange&) const = default;
};

inline void to_json(json& j, const TimeRange& r) { j = json::array({r.start, r.end}); }
inline void from_json(const json& j, TimeRange& r) {
    if (!j.is_array() || j.size() != 2) throw std::invalid_argument("range must be [start, end]");
    r.start = j[0].get<Timestamp>();
    r.end = j[1].get<Timestamp>();
}

namespace detail {

/// Sweeps segment boundaries clipped to `window` and returns the maximal intervals
/// where the number of active segments is at least `min_active`. Segments of one
/// participant are disjoint, so the count equals the number of distinct speakers.
inline std::vector<TimeRange> coverage_at_least(std::span<const SpeakingSegment> segments,
                                                TimeRange window, int min_active) {
    std::vector<std::pair<Timestamp, int>> edges;
    edges.reserve(segments.size() * 2);
    for (const auto& s : segments) {
        const Timestamp a = std::max(s.start, window.start);
        const Timestamp b = std::min(s.end, window.end);
        if (a >= b) continue;
        edges.emplace_back(a, +1);
        edges.emplace_back(b, -1);
    }
    std::sort(edges.begin(), edges.end());

    std::vector<TimeRange> out;
    int active = 0;
    std::optional<Timestamp> open;
    for (std::size_t i = 0; i < edges.size();) {
        const Timestamp t = edges[i].first;
        while (i < edges.size() && edges[i].first == t) active += edges[i++].second;
        if (active >= min_active && !open) {
            open = t;
        } else if (active < min_active && open) {
            if (!out.empty() && out.back().end == *open)
                out.back().end = t;
            else
                out.push_back({*open, t});
            open.reset();
        }
    }
    return out;
}

}  // namespace detail

/// Maximal disjoint intervals inside `window` where at least two participants speak.
inline std::vector<TimeRange> overlap_intervals(std::span<const SpeakingSegment> segments,
                                                TimeRange window) {
    return detail::coverage_at_least(segments, window, 2);
}

/// Intervals inside `window` where anyone speaks.
inline std::vector<TimeRange> speech_union(std::span<const SpeakingSegment> segments,
                                           TimeRange window) {
    return detail::coverage_at_least(segments, window, 1);
}

inline std::int64_t total_length(std::span<const TimeRange> ranges) {
    std::int64_t sum = 0;
    for (const auto& r : ranges) sum += r.length();
    return sum;
}

}  // namespace breakout

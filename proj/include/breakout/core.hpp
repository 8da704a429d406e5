#pragma once

// Shared domain types, time model and configuration for the breakout service.

#include <algorithm>
#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace breakout {

using json = nlohmann::json;

/// Milliseconds since the Unix epoch (UTC). One clock per session.
struct Timestamp {
    std::int64_t ms = 0;

    constexpr Timestamp() = default;
    constexpr explicit Timestamp(std::int64_t millis) : ms(millis) {}

    constexpr auto operator<=>(const Timestamp&) const = default;

    constexpr Timestamp operator+(std::int64_t d) const { return Timestamp{ms + d}; }
    constexpr Timestamp operator-(std::int64_t d) const { return Timestamp{ms - d}; }
    constexpr std::int64_t operator-(Timestamp o) const { return ms - o.ms; }
};

inline void to_json(json& j, const Timestamp& t) { j = t.ms; }
inline void from_json(const json& j, Timestamp& t) {
    if (!j.is_number_integer()) throw std::invalid_argument("timestamp must be an integer");
    t.ms = j.get<std::int64_t>();
    if (t.ms < 0) throw std::invalid_argument("timestamp must be non-negative");
}

using SessionId = std::string;
using ParticipantId = std::string;

/// 1..64 chars drawn from [A-Za-z0-9_-].
constexpr bool is_valid_id(std::string_view id) noexcept {
    if (id.empty() || id.size() > 64) return false;
    return std::all_of(id.begin(), id.end(), [](char c) {
        return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') ||
               c == '_' || c == '-';
    });
}

struct VolumeSample {
    ParticipantId participant;
    Timestamp t;
    double volume = 0.0;

    bool operator==(const VolumeSample&) const = default;
};

inline void to_json(json& j, const VolumeSample& s) {
    j = json{{"participant", s.participant}, {"t", s.t}, {"volume", s.volume}};
}
inline void from_json(const json& j, VolumeSample& s) {
    s.participant = j.at("participant").get<std::string>();
    s.t = j.at("t").get<Timestamp>();
    s.volume = j.at("volume").get<double>();
}

enum class PresenceKind { join, leave };

struct ParticipantEvent {
    ParticipantId participant;
    Timestamp t;
    PresenceKind kind = PresenceKind::join;

    bool operator==(const ParticipantEvent&) const = default;
};

inline void to_json(json& j, const ParticipantEvent& e) {
    j = json{{"participant", e.participant},
             {"t", e.t},
             {"kind", e.kind == PresenceKind::join ? "JOIN" : "LEAVE"}};
}
inline void from_json(const json& j, ParticipantEvent& e) {
    e.participant = j.at("participant").get<std::string>();
    e.t = j.at("t").get<Timestamp>();
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "JOIN") {
        e.kind = PresenceKind::join;
    } else if (kind == "LEAVE") {
        e.kind = PresenceKind::leave;
    } else {
        throw std::invalid_argument("unknown participant event kind: " + kind);
    }
}

/// A detected speaking interval [start, end] for one participant.
struct SpeakingSegment {
    ParticipantId participant;
    Timestamp start;
    Timestamp end;

    std::int64_t length() const { return end - start; }
    bool operator==(const SpeakingSegment&) const = default;
};

inline void to_json(json& j, const SpeakingSegment& s) {
    j = json{{"participant", s.participant}, {"start", s.start}, {"end", s.end}};
}
inline void from_json(const json& j, SpeakingSegment& s) {
    s.participant = j.at("participant").get<std::string>();
    s.start = j.at("start").get<Timestamp>();
    s.end = j.at("end").get<Timestamp>();
}

struct SegmenterConfig {
    double volume_threshold = 0.15;
    std::int64_t merge_gap_ms = 300;
    std::int64_t min_segment_ms = 500;
    std::int64_t sample_period_ms = 50;

    bool operator==(const SegmenterConfig&) const = default;
};

struct AnalyticsConfig {
    std::int64_t tick_ms = 5000;
    std::int64_t window_ms = 60000;
    std::int64_t turn_merge_gap_ms = 1000;
    double intensity_saturation_turns_per_min = 20.0;
    double ball_smoothing_alpha = 0.3;

    bool operator==(const AnalyticsConfig&) const = default;
};

/// Returns every violated invariant; empty means the pair is usable.
inline std::vector<std::string> validate_config(const SegmenterConfig& seg,
                                                const AnalyticsConfig& ana) {
    std::vector<std::string> errors;
    if (!(seg.volume_threshold > 0.0 && seg.volume_threshold < 1.0))
        errors.emplace_back("volume_threshold out of (0,1)");
    if (seg.merge_gap_ms <= 0) errors.emplace_back("merge_gap_ms must be positive");
    if (seg.min_segment_ms <= 0) errors.emplace_back("min_segment_ms must be positive");
    if (seg.sample_period_ms <= 0) errors.emplace_back("sample_period_ms must be positive");
    if (seg.min_segment_ms < seg.sample_period_ms)
        errors.emplace_back("min_segment_ms < sample_period_ms");

    if (ana.tick_ms <= 0) errors.emplace_back("tick_ms must be positive");
    if (ana.window_ms <= 0) errors.emplace_back("window_ms must be positive");
    if (ana.tick_ms > ana.window_ms) errors.emplace_back("tick_ms > window_ms");
    if (ana.turn_merge_gap_ms <= 0) errors.emplace_back("turn_merge_gap_ms must be positive");
    if (!(ana.intensity_saturation_turns_per_min > 0.0))
        errors.emplace_back("intensity_saturation_turns_per_min must be positive");
    if (!(ana.ball_smoothing_alpha > 0.0 && ana.ball_smoothing_alpha <= 1.0))
        errors.emplace_back("ball_smoothing_alpha out of (0,1]");
    return errors;
}

/// Both configs flattened into one JSON object, the shape used by session creation.
struct SessionConfig {
    SegmenterConfig segmenter;
    AnalyticsConfig analytics;

    bool operator==(const SessionConfig&) const = default;
};

inline void to_json(json& j, const SessionConfig& c) {
    j = json{{"volume_threshold", c.segmenter.volume_threshold},
             {"merge_gap_ms", c.segmenter.merge_gap_ms},
             {"min_segment_ms", c.segmenter.min_segment_ms},
             {"sample_period_ms", c.segmenter.sample_period_ms},
             {"tick_ms", c.analytics.tick_ms},
             {"window_ms", c.analytics.window_ms},
             {"turn_merge_gap_ms", c.analytics.turn_merge_gap_ms},
             {"intensity_saturation_turns_per_min", c.analytics.intensity_saturation_turns_per_min},
             {"ball_smoothing_alpha", c.analytics.ball_smoothing_alpha}};
}

/// Applies `overrides` on top of `base`. Unknown keys and wrong types are reported,
/// not thrown; the caller still has to run validate_config on the result.
inline SessionConfig merge_config(const SessionConfig& base, const json& overrides,
                                  std::vector<std::string>& errors) {
    SessionConfig out = base;
    if (overrides.is_null()) return out;
    if (!overrides.is_object()) {
        errors.emplace_back("config must be a JSON object");
        return out;
    }
    auto take_int = [&](const std::string& key, const json& v, std::int64_t& dst) {
        if (!v.is_number_integer()) {
            errors.push_back(key + " must be an integer");
            return;
        }
        dst = v.get<std::int64_t>();
    };
    auto take_real = [&](const std::string& key, const json& v, double& dst) {
        if (!v.is_number()) {
            errors.push_back(key + " must be a number");
            return;
        }
        dst = v.get<double>();
    };
    for (const auto& [key, v] : overrides.items()) {
        if (key == "volume_threshold") take_real(key, v, out.segmenter.volume_threshold);
        else if (key == "merge_gap_ms") take_int(key, v, out.segmenter.merge_gap_ms);
        else if (key == "min_segment_ms") take_int(key, v, out.segmenter.min_segment_ms);
        else if (key == "sample_period_ms") take_int(key, v, out.segmenter.sample_period_ms);
        else if (key == "tick_ms") take_int(key, v, out.analytics.tick_ms);
        else if (key == "window_ms") take_int(key, v, out.analytics.window_ms);
        else if (key == "turn_merge_gap_ms") take_int(key, v, out.analytics.turn_merge_gap_ms);
        else if (key == "intensity_saturation_turns_per_min")
            take_real(key, v, out.analytics.intensity_saturation_turns_per_min);
        else if (key == "ball_smoothing_alpha") take_real(key, v, out.analytics.ball_smoothing_alpha);
        else if (key == "session_id") continue;
        else errors.push_back("unknown config field: " + key);
    }
    return out;
}

inline void from_json(const json& j, SessionConfig& c) {
    std::vector<std::string> errors;
    c = merge_config(SessionConfig{}, j, errors);
    if (!errors.empty()) throw std::invalid_argument(errors.front());
}

}  // namespace breakout

#pragma once

// Meeting Mediator frame: participants on the unit circle, a center ball pulled
// toward whoever takes more turns, ball intensity from the group turn rate, and
// per-participant edge weights from speaking-time share.

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "analytics.hpp"
#include "core.hpp"

namespace breakout {

inline constexpr std::size_t kMaxParticipants = 16;

struct MediatorNode {
    ParticipantId participant;
    double angle = 0.0;
    double x = 0.0;
    double y = 0.0;

    bool operator==(const MediatorNode&) const = default;
};

struct MediatorBall {
    double x = 0.0;
    double y = 0.0;
    double intensity = 0.0;

    bool operator==(const MediatorBall&) const = default;
};

struct MediatorFrame {
    SessionId session;
    Timestamp tick;
    std::vector<MediatorNode> nodes;
    MediatorBall ball;
    std::map<ParticipantId, double> edges;

    bool operator==(const MediatorFrame&) const = default;
};

inline void to_json(json& j, const MediatorNode& n) {
    j = json{{"participant", n.participant}, {"angle", n.angle}, {"x", n.x}, {"y", n.y}};
}
inline void from_json(const json& j, MediatorNode& n) {
    n.participant = j.at("participant").get<std::string>();
    n.angle = j.at("angle").get<double>();
    n.x = j.at("x").get<double>();
    n.y = j.at("y").get<double>();
}
inline void to_json(json& j, const MediatorBall& b) {
    j = json{{"x", b.x}, {"y", b.y}, {"intensity", b.intensity}};
}
inline void from_json(const json& j, MediatorBall& b) {
    b.x = j.at("x").get<double>();
    b.y = j.at("y").get<double>();
    b.intensity = j.at("intensity").get<double>();
}
inline void to_json(json& j, const MediatorFrame& f) {
    j = json{{"session", f.session},
             {"tick", f.tick},
             {"nodes", f.nodes},
             {"ball", f.ball},
             {"edges", f.edges}};
}
inline void from_json(const json& j, MediatorFrame& f) {
    f.session = j.at("session").get<std::string>();
    f.tick = j.at("tick").get<Timestamp>();
    f.nodes = j.at("nodes").get<std::vector<MediatorNode>>();
    f.ball = j.at("ball").get<MediatorBall>();
    f.edges = j.at("edges").get<std::map<ParticipantId, double>>();
}

/// Node i of n sits at angle pi/2 - 2*pi*i/n, starting at the top and going clockwise.
inline std::vector<MediatorNode> layout_nodes(std::span<const ParticipantId> participants) {
    std::vector<MediatorNode> nodes;
    const auto n = static_cast<double>(participants.size());
    nodes.reserve(participants.size());
    for (std::size_t i = 0; i < participants.size(); ++i) {
        const double theta = std::numbers::pi / 2.0 - 2.0 * std::numbers::pi * static_cast<double>(i) / n;
        nodes.push_back(MediatorNode{participants[i], theta, std::cos(theta), std::sin(theta)});
    }
    return nodes;
}

inline bool same_node_set(const MediatorFrame& frame, std::span<const ParticipantId> participants) {
    if (frame.nodes.size() != participants.size()) return false;
    for (std::size_t i = 0; i < participants.size(); ++i)
        if (frame.nodes[i].participant != participants[i]) return false;
    return true;
}

/// Builds the frame for `stats`. `prev` is ignored when its node set differs.
inline MediatorFrame compute_frame(const IntervalStats& stats, const MediatorFrame* prev,
                                   const AnalyticsConfig& cfg) {
    MediatorFrame f;
    f.session = stats.session;
    f.tick = stats.tick;
    f.nodes = layout_nodes(stats.participants_present);

    double turn_total = 0.0;
    double time_total = 0.0;
    for (const auto& p : stats.participants_present) {
        if (auto it = stats.turns.find(p); it != stats.turns.end()) turn_total += static_cast<double>(it->second);
        if (auto it = stats.speaking_time_ms.find(p); it != stats.speaking_time_ms.end())
            time_total += static_cast<double>(it->second);
    }

    double raw_x = 0.0;
    double raw_y = 0.0;
    for (const auto& node : f.nodes) {
        const auto turns_it = stats.turns.find(node.participant);
        const auto time_it = stats.speaking_time_ms.find(node.participant);
        const double turns = turns_it == stats.turns.end() ? 0.0 : static_cast<double>(turns_it->second);
        const double time = time_it == stats.speaking_time_ms.end() ? 0.0 : static_cast<double>(time_it->second);
        if (turn_total > 0.0) {
            const double share = turns / turn_total;
            raw_x += share * node.x;
            raw_y += share * node.y;
        }
        f.edges[node.participant] = time_total > 0.0 ? time / time_total : 0.0;
    }

    if (prev != nullptr && same_node_set(*prev, stats.participants_present)) {
        const double a = cfg.ball_smoothing_alpha;
        f.ball.x = a * raw_x + (1.0 - a) * prev->ball.x;
        f.ball.y = a * raw_y + (1.0 - a) * prev->ball.y;
    } else {
        f.ball.x = raw_x;
        f.ball.y = raw_y;
    }
    f.ball.intensity =
        std::clamp(stats.turn_taking_per_min / cfg.intensity_saturation_turns_per_min, 0.0, 1.0);
    return f;
}

inline MediatorFrame empty_frame(const SessionId& session, Timestamp tick) {
    MediatorFrame f;
    f.session = session;
    f.tick = tick;
    return f;
}

}  // namespace breakout

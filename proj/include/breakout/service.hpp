#pragma once

// Session owner: validates and persists ingestion, keeps segmenter and presence
// state per session, runs ticks, and fans envelopes out to subscribers.
//
// Time model: every log line carries the server receive time (`t` in the log).
// Samples and presence events carry media time, which is what segmentation and
// the analytics windows use. A session's clock is the latest media time it has
// seen (never earlier than its creation time).

#include <chrono>
#include <cstdint>
#include <deque>
#include <exception>
#include <filesystem>
#include <functional>
#include <future>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <shared_mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "analytics.hpp"
#include "core.hpp"
#include "mediator.hpp"
#include "segmenter.hpp"
#include "store.hpp"

namespace breakout {

class ServiceError : public std::runtime_error {
public:
    enum class Code { not_found, conflict, unprocessable, unavailable };

    ServiceError(Code code, const std::string& what, std::vector<std::string> details = {})
        : std::runtime_error(what), code_(code), details_(std::move(details)) {}
    Code code() const { return code_; }
    const std::vector<std::string>& details() const { return details_; }

private:
    Code code_;
    std::vector<std::string> details_;
};

/// Receives serialized StreamEnvelope JSON text, in seq order.
class Subscriber {
public:
    virtual ~Subscriber() = default;
    virtual void deliver(std::shared_ptr<const std::string> envelope) = 0;
};

inline Timestamp system_now() {
    using namespace std::chrono;
    return Timestamp{duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count()};
}

struct ServiceOptions {
    std::filesystem::path data_dir = "breakout-data";
    bool sync_writes = true;
    SessionConfig defaults;
    std::size_t max_participants = kMaxParticipants;
    std::size_t max_batch = 1000;
    std::function<Timestamp()> clock = system_now;
};

struct IngestResult {
    std::size_t accepted = 0;
    std::size_t dropped = 0;
};

struct CreatedSession {
    SessionId id;
    Timestamp created_at;
    SessionConfig config;
};

inline std::string make_envelope(const char* type, const SessionId& session, std::uint64_t seq,
                                 const json& payload) {
    return json{{"type", type}, {"session", session}, {"seq", seq}, {"payload", payload}}.dump();
}

class Service {
public:
    explicit Service(ServiceOptions options)
        : opts_(std::move(options)), store_(opts_.data_dir, opts_.sync_writes) {
        recover();
    }

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    Store& store() { return store_; }
    const ServiceOptions& options() const { return opts_; }

    /// `body` may carry config overrides and an optional "session_id".
    CreatedSession create_session(const json& body) {
        std::vector<std::string> errors;
        if (!body.is_null() && !body.is_object())
            throw ServiceError(ServiceError::Code::unprocessable, "body must be a JSON object");
        SessionConfig cfg = merge_config(opts_.defaults, body, errors);
        if (errors.empty()) errors = validate_config(cfg.segmenter, cfg.analytics);

        SessionId id;
        if (!body.is_null() && body.contains("session_id")) {
            const auto& v = body["session_id"];
            if (!v.is_string() || !is_valid_id(v.get<std::string>()))
                errors.emplace_back("session_id must match [A-Za-z0-9_-]{1,64}");
            else
                id = v.get<std::string>();
        }
        if (!errors.empty()) throw ServiceError(ServiceError::Code::unprocessable, join(errors), errors);

        std::unique_lock lock(sessions_mutex_);
        if (id.empty()) {
            do id = random_id();
            while (sessions_.contains(id) || store_.contains(id));
        } else if (sessions_.contains(id) || store_.contains(id)) {
            throw ServiceError(ServiceError::Code::conflict, "session exists: " + id);
        }

        SessionMeta meta{id, opts_.clock(), cfg, false};
        store_.create(meta);
        auto s = std::make_shared<Session>(meta);
        s->last_tick_wall = meta.created_at;
        {
            std::lock_guard slock(s->mutex);
            publish_tick_locked(*s, empty_stats(id, meta.created_at, {}, cfg.analytics));
        }
        sessions_[id] = s;
        return CreatedSession{id, meta.created_at, cfg};
    }

    void join(const SessionId& sid, const ParticipantId& pid, std::optional<Timestamp> t = {}) {
        if (!is_valid_id(pid))
            throw ServiceError(ServiceError::Code::unprocessable, "participant_id must match [A-Za-z0-9_-]{1,64}");
        auto s = find_open(sid);
        std::lock_guard lock(s->mutex);
        ensure_open(*s);
        if (s->joined.contains(pid))
            throw ServiceError(ServiceError::Code::conflict, "participant already joined: " + pid);
        if (s->joined.size() >= opts_.max_participants)
            throw ServiceError(ServiceError::Code::unprocessable,
                               "participant limit reached (" + std::to_string(opts_.max_participants) + ")");
        record_presence_locked(*s, ParticipantEvent{pid, presence_time(*s, t), PresenceKind::join});
    }

    void leave(const SessionId& sid, const ParticipantId& pid, std::optional<Timestamp> t = {}) {
        auto s = find_open(sid);
        std::lock_guard lock(s->mutex);
        ensure_open(*s);
        if (!s->joined.contains(pid))
            throw ServiceError(ServiceError::Code::conflict, "participant not joined: " + pid);
        record_presence_locked(*s, ParticipantEvent{pid, presence_time(*s, t), PresenceKind::leave});
    }

    /// Samples for non-joined participants, out-of-range volumes and out-of-order
    /// timestamps are dropped. Everything accepted is durable before returning.
    IngestResult ingest(const SessionId& sid, const std::vector<VolumeSample>& samples) {
        if (samples.size() > opts_.max_batch)
            throw ServiceError(ServiceError::Code::unprocessable,
                               "batch exceeds " + std::to_string(opts_.max_batch) + " samples");
        auto s = find_open(sid);
        std::lock_guard lock(s->mutex);
        ensure_open(*s);

        IngestResult result;
        SampleBatch batch;
        std::map<ParticipantId, Timestamp> last;
        for (const auto& sample : samples) {
            if (!s->joined.contains(sample.participant)) {
                ++result.dropped;
                continue;
            }
            if (s->segmenter.classify(sample) != SampleOutcome::accepted) {
                ++result.dropped;
                continue;
            }
            auto it = last.find(sample.participant);
            if (it != last.end() && sample.t < it->second) {
                ++result.dropped;
                continue;
            }
            last[sample.participant] = sample.t;
            batch.samples.push_back(sample);
        }
        result.accepted = batch.samples.size();
        if (batch.samples.empty()) return result;

        append_locked(*s, batch);
        std::vector<SpeakingSegment> emitted;
        for (const auto& sample : batch.samples) {
            s->segmenter.ingest(sample, emitted);
            s->media_now = std::max(s->media_now, sample.t);
        }
        for (const auto& seg : emitted) append_locked(*s, seg);
        return result;
    }

    /// Flushes open runs, publishes a last tick, and marks the session closed.
    void close_session(const SessionId& sid) {
        auto s = find(sid);
        std::lock_guard lock(s->mutex);
        if (s->closed) return;
        std::vector<SpeakingSegment> emitted;
        s->segmenter.flush(emitted);
        for (const auto& seg : emitted) append_locked(*s, seg);
        tick_locked(*s);
        store_.close(sid);
        s->closed = true;
    }

    /// Latest IntervalStats payload, exactly as sent in the latest "stats" envelope.
    std::shared_ptr<const std::string> stats_json(const SessionId& sid) const {
        auto s = find(sid);
        std::lock_guard lock(s->snapshot_mutex);
        return s->stats_body;
    }

    std::shared_ptr<const std::string> frame_json(const SessionId& sid) const {
        auto s = find(sid);
        std::lock_guard lock(s->snapshot_mutex);
        return s->frame_body;
    }

    std::vector<SpeakingSegment> segments(const SessionId& sid, Timestamp from, Timestamp to) const {
        if (from >= to) throw ServiceError(ServiceError::Code::unprocessable, "from must be < to");
        find(sid);
        return store_.query_segments(sid, from, to);
    }

    /// Registers a subscriber and immediately hands it the latest stats and frame.
    void subscribe(const SessionId& sid, const std::shared_ptr<Subscriber>& sub) {
        auto s = find(sid);
        std::lock_guard lock(s->mutex);
        std::erase_if(s->subscribers, [](const auto& w) { return w.expired(); });
        s->subscribers.push_back(sub);
        if (s->stats_envelope) sub->deliver(s->stats_envelope);
        if (s->frame_envelope) sub->deliver(s->frame_envelope);
    }

    /// Ticks one session now. Returns nothing for closed sessions.
    std::optional<IntervalStats> tick_session(const SessionId& sid) {
        auto s = find(sid);
        std::lock_guard lock(s->mutex);
        if (s->closed) return std::nullopt;
        return tick_locked(*s);
    }

    /// Ticks every open session, in parallel. A failing session is logged and skipped.
    std::vector<IntervalStats> tick_all() { return tick_where([](const Session&) { return true; }); }

    /// Ticks the sessions whose own tick_ms has elapsed since their last tick.
    std::vector<IntervalStats> tick_due(Timestamp wall_now) {
        return tick_where([&](const Session& s) {
            return wall_now - s.last_tick_wall >= s.meta.config.analytics.tick_ms;
        });
    }

    std::vector<SessionId> open_sessions() const {
        std::shared_lock lock(sessions_mutex_);
        std::vector<SessionId> out;
        for (const auto& [id, s] : sessions_)
            if (!s->closed) out.push_back(id);
        return out;
    }

    std::vector<ParticipantId> participants(const SessionId& sid) const {
        auto s = find(sid);
        std::lock_guard lock(s->mutex);
        return present_at(s->presence, Timestamp{INT64_MAX});
    }

    Timestamp session_clock(const SessionId& sid) const {
        auto s = find(sid);
        std::lock_guard lock(s->mutex);
        return s->media_now;
    }

    SessionConfig session_config(const SessionId& sid) const { return find(sid)->meta.config; }

    /// Wall-clock milliseconds spent in each tick so far (all sessions).
    std::vector<double> tick_latencies_ms() const {
        std::lock_guard lock(metrics_mutex_);
        return tick_latencies_;
    }

    std::uint64_t tick_failures() const {
        std::lock_guard lock(metrics_mutex_);
        return tick_failures_;
    }

    /// Load reports produced while rebuilding sessions at startup.
    const std::map<SessionId, ReplayReport>& recovery_reports() const { return recovery_; }

private:
    struct Session {
        explicit Session(SessionMeta m) : meta(std::move(m)), segmenter(meta.config.segmenter) {
            media_now = meta.created_at;
        }

        SessionMeta meta;
        mutable std::mutex mutex;  // serializes every mutation of this session
        Segmenter segmenter;
        std::vector<ParticipantEvent> presence;
        std::set<ParticipantId> joined;
        Timestamp media_now;
        Timestamp last_tick_wall;
        bool closed = false;

        std::optional<MediatorFrame> last_frame;
        std::shared_ptr<const std::string> stats_envelope;
        std::shared_ptr<const std::string> frame_envelope;
        std::vector<std::weak_ptr<Subscriber>> subscribers;

        mutable std::mutex snapshot_mutex;  // guards the two bodies below
        std::shared_ptr<const std::string> stats_body;
        std::shared_ptr<const std::string> frame_body;
    };

    static std::string join(const std::vector<std::string>& parts) {
        std::string out;
        for (const auto& p : parts) {
            if (!out.empty()) out += "; ";
            out += p;
        }
        return out;
    }

    static std::string random_id() {
        static thread_local std::mt19937_64 rng{std::random_device{}()};
        static constexpr char hex[] = "0123456789abcdef";
        std::string id = "s";
        auto v = rng();
        for (int i = 0; i < 16; ++i, v >>= 4) id.push_back(hex[v & 0xF]);
        return id;
    }

    std::shared_ptr<Session> find(const SessionId& sid) const {
        std::shared_lock lock(sessions_mutex_);
        auto it = sessions_.find(sid);
        if (it == sessions_.end()) throw ServiceError(ServiceError::Code::not_found, "unknown session: " + sid);
        return it->second;
    }

    std::shared_ptr<Session> find_open(const SessionId& sid) const { return find(sid); }

    static void ensure_open(const Session& s) {
        if (s.closed) throw ServiceError(ServiceError::Code::conflict, "session closed");
    }

    Timestamp presence_time(const Session& s, std::optional<Timestamp> t) const {
        return std::max(t.value_or(opts_.clock()), s.media_now);
    }

    std::uint64_t append_locked(Session& s, EventPayload payload) {
        try {
            return store_.append(s.meta.id, opts_.clock(), std::move(payload));
        } catch (const StoreError& e) {
            if (e.code() == StoreError::Code::session_closed)
                throw ServiceError(ServiceError::Code::conflict, e.what());
            throw ServiceError(ServiceError::Code::unavailable, e.what());
        }
    }

    void broadcast_locked(Session& s, const std::shared_ptr<const std::string>& envelope) {
        std::erase_if(s.subscribers, [&](const std::weak_ptr<Subscriber>& w) {
            auto sub = w.lock();
            if (!sub) return true;
            sub->deliver(envelope);
            return false;
        });
    }

    void apply_presence(Session& s, const ParticipantEvent& ev, std::vector<SpeakingSegment>& emitted) {
        s.presence.push_back(ev);
        s.media_now = std::max(s.media_now, ev.t);
        if (ev.kind == PresenceKind::join) {
            s.joined.insert(ev.participant);
        } else {
            s.joined.erase(ev.participant);
            s.segmenter.flush(ev.participant, emitted);
        }
    }

    void record_presence_locked(Session& s, const ParticipantEvent& ev) {
        const auto seq = append_locked(s, ev);
        std::vector<SpeakingSegment> emitted;
        apply_presence(s, ev, emitted);
        for (const auto& seg : emitted) append_locked(s, seg);
        broadcast_locked(s, std::make_shared<const std::string>(
                                make_envelope("participant_event", s.meta.id, seq, json(ev))));
    }

    IntervalStats tick_locked(Session& s) {
        const auto& cfg = s.meta.config.analytics;
        const TimeRange window = tick_window(s.media_now, cfg);
        const auto segs =
            store_.query_segments(s.meta.id, window.start - cfg.turn_merge_gap_ms, window.end);
        auto stats = compute_interval_stats(s.meta.id, segs, s.presence, window, cfg);
        publish_tick_locked(s, stats);
        return stats;
    }

    void publish_tick_locked(Session& s, const IntervalStats& stats) {
        const auto& cfg = s.meta.config.analytics;
        auto frame = compute_frame(stats, s.last_frame ? &*s.last_frame : nullptr, cfg);

        const json stats_json = stats;
        const json frame_json = frame;
        const auto stats_seq = append_locked(s, stats);
        const auto frame_seq = append_locked(s, frame);

        auto stats_env = std::make_shared<const std::string>(make_envelope("stats", s.meta.id, stats_seq, stats_json));
        auto frame_env = std::make_shared<const std::string>(make_envelope("frame", s.meta.id, frame_seq, frame_json));
        {
            std::lock_guard snap(s.snapshot_mutex);
            s.stats_body = std::make_shared<const std::string>(stats_json.dump());
            s.frame_body = std::make_shared<const std::string>(frame_json.dump());
        }
        s.stats_envelope = stats_env;
        s.frame_envelope = frame_env;
        s.last_frame = std::move(frame);
        s.last_tick_wall = opts_.clock();
        broadcast_locked(s, stats_env);
        broadcast_locked(s, frame_env);
    }

    template <typename Pred>
    std::vector<IntervalStats> tick_where(Pred pred) {
        std::vector<std::shared_ptr<Session>> due;
        {
            std::shared_lock lock(sessions_mutex_);
            for (const auto& [_, s] : sessions_) {
                std::lock_guard slock(s->mutex);
                if (!s->closed && pred(*s)) due.push_back(s);
            }
        }

        std::vector<std::optional<IntervalStats>> results(due.size());
        const std::size_t width = std::max(1u, std::thread::hardware_concurrency());
        for (std::size_t begin = 0; begin < due.size(); begin += width) {
            const std::size_t end = std::min(due.size(), begin + width);
            std::vector<std::future<void>> jobs;
            for (std::size_t i = begin; i < end; ++i) {
                jobs.push_back(std::async(std::launch::async, [this, &due, &results, i] {
                    auto& s = *due[i];
                    const auto t0 = std::chrono::steady_clock::now();
                    try {
                        std::lock_guard lock(s.mutex);
                        if (s.closed) return;
                        results[i] = tick_locked(s);
                    } catch (const std::exception& e) {
                        std::lock_guard m(metrics_mutex_);
                        ++tick_failures_;
                        std::clog << "tick failed for session " << s.meta.id << ": " << e.what() << '\n';
                        return;
                    }
                    const std::chrono::duration<double, std::milli> dt = std::chrono::steady_clock::now() - t0;
                    std::lock_guard m(metrics_mutex_);
                    tick_latencies_.push_back(dt.count());
                }));
            }
            for (auto& j : jobs) j.get();
        }

        std::vector<IntervalStats> out;
        for (auto& r : results)
            if (r) out.push_back(std::move(*r));
        return out;
    }

    /// Rebuilds every session from its log. Segmenter and presence state are derived
    /// by re-running the logged inputs; segments that the inputs imply but that never
    /// reached the log (crash between the two appends) are appended now.
    void recover() {
        recovery_ = store_.open_existing();
        for (const auto& id : store_.sessions()) {
            auto s = std::make_shared<Session>(store_.meta(id));
            s->closed = s->meta.closed;
            std::deque<SpeakingSegment> pending;
            std::optional<IntervalStats> last_stats;
            std::uint64_t stats_seq = 0;
            std::uint64_t frame_seq = 0;

            auto report = store_.replay(id, [&](const SessionEvent& ev) {
                std::vector<SpeakingSegment> emitted;
                if (const auto* batch = std::get_if<SampleBatch>(&ev.payload)) {
                    for (const auto& sample : batch->samples) {
                        s->segmenter.ingest(sample, emitted);
                        s->media_now = std::max(s->media_now, sample.t);
                    }
                } else if (const auto* pe = std::get_if<ParticipantEvent>(&ev.payload)) {
                    apply_presence(*s, *pe, emitted);
                } else if (const auto* seg = std::get_if<SpeakingSegment>(&ev.payload)) {
                    if (!pending.empty() && pending.front() == *seg) pending.pop_front();
                } else if (const auto* st = std::get_if<IntervalStats>(&ev.payload)) {
                    last_stats = *st;
                    stats_seq = ev.seq;
                } else if (const auto* fr = std::get_if<MediatorFrame>(&ev.payload)) {
                    s->last_frame = *fr;
                    frame_seq = ev.seq;
                }
                pending.insert(pending.end(), emitted.begin(), emitted.end());
            });
            if (report.corruption) recovery_[id].corruption = report.corruption;

            if (!s->closed)
                for (const auto& seg : pending) append_locked(*s, seg);

            s->last_tick_wall = opts_.clock();
            if (last_stats) {
                const json sj = *last_stats;
                s->stats_body = std::make_shared<const std::string>(sj.dump());
                s->stats_envelope =
                    std::make_shared<const std::string>(make_envelope("stats", id, stats_seq, sj));
            }
            if (s->last_frame) {
                const json fj = *s->last_frame;
                s->frame_body = std::make_shared<const std::string>(fj.dump());
                s->frame_envelope =
                    std::make_shared<const std::string>(make_envelope("frame", id, frame_seq, fj));
            }
            if (!last_stats && !s->closed) {
                std::lock_guard lock(s->mutex);
                publish_tick_locked(*s, empty_stats(id, s->meta.created_at, s->presence, s->meta.config.analytics));
            }
            sessions_[id] = std::move(s);
        }
    }

    ServiceOptions opts_;
    Store store_;
    mutable std::shared_mutex sessions_mutex_;
    std::map<SessionId, std::shared_ptr<Session>> sessions_;
    std::map<SessionId, ReplayReport> recovery_;

    mutable std::mutex metrics_mutex_;
    std::vector<double> tick_latencies_;
    std::uint64_t tick_failures_ = 0;
};

}  // namespace breakout

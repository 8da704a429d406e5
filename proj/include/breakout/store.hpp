#pragma once

// Append-only per-session event log.
//
// Each session owns two files in the data directory:
//   events-<session>.jsonl   one {"seq","t","kind","payload"} object per line
//   meta-<session>.json      creation time, merged config, closed flag
// Segments are also indexed in memory (sorted by start) for windowed queries.

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include "analytics.hpp"
#include "core.hpp"
#include "mediator.hpp"

namespace breakout {

struct SampleBatch {
    std::vector<VolumeSample> samples;

    bool operator==(const SampleBatch&) const = default;
};

inline void to_json(json& j, const SampleBatch& b) { j = json{{"samples", b.samples}}; }
inline void from_json(const json& j, SampleBatch& b) {
    b.samples = j.at("samples").get<std::vector<VolumeSample>>();
}

enum class EventKind { sample_batch, participant_event, segment, stats, frame };

using EventPayload =
    std::variant<SampleBatch, ParticipantEvent, SpeakingSegment, IntervalStats, MediatorFrame>;

inline EventKind kind_of(const EventPayload& p) { return static_cast<EventKind>(p.index()); }

inline const char* kind_name(EventKind k) {
    switch (k) {
        case EventKind::sample_batch: return "SAMPLE_BATCH";
        case EventKind::participant_event: return "PARTICIPANT_EVENT";
        case EventKind::segment: return "SEGMENT";
        case EventKind::stats: return "STATS";
        case EventKind::frame: return "FRAME";
    }
    return "?";
}

inline EventKind parse_kind(const std::string& s) {
    if (s == "SAMPLE_BATCH") return EventKind::sample_batch;
    if (s == "PARTICIPANT_EVENT") return EventKind::participant_event;
    if (s == "SEGMENT") return EventKind::segment;
    if (s == "STATS") return EventKind::stats;
    if (s == "FRAME") return EventKind::frame;
    throw std::invalid_argument("unknown event kind: " + s);
}

struct SessionEvent {
    std::uint64_t seq = 0;
    Timestamp t;
    EventPayload payload;

    EventKind kind() const { return kind_of(payload); }
    bool operator==(const SessionEvent&) const = default;
};

inline void to_json(json& j, const SessionEvent& e) {
    j = json{{"seq", e.seq}, {"t", e.t}, {"kind", kind_name(e.kind())}};
    std::visit([&](const auto& p) { j["payload"] = p; }, e.payload);
}

inline void from_json(const json& j, SessionEvent& e) {
    e.seq = j.at("seq").get<std::uint64_t>();
    e.t = j.at("t").get<Timestamp>();
    const auto& p = j.at("payload");
    switch (parse_kind(j.at("kind").get<std::string>())) {
        case EventKind::sample_batch: e.payload = p.get<SampleBatch>(); break;
        case EventKind::participant_event: e.payload = p.get<ParticipantEvent>(); break;
        case EventKind::segment: e.payload = p.get<SpeakingSegment>(); break;
        case EventKind::stats: e.payload = p.get<IntervalStats>(); break;
        case EventKind::frame: e.payload = p.get<MediatorFrame>(); break;
    }
}

struct SessionMeta {
    SessionId id;
    Timestamp created_at;
    SessionConfig config;
    bool closed = false;
};

inline void to_json(json& j, const SessionMeta& m) {
    j = json{{"id", m.id}, {"created_at", m.created_at}, {"config", m.config}, {"closed", m.closed}};
}
inline void from_json(const json& j, SessionMeta& m) {
    m.id = j.at("id").get<std::string>();
    m.created_at = j.at("created_at").get<Timestamp>();
    m.config = j.at("config").get<SessionConfig>();
    m.closed = j.value("closed", false);
}

class StoreError : public std::runtime_error {
public:
    enum class Code { unknown_session, session_closed, already_exists, io };

    StoreError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
    Code code() const { return code_; }

private:
    Code code_;
};

struct ReplayReport {
    std::uint64_t events = 0;
    std::optional<std::string> corruption;  // set when replay stopped early
};

namespace detail {

/// Parses the valid prefix of a log. Stops at the first line that is not a complete,
/// well-formed event with the next expected seq.
inline ReplayReport scan_log(const std::filesystem::path& path,
                             const std::function<void(const SessionEvent&)>& sink,
                             std::uint64_t* valid_bytes = nullptr) {
    ReplayReport report;
    std::ifstream in(path, std::ios::binary);
    if (valid_bytes != nullptr) *valid_bytes = 0;
    if (!in) return report;

    std::string line;
    std::uint64_t offset = 0;
    while (true) {
        if (!std::getline(in, line)) break;
        const bool complete = !in.eof();  // getline hit '\n'
        const std::uint64_t line_bytes = line.size() + (complete ? 1 : 0);
        if (!complete) {
            if (!line.empty())
                report.corruption = "truncated final line at byte " + std::to_string(offset);
            break;
        }
        SessionEvent ev;
        try {
            ev = json::parse(line).get<SessionEvent>();
        } catch (const std::exception& e) {
            report.corruption = "unparseable line at byte " + std::to_string(offset) + ": " + e.what();
            break;
        }
        if (ev.seq != report.events + 1) {
            report.corruption = "seq gap at byte " + std::to_string(offset) + ": expected " +
                                std::to_string(report.events + 1) + ", found " + std::to_string(ev.seq);
            break;
        }
        sink(ev);
        ++report.events;
        offset += line_bytes;
        if (valid_bytes != nullptr) *valid_bytes = offset;
    }
    return report;
}

inline void write_all(int fd, const std::string& data) {
    const char* p = data.data();
    std::size_t left = data.size();
    while (left > 0) {
        const ssize_t n = ::write(fd, p, left);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw StoreError(StoreError::Code::io, std::string("write failed: ") + std::strerror(errno));
        }
        p += n;
        left -= static_cast<std::size_t>(n);
    }
}

inline void write_file_atomically(const std::filesystem::path& path, const std::string& content) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << content;
        out.flush();
        if (!out) throw StoreError(StoreError::Code::io, "cannot write " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw StoreError(StoreError::Code::io, "cannot rename " + tmp + ": " + ec.message());
}

}  // namespace detail

/// One session's log file plus its segment index. Single writer, many readers.
class SessionLog {
public:
    SessionLog(std::filesystem::path events_path, std::filesystem::path meta_path, SessionMeta meta,
               bool sync_writes)
        : events_path_(std::move(events_path)),
          meta_path_(std::move(meta_path)),
          meta_(std::move(meta)),
          sync_(sync_writes) {}

    ~SessionLog() {
        if (fd_ >= 0) ::close(fd_);
    }
    SessionLog(const SessionLog&) = delete;
    SessionLog& operator=(const SessionLog&) = delete;

    /// Loads the valid prefix of an existing log and cuts off anything after it.
    ReplayReport load() {
        std::unique_lock lock(mutex_);
        std::uint64_t valid = 0;
        auto report = detail::scan_log(
            events_path_, [&](const SessionEvent& ev) { index_locked(ev); }, &valid);
        if (report.corruption && std::filesystem::exists(events_path_))
            std::filesystem::resize_file(events_path_, valid);
        bytes_ = valid;
        return report;
    }

    std::uint64_t append(Timestamp t, EventPayload payload) {
        std::unique_lock lock(mutex_);
        if (meta_.closed) throw StoreError(StoreError::Code::session_closed, "session closed");
        open_locked();
        SessionEvent ev{last_seq_ + 1, std::max(t, last_t_), std::move(payload)};
        std::string line = json(ev).dump();
        line.push_back('\n');
        try {
            detail::write_all(fd_, line);
            if (sync_ && ::fdatasync(fd_) != 0)
                throw StoreError(StoreError::Code::io, std::string("fdatasync failed: ") + std::strerror(errno));
        } catch (const StoreError&) {
            // Drop whatever part of the line made it out so the log stays parseable.
            [[maybe_unused]] const int rc = ::ftruncate(fd_, static_cast<off_t>(bytes_));
            throw;
        }
        bytes_ += line.size();
        index_locked(ev);
        return ev.seq;
    }

    /// Segments intersecting the closed range [from, to], sorted by start.
    std::vector<SpeakingSegment> query_segments(Timestamp from, Timestamp to) const {
        std::shared_lock lock(mutex_);
        std::vector<SpeakingSegment> out;
        const Timestamp lo = from - max_segment_len_;
        auto it = std::lower_bound(segments_.begin(), segments_.end(), lo,
                                   [](const SpeakingSegment& s, Timestamp t) { return s.start < t; });
        for (; it != segments_.end() && it->start <= to; ++it)
            if (it->end >= from) out.push_back(*it);
        return out;
    }

    ReplayReport replay(const std::function<void(const SessionEvent&)>& sink) const {
        std::shared_lock lock(mutex_);
        return detail::scan_log(events_path_, sink);
    }

    void close() {
        std::unique_lock lock(mutex_);
        if (meta_.closed) return;
        meta_.closed = true;
        detail::write_file_atomically(meta_path_, json(meta_).dump());
        if (fd_ >= 0) {
            ::close(fd_);
            fd_ = -1;
        }
    }

    void write_meta() {
        std::unique_lock lock(mutex_);
        detail::write_file_atomically(meta_path_, json(meta_).dump());
    }

    SessionMeta meta() const {
        std::shared_lock lock(mutex_);
        return meta_;
    }
    std::uint64_t last_seq() const {
        std::shared_lock lock(mutex_);
        return last_seq_;
    }
    const std::filesystem::path& events_path() const { return events_path_; }
    const std::filesystem::path& meta_path() const { return meta_path_; }

private:
    void open_locked() {
        if (fd_ >= 0) return;
        fd_ = ::open(events_path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
        if (fd_ < 0)
            throw StoreError(StoreError::Code::io,
                             "cannot open " + events_path_.string() + ": " + std::strerror(errno));
    }

    void index_locked(const SessionEvent& ev) {
        last_seq_ = ev.seq;
        last_t_ = std::max(last_t_, ev.t);
        if (const auto* seg = std::get_if<SpeakingSegment>(&ev.payload)) {
            auto pos = std::upper_bound(segments_.begin(), segments_.end(), *seg,
                                        [](const SpeakingSegment& a, const SpeakingSegment& b) {
                                            return std::tie(a.start, a.participant) <
                                                   std::tie(b.start, b.participant);
                                        });
            segments_.insert(pos, *seg);
            max_segment_len_ = std::max(max_segment_len_, seg->length());
        }
    }

    std::filesystem::path events_path_;
    std::filesystem::path meta_path_;
    SessionMeta meta_;
    bool sync_;
    int fd_ = -1;
    std::uint64_t bytes_ = 0;

    mutable std::shared_mutex mutex_;
    std::uint64_t last_seq_ = 0;
    Timestamp last_t_;
    std::vector<SpeakingSegment> segments_;
    std::int64_t max_segment_len_ = 0;
};

/// All session logs under one data directory.
class Store {
public:
    explicit Store(std::filesystem::path data_dir, bool sync_writes = true)
        : dir_(std::move(data_dir)), sync_(sync_writes) {
        std::filesystem::create_directories(dir_);
    }

    const std::filesystem::path& data_dir() const { return dir_; }

    /// Opens every session found on disk. Returns per-session load reports.
    std::map<SessionId, ReplayReport> open_existing() {
        std::map<SessionId, ReplayReport> reports;
        for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
            const auto name = entry.path().filename().string();
            if (!name.starts_with("meta-") || !name.ends_with(".json")) continue;
            SessionMeta meta;
            try {
                std::ifstream in(entry.path());
                meta = json::parse(in).get<SessionMeta>();
            } catch (const std::exception& e) {
                reports[name].corruption = std::string("unreadable meta: ") + e.what();
                continue;
            }
            auto log = std::make_shared<SessionLog>(events_path(meta.id), meta_path(meta.id), meta, sync_);
            reports[meta.id] = log->load();
            std::unique_lock lock(mutex_);
            logs_[meta.id] = std::move(log);
        }
        return reports;
    }

    void create(const SessionMeta& meta) {
        std::unique_lock lock(mutex_);
        if (logs_.contains(meta.id))
            throw StoreError(StoreError::Code::already_exists, "session exists: " + meta.id);
        auto log = std::make_shared<SessionLog>(events_path(meta.id), meta_path(meta.id), meta, sync_);
        log->write_meta();
        logs_[meta.id] = std::move(log);
    }

    std::uint64_t append(const SessionId& session, Timestamp t, EventPayload payload) {
        return log(session)->append(t, std::move(payload));
    }

    std::vector<SpeakingSegment> query_segments(const SessionId& session, Timestamp from,
                                                Timestamp to) const {
        return log(session)->query_segments(from, to);
    }

    ReplayReport replay(const SessionId& session,
                        const std::function<void(const SessionEvent&)>& sink) const {
        return log(session)->replay(sink);
    }

    void close(const SessionId& session) { log(session)->close(); }

    /// Closes a session and moves its files into <data_dir>/archive/.
    void archive(const SessionId& session) {
        std::shared_ptr<SessionLog> l;
        {
            std::unique_lock lock(mutex_);
            auto it = logs_.find(session);
            if (it == logs_.end()) throw StoreError(StoreError::Code::unknown_session, "unknown session");
            l = it->second;
            logs_.erase(it);
        }
        l->close();
        const auto archive_dir = dir_ / "archive";
        std::filesystem::create_directories(archive_dir);
        for (const auto& p : {l->events_path(), l->meta_path()})
            if (std::filesystem::exists(p)) std::filesystem::rename(p, archive_dir / p.filename());
    }

    bool contains(const SessionId& session) const {
        std::shared_lock lock(mutex_);
        return logs_.contains(session);
    }

    SessionMeta meta(const SessionId& session) const { return log(session)->meta(); }

    std::vector<SessionId> sessions() const {
        std::shared_lock lock(mutex_);
        std::vector<SessionId> out;
        for (const auto& [id, _] : logs_) out.push_back(id);
        return out;
    }

    std::filesystem::path events_path(const SessionId& id) const { return dir_ / ("events-" + id + ".jsonl"); }
    std::filesystem::path meta_path(const SessionId& id) const { return dir_ / ("meta-" + id + ".json"); }

private:
    std::shared_ptr<SessionLog> log(const SessionId& session) const {
        std::shared_lock lock(mutex_);
        auto it = logs_.find(session);
        if (it == logs_.end()) throw StoreError(StoreError::Code::unknown_session, "unknown session");
        return it->second;
    }

    std::filesystem::path dir_;
    bool sync_;
    mutable std::shared_mutex mutex_;
    std::map<SessionId, std::shared_ptr<SessionLog>> logs_;
};

}  // namespace breakout

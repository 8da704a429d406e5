#pragma once

// Feeds a generated meeting to a running server over HTTP, paced against the wall
// clock.

#include <chrono>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "simulator.hpp"

namespace breakout::sim {

class DriveError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DriveOptions {
    std::string server_url = "http://127.0.0.1:8080";
    std::string token;
    double speed = 1.0;            // media time per wall time; <= 0 means as fast as possible
    std::int64_t batch_ms = 1000;  // media time covered by one POST
    json session_config = json::object();
    int retries = 3;
    // Called once the session exists, before any participant joins.
    std::function<void(const SessionId&, Timestamp)> on_created;
    // Called after every batch with the media time reached.
    std::function<void(Timestamp)> on_batch;
};

struct DriveResult {
    SessionId session;
    Timestamp created_at;
    Generated meeting;
    std::size_t accepted = 0;
    std::size_t dropped = 0;
};

class Driver {
public:
    explicit Driver(DriveOptions options) : opts_(std::move(options)), client_(opts_.server_url) {
        if (!client_.is_valid()) throw DriveError("invalid server url: " + opts_.server_url);
        client_.set_bearer_token_auth(opts_.token);
        client_.set_keep_alive(true);
        client_.set_connection_timeout(std::chrono::seconds(5));
        client_.set_read_timeout(std::chrono::seconds(30));
        client_.set_write_timeout(std::chrono::seconds(30));
    }

    DriveResult run(const ConversationModel& model, std::int64_t duration_ms) {
        DriveResult r;
        const json created = request("POST", "/v1/sessions", opts_.session_config, 201);
        r.session = created.at("session_id").get<std::string>();
        r.created_at = created.at("created_at").get<Timestamp>();
        SegmenterConfig seg_cfg;
        if (created.contains("config")) seg_cfg = created["config"].get<SessionConfig>().segmenter;

        if (opts_.on_created) opts_.on_created(r.session, r.created_at);
        const Timestamp base = r.created_at;
        r.meeting = generate(model, duration_ms, seg_cfg, base);
        const std::string prefix = "/v1/sessions/" + r.session;

        for (const auto& p : r.meeting.participants)
            request("POST", prefix + "/participants", json{{"participant_id", p}, {"t", base}}, 204);

        const auto wall_start = std::chrono::steady_clock::now();
        std::size_t i = 0;
        const auto& samples = r.meeting.samples;
        for (Timestamp from = base; i < samples.size(); from = from + opts_.batch_ms) {
            const Timestamp to = from + opts_.batch_ms;
            if (opts_.speed > 0.0) {
                const auto due = wall_start + std::chrono::microseconds(static_cast<std::int64_t>(
                                                  static_cast<double>(to - base) * 1000.0 / opts_.speed));
                std::this_thread::sleep_until(due);
            }
            while (i < samples.size() && samples[i].t < to) {
                json batch = json::array();
                while (i < samples.size() && samples[i].t < to && batch.size() < 1000) batch.push_back(samples[i++]);
                const json res = request("POST", prefix + "/samples", json{{"samples", batch}}, 200);
                r.accepted += res.at("accepted").get<std::size_t>();
                r.dropped += res.at("dropped").get<std::size_t>();
            }
            if (opts_.on_batch) opts_.on_batch(to);
        }

        const Timestamp end = base + duration_ms;
        for (const auto& p : r.meeting.participants)
            request("DELETE", prefix + "/participants/" + p + "?t=" + std::to_string(end.ms), json(nullptr), 204);
        request("DELETE", prefix, json(nullptr), 204);
        return r;
    }

    /// One request with retries on transport errors and 5xx. Throws DriveError.
    json request(const std::string& method, const std::string& path, const json& body, int expected) {
        std::string last_error;
        for (int attempt = 0; attempt <= opts_.retries; ++attempt) {
            if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(100 << attempt));
            httplib::Result res;
            if (method == "POST")
                res = client_.Post(path, body.is_null() ? std::string{} : body.dump(), "application/json");
            else if (method == "DELETE")
                res = client_.Delete(path);
            else
                res = client_.Get(path);

            if (!res) {
                last_error = "transport error: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status >= 500) {
                last_error = "HTTP " + std::to_string(res->status) + ": " + res->body;
                continue;
            }
            if (res->status != expected)
                throw DriveError(method + " " + path + " -> HTTP " + std::to_string(res->status) + ": " + res->body);
            return res->body.empty() ? json(nullptr) : json::parse(res->body);
        }
        throw DriveError(method + " " + path + " failed after " + std::to_string(opts_.retries) +
                         " retries: " + last_error);
    }

private:
    DriveOptions opts_;
    httplib::Client client_;
};

}  // namespace breakout::sim

#pragma once

// HTTP/1.1 JSON endpoints and the websocket envelope stream on top of Service.
//
//   GET    /v1/healthz                                  no token
//   POST   /v1/sessions                                 {config overrides, session_id?}
//   DELETE /v1/sessions/{id}                            close
//   POST   /v1/sessions/{id}/participants               {participant_id, t?}
//   DELETE /v1/sessions/{id}/participants/{pid}[?t=]
//   POST   /v1/sessions/{id}/samples                    {samples: [...]}
//   GET    /v1/sessions/{id}/stats | /mediator | /segments?from=&to=
//   WS     /v1/sessions/{id}/stream                     subprotocol breakout.v1
//
// Everything except healthz needs "Authorization: Bearer <token>"; the websocket
// also accepts ?token=.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <boost/asio/dispatch.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/post.hpp>
#include <boost/asio/strand.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "service.hpp"

namespace breakout {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

inline constexpr std::string_view kSubprotocol = "breakout.v1";
inline constexpr std::uint16_t kCloseSessionNotFound = 4404;

struct ServerOptions {
    std::string address = "127.0.0.1";
    std::uint16_t port = 8080;  // 0 picks a free port
    std::string token;
    unsigned threads = 4;
    std::size_t subscriber_queue_limit = 1024;
    std::size_t body_limit = 8 * 1024 * 1024;
};

/// "host:port" or ":port".
inline std::pair<std::string, std::uint16_t> parse_listen(const std::string& addr) {
    const auto colon = addr.rfind(':');
    if (colon == std::string::npos) throw std::invalid_argument("listen address must be host:port");
    std::string host = addr.substr(0, colon);
    if (host.empty()) host = "0.0.0.0";
    unsigned port = 0;
    const auto p = addr.substr(colon + 1);
    auto [ptr, ec] = std::from_chars(p.data(), p.data() + p.size(), port);
    if (ec != std::errc{} || ptr != p.data() + p.size() || port > 65535)
        throw std::invalid_argument("bad port in listen address: " + addr);
    return {host, static_cast<std::uint16_t>(port)};
}

namespace detail {

struct Target {
    std::vector<std::string> segments;
    std::map<std::string, std::string> query;
};

inline int hex_value(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

inline std::string percent_decode(std::string_view in) {
    std::string out;
    for (std::size_t i = 0; i < in.size(); ++i) {
        if (in[i] == '%' && i + 2 < in.size()) {
            const int hi = hex_value(in[i + 1]);
            const int lo = hex_value(in[i + 2]);
            if (hi >= 0 && lo >= 0) {
                out.push_back(static_cast<char>(hi * 16 + lo));
                i += 2;
                continue;
            }
        }
        out.push_back(in[i] == '+' ? ' ' : in[i]);
    }
    return out;
}

inline Target parse_target(std::string_view target) {
    Target t;
    const auto qpos = target.find('?');
    std::string_view path = target.substr(0, qpos);
    std::string_view query = qpos == std::string_view::npos ? std::string_view{} : target.substr(qpos + 1);

    std::size_t pos = 0;
    while (pos <= path.size()) {
        const auto next = path.find('/', pos);
        const auto piece = path.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos);
        if (!piece.empty()) t.segments.push_back(percent_decode(piece));
        if (next == std::string_view::npos) break;
        pos = next + 1;
    }
    while (!query.empty()) {
        const auto amp = query.find('&');
        const auto pair = query.substr(0, amp);
        const auto eq = pair.find('=');
        if (eq == std::string_view::npos)
            t.query[percent_decode(pair)] = "";
        else
            t.query[percent_decode(pair.substr(0, eq))] = percent_decode(pair.substr(eq + 1));
        if (amp == std::string_view::npos) break;
        query = query.substr(amp + 1);
    }
    return t;
}

inline std::optional<std::int64_t> parse_int(std::string_view s) {
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

inline bool constant_time_equal(std::string_view a, std::string_view b) {
    if (a.size() != b.size() || b.empty()) return false;
    unsigned char diff = 0;
    for (std::size_t i = 0; i < a.size(); ++i) diff |= static_cast<unsigned char>(a[i] ^ b[i]);
    return diff == 0;
}

inline std::optional<std::string> bearer_token(const http::request<http::string_body>& req) {
    auto it = req.find(http::field::authorization);
    if (it == req.end()) return std::nullopt;
    std::string_view v(it->value().data(), it->value().size());
    constexpr std::string_view prefix = "Bearer ";
    if (v.size() <= prefix.size() || !std::equal(prefix.begin(), prefix.end(), v.begin(), [](char x, char y) {
            return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
        }))
        return std::nullopt;
    return std::string(v.substr(prefix.size()));
}

}  // namespace detail

class HttpServer {
public:
    HttpServer(Service& service, ServerOptions options)
        : service_(service), opts_(std::move(options)), acceptor_(ioc_) {
        if (opts_.token.empty()) throw std::invalid_argument("server token must not be empty");
        const tcp::endpoint ep(net::ip::make_address(opts_.address), opts_.port);
        acceptor_.open(ep.protocol());
        acceptor_.set_option(net::socket_base::reuse_address(true));
        acceptor_.bind(ep);
        acceptor_.listen(net::socket_base::max_listen_connections);
        port_ = acceptor_.local_endpoint().port();
    }

    ~HttpServer() { stop(); }

    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    std::uint16_t port() const { return port_; }

    void start() {
        do_accept();
        const unsigned n = std::max(1u, opts_.threads);
        for (unsigned i = 0; i < n; ++i) threads_.emplace_back([this] { ioc_.run(); });
    }

    void stop() {
        if (stopped_.exchange(true)) return;
        net::post(acceptor_.get_executor(), [this] {
            beast::error_code ec;
            acceptor_.close(ec);
        });
        ioc_.stop();
        for (auto& t : threads_)
            if (t.joinable()) t.join();
        threads_.clear();
    }

    Service& service() { return service_; }
    const ServerOptions& options() const { return opts_; }

private:
    class WsSession;
    class HttpSession;

    void do_accept() {
        acceptor_.async_accept(net::make_strand(ioc_), [this](beast::error_code ec, tcp::socket socket) {
            if (ec) {
                if (!acceptor_.is_open()) return;
            } else {
                std::make_shared<HttpSession>(*this, std::move(socket))->run();
            }
            do_accept();
        });
    }

    bool authorized(const http::request<http::string_body>& req, const detail::Target* target) const {
        if (auto tok = detail::bearer_token(req); tok && detail::constant_time_equal(*tok, opts_.token))
            return true;
        if (target != nullptr) {
            auto it = target->query.find("token");
            if (it != target->query.end() && detail::constant_time_equal(it->second, opts_.token)) return true;
        }
        return false;
    }

    using Response = http::response<http::string_body>;

    static Response json_response(const http::request<http::string_body>& req, http::status status,
                                  std::string body) {
        Response res{status, req.version()};
        res.set(http::field::server, "breakout");
        res.keep_alive(req.keep_alive());
        if (status != http::status::no_content) {
            res.set(http::field::content_type, "application/json");
            res.body() = std::move(body);
        }
        res.prepare_payload();
        return res;
    }

    static Response error_response(const http::request<http::string_body>& req, http::status status,
                                   const std::string& message) {
        return json_response(req, status, json{{"error", message}}.dump());
    }

    static http::status status_for(ServiceError::Code code) {
        switch (code) {
            case ServiceError::Code::not_found: return http::status::not_found;
            case ServiceError::Code::conflict: return http::status::conflict;
            case ServiceError::Code::unprocessable: return http::status::unprocessable_entity;
            case ServiceError::Code::unavailable: return http::status::service_unavailable;
        }
        return http::status::internal_server_error;
    }

    static json parse_body(const http::request<http::string_body>& req) {
        if (req.body().empty()) return json(nullptr);
        try {
            return json::parse(req.body());
        } catch (const json::parse_error& e) {
            throw ServiceError(ServiceError::Code::unprocessable, std::string("malformed JSON: ") + e.what());
        }
    }

    static std::optional<Timestamp> optional_time(const json& v, const char* what) {
        if (v.is_null()) return std::nullopt;
        try {
            return v.get<Timestamp>();
        } catch (const std::exception& e) {
            throw ServiceError(ServiceError::Code::unprocessable, std::string(what) + ": " + e.what());
        }
    }

    std::vector<VolumeSample> parse_samples(const json& body) const {
        if (!body.is_object() || !body.contains("samples") || !body["samples"].is_array())
            throw ServiceError(ServiceError::Code::unprocessable, "body must be {\"samples\": [...]}");
        const auto& arr = body["samples"];
        if (arr.size() > service_.options().max_batch)
            throw ServiceError(ServiceError::Code::unprocessable,
                               "batch exceeds " + std::to_string(service_.options().max_batch) + " samples");
        const Timestamp now = service_.options().clock();
        std::vector<VolumeSample> out;
        out.reserve(arr.size());
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const auto& j = arr[i];
            try {
                if (!j.is_object()) throw std::invalid_argument("sample must be an object");
                VolumeSample s;
                s.participant = j.at("participant").get<std::string>();
                s.t = j.contains("t") ? j["t"].get<Timestamp>() : now;
                if (!j.at("volume").is_number()) throw std::invalid_argument("volume must be a number");
                s.volume = j["volume"].get<double>();
                out.push_back(std::move(s));
            } catch (const std::exception& e) {
                throw ServiceError(ServiceError::Code::unprocessable,
                                   "sample " + std::to_string(i) + ": " + e.what());
            }
        }
        return out;
    }

    Response handle(const http::request<http::string_body>& req, const detail::Target& target) {
        const auto& seg = target.segments;
        const auto method = req.method();

        if (seg.size() == 2 && seg[0] == "v1" && seg[1] == "healthz" && method == http::verb::get)
            return json_response(req, http::status::ok, R"({"status":"ok"})");
        if (seg.empty() || seg[0] != "v1" || seg.size() < 2 || seg[1] != "sessions")
            return error_response(req, http::status::not_found, "no such endpoint");
        if (!authorized(req, nullptr)) {
            auto res = error_response(req, http::status::unauthorized, "missing or invalid bearer token");
            res.set(http::field::www_authenticate, "Bearer");
            return res;
        }

        try {
            if (seg.size() == 2) {
                if (method != http::verb::post) return error_response(req, http::status::method_not_allowed, "use POST");
                auto created = service_.create_session(parse_body(req));
                return json_response(req, http::status::created,
                                     json{{"session_id", created.id},
                                          {"created_at", created.created_at},
                                          {"config", created.config}}
                                         .dump());
            }
            const SessionId& sid = seg[2];
            if (seg.size() == 3) {
                if (method != http::verb::delete_)
                    return error_response(req, http::status::method_not_allowed, "use DELETE");
                service_.close_session(sid);
                return json_response(req, http::status::no_content, {});
            }
            const std::string& leaf = seg[3];
            if (leaf == "participants" && seg.size() == 4 && method == http::verb::post) {
                const json body = parse_body(req);
                if (!body.is_object() || !body.contains("participant_id") || !body["participant_id"].is_string())
                    throw ServiceError(ServiceError::Code::unprocessable, "body must carry participant_id");
                service_.join(sid, body["participant_id"].get<std::string>(),
                              optional_time(body.value("t", json(nullptr)), "t"));
                return json_response(req, http::status::no_content, {});
            }
            if (leaf == "participants" && seg.size() == 5 && method == http::verb::delete_) {
                std::optional<Timestamp> t;
                if (auto it = target.query.find("t"); it != target.query.end()) {
                    auto v = detail::parse_int(it->second);
                    if (!v || *v < 0) throw ServiceError(ServiceError::Code::unprocessable, "t must be a non-negative integer");
                    t = Timestamp{*v};
                }
                service_.leave(sid, seg[4], t);
                return json_response(req, http::status::no_content, {});
            }
            if (leaf == "samples" && seg.size() == 4 && method == http::verb::post) {
                const auto samples = parse_samples(parse_body(req));
                const auto r = service_.ingest(sid, samples);
                return json_response(req, http::status::ok,
                                     json{{"accepted", r.accepted}, {"dropped", r.dropped}}.dump());
            }
            if (seg.size() == 4 && method == http::verb::get) {
                if (leaf == "stats") return json_response(req, http::status::ok, *service_.stats_json(sid));
                if (leaf == "mediator") return json_response(req, http::status::ok, *service_.frame_json(sid));
                if (leaf == "segments") {
                    auto from_it = target.query.find("from");
                    auto to_it = target.query.find("to");
                    if (from_it == target.query.end() || to_it == target.query.end())
                        throw ServiceError(ServiceError::Code::unprocessable, "from and to are required");
                    auto from = detail::parse_int(from_it->second);
                    auto to = detail::parse_int(to_it->second);
                    if (!from || !to || *from < 0 || *to < 0)
                        throw ServiceError(ServiceError::Code::unprocessable, "from and to must be non-negative integers");
                    const auto segs = service_.segments(sid, Timestamp{*from}, Timestamp{*to});
                    return json_response(req, http::status::ok, json(segs).dump());
                }
            }
            return error_response(req, http::status::not_found, "no such endpoint");
        } catch (const ServiceError& e) {
            json body{{"error", e.what()}};
            if (!e.details().empty()) body["violations"] = e.details();
            return json_response(req, status_for(e.code()), body.dump());
        } catch (const std::exception& e) {
            return error_response(req, http::status::internal_server_error, e.what());
        }
    }

    /// One websocket subscriber. Envelopes queue here; overflow drops the connection.
    class WsSession : public Subscriber, public std::enable_shared_from_this<WsSession> {
    public:
        WsSession(HttpServer& server, tcp::socket&& socket)
            : server_(server), ws_(std::move(socket)) {}

        void run(http::request<http::string_body> req, detail::Target target) {
            req_ = std::move(req);
            target_ = std::move(target);
            ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
            bool wants_protocol = false;
            if (auto it = req_.find(http::field::sec_websocket_protocol); it != req_.end()) {
                std::string_view offered(it->value().data(), it->value().size());
                wants_protocol = offered.find(kSubprotocol) != std::string_view::npos;
            }
            ws_.set_option(websocket::stream_base::decorator([wants_protocol](websocket::response_type& res) {
                res.set(http::field::server, "breakout");
                if (wants_protocol) res.set(http::field::sec_websocket_protocol, std::string(kSubprotocol));
            }));
            ws_.text(true);
            ws_.async_accept(req_, beast::bind_front_handler(&WsSession::on_accept, shared_from_this()));
        }

        void deliver(std::shared_ptr<const std::string> envelope) override {
            std::lock_guard lock(mutex_);
            if (dropped_) return;
            if (queue_.size() >= server_.opts_.subscriber_queue_limit) {
                dropped_ = true;
                queue_.clear();
                net::post(ws_.get_executor(), [self = shared_from_this()] { self->drop(); });
                return;
            }
            queue_.push_back(std::move(envelope));
            if (!writing_) {
                writing_ = true;
                net::post(ws_.get_executor(), [self = shared_from_this()] { self->write_next(); });
            }
        }

    private:
        void on_accept(beast::error_code ec) {
            if (ec) return;
            if (!server_.authorized(req_, &target_)) {
                close_with(websocket::close_reason(websocket::close_code::policy_error, "unauthorized"));
                return;
            }
            const auto& seg = target_.segments;
            try {
                server_.service_.subscribe(seg[2], shared_from_this());
            } catch (const ServiceError&) {
                close_with(websocket::close_reason(static_cast<websocket::close_code>(kCloseSessionNotFound), "session not found"));
                return;
            }
            read_loop();
        }

        void close_with(websocket::close_reason reason) {
            {
                std::lock_guard lock(mutex_);
                dropped_ = true;
            }
            ws_.async_close(reason, [self = shared_from_this()](beast::error_code) {});
        }

        // Incoming frames are ignored; reading keeps control frames flowing.
        void read_loop() {
            ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
                if (ec) {
                    std::lock_guard lock(self->mutex_);
                    self->dropped_ = true;
                    self->queue_.clear();
                    return;
                }
                self->buffer_.consume(self->buffer_.size());
                self->read_loop();
            });
        }

        void write_next() {
            std::shared_ptr<const std::string> next;
            {
                std::lock_guard lock(mutex_);
                if (dropped_ || queue_.empty()) {
                    writing_ = false;
                    return;
                }
                next = queue_.front();
            }
            ws_.async_write(net::buffer(*next), [self = shared_from_this(), next](beast::error_code ec, std::size_t) {
                {
                    std::lock_guard lock(self->mutex_);
                    if (ec) {
                        self->dropped_ = true;
                        self->queue_.clear();
                        self->writing_ = false;
                        return;
                    }
                    if (!self->queue_.empty()) self->queue_.pop_front();
                }
                self->write_next();
            });
        }

        void drop() {
            beast::error_code ec;
            beast::get_lowest_layer(ws_).socket().shutdown(tcp::socket::shutdown_both, ec);
            beast::get_lowest_layer(ws_).close();
        }

        HttpServer& server_;
        websocket::stream<beast::tcp_stream> ws_;
        beast::flat_buffer buffer_;
        http::request<http::string_body> req_;
        detail::Target target_;

        std::mutex mutex_;
        std::deque<std::shared_ptr<const std::string>> queue_;
        bool writing_ = false;
        bool dropped_ = false;
    };

    class HttpSession : public std::enable_shared_from_this<HttpSession> {
    public:
        HttpSession(HttpServer& server, tcp::socket&& socket) : server_(server), stream_(std::move(socket)) {}

        void run() {
            net::dispatch(stream_.get_executor(), beast::bind_front_handler(&HttpSession::do_read, shared_from_this()));
        }

    private:
        void do_read() {
            parser_.emplace();
            parser_->body_limit(server_.opts_.body_limit);
            stream_.expires_after(std::chrono::seconds(60));
            http::async_read(stream_, buffer_, *parser_,
                             beast::bind_front_handler(&HttpSession::on_read, shared_from_this()));
        }

        void on_read(beast::error_code ec, std::size_t) {
            if (ec == http::error::end_of_stream) {
                stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
                return;
            }
            if (ec) return;
            auto req = parser_->release();
            auto target = detail::parse_target(std::string_view(req.target().data(), req.target().size()));

            if (websocket::is_upgrade(req)) {
                const auto& seg = target.segments;
                if (seg.size() == 4 && seg[0] == "v1" && seg[1] == "sessions" && seg[3] == "stream") {
                    stream_.expires_never();
                    std::make_shared<WsSession>(server_, stream_.release_socket())->run(std::move(req), std::move(target));
                    return;
                }
            }

            auto res = std::make_shared<Response>(server_.handle(req, target));
            const bool close = res->need_eof();
            http::async_write(stream_, *res, [self = shared_from_this(), res, close](beast::error_code ec, std::size_t) {
                if (ec) return;
                if (close) {
                    self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
                    return;
                }
                self->do_read();
            });
        }

        HttpServer& server_;
        beast::tcp_stream stream_;
        beast::flat_buffer buffer_;
        std::optional<http::request_parser<http::string_body>> parser_;
    };

    Service& service_;
    ServerOptions opts_;
    net::io_context ioc_;
    tcp::acceptor acceptor_;
    std::uint16_t port_ = 0;
    std::vector<std::thread> threads_;
    std::atomic<bool> stopped_{false};
};

/// Background thread that ticks each session when its own tick_ms is due.
class TickScheduler {
public:
    explicit TickScheduler(Service& service, std::chrono::milliseconds poll = std::chrono::milliseconds(50))
        : service_(service), poll_(poll), thread_([this] { loop(); }) {}

    ~TickScheduler() { stop(); }

    void stop() {
        {
            std::lock_guard lock(mutex_);
            if (stop_) return;
            stop_ = true;
        }
        cv_.notify_all();
        if (thread_.joinable()) thread_.join();
    }

private:
    void loop() {
        std::unique_lock lock(mutex_);
        while (!stop_) {
            lock.unlock();
            try {
                service_.tick_due(service_.options().clock());
            } catch (const std::exception& e) {
                std::clog << "scheduler: " << e.what() << '\n';
            }
            lock.lock();
            cv_.wait_for(lock, poll_, [this] { return stop_; });
        }
    }

    Service& service_;
    std::chrono::milliseconds poll_;
    std::mutex mutex_;
    std::condition_variable cv_;
    bool stop_ = false;
    std::thread thread_;
};

}  // namespace breakout

#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>

#include "breakout/http_server.hpp"
#include "test_dir.hpp"
#include "ws_client.hpp"

using namespace breakout;

namespace {

constexpr const char* kToken = "test-token";

class ApiTest : public ::testing::Test {
protected:
    void SetUp() override { start(1024); }

    void start(std::size_t queue_limit) {
        server.reset();
        service.reset();
        ServiceOptions so;
        so.data_dir = dir.path();
        so.sync_writes = false;
        service = std::make_unique<Service>(so);
        ServerOptions o;
        o.port = 0;
        o.token = kToken;
        o.threads = 4;
        o.subscriber_queue_limit = queue_limit;
        server = std::make_unique<HttpServer>(*service, o);
        server->start();
        client = std::make_unique<httplib::Client>("127.0.0.1", server->port());
        client->set_bearer_token_auth(kToken);
    }

    void TearDown() override {
        client.reset();
        server.reset();
        service.reset();
    }

    std::string create(const json& body = json::object()) {
        auto res = client->Post("/v1/sessions", body.dump(), "application/json");
        EXPECT_EQ(res->status, 201);
        return json::parse(res->body).at("session_id");
    }

    int join(const std::string& sid, const std::string& pid) {
        return client->Post("/v1/sessions/" + sid + "/participants", json{{"participant_id", pid}}.dump(),
                            "application/json")
            ->status;
    }

    httplib::Result samples(const std::string& sid, const json& list) {
        return client->Post("/v1/sessions/" + sid + "/samples", json{{"samples", list}}.dump(), "application/json");
    }

    wsclient::Client::Options ws_options(const std::string& sid) {
        wsclient::Client::Options o;
        o.port = server->port();
        o.target = "/v1/sessions/" + sid + "/stream";
        o.bearer = kToken;
        return o;
    }

    TempDir dir;
    std::unique_ptr<Service> service;
    std::unique_ptr<HttpServer> server;
    std::unique_ptr<httplib::Client> client;
};

}  // namespace

TEST_F(ApiTest, HealthNeedsNoToken) {
    httplib::Client anon("127.0.0.1", server->port());
    auto res = anon.Get("/v1/healthz");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
}

TEST_F(ApiTest, EverythingElseNeedsTheToken) {
    const auto sid = create();
    httplib::Client anon("127.0.0.1", server->port());
    EXPECT_EQ(anon.Post("/v1/sessions", "{}", "application/json")->status, 401);
    EXPECT_EQ(anon.Get("/v1/sessions/" + sid + "/stats")->status, 401);
    EXPECT_EQ(anon.Get("/v1/sessions/" + sid + "/mediator")->status, 401);
    EXPECT_EQ(anon.Get("/v1/sessions/" + sid + "/segments?from=0&to=1")->status, 401);
    EXPECT_EQ(anon.Post("/v1/sessions/" + sid + "/samples", "{}", "application/json")->status, 401);
    EXPECT_EQ(anon.Delete("/v1/sessions/" + sid)->status, 401);
    httplib::Client wrong("127.0.0.1", server->port());
    wrong.set_bearer_token_auth("nope");
    EXPECT_EQ(wrong.Get("/v1/sessions/" + sid + "/stats")->status, 401);
}

TEST_F(ApiTest, CreateSession) {
    auto res = client->Post("/v1/sessions", "", "application/json");
    EXPECT_EQ(res->status, 201);
    res = client->Post("/v1/sessions", R"({"volume_threshold":1.5})", "application/json");
    EXPECT_EQ(res->status, 422);
    EXPECT_EQ(json::parse(res->body).at("violations"), json::array({"volume_threshold out of (0,1)"}));
    res = client->Post("/v1/sessions", "{nope", "application/json");
    EXPECT_EQ(res->status, 422);
    EXPECT_EQ(client->Post("/v1/sessions", R"({"session_id":"room-1"})", "application/json")->status, 201);
    EXPECT_EQ(client->Post("/v1/sessions", R"({"session_id":"room-1"})", "application/json")->status, 409);
}

TEST_F(ApiTest, JoinLeave) {
    const auto sid = create();
    EXPECT_EQ(join(sid, "alice"), 204);
    EXPECT_EQ(join(sid, "alice"), 409);
    EXPECT_EQ(client->Delete("/v1/sessions/" + sid + "/participants/alice")->status, 204);
    EXPECT_EQ(client->Delete("/v1/sessions/" + sid + "/participants/alice")->status, 409);
    EXPECT_EQ(client->Delete("/v1/sessions/" + sid + "/participants/bob")->status, 409);
    EXPECT_EQ(join("missing", "alice"), 404);

    std::size_t presence = 0;
    service->store().replay(sid, [&](const SessionEvent& e) {
        if (std::holds_alternative<ParticipantEvent>(e.payload)) ++presence;
    });
    EXPECT_EQ(presence, 2u);

    for (int i = 0; i < 16; ++i) EXPECT_EQ(join(sid, "p" + std::to_string(i)), 204);
    EXPECT_EQ(join(sid, "p16"), 422);
}

TEST_F(ApiTest, SampleIngestion) {
    const auto sid = create();
    join(sid, "a");
    const auto t0 = json::parse(client->Get("/v1/sessions/" + sid + "/stats")->body).at("tick").get<std::int64_t>();
    json batch = json::array();
    for (int i = 0; i < 40; ++i) batch.push_back({{"participant", "a"}, {"t", t0 + i * 50}, {"volume", 0.8}});
    auto res = samples(sid, batch);
    EXPECT_EQ(res->status, 200);
    EXPECT_EQ(json::parse(res->body), (json{{"accepted", 40}, {"dropped", 0}}));

    json mixed = json::array({{{"participant", "a"}, {"t", t0 + 2000}, {"volume", 1.7}},
                              {{"participant", "a"}, {"t", t0 + 2050}, {"volume", 0.8}},
                              {{"participant", "ghost"}, {"t", t0 + 2050}, {"volume", 0.8}}});
    res = samples(sid, mixed);
    EXPECT_EQ(json::parse(res->body), (json{{"accepted", 1}, {"dropped", 2}}));

    EXPECT_EQ(samples(sid, json::array({{{"participant", "a"}, {"volume", "loud"}}}))->status, 422);
    EXPECT_EQ(client->Post("/v1/sessions/" + sid + "/samples", "[]", "application/json")->status, 422);
    json big = json::array();
    for (int i = 0; i < 1001; ++i) big.push_back({{"participant", "a"}, {"t", t0 + 5000}, {"volume", 0.1}});
    EXPECT_EQ(samples(sid, big)->status, 422);
    EXPECT_EQ(samples("missing", batch)->status, 404);
}

TEST_F(ApiTest, StatsBeforeFirstTickAreZeroed) {
    const auto created = json::parse(client->Post("/v1/sessions", "{}", "application/json")->body);
    const auto sid = created.at("session_id").get<std::string>();
    auto res = client->Get("/v1/sessions/" + sid + "/stats");
    ASSERT_EQ(res->status, 200);
    const auto st = json::parse(res->body);
    EXPECT_EQ(st.at("tick"), created.at("created_at"));
    EXPECT_EQ(st.at("overlap_pct"), 0.0);
    EXPECT_EQ(client->Get("/v1/sessions/" + sid + "/mediator")->status, 200);
    EXPECT_EQ(client->Get("/v1/sessions/missing/stats")->status, 404);
}

TEST_F(ApiTest, SegmentsEndpoint) {
    const auto sid = create();
    join(sid, "a");
    const auto t0 = json::parse(client->Get("/v1/sessions/" + sid + "/stats")->body).at("tick").get<std::int64_t>();
    json batch = json::array();
    for (int i = 0; i <= 20; ++i) batch.push_back({{"participant", "a"}, {"t", t0 + i * 50}, {"volume", 0.8}});
    batch.push_back({{"participant", "a"}, {"t", t0 + 2000}, {"volume", 0.0}});
    samples(sid, batch);
    const auto q = "/v1/sessions/" + sid + "/segments?from=" + std::to_string(t0 + 500) + "&to=" + std::to_string(t0 + 9000);
    auto res = client->Get(q);
    ASSERT_EQ(res->status, 200);
    const auto segs = json::parse(res->body);
    ASSERT_EQ(segs.size(), 1u);
    EXPECT_EQ(segs[0].at("end").get<std::int64_t>() - segs[0].at("start").get<std::int64_t>(), 1000);
    EXPECT_EQ(client->Get("/v1/sessions/" + sid + "/segments?from=10&to=10")->status, 422);
    EXPECT_EQ(client->Get("/v1/sessions/" + sid + "/segments?from=x&to=10")->status, 422);
}

TEST_F(ApiTest, CloseSession) {
    const auto sid = create();
    EXPECT_EQ(client->Delete("/v1/sessions/" + sid)->status, 204);
    EXPECT_EQ(join(sid, "a"), 409);
    EXPECT_EQ(client->Get("/v1/sessions/" + sid + "/stats")->status, 200);
}

TEST_F(ApiTest, StreamSendsSnapshotThenTicks) {
    const auto sid = create();
    wsclient::Client ws(ws_options(sid));
    EXPECT_EQ(ws.negotiated_protocol(), "breakout.v1");
    const auto first = json::parse(*ws.next());
    const auto second = json::parse(*ws.next());
    EXPECT_EQ(first.at("type"), "stats");
    EXPECT_EQ(second.at("type"), "frame");
    EXPECT_EQ(first.at("session"), sid);

    join(sid, "a");
    service->tick_session(sid);
    const auto presence = json::parse(*ws.next());
    EXPECT_EQ(presence.at("type"), "participant_event");
    EXPECT_EQ(presence.at("payload").at("kind"), "JOIN");
    const auto stats = json::parse(*ws.next());
    const auto frame = json::parse(*ws.next());
    EXPECT_EQ(stats.at("type"), "stats");
    EXPECT_EQ(frame.at("type"), "frame");
    EXPECT_LT(first.at("seq").get<std::uint64_t>(), presence.at("seq").get<std::uint64_t>());
    EXPECT_LT(presence.at("seq").get<std::uint64_t>(), stats.at("seq").get<std::uint64_t>());
    EXPECT_LT(stats.at("seq").get<std::uint64_t>(), frame.at("seq").get<std::uint64_t>());
    EXPECT_EQ(stats.at("payload").dump(), client->Get("/v1/sessions/" + sid + "/stats")->body);
    EXPECT_EQ(frame.at("payload").dump(), client->Get("/v1/sessions/" + sid + "/mediator")->body);
}

TEST_F(ApiTest, StreamAcceptsTokenInQuery) {
    const auto sid = create();
    auto o = ws_options(sid);
    o.bearer.clear();
    o.target += std::string("?token=") + kToken;
    wsclient::Client ws(o);
    EXPECT_TRUE(ws.next());
}

TEST_F(ApiTest, StreamRejectsBadTokenAndUnknownSession) {
    const auto sid = create();
    auto o = ws_options(sid);
    o.bearer = "wrong";
    wsclient::Client bad(o);
    EXPECT_TRUE(bad.wait_closed(std::chrono::seconds(5)));
    EXPECT_EQ(bad.close_code(), 1008);
    EXPECT_EQ(bad.received(), 0u);

    wsclient::Client missing(ws_options("nope"));
    EXPECT_TRUE(missing.wait_closed(std::chrono::seconds(5)));
    EXPECT_EQ(missing.close_code(), 4404);
    EXPECT_EQ(missing.close_reason(), "session not found");
}

TEST_F(ApiTest, SubscribersSeeIdenticalSequences) {
    const auto sid = create();
    wsclient::Client a(ws_options(sid));
    wsclient::Client b(ws_options(sid));
    // Both subscribed once each has its snapshot.
    ASSERT_TRUE(a.next());
    ASSERT_TRUE(a.next());
    ASSERT_TRUE(b.next());
    ASSERT_TRUE(b.next());
    join(sid, "x");
    for (int i = 0; i < 50; ++i) service->tick_session(sid);
    std::vector<std::string> seq_a, seq_b;
    for (int i = 0; i < 101; ++i) {
        seq_a.push_back(*a.next());
        seq_b.push_back(*b.next());
    }
    EXPECT_EQ(seq_a, seq_b);
}

TEST_F(ApiTest, SlowSubscriberIsDisconnectedOthersUnaffected) {
    start(64);
    const auto sid = create();
    for (int i = 0; i < 16; ++i) join(sid, "participant-with-a-long-name-" + std::to_string(i));

    auto slow_opts = ws_options(sid);
    slow_opts.start_reading = false;
    slow_opts.receive_buffer = 4096;
    wsclient::Client slow(slow_opts);
    wsclient::Client fast(ws_options(sid));
    ASSERT_TRUE(fast.next());

    std::atomic<bool> done{false};
    std::size_t fast_count = 1;
    std::thread reader([&] {
        while (!done || fast_count < 2 + 2 * 3000) {
            if (!fast.next(std::chrono::seconds(5))) break;
            ++fast_count;
        }
    });
    for (int i = 0; i < 3000; ++i) {
        service->tick_session(sid);
        std::this_thread::sleep_for(std::chrono::microseconds(300));
    }
    done = true;
    reader.join();
    EXPECT_EQ(fast_count, 2u + 2u * 3000u);
    EXPECT_FALSE(fast.closed());

    // The slow one was cut off: it drains what the kernel buffered, then sees the end.
    slow.start();
    EXPECT_TRUE(slow.wait_closed(std::chrono::seconds(20)));
    EXPECT_LT(slow.received(), 2u + 2u * 3000u);
}

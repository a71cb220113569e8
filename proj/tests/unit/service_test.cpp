#include <gtest/gtest.h>

#include <chrono>
#include <set>
#include <thread>

#include "gemini/service.hpp"
#include "support.hpp"

using namespace gemini;
using namespace std::chrono_literals;
using gemini::test::fixture_path;
using gemini::test::rest_frame;
using gemini::test::slurp;

namespace {

InteractionScheme skyrim() { return load_scheme_text(slurp(fixture_path("skyrim.scheme.json"))); }

SkeletonFrame stepping(std::int64_t t) {
    auto f = rest_frame(t);
    f[JointId::foot_right].z = 1.70;
    return f;
}

class ServiceTest : public ::testing::Test {
protected:
    void SetUp() override {
        ServiceConfig cfg;
        cfg.fixtures_dir = GEMINI_FIXTURES_DIR;
        service = std::make_unique<Service>(host, cfg);
        service->start();
        client = std::make_unique<httplib::Client>("127.0.0.1", service->http_port());
        client->set_read_timeout(5, 0);
    }
    void TearDown() override { service->stop(); }

    nlohmann::json post(const std::string& path, const std::string& body = "{}") {
        auto res = client->Post(path, body, "application/json");
        EXPECT_TRUE(res);
        last_status = res ? res->status : -1;
        return res ? nlohmann::json::parse(res->body) : nlohmann::json();
    }

    std::int64_t next_t = 0;
    void frames(int n, SkeletonFrame (*make)(std::int64_t)) {
        for (int i = 0; i < n; ++i) {
            next_t += 33;
            host.exclusive([&](Session& s) { s.on_frame(make(next_t)); });
        }
    }

    EngineHost host{skyrim()};
    std::unique_ptr<Service> service;
    std::unique_ptr<httplib::Client> client;
    int last_status = 0;
};

/// Live-stream client that reads messages on the calling thread.
class LiveClient {
public:
    explicit LiveClient(int port) : socket_(net::connect_loopback(static_cast<std::uint16_t>(port))), reader_(socket_) {
        net::send_all(socket_, handshake_line("livestate"));
    }
    std::optional<nlohmann::json> next(std::chrono::milliseconds timeout) {
        std::string line;
        if (reader_.next(line, timeout) != net::LineReader::Status::Line) return std::nullopt;
        return nlohmann::json::parse(line);
    }

private:
    net::Socket socket_;
    net::LineReader reader_;
};

}  // namespace

TEST_F(ServiceTest, GetSchemeIsCanonical) {
    auto res = client->Get("/scheme");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    EXPECT_EQ(res->body, dump_scheme(skyrim()));
}

TEST_F(ServiceTest, PutThenGetRoundTripsByteForByte) {
    auto scheme = skyrim();
    scheme.name = "renamed";
    const std::string doc = dump_scheme(scheme);
    auto put = client->Put("/scheme", doc, "application/json");
    ASSERT_TRUE(put);
    EXPECT_EQ(put->status, 200);
    auto get = client->Get("/scheme");
    ASSERT_TRUE(get);
    EXPECT_EQ(get->body, doc);
}

TEST_F(ServiceTest, InvalidSchemeIs400WithPaths) {
    auto doc = nlohmann::json::parse(slurp(fixture_path("skyrim.scheme.json")));
    doc["mappings"][0]["trigger"]["pose"] = "flyy";
    doc["mappings"][3].erase("on_deactivate");
    auto res = client->Put("/scheme", doc.dump(), "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 400);
    const auto body = nlohmann::json::parse(res->body);
    ASSERT_EQ(body["errors"].size(), 2u);
    EXPECT_EQ(body["errors"][0]["code"], "UnknownReference");
    EXPECT_EQ(body["errors"][0]["path"], "mappings[0].trigger.pose");
    EXPECT_EQ(body["errors"][1]["code"], "UnbalancedHold");
    EXPECT_EQ(body["errors"][1]["path"], "mappings[3].on_activate");
    // The running scheme is untouched.
    EXPECT_EQ(client->Get("/scheme")->body, dump_scheme(skyrim()));

    auto bad = client->Put("/scheme", "{", "application/json");
    ASSERT_TRUE(bad);
    EXPECT_EQ(bad->status, 400);
    EXPECT_EQ(nlohmann::json::parse(bad->body)["errors"][0]["code"], "ParseError");
}

TEST_F(ServiceTest, ValidateEndpoint) {
    auto ok = post("/scheme/validate", slurp(fixture_path("skyrim.scheme.json")));
    EXPECT_EQ(last_status, 200);
    EXPECT_EQ(ok["ok"], true);
    auto doc = nlohmann::json::parse(slurp(fixture_path("skyrim.scheme.json")));
    doc["format_version"] = 7;
    auto bad = post("/scheme/validate", doc.dump());
    EXPECT_EQ(last_status, 400);
    EXPECT_EQ(bad["errors"][0]["code"], "UnsupportedVersion");
}

TEST_F(ServiceTest, PoseLookupAndDelete) {
    auto res = client->Get("/poses/lean_left");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    EXPECT_EQ(nlohmann::json::parse(res->body)["id"], "lean_left");
    res = client->Get("/poses/flyy");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 404);
    EXPECT_EQ(nlohmann::json::parse(res->body)["errors"][0]["code"], "UnknownPose");

    // A pose still referenced by a mapping cannot be removed.
    res = client->Delete("/poses/lean_left");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 400);
    EXPECT_EQ(nlohmann::json::parse(res->body)["errors"][0]["code"], "UnknownReference");
    res = client->Delete("/poses/raise_right_arm");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    EXPECT_EQ(client->Get("/poses/raise_right_arm")->status, 404);
    EXPECT_EQ(client->Delete("/poses/raise_right_arm")->status, 404);
}

TEST_F(ServiceTest, SessionControlAndIllegalTransitions) {
    EXPECT_EQ(post("/session/stop")["mode"], "paused");
    post("/recording/start", R"({"pose_id":"wave"})");
    EXPECT_EQ(last_status, 409);
    EXPECT_EQ(post("/session/start")["mode"], "running");
    post("/recording/start", R"({})");
    EXPECT_EQ(last_status, 400);
    EXPECT_EQ(post("/recording/start", R"({"pose_id":"wave"})")["mode"], "recording");
    post("/session/stop");
    EXPECT_EQ(last_status, 409);
    EXPECT_EQ(post("/recording/cancel")["mode"], "running");
    post("/recording/finish");
    EXPECT_EQ(last_status, 409);
}

TEST_F(ServiceTest, RecordingOverHttpAddsPose) {
    post("/recording/start", R"({"pose_id":"raise_left"})");
    ASSERT_EQ(last_status, 200);
    MotionScript script;
    script.noise_sigma_m = 0.01;
    script.duration_ms = 4000;
    script.shift(JointId::hand_left, Axis::Y, 1500, 2000, 1.0);
    for (auto f : generate(script, 4).frames) {
        f.timestamp_ms += 100;
        host.exclusive([&](Session& s) { s.on_frame(f); });
    }
    const auto state = nlohmann::json::parse(client->Get("/state")->body);
    EXPECT_EQ(state["mode"], "recording");
    EXPECT_EQ(state["recording"]["pose_id"], "raise_left");
    EXPECT_EQ(state["recording"]["frames"], 120);
    const auto done = post("/recording/finish");
    ASSERT_EQ(last_status, 200);
    EXPECT_EQ(done["pose"]["id"], "raise_left");
    EXPECT_FALSE(done["summary"].empty());
    EXPECT_EQ(client->Get("/poses/raise_left")->status, 200);
}

TEST_F(ServiceTest, RecordingTooShortReported) {
    post("/recording/start", R"({"pose_id":"blink"})");
    frames(30, rest_frame);
    const auto body = post("/recording/finish");
    EXPECT_EQ(last_status, 400);
    EXPECT_EQ(body["errors"][0]["code"], "RecordingTooShort");
    EXPECT_EQ(nlohmann::json::parse(client->Get("/state")->body)["mode"], "running");
}

TEST_F(ServiceTest, StateAndFixtures) {
    frames(3, stepping);
    const auto state = nlohmann::json::parse(client->Get("/state")->body);
    EXPECT_EQ(state["mode"], "running");
    EXPECT_EQ(state["t"], 99);
    EXPECT_EQ(state["latest_frame"]["t"], 99);
    EXPECT_EQ(state["poses"].size(), 8u);
    EXPECT_EQ(state["poses"][0]["id"], "step_forward");
    EXPECT_EQ(state["poses"][0]["active"], true);
    EXPECT_EQ(state["poses"][0]["satisfy_run"], 3);
    EXPECT_EQ(state["metrics"]["frames"], 3);
    EXPECT_EQ(state["recent_outputs"][0]["key"], "w");
    const auto list = nlohmann::json::parse(client->Get("/fixtures")->body)["fixtures"];
    EXPECT_NE(std::find(list.begin(), list.end(), "skyrim.scheme.json"), list.end());
}

TEST_F(ServiceTest, LiveSubscriberSeesPoseEventQuickly) {
    LiveClient live(service->live_port());
    auto first = live.next(1s);
    ASSERT_TRUE(first);
    EXPECT_EQ((*first)["mode"], "running");
    frames(1, stepping);
    const auto sent = std::chrono::steady_clock::now();
    frames(1, stepping);
    std::optional<nlohmann::json> hit;
    while (!hit && std::chrono::steady_clock::now() - sent < 1s) {
        auto msg = live.next(250ms);
        if (msg && !(*msg)["events"]["pose"].empty()) hit = msg;
    }
    const auto latency = std::chrono::steady_clock::now() - sent;
    ASSERT_TRUE(hit);
    EXPECT_LE(latency, 250ms);
    EXPECT_EQ((*hit)["events"]["pose"][0]["pose"], "step_forward");
    EXPECT_EQ((*hit)["events"]["pose"][0]["kind"], "activated");
    EXPECT_EQ((*hit)["events"]["outputs"][0]["key"], "w");
}

TEST_F(ServiceTest, LiveHeartbeatWhenIdleAtMostOncePerSecond) {
    LiveClient live(service->live_port());
    ASSERT_TRUE(live.next(1s));
    std::vector<std::chrono::steady_clock::time_point> beats;
    const auto start = std::chrono::steady_clock::now();
    while (std::chrono::steady_clock::now() - start < 2500ms) {
        if (auto msg = live.next(100ms)) {
            EXPECT_EQ((*msg)["heartbeat"], true);
            beats.push_back(std::chrono::steady_clock::now());
        }
    }
    ASSERT_GE(beats.size(), 2u);
    EXPECT_LE(beats.size(), 3u);
    for (std::size_t i = 1; i < beats.size(); ++i) EXPECT_GE(beats[i] - beats[i - 1], 900ms);
}

TEST_F(ServiceTest, LivePushRateIsCapped) {
    LiveClient live(service->live_port());
    ASSERT_TRUE(live.next(1s));
    std::atomic<bool> done{false};
    std::thread pump([&] {
        const auto start = std::chrono::steady_clock::now();
        while (std::chrono::steady_clock::now() - start < 1s) {
            frames(1, rest_frame);
            std::this_thread::sleep_for(2ms);
        }
        done = true;
    });
    int messages = 0;
    const auto start = std::chrono::steady_clock::now();
    while (std::chrono::steady_clock::now() - start < 1s)
        if (live.next(50ms)) ++messages;
    pump.join();
    EXPECT_GE(messages, 5);
    EXPECT_LE(messages, 22);  // 20 Hz plus slack for the window edges
}

TEST_F(ServiceTest, SubscribersSeeIdenticalEvents) {
    LiveClient a(service->live_port()), b(service->live_port());
    ASSERT_TRUE(a.next(1s));
    ASSERT_TRUE(b.next(1s));
    std::this_thread::sleep_for(60ms);
    for (int k = 0; k < 4; ++k) {
        frames(5, stepping);
        host.exclusive([&](Session& s) { s.on_token({next_t, "buy"}); });
        frames(5, rest_frame);
        std::this_thread::sleep_for(20ms);
    }
    auto collect = [](LiveClient& c) {
        nlohmann::json events = nlohmann::json::array();
        while (auto msg = c.next(400ms)) {
            for (const auto& kind : {"pose", "commands", "outputs"})
                for (const auto& e : (*msg)["events"][kind]) events.push_back(e);
        }
        return events;
    };
    const auto ea = collect(a);
    const auto eb = collect(b);
    EXPECT_EQ(ea.size(), 4u * 9);  // 2 pose events, 1 command, 6 outputs per cycle
    // Same event multiset; grouping into messages may differ.
    std::multiset<std::string> sa, sb;
    for (const auto& e : ea) sa.insert(e.dump());
    for (const auto& e : eb) sb.insert(e.dump());
    EXPECT_EQ(sa, sb);
}

TEST_F(ServiceTest, SchemeSwapLandsBetweenSteps) {
    auto small = skyrim();
    small.poses.resize(2);
    small.mappings.resize(2);
    const std::string small_doc = dump_scheme(small);
    const std::string full_doc = dump_scheme(skyrim());
    LiveClient live(service->live_port());
    ASSERT_TRUE(live.next(1s));
    std::atomic<bool> stop{false};
    std::thread pump([&] {
        while (!stop) {
            frames(1, stepping);
            std::this_thread::sleep_for(1ms);
        }
    });
    std::atomic<bool> putting{true};
    std::thread swapper([&] {
        httplib::Client c("127.0.0.1", service->http_port());
        for (int i = 0; i < 20; ++i) {
            auto r = c.Put("/scheme", i % 2 ? full_doc : small_doc, "application/json");
            EXPECT_TRUE(r && r->status == 200);
        }
        putting = false;
    });
    int checked = 0;
    while (putting || checked < 5) {
        auto msg = live.next(200ms);
        if (!msg) continue;
        ++checked;
        // Each snapshot reflects exactly one of the two schemes.
        const auto n = (*msg)["poses"].size();
        ASSERT_TRUE(n == 2 || n == 8) << n;
        for (const auto& p : (*msg)["poses"]) ASSERT_TRUE(p.contains("active"));
    }
    stop = true;
    pump.join();
    swapper.join();
    EXPECT_GT(checked, 0);
    const auto state = nlohmann::json::parse(client->Get("/state")->body);
    EXPECT_EQ(state["poses"].size(), 8u);
}

TEST_F(ServiceTest, BadHandshakeIsRejected) {
    net::Socket s = net::connect_loopback(static_cast<std::uint16_t>(service->live_port()));
    net::send_all(s, "{\"stream\":\"skeleton\",\"format_version\":1}\n");
    net::LineReader reader(s);
    std::string line;
    ASSERT_EQ(reader.next(line, 1s), net::LineReader::Status::Line);
    EXPECT_TRUE(nlohmann::json::parse(line).contains("error"));
    EXPECT_EQ(reader.next(line, 1s), net::LineReader::Status::Closed);
}

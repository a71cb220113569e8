/**
 * @file service.hpp
 * @brief Local control surface: HTTP request/response API for scheme and
 * session control, plus a push stream of live engine state.
 *
 * Every API mutation runs under the engine lock, so it lands between two
 * engine steps and never inside one. The live stream is a plain TCP
 * connection: the client sends {"stream":"livestate","format_version":1}
 * and then receives newline-delimited JSON snapshots.
 */
#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <list>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "gemini/engine.hpp"
#include "gemini/error.hpp"
#include "gemini/net.hpp"
#include "gemini/scheme.hpp"

namespace gemini {

inline nlohmann::json diagnostic_to_json(const Diagnostic& d) {
    nlohmann::json j = {{"code", to_string(d.code)}, {"path", d.path}, {"message", d.message}};
    if (d.record) j["record"] = *d.record;
    return j;
}

inline nlohmann::json frame_to_json(const SkeletonFrame& f) { return nlohmann::json::parse(encode_frame(f)); }

inline nlohmann::json pose_event_to_json(const PoseEvent& e) {
    return {{"t", e.timestamp_ms}, {"pose", e.pose_id}, {"kind", to_string(e.kind)}};
}

inline nlohmann::json command_to_json(const CommandEvent& c) {
    return {{"t", c.timestamp_ms}, {"phrase", c.phrase_id}};
}

inline nlohmann::json output_to_json(const OutputEvent& e) { return nlohmann::json::parse(encode_event(e)); }

/// Fan-out of engine state to live subscribers. Fed from the session
/// observer, i.e. under the engine lock, so every snapshot reflects one
/// engine step.
class LiveHub {
public:
    static constexpr std::size_t kRecentOutputs = 256;
    static constexpr std::size_t kRecentCommands = 32;
    static constexpr std::size_t kLogCapacity = 4096;

    struct Entry {
        std::uint64_t seq;
        nlohmann::json pose_events = nlohmann::json::array();
        nlohmann::json commands = nlohmann::json::array();
        nlohmann::json outputs = nlohmann::json::array();
    };

    void publish(const StepReport& report, const Session& session) {
        {
            std::lock_guard lock(mutex_);
            ++version_;
            state_ = state_of(session);
            for (const auto& c : report.commands) push_ring(recent_commands_, command_to_json(c), kRecentCommands);
            for (const auto& o : report.outputs) push_ring(recent_outputs_, output_to_json(o), kRecentOutputs);
            if (!report.pose_events.empty() || !report.commands.empty() || !report.outputs.empty()) {
                Entry e{++last_seq_};
                for (const auto& p : report.pose_events) e.pose_events.push_back(pose_event_to_json(p));
                for (const auto& c : report.commands) e.commands.push_back(command_to_json(c));
                for (const auto& o : report.outputs) e.outputs.push_back(output_to_json(o));
                log_.push_back(std::move(e));
                if (log_.size() > kLogCapacity) log_.pop_front();
            }
        }
        changed_.notify_all();
    }

    /// Full snapshot with the recent-event rings.
    nlohmann::json snapshot() const {
        std::lock_guard lock(mutex_);
        nlohmann::json j = state_.is_null() ? nlohmann::json::object() : state_;
        j["recent_commands"] = nlohmann::json(std::vector<nlohmann::json>(recent_commands_.begin(), recent_commands_.end()));
        j["recent_outputs"] = nlohmann::json(std::vector<nlohmann::json>(recent_outputs_.begin(), recent_outputs_.end()));
        return j;
    }

    /// Blocks until there is something new past `cursor`/`version` or the
    /// timeout passes. Returns the delta message, or null on timeout.
    nlohmann::json wait_delta(std::uint64_t& cursor, std::uint64_t& version, std::chrono::milliseconds timeout,
                              bool heartbeat, const std::atomic<bool>& stop) {
        std::unique_lock lock(mutex_);
        changed_.wait_for(lock, timeout, [&] { return stop.load() || version_ != version; });
        if (version_ == version && !heartbeat) return nullptr;
        nlohmann::json msg = state_.is_null() ? nlohmann::json::object() : state_;
        msg["heartbeat"] = version_ == version;
        nlohmann::json pose_events = nlohmann::json::array(), commands = nlohmann::json::array(),
                       outputs = nlohmann::json::array();
        if (!log_.empty() && cursor + 1 < log_.front().seq) msg["resync"] = true;
        for (const auto& e : log_) {
            if (e.seq <= cursor) continue;
            for (const auto& v : e.pose_events) pose_events.push_back(v);
            for (const auto& v : e.commands) commands.push_back(v);
            for (const auto& v : e.outputs) outputs.push_back(v);
        }
        cursor = last_seq_;
        version = version_;
        msg["events"] = {{"pose", pose_events}, {"commands", commands}, {"outputs", outputs}};
        msg["seq"] = cursor;
        return msg;
    }

    std::uint64_t last_seq() const {
        std::lock_guard lock(mutex_);
        return last_seq_;
    }

    void wake() { changed_.notify_all(); }

    static nlohmann::json state_of(const Session& s) {
        nlohmann::json j;
        j["t"] = s.clock_ms();
        j["mode"] = to_string(s.mode());
        j["latest_frame"] = s.latest_frame() ? frame_to_json(*s.latest_frame()) : nlohmann::json(nullptr);
        j["poses"] = nlohmann::json::array();
        for (const auto& p : s.scheme().poses) {
            const auto& t = s.detector().at(p.id);
            j["poses"].push_back({{"id", p.id}, {"satisfied_now", t.satisfied}, {"active", t.active}, {"satisfy_run", t.satisfy_run}});
        }
        if (s.mode() == SessionMode::Recording)
            j["recording"] = {{"pose_id", s.recording_pose()}, {"frames", s.recording_size()}, {"started_ms", s.recording_started_ms()}};
        const auto& m = s.metrics();
        j["metrics"] = {{"frames", m.frames},
                        {"tokens", m.tokens},
                        {"device_events", m.device_events},
                        {"dropped_frames", m.dropped_frames},
                        {"unmapped_triggers", s.scheduler().unmapped_triggers},
                        {"latency_p50_ms", m.latency_percentile_ms(50)},
                        {"latency_p99_ms", m.latency_percentile_ms(99)}};
        return j;
    }

private:
    static void push_ring(std::deque<nlohmann::json>& ring, nlohmann::json v, std::size_t cap) {
        ring.push_back(std::move(v));
        if (ring.size() > cap) ring.pop_front();
    }

    mutable std::mutex mutex_;
    std::condition_variable changed_;
    nlohmann::json state_;
    std::deque<nlohmann::json> recent_commands_, recent_outputs_;
    std::deque<Entry> log_;
    std::uint64_t last_seq_ = 0;
    std::uint64_t version_ = 0;
};

/// Owns a session and serializes every access to it.
class EngineHost {
public:
    explicit EngineHost(InteractionScheme scheme, EventSink* sink = nullptr) : session_(std::move(scheme), sink) {
        session_.set_observer([this](const StepReport& r) { hub_.publish(r, session_); });
        hub_.publish(StepReport{}, session_);
    }

    template <class Fn>
    decltype(auto) exclusive(Fn&& fn) {
        std::lock_guard lock(mutex_);
        return fn(session_);
    }

    /// Like exclusive(), then republishes the state even if `fn` throws, so
    /// mode changes reach subscribers.
    template <class Fn>
    decltype(auto) mutate(Fn&& fn) {
        std::lock_guard lock(mutex_);
        struct Republish {
            EngineHost& host;
            ~Republish() {
                StepReport r;
                r.timestamp_ms = host.session_.clock_ms();
                host.hub_.publish(r, host.session_);
            }
        } republish{*this};
        return fn(session_);
    }

    LiveHub& hub() noexcept { return hub_; }

private:
    std::mutex mutex_;
    Session session_;
    LiveHub hub_;
};

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int http_port = 0;  // 0 = ephemeral
    int live_port = 0;
    std::string fixtures_dir;
    std::chrono::milliseconds min_push_interval{50};
    std::chrono::milliseconds heartbeat_interval{1000};
};

class Service {
public:
    Service(EngineHost& host, ServiceConfig cfg) : host_(host), cfg_(std::move(cfg)) { routes(); }
    ~Service() { stop(); }
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    void start() {
        if (cfg_.http_port == 0) {
            http_port_ = server_.bind_to_any_port(cfg_.host);
            if (http_port_ < 0) throw Error(Errc::BindFailure, "cannot bind HTTP port");
        } else {
            if (!server_.bind_to_port(cfg_.host, cfg_.http_port))
                throw Error(Errc::BindFailure, "cannot bind HTTP port " + std::to_string(cfg_.http_port));
            http_port_ = cfg_.http_port;
        }
        live_listener_ = net::listen_loopback(static_cast<std::uint16_t>(cfg_.live_port));
        live_port_ = net::local_port(live_listener_);
        http_thread_ = std::thread([this] { server_.listen_after_bind(); });
        live_thread_ = std::thread([this] { accept_loop(); });
    }

    void stop() {
        if (stopping_.exchange(true)) return;
        server_.stop();
        host_.hub().wake();
        if (http_thread_.joinable()) http_thread_.join();
        if (live_thread_.joinable()) live_thread_.join();
        std::lock_guard lock(subs_mutex_);
        for (auto& s : subscribers_) {
            s->socket.shutdown();
            if (s->thread.joinable()) s->thread.join();
        }
        subscribers_.clear();
    }

    int http_port() const noexcept { return http_port_; }
    int live_port() const noexcept { return live_port_; }

    /// Blocks until stop() is called from elsewhere.
    void wait() {
        if (http_thread_.joinable()) http_thread_.join();
    }

private:
    struct Subscriber {
        net::Socket socket;
        std::thread thread;
        std::atomic<bool> done{false};
    };

    static int status_for(Errc code) {
        switch (code) {
        case Errc::IllegalTransition: return 409;
        case Errc::UnknownPose: return 404;
        default: return 400;
        }
    }

    static void reply_json(httplib::Response& res, int status, const nlohmann::json& body) {
        res.status = status;
        res.set_content(body.dump(2) + "\n", "application/json");
    }

    static void reply_errors(httplib::Response& res, int status, const std::vector<Diagnostic>& diags) {
        nlohmann::json errors = nlohmann::json::array();
        for (const auto& d : diags) errors.push_back(diagnostic_to_json(d));
        reply_json(res, status, {{"errors", errors}});
    }

    static void reply_error(httplib::Response& res, const Error& e) {
        reply_errors(res, status_for(e.code()), {e.diagnostic()});
    }

    template <class Fn>
    static void guarded(httplib::Response& res, Fn&& fn) {
        try {
            fn();
        } catch (const ValidationError& e) {
            reply_errors(res, 400, e.diagnostics());
        } catch (const Error& e) {
            reply_error(res, e);
        }
    }

    void routes() {
        server_.Get("/scheme", [this](const httplib::Request&, httplib::Response& res) {
            res.set_content(host_.exclusive([](Session& s) { return dump_scheme(s.scheme()); }), "application/json");
        });

        server_.Put("/scheme", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                InteractionScheme scheme = load_scheme(parse_scheme_text(req.body));
                std::string doc = dump_scheme(scheme);
                host_.exclusive([&](Session& s) { s.replace_scheme(std::move(scheme)); });
                res.set_content(doc, "application/json");
            });
        });

        server_.Post("/scheme/validate", [](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                load_scheme(parse_scheme_text(req.body));
                reply_json(res, 200, {{"ok", true}, {"errors", nlohmann::json::array()}});
            });
        });

        server_.Get(R"(/poses/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            const std::string id = req.matches[1];
            host_.exclusive([&](Session& s) {
                if (const auto* p = s.scheme().find_pose(id)) reply_json(res, 200, pose_to_json(*p));
                else reply_error(res, Error(Errc::UnknownPose, "no pose '" + id + "'", "poses"));
            });
        });

        server_.Delete(R"(/poses/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            const std::string id = req.matches[1];
            guarded(res, [&] {
                host_.exclusive([&](Session& s) {
                    if (!s.scheme().find_pose(id)) throw Error(Errc::UnknownPose, "no pose '" + id + "'", "poses");
                    nlohmann::json doc = scheme_to_json(s.scheme());
                    auto& poses = doc["poses"];
                    poses.erase(std::remove_if(poses.begin(), poses.end(), [&](const auto& p) { return p["id"] == id; }),
                                poses.end());
                    s.replace_scheme(load_scheme(doc));
                    res.set_content(dump_scheme(s.scheme()), "application/json");
                });
            });
        });

        server_.Get("/state", [this](const httplib::Request&, httplib::Response& res) {
            reply_json(res, 200, host_.hub().snapshot());
        });

        auto control = [this](const std::string& path, auto op) {
            server_.Post(path, [this, op](const httplib::Request& req, httplib::Response& res) {
                guarded(res, [&] {
                    nlohmann::json body = req.body.empty() ? nlohmann::json::object() : nlohmann::json::parse(req.body, nullptr, false);
                    if (body.is_discarded() || !body.is_object()) throw Error(Errc::ParseError, "body must be a JSON object");
                    nlohmann::json out = host_.mutate([&](Session& s) {
                        nlohmann::json r = op(s, body);
                        r["mode"] = to_string(s.mode());
                        return r;
                    });
                    reply_json(res, 200, out);
                });
            });
        };

        control("/session/start", [](Session& s, const nlohmann::json&) {
            s.resume();
            return nlohmann::json::object();
        });
        control("/session/stop", [](Session& s, const nlohmann::json&) {
            s.pause();
            return nlohmann::json::object();
        });
        control("/recording/start", [](Session& s, const nlohmann::json& body) {
            auto it = body.find("pose_id");
            if (it == body.end() || !it->is_string()) throw Error(Errc::ParseError, "missing string 'pose_id'", "pose_id");
            if (s.mode() != SessionMode::Running)
                throw Error(Errc::IllegalTransition, "recording can only start while running");
            s.start_recording(it->get<std::string>());
            return nlohmann::json::object();
        });
        control("/recording/finish", [](Session& s, const nlohmann::json&) {
            PoseDefinition pose = s.finish_recording();
            nlohmann::json summary = nlohmann::json::array();
            for (const auto& c : pose.constraints) summary.push_back(describe(c));
            return nlohmann::json{{"pose", pose_to_json(pose)}, {"summary", summary}};
        });
        control("/recording/cancel", [](Session& s, const nlohmann::json&) {
            s.cancel_recording();
            return nlohmann::json::object();
        });

        server_.Get("/fixtures", [this](const httplib::Request&, httplib::Response& res) {
            nlohmann::json list = nlohmann::json::array();
            std::error_code ec;
            if (!cfg_.fixtures_dir.empty()) {
                std::vector<std::string> names;
                for (const auto& entry : std::filesystem::directory_iterator(cfg_.fixtures_dir, ec))
                    if (entry.is_regular_file()) names.push_back(entry.path().filename().string());
                std::sort(names.begin(), names.end());
                list = names;
            }
            reply_json(res, 200, {{"fixtures", list}});
        });
    }

    void accept_loop() {
        using namespace std::chrono_literals;
        while (!stopping_) {
            net::Socket client = net::accept_for(live_listener_, 100ms);
            if (!client.valid()) continue;
            auto sub = std::make_unique<Subscriber>();
            sub->socket = std::move(client);
            Subscriber* raw = sub.get();
            sub->thread = std::thread([this, raw] { serve_subscriber(*raw); });
            std::lock_guard lock(subs_mutex_);
            // Reap finished subscribers.
            for (auto it = subscribers_.begin(); it != subscribers_.end();) {
                if ((*it)->done) {
                    (*it)->thread.join();
                    it = subscribers_.erase(it);
                } else {
                    ++it;
                }
            }
            subscribers_.push_back(std::move(sub));
        }
    }

    void serve_subscriber(Subscriber& sub) {
        using namespace std::chrono;
        net::LineReader reader(sub.socket);
        std::string line;
        if (reader.next(line, 2000ms) != net::LineReader::Status::Line) {
            sub.socket.shutdown();
            sub.done = true;
            return;
        }
        nlohmann::json hs = nlohmann::json::parse(line, nullptr, false);
        if (!hs.is_object() || hs.value("stream", "") != "livestate" || hs.value("format_version", 0) != kFormatVersion) {
            net::send_all(sub.socket, nlohmann::json{{"error", "expected livestate handshake"}}.dump() + "\n");
            sub.socket.shutdown();
            sub.done = true;
            return;
        }
        // Start from the current position; first message is a full snapshot.
        std::uint64_t cursor = host_.hub().last_seq();
        std::uint64_t version = 0;
        auto last_push = steady_clock::now() - cfg_.heartbeat_interval;
        while (!stopping_) {
            const auto since = steady_clock::now() - last_push;
            if (since < cfg_.min_push_interval) {
                std::this_thread::sleep_for(cfg_.min_push_interval - since);
                continue;
            }
            const bool heartbeat_due = since >= cfg_.heartbeat_interval;
            auto remaining = duration_cast<milliseconds>(cfg_.heartbeat_interval - since);
            if (remaining < 1ms) remaining = 1ms;
            nlohmann::json msg = host_.hub().wait_delta(cursor, version, heartbeat_due ? 0ms : remaining, heartbeat_due, stopping_);
            if (msg.is_null()) continue;
            if (!net::send_all(sub.socket, msg.dump() + "\n")) break;
            last_push = steady_clock::now();
        }
        sub.done = true;
    }

    EngineHost& host_;
    ServiceConfig cfg_;
    httplib::Server server_;
    int http_port_ = -1;
    int live_port_ = -1;
    net::Socket live_listener_;
    std::thread http_thread_, live_thread_;
    std::atomic<bool> stopping_{false};
    std::mutex subs_mutex_;
    std::list<std::unique_ptr<Subscriber>> subscribers_;
};

}  // namespace gemini

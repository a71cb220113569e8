// gemini: command-line front end for the engine.
//
//   gemini run      --scheme F --skeleton SRC [--transcript SRC] [--buttons SRC] --sink F [--virtual-time]
//   gemini infer    --recording F --pose-id ID [--config KEY=VALUE]... --out F
//   gemini validate --scheme F
//   gemini generate --script F --seed N --out F
//   gemini serve    [--port N] [--scheme F]
//
// SRC is a file path or tcp:PORT. Exit codes: 0 ok, 1 domain error, 2 usage.

#include <atomic>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "gemini/engine.hpp"
#include "gemini/service.hpp"

namespace fs = std::filesystem;
using namespace gemini;

namespace {

InteractionScheme empty_scheme(std::string name) {
    InteractionScheme s;
    s.name = std::move(name);
    return s;
}

constexpr int kExitOk = 0;
constexpr int kExitDomain = 1;
constexpr int kExitUsage = 2;

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted = true; }

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

bool g_json = false;

void report(const Diagnostic& d) {
    if (g_json) {
        std::cerr << diagnostic_to_json(d).dump() << '\n';
    } else {
        std::cerr << "error: " << to_string(d.code);
        if (!d.path.empty()) std::cerr << " at " << d.path;
        std::cerr << ": " << d.message << '\n';
    }
}

void report_usage(const std::string& message) {
    if (g_json) std::cerr << nlohmann::json{{"code", "Usage"}, {"path", ""}, {"message", message}}.dump() << '\n';
    else std::cerr << "usage error: " << message << '\n';
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot read '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::IoError, "cannot write '" + path + "'");
    out << content;
}

struct Source {
    std::string path;
    std::optional<std::uint16_t> port;
};

Source parse_source(const std::string& spec) {
    constexpr std::string_view prefix = "tcp:";
    if (spec.rfind(prefix, 0) != 0) return {spec, std::nullopt};
    const std::string digits = spec.substr(prefix.size());
    if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos || digits.size() > 5 ||
        std::stoi(digits) > 65535)
        throw UsageError("bad source '" + spec + "': expected a path or tcp:PORT");
    return {"", static_cast<std::uint16_t>(std::stoi(digits))};
}

void require_file(const Source& s) {
    if (!s.port && !fs::is_regular_file(s.path)) throw UsageError("no such file '" + s.path + "'");
}

InteractionScheme load_scheme_file(const std::string& path) { return load_scheme_text(read_file(path)); }

// run ------------------------------------------------------------------------

struct RunOptions {
    std::string scheme, skeleton, transcript, buttons, sink;
    bool virtual_time = false;
};

void print_metrics(const Session& s) {
    const auto& m = s.metrics();
    std::printf("frames: %llu\n", static_cast<unsigned long long>(m.frames));
    std::printf("tokens: %llu\n", static_cast<unsigned long long>(m.tokens));
    std::printf("device_events: %llu\n", static_cast<unsigned long long>(m.device_events));
    std::printf("latency_p50_ms: %.3f\n", m.latency_percentile_ms(50));
    std::printf("latency_p99_ms: %.3f\n", m.latency_percentile_ms(99));
    std::printf("dropped_frames: %llu\n", static_cast<unsigned long long>(m.dropped_frames));
    std::printf("unmapped_triggers: %llu\n", static_cast<unsigned long long>(s.scheduler().unmapped_triggers));
}

int cmd_run(const RunOptions& o) {
    const Source skel = parse_source(o.skeleton);
    const std::optional<Source> words = o.transcript.empty() ? std::nullopt : std::optional(parse_source(o.transcript));
    const std::optional<Source> buttons = o.buttons.empty() ? std::nullopt : std::optional(parse_source(o.buttons));
    if (!fs::is_regular_file(o.scheme)) throw UsageError("no such file '" + o.scheme + "'");
    require_file(skel);
    if (words) require_file(*words);
    if (buttons) require_file(*buttons);

    InteractionScheme scheme = load_scheme_file(o.scheme);
    LogSink sink(o.sink);
    Session session(std::move(scheme), &sink);

    // Files alone always run in virtual time. With a socket involved, file
    // sources are paced in realtime unless --virtual-time is given, in which
    // case they are pushed as fast as the queues take them.
    const bool any_socket = skel.port || (words && words->port) || (buttons && buttons->port);
    if (!any_socket) {
        SkeletonStream frames = load_skeleton_file(skel.path);
        auto tokens = words ? load_transcript_file(words->path) : std::vector<TranscriptToken>{};
        auto devices = buttons ? load_device_file(buttons->path) : std::vector<DeviceEvent>{};
        run_virtual(session, frames.frames, tokens, devices);
        sink.close();
        print_metrics(session);
        return kExitOk;
    }

    // Live: sockets feed queues; file sources are paced in realtime.
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::vector<LiveFeed> feeds;
    std::vector<std::thread> replays;
    std::unique_ptr<SocketSource<SkeletonFrame>> skel_sock;
    std::unique_ptr<SocketSource<TranscriptToken>> word_sock;
    std::unique_ptr<SocketSource<DeviceEvent>> button_sock;
    BoundedQueue<SkeletonFrame> skel_q;
    BoundedQueue<TranscriptToken> word_q;
    BoundedQueue<DeviceEvent> button_q;
    std::vector<SkeletonFrame> skel_records;
    std::vector<TranscriptToken> word_records;
    std::vector<DeviceEvent> button_records;

    if (skel.port) {
        skel_sock = listen_skeleton(*skel.port);
        std::fprintf(stderr, "skeleton listening on 127.0.0.1:%u\n", skel_sock->port());
        feeds.push_back(feed_from(skel_sock->queue()));
    } else {
        skel_records = load_skeleton_file(skel.path).frames;
        feeds.push_back(feed_from(skel_q));
    }
    if (words) {
        if (words->port) {
            word_sock = listen_transcript(*words->port);
            std::fprintf(stderr, "transcript listening on 127.0.0.1:%u\n", word_sock->port());
            feeds.push_back(feed_from(word_sock->queue()));
        } else {
            word_records = load_transcript_file(words->path);
            feeds.push_back(feed_from(word_q));
        }
    }
    if (buttons) {
        if (buttons->port) {
            button_sock = listen_buttons(*buttons->port);
            std::fprintf(stderr, "buttons listening on 127.0.0.1:%u\n", button_sock->port());
            feeds.push_back(feed_from(button_sock->queue()));
        } else {
            button_records = load_device_file(buttons->path);
            feeds.push_back(feed_from(button_q));
        }
    }
    const double speed = o.virtual_time ? 1e9 : 1.0;
    if (!skel.port) replays.push_back(start_replay(skel_records, speed, skel_q, g_interrupted));
    if (words && !words->port) replays.push_back(start_replay(word_records, speed, word_q, g_interrupted));
    if (buttons && !buttons->port) replays.push_back(start_replay(button_records, speed, button_q, g_interrupted));

    run_live(session, std::move(feeds), g_interrupted);
    for (auto& t : replays) t.join();
    if (skel_sock) {
        skel_sock->stop();
        session.metrics().dropped_frames += skel_sock->queue().dropped();
    } else {
        session.metrics().dropped_frames += skel_q.dropped();
    }
    if (word_sock) word_sock->stop();
    if (button_sock) button_sock->stop();
    sink.close();
    print_metrics(session);
    return kExitOk;
}

// infer ----------------------------------------------------------------------

InferenceConfig apply_overrides(InferenceConfig base, const std::vector<std::string>& overrides) {
    nlohmann::json doc = config_to_json(base);
    for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0) throw UsageError("--config expects KEY=VALUE, got '" + kv + "'");
        const std::string key = kv.substr(0, eq);
        if (!doc.contains(key)) throw UsageError("unknown inference setting '" + key + "'");
        nlohmann::json value = nlohmann::json::parse(kv.substr(eq + 1), nullptr, false);
        if (value.is_discarded()) throw UsageError("value for '" + key + "' is not valid JSON");
        doc[key] = value;
    }
    return config_from_json(doc, "config");
}

int cmd_infer(const std::string& recording, const std::string& pose_id, const std::vector<std::string>& overrides,
              const std::string& out) {
    if (!fs::is_regular_file(recording)) throw UsageError("no such file '" + recording + "'");
    if (pose_id.empty()) throw UsageError("--pose-id must be non-empty");

    nlohmann::json doc;
    if (fs::exists(out)) {
        doc = parse_scheme_text(read_file(out));
        load_scheme(doc);
    } else {
        doc = scheme_to_json(empty_scheme(fs::path(out).stem().stem().string()));
    }
    InteractionScheme scheme = load_scheme(doc);
    const InferenceConfig cfg = apply_overrides(scheme.inference, overrides);

    SkeletonStream stream = load_skeleton_file(recording);
    Recording rec = Recording::from_frames(std::move(stream.frames), stream.fps_nominal);
    PoseDefinition pose = infer(rec, cfg, pose_id);

    auto& poses = scheme.poses;
    auto existing = std::find_if(poses.begin(), poses.end(), [&](const PoseDefinition& p) { return p.id == pose_id; });
    if (existing != poses.end()) *existing = pose;
    else poses.push_back(pose);
    const std::string text = dump_scheme(load_scheme(scheme_to_json(scheme)));
    write_file(out, text);

    std::printf("pose %s: %zu constraint(s)\n", pose.id.c_str(), pose.constraints.size());
    for (const auto& c : pose.constraints) std::printf("  %s\n", describe(c).c_str());
    return kExitOk;
}

// validate / generate / serve -----------------------------------------------

int cmd_validate(const std::string& path) {
    if (!fs::is_regular_file(path)) throw UsageError("no such file '" + path + "'");
    std::vector<Diagnostic> diags;
    try {
        diags = validate_scheme(parse_scheme_text(read_file(path)));
    } catch (const ValidationError& e) {
        diags = e.diagnostics();
    }
    if (diags.empty()) {
        std::printf("ok\n");
        return kExitOk;
    }
    for (const auto& d : diags) report(d);
    return kExitDomain;
}

int cmd_generate(const std::string& script_path, std::uint64_t seed, const std::string& out) {
    if (!fs::is_regular_file(script_path)) throw UsageError("no such file '" + script_path + "'");
    nlohmann::json j = nlohmann::json::parse(read_file(script_path), nullptr, false);
    if (j.is_discarded()) throw Error(Errc::ParseError, "script is not valid JSON");
    SkeletonStream stream = generate(script_from_json(j), seed);
    std::ostringstream ss;
    write_stream(ss, stream);
    write_file(out, ss.str());
    std::printf("wrote %zu frames to %s\n", stream.frames.size(), out.c_str());
    return kExitOk;
}

int cmd_serve(std::optional<int> port, const std::string& scheme_path) {
    if (!port) {
        if (const char* env = std::getenv("GEMINI_PORT")) {
            try {
                port = std::stoi(env);
            } catch (const std::exception&) {
                throw UsageError(std::string("GEMINI_PORT is not a number: '") + env + "'");
            }
        } else {
            port = 0;
        }
    }
    if (*port < 0 || *port > 65534) throw UsageError("port out of range");
    if (!scheme_path.empty() && !fs::is_regular_file(scheme_path)) throw UsageError("no such file '" + scheme_path + "'");

    InteractionScheme scheme = scheme_path.empty() ? empty_scheme("untitled") : load_scheme_file(scheme_path);
    EngineHost host(std::move(scheme));
    ServiceConfig cfg;
    cfg.http_port = *port;
    cfg.live_port = *port == 0 ? 0 : *port + 1;
    cfg.fixtures_dir = scheme_path.empty() ? "fixtures" : fs::path(scheme_path).parent_path().string();
    if (cfg.fixtures_dir.empty()) cfg.fixtures_dir = ".";
    Service service(host, cfg);
    service.start();
    std::printf("http 127.0.0.1:%d\nlive 127.0.0.1:%d\n", service.http_port(), service.live_port());
    std::fflush(stdout);

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    service.stop();
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pose, speech and button to keyboard/mouse mapping engine"};
    app.require_subcommand(1);
    app.add_flag("--json", g_json, "Emit diagnostics as JSON lines on stderr");

    RunOptions run;
    auto* run_cmd = app.add_subcommand("run", "Run a session over recorded or live inputs");
    run_cmd->add_option("--scheme", run.scheme, "Scheme file")->required();
    run_cmd->add_option("--skeleton", run.skeleton, "Skeleton source (path or tcp:PORT)")->required();
    run_cmd->add_option("--transcript", run.transcript, "Transcript source (path or tcp:PORT)");
    run_cmd->add_option("--buttons", run.buttons, "Button/analog source (path or tcp:PORT)");
    run_cmd->add_option("--sink", run.sink, "Output event log")->required();
    run_cmd->add_flag("--virtual-time", run.virtual_time, "Use record timestamps as the clock");

    std::string recording, pose_id, infer_out;
    std::vector<std::string> overrides;
    auto* infer_cmd = app.add_subcommand("infer", "Infer a pose from a recording");
    infer_cmd->add_option("--recording", recording, "Recording (.skel.jsonl)")->required();
    infer_cmd->add_option("--pose-id", pose_id, "Identifier of the new pose")->required();
    infer_cmd->add_option("--config", overrides, "Inference setting override KEY=VALUE");
    infer_cmd->add_option("--out", infer_out, "Scheme file to create or update")->required();

    std::string validate_path;
    auto* validate_cmd = app.add_subcommand("validate", "Validate a scheme file");
    validate_cmd->add_option("--scheme", validate_path, "Scheme file")->required();

    std::string script_path, generate_out;
    std::uint64_t seed = 0;
    auto* generate_cmd = app.add_subcommand("generate", "Generate a synthetic skeleton stream");
    generate_cmd->add_option("--script", script_path, "Motion script (JSON)")->required();
    generate_cmd->add_option("--seed", seed, "Noise seed")->required();
    generate_cmd->add_option("--out", generate_out, "Output .skel.jsonl")->required();

    std::optional<int> serve_port;
    std::string serve_scheme;
    auto* serve_cmd = app.add_subcommand("serve", "Serve the control API and live state stream");
    serve_cmd->add_option("--port", serve_port, "HTTP port (live stream uses PORT+1)");
    serve_cmd->add_option("--scheme", serve_scheme, "Initial scheme file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*run_cmd) return cmd_run(run);
        if (*infer_cmd) return cmd_infer(recording, pose_id, overrides, infer_out);
        if (*validate_cmd) return cmd_validate(validate_path);
        if (*generate_cmd) return cmd_generate(script_path, seed, generate_out);
        if (*serve_cmd) return cmd_serve(serve_port, serve_scheme);
    } catch (const UsageError& e) {
        report_usage(e.what());
        return kExitUsage;
    } catch (const ValidationError& e) {
        for (const auto& d : e.diagnostics()) report(d);
        return kExitDomain;
    } catch (const Error& e) {
        report(e.diagnostic());
        return kExitDomain;
    }
    return kExitUsage;
}

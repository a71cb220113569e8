/**
 * @file harness.hpp
 * @brief Input sources: synthetic skeleton generator, file replay with
 * virtual or wall-clock pacing, and live loopback socket ingestion.
 */
#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "gemini/constraint.hpp"
#include "gemini/error.hpp"
#include "gemini/grammar.hpp"
#include "gemini/net.hpp"
#include "gemini/scheme.hpp"
#include "gemini/skeleton.hpp"

namespace gemini {

// ---------------------------------------------------------------------------
// Synthetic generator

/// Standing subject about 2 m in front of the sensor, arms down.
inline std::array<JointPosition, kJointCount> rest_posture() {
    std::array<JointPosition, kJointCount> p{};
    auto set = [&](JointId id, double x, double y, double z) { p[static_cast<std::size_t>(id)] = {x, y, z}; };
    set(JointId::head, 0.00, 1.62, 2.00);
    set(JointId::shoulder_center, 0.00, 1.42, 2.00);
    set(JointId::shoulder_left, 0.18, 1.40, 2.00);
    set(JointId::shoulder_right, -0.18, 1.40, 2.00);
    set(JointId::elbow_left, 0.22, 1.12, 2.00);
    set(JointId::elbow_right, -0.22, 1.12, 2.00);
    set(JointId::wrist_left, 0.24, 0.88, 1.98);
    set(JointId::wrist_right, -0.24, 0.88, 1.98);
    set(JointId::hand_left, 0.25, 0.80, 1.97);
    set(JointId::hand_right, -0.25, 0.80, 1.97);
    set(JointId::spine, 0.00, 1.12, 2.02);
    set(JointId::hip_center, 0.00, 0.96, 2.02);
    set(JointId::hip_left, 0.10, 0.92, 2.02);
    set(JointId::hip_right, -0.10, 0.92, 2.02);
    set(JointId::knee_left, 0.10, 0.50, 2.00);
    set(JointId::knee_right, -0.10, 0.50, 2.00);
    set(JointId::ankle_left, 0.10, 0.10, 2.02);
    set(JointId::ankle_right, -0.10, 0.10, 2.02);
    set(JointId::foot_left, 0.10, 0.05, 1.95);
    set(JointId::foot_right, -0.10, 0.05, 1.95);
    return p;
}

enum class Axis : std::uint8_t { X, Y, Z };

inline double& coord(JointPosition& p, Axis a) noexcept { return a == Axis::X ? p.x : a == Axis::Y ? p.y : p.z; }
inline double coord(const JointPosition& p, Axis a) noexcept { return a == Axis::X ? p.x : a == Axis::Y ? p.y : p.z; }

struct Keyframe {
    JointId joint;
    Axis axis;
    double value;
    std::int64_t at_ms;
    friend bool operator==(const Keyframe&, const Keyframe&) = default;
};

/// Base posture plus keyframed per-coordinate overrides. A channel starts at
/// its base value at t = 0 (unless keyed there), is linearly interpolated
/// between keyframes and holds its last value afterwards.
struct MotionScript {
    std::array<JointPosition, kJointCount> base = rest_posture();
    std::vector<Keyframe> keyframes;
    double noise_sigma_m = 0.035;
    double fps = 30.0;
    std::int64_t duration_ms = 5000;

    double value_at(JointId joint, Axis axis, std::int64_t t) const {
        double prev_v = coord(base[static_cast<std::size_t>(joint)], axis);
        std::int64_t prev_t = 0;
        std::vector<const Keyframe*> keys;
        for (const auto& k : keyframes)
            if (k.joint == joint && k.axis == axis) keys.push_back(&k);
        std::stable_sort(keys.begin(), keys.end(), [](auto* a, auto* b) { return a->at_ms < b->at_ms; });
        for (const auto* k : keys) {
            if (t <= k->at_ms) {
                if (k->at_ms == prev_t) return k->value;
                const double u = static_cast<double>(t - prev_t) / static_cast<double>(k->at_ms - prev_t);
                return prev_v + (k->value - prev_v) * u;
            }
            prev_v = k->value;
            prev_t = k->at_ms;
        }
        return prev_v;
    }

    /// Moves a coordinate linearly from its value at `from_ms` to `target`
    /// reached at `to_ms`.
    MotionScript& move(JointId joint, Axis axis, std::int64_t from_ms, std::int64_t to_ms, double target) {
        const double start = value_at(joint, axis, from_ms);
        keyframes.push_back({joint, axis, start, from_ms});
        keyframes.push_back({joint, axis, target, to_ms});
        return *this;
    }

    /// Same as move() with a displacement relative to the base posture.
    MotionScript& shift(JointId joint, Axis axis, std::int64_t from_ms, std::int64_t to_ms, double delta) {
        return move(joint, axis, from_ms, to_ms, coord(base[static_cast<std::size_t>(joint)], axis) + delta);
    }
};

inline void validate_script(const MotionScript& s) {
    if (!(s.fps >= 1.0 && s.fps <= 120.0)) throw Error(Errc::InvalidScript, "fps must lie in [1, 120]", "fps");
    if (s.duration_ms <= 0) throw Error(Errc::InvalidScript, "duration_ms must be positive", "duration_ms");
    if (!(s.noise_sigma_m >= 0.0) || !std::isfinite(s.noise_sigma_m))
        throw Error(Errc::InvalidScript, "noise_sigma_m must be >= 0", "noise_sigma_m");
    for (std::size_t i = 0; i < s.keyframes.size(); ++i) {
        const auto& k = s.keyframes[i];
        if (k.at_ms < 0 || k.at_ms > s.duration_ms || !std::isfinite(k.value))
            throw Error(Errc::InvalidScript, "keyframe outside the script duration", "keyframes[" + std::to_string(i) + "]");
    }
}

/// Deterministic for a given (script, seed). Gaussian noise on X and Y with
/// sigma, on Z with sigma / 2.
inline SkeletonStream generate(const MotionScript& script, std::uint64_t seed) {
    validate_script(script);
    SkeletonStream stream;
    stream.fps_nominal = script.fps;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    const double sigma = script.noise_sigma_m;

    // Keyed channels, resolved once.
    std::vector<std::pair<JointId, Axis>> keyed;
    for (const auto& k : script.keyframes)
        if (std::find(keyed.begin(), keyed.end(), std::pair{k.joint, k.axis}) == keyed.end()) keyed.emplace_back(k.joint, k.axis);

    for (std::int64_t i = 0;; ++i) {
        const auto t = static_cast<std::int64_t>(std::floor(static_cast<double>(i) * 1000.0 / script.fps));
        if (t >= script.duration_ms) break;
        SkeletonFrame f;
        f.timestamp_ms = t;
        f.joints = script.base;
        for (auto [joint, axis] : keyed) coord(f[joint], axis) = script.value_at(joint, axis, t);
        if (sigma > 0.0) {
            for (auto& p : f.joints) {
                p.x += sigma * unit(rng);
                p.y += sigma * unit(rng);
                p.z += 0.5 * sigma * unit(rng);
            }
        }
        stream.frames.push_back(f);
    }
    return stream;
}

inline MotionScript script_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error(Errc::InvalidScript, "script must be a JSON object");
    MotionScript s;
    try {
        s.fps = j.value("fps", 30.0);
        s.duration_ms = j.value("duration_ms", std::int64_t{5000});
        s.noise_sigma_m = j.value("noise_sigma_m", 0.035);
        if (auto b = j.find("base"); b != j.end()) {
            if (!b->is_object()) throw Error(Errc::InvalidScript, "'base' must map joints to [x, y, z]", "base");
            for (const auto& [name, v] : b->items()) {
                auto id = joint_from_name(name);
                if (!id || !v.is_array() || v.size() != 3)
                    throw Error(Errc::InvalidScript, "bad base entry '" + name + "'", "base." + name);
                s.base[static_cast<std::size_t>(*id)] = {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
            }
        }
        if (auto ks = j.find("keyframes"); ks != j.end()) {
            for (std::size_t i = 0; i < ks->size(); ++i) {
                const auto& k = (*ks)[i];
                const std::string path = "keyframes[" + std::to_string(i) + "]";
                auto id = joint_from_name(k.at("joint").get<std::string>());
                const std::string axis = k.at("axis").get<std::string>();
                if (!id) throw Error(Errc::InvalidScript, "unknown joint", path + ".joint");
                if (axis != "x" && axis != "y" && axis != "z") throw Error(Errc::InvalidScript, "axis must be x, y or z", path + ".axis");
                s.keyframes.push_back({*id, axis == "x" ? Axis::X : axis == "y" ? Axis::Y : Axis::Z,
                                       k.at("value").get<double>(), k.at("at_ms").get<std::int64_t>()});
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::InvalidScript, e.what());
    }
    validate_script(s);
    return s;
}

inline void write_stream(std::ostream& out, const SkeletonStream& stream) {
    for (const auto& f : stream.frames) out << encode_frame(f) << '\n';
}

// ---------------------------------------------------------------------------
// Device (button / analog) stream: ".buttons.jsonl"

struct DeviceEvent {
    std::int64_t timestamp_ms = 0;
    Trigger trigger;  // ButtonDown, ButtonUp or AnalogMove
};

inline DeviceEvent decode_device_event(std::string_view line) {
    nlohmann::json obj = detail::parse_json_object(line);
    DeviceEvent e;
    e.timestamp_ms = detail::parse_timestamp(obj);
    auto str = [&](const char* key) {
        auto it = obj.find(key);
        if (it == obj.end() || !it->is_string()) throw Error(Errc::MalformedRecord, std::string("missing '") + key + "'", key);
        return it->get<std::string>();
    };
    const std::string device = str("device");
    if (obj.contains("button")) {
        const std::string state = str("state");
        if (state == "down") e.trigger = ButtonDown{device, str("button")};
        else if (state == "up") e.trigger = ButtonUp{device, str("button")};
        else throw Error(Errc::MalformedRecord, "state must be 'down' or 'up'", "state");
    } else if (obj.contains("analog")) {
        auto num = [&](const char* key) {
            auto it = obj.find(key);
            if (it == obj.end() || !it->is_number()) throw Error(Errc::MalformedRecord, std::string("missing number '") + key + "'", key);
            return it->get<double>();
        };
        e.trigger = AnalogMove{device, str("analog"), std::clamp(num("x"), -1.0, 1.0), std::clamp(num("y"), -1.0, 1.0)};
    } else {
        throw Error(Errc::MalformedRecord, "record needs 'button' or 'analog'");
    }
    return e;
}

inline std::string encode_device_event(const DeviceEvent& e) {
    nlohmann::json j;
    std::visit(
        [&](const auto& t) {
            using T = std::decay_t<decltype(t)>;
            if constexpr (std::is_same_v<T, ButtonDown> || std::is_same_v<T, ButtonUp>) {
                j = {{"device", t.device}, {"button", t.button}, {"state", std::is_same_v<T, ButtonDown> ? "down" : "up"}};
            } else if constexpr (std::is_same_v<T, AnalogMove>) {
                j = {{"device", t.device}, {"analog", t.analog}, {"x", t.x}, {"y", t.y}};
            }
        },
        e.trigger);
    std::string body = j.dump();
    return "{\"t\":" + std::to_string(e.timestamp_ms) + "," + body.substr(1);
}

// ---------------------------------------------------------------------------
// Bounded queue: capacity-limited, drops the oldest element when full.

template <class T>
class BoundedQueue {
public:
    explicit BoundedQueue(std::size_t capacity = 64) : capacity_(capacity) {}

    void push(T value) {
        {
            std::lock_guard lock(mutex_);
            if (closed_) return;
            if (items_.size() == capacity_) {
                items_.pop_front();
                ++dropped_;
            }
            items_.push_back(std::move(value));
        }
        ready_.notify_all();
    }

    /// Waits up to `timeout`; empty result on timeout or when closed and drained.
    std::optional<T> pop(std::chrono::milliseconds timeout) {
        std::unique_lock lock(mutex_);
        ready_.wait_for(lock, timeout, [&] { return !items_.empty() || closed_; });
        if (items_.empty()) return std::nullopt;
        T v = std::move(items_.front());
        items_.pop_front();
        return v;
    }

    std::optional<T> try_pop() { return pop(std::chrono::milliseconds(0)); }

    void close() {
        {
            std::lock_guard lock(mutex_);
            closed_ = true;
        }
        ready_.notify_all();
    }

    bool closed_and_empty() const {
        std::lock_guard lock(mutex_);
        return closed_ && items_.empty();
    }
    std::size_t size() const {
        std::lock_guard lock(mutex_);
        return items_.size();
    }
    std::uint64_t dropped() const {
        std::lock_guard lock(mutex_);
        return dropped_;
    }

private:
    std::size_t capacity_;
    mutable std::mutex mutex_;
    std::condition_variable ready_;
    std::deque<T> items_;
    std::uint64_t dropped_ = 0;
    bool closed_ = false;
};

// ---------------------------------------------------------------------------
// File replay

enum class ReplayMode { Virtual, Realtime };

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::IoError, "cannot open '" + path + "'");
    return in;
}

inline SkeletonStream load_skeleton_file(const std::string& path) {
    auto in = open_input(path);
    return decode_stream(in);
}

inline std::vector<TranscriptToken> load_transcript_file(const std::string& path) {
    auto in = open_input(path);
    return decode_transcript(in);
}

inline std::vector<DeviceEvent> load_device_file(const std::string& path) {
    auto in = open_input(path);
    std::vector<DeviceEvent> out;
    for_each_record(in, [&](std::string_view line, std::size_t index) {
        try {
            out.push_back(decode_device_event(line));
        } catch (const Error& e) {
            throw e.at_record(index);
        }
        if (out.size() > 1 && out.back().timestamp_ms < out[out.size() - 2].timestamp_ms)
            throw Error(Errc::NonMonotonicTimestamp, "timestamps must not decrease", "t").at_record(index);
    });
    return out;
}

inline std::int64_t timestamp_of(const SkeletonFrame& f) { return f.timestamp_ms; }
inline std::int64_t timestamp_of(const TranscriptToken& t) { return t.timestamp_ms; }
inline std::int64_t timestamp_of(const DeviceEvent& e) { return e.timestamp_ms; }

/// Delivers records to `fn` in order. Virtual mode delivers immediately;
/// realtime mode sleeps so record t arrives at wall time (t - t0) / speed.
/// `stop` (optional) aborts pacing early.
template <class Record, class Fn>
void replay(const std::vector<Record>& records, double speed_factor, ReplayMode mode, Fn&& fn,
            const std::atomic<bool>* stop = nullptr) {
    if (!(speed_factor > 0.0) || !std::isfinite(speed_factor))
        throw Error(Errc::InvalidConfig, "speed_factor must be finite and positive", "speed_factor");
    if (records.empty()) return;
    const auto start = std::chrono::steady_clock::now();
    const std::int64_t t0 = timestamp_of(records.front());
    for (const auto& r : records) {
        if (stop && stop->load()) return;
        if (mode == ReplayMode::Realtime) {
            const double offset_ms = static_cast<double>(timestamp_of(r) - t0) / speed_factor;
            std::this_thread::sleep_until(start + std::chrono::microseconds(static_cast<std::int64_t>(offset_ms * 1000.0)));
        }
        fn(r);
    }
}

// ---------------------------------------------------------------------------
// Live socket source

enum class StreamKind { Skeleton, Transcript, Buttons };

inline std::string_view to_string(StreamKind k) noexcept {
    return k == StreamKind::Skeleton ? "skeleton" : k == StreamKind::Transcript ? "transcript" : "buttons";
}

inline std::string handshake_line(std::string_view stream) {
    return "{\"stream\":\"" + std::string(stream) + "\",\"format_version\":" + std::to_string(kFormatVersion) + "}\n";
}

/// Accepts one loopback client, checks the handshake, then decodes each
/// newline-delimited record into a bounded queue. Malformed records are
/// recorded as diagnostics and skipped.
template <class Record>
class SocketSource {
public:
    using Decoder = std::function<Record(std::string_view)>;

    SocketSource(std::uint16_t port, StreamKind kind, Decoder decode, std::size_t capacity = 64)
        : listener_(net::listen_loopback(port)), kind_(kind), decode_(std::move(decode)), queue_(capacity) {
        port_ = net::local_port(listener_);
        worker_ = std::thread([this] { run(); });
    }

    ~SocketSource() { stop(); }
    SocketSource(const SocketSource&) = delete;
    SocketSource& operator=(const SocketSource&) = delete;

    std::uint16_t port() const noexcept { return port_; }
    BoundedQueue<Record>& queue() noexcept { return queue_; }

    /// True once the client has disconnected (or stop() was called).
    bool finished() const noexcept { return finished_.load(); }

    std::vector<Diagnostic> diagnostics() const {
        std::lock_guard lock(diag_mutex_);
        return diags_;
    }

    void stop() {
        stopping_ = true;
        if (worker_.joinable()) worker_.join();
        queue_.close();
    }

private:
    void note(Diagnostic d) {
        std::lock_guard lock(diag_mutex_);
        diags_.push_back(std::move(d));
    }

    void run() {
        using namespace std::chrono_literals;
        net::Socket client;
        while (!stopping_ && !client.valid()) client = net::accept_for(listener_, 100ms);
        if (!client.valid()) {
            finished_ = true;
            return;
        }
        net::LineReader reader(client);
        std::string line;
        std::size_t index = 0;
        bool greeted = false;
        while (!stopping_) {
            auto status = reader.next(line, 100ms);
            if (status == net::LineReader::Status::Timeout) continue;
            if (status == net::LineReader::Status::Closed) break;
            ++index;
            if (line.find_first_not_of(" \t") == std::string::npos) continue;
            if (!greeted) {
                nlohmann::json hs = nlohmann::json::parse(line, nullptr, false);
                if (!hs.is_object() || hs.value("stream", "") != to_string(kind_) || hs.value("format_version", 0) != kFormatVersion) {
                    note({Errc::MalformedRecord, "handshake", "expected handshake for stream '" + std::string(to_string(kind_)) + "'", index});
                    break;
                }
                greeted = true;
                continue;
            }
            try {
                queue_.push(decode_(line));
            } catch (const Error& e) {
                auto d = e.at_record(index).diagnostic();
                std::cerr << "gemini: skipped " << to_string(d.code) << ": " << d.message << '\n';
                note(std::move(d));
            }
        }
        finished_ = true;
        queue_.close();
    }

    net::Socket listener_;
    std::uint16_t port_ = 0;
    StreamKind kind_;
    Decoder decode_;
    BoundedQueue<Record> queue_;
    mutable std::mutex diag_mutex_;
    std::vector<Diagnostic> diags_;
    std::atomic<bool> stopping_{false};
    std::atomic<bool> finished_{false};
    std::thread worker_;
};

inline std::unique_ptr<SocketSource<SkeletonFrame>> listen_skeleton(std::uint16_t port) {
    return std::make_unique<SocketSource<SkeletonFrame>>(port, StreamKind::Skeleton,
                                                         [](std::string_view l) { return decode_frame(l); });
}

inline std::unique_ptr<SocketSource<TranscriptToken>> listen_transcript(std::uint16_t port) {
    return std::make_unique<SocketSource<TranscriptToken>>(port, StreamKind::Transcript,
                                                           [](std::string_view l) { return decode_token(l); });
}

inline std::unique_ptr<SocketSource<DeviceEvent>> listen_buttons(std::uint16_t port) {
    return std::make_unique<SocketSource<DeviceEvent>>(port, StreamKind::Buttons,
                                                       [](std::string_view l) { return decode_device_event(l); });
}

}  // namespace gemini

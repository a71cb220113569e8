/**
 * @file engine.hpp
 * @brief Session runtime: routes skeleton frames, transcript tokens and
 * device events through detector, grammar and mapper, and owns the
 * running / recording / paused mode machine.
 *
 * Per frame the order is detector -> mapper -> scheduler tick, so a pose
 * activation and its first output event share a timestamp. The core reads
 * no clock except to measure its own processing latency.
 */
#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "gemini/constraint.hpp"
#include "gemini/error.hpp"
#include "gemini/grammar.hpp"
#include "gemini/harness.hpp"
#include "gemini/inference.hpp"
#include "gemini/mapper.hpp"
#include "gemini/scheme.hpp"
#include "gemini/sink.hpp"

namespace gemini {

enum class SessionMode { Running, Recording, Paused };

inline std::string_view to_string(SessionMode m) noexcept {
    return m == SessionMode::Running ? "running" : m == SessionMode::Recording ? "recording" : "paused";
}

struct Metrics {
    std::uint64_t frames = 0;
    std::uint64_t tokens = 0;
    std::uint64_t device_events = 0;
    std::uint64_t dropped_frames = 0;
    std::vector<std::int64_t> frame_latency_ns;

    /// Nearest-rank percentile of on_frame latency in milliseconds.
    double latency_percentile_ms(double p) const {
        if (frame_latency_ns.empty()) return 0.0;
        std::vector<std::int64_t> sorted = frame_latency_ns;
        std::sort(sorted.begin(), sorted.end());
        auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(sorted.size())));
        rank = std::clamp<std::size_t>(rank, 1, sorted.size());
        return static_cast<double>(sorted[rank - 1]) / 1e6;
    }
};

/// Everything one engine step produced; observers (live state) get a copy.
struct StepReport {
    std::int64_t timestamp_ms = 0;
    std::vector<PoseEvent> pose_events;
    std::vector<CommandEvent> commands;
    std::vector<OutputEvent> outputs;
};

class Session {
public:
    explicit Session(InteractionScheme scheme, EventSink* sink = nullptr) : sink_(sink) { install(std::move(scheme)); }

    void bind_sink(EventSink* sink) noexcept { sink_ = sink; }

    using Observer = std::function<void(const StepReport&)>;
    void set_observer(Observer obs) { observer_ = std::move(obs); }

    StepReport on_frame(const SkeletonFrame& f) {
        const auto started = std::chrono::steady_clock::now();
        if (last_frame_ms_ && f.timestamp_ms <= *last_frame_ms_)
            throw Error(Errc::StaleFrame, "frame at " + std::to_string(f.timestamp_ms) + " ms is not newer than " +
                                              std::to_string(*last_frame_ms_) + " ms");
        last_frame_ms_ = f.timestamp_ms;
        latest_frame_ = f;
        ++metrics_.frames;

        StepReport report;
        report.timestamp_ms = f.timestamp_ms;
        const std::int64_t now = advance_clock(f.timestamp_ms);

        switch (mode_) {
        case SessionMode::Paused: break;
        case SessionMode::Recording:
            recording_.push_back(f);
            for (const auto& p : scheme_.poses) detector_.at(p.id).satisfied = evaluate_pose(p, f);
            break;
        case SessionMode::Running: {
            settle_commands(now, report);
            report.pose_events = step_detector(detector_, scheme_.poses, f);
            for (const auto& e : report.pose_events) {
                Trigger t = e.kind == PoseEventKind::Activated ? Trigger{PoseActivated{e.pose_id}} : Trigger{PoseDeactivated{e.pose_id}};
                append(report.outputs, dispatch(scheme_, scheduler_, t, now));
            }
            append(report.outputs, tick(scheme_, scheduler_, now));
            break;
        }
        }
        deliver(report);
        metrics_.frame_latency_ns.push_back(
            std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - started).count());
        return report;
    }

    StepReport on_token(const TranscriptToken& tok) {
        ++metrics_.tokens;
        StepReport report;
        report.timestamp_ms = tok.timestamp_ms;
        if (mode_ != SessionMode::Running || !grammar_) return report;
        const std::int64_t now = advance_clock(tok.timestamp_ms);
        // Commands settled by the gap rule fire now; the token itself may
        // complete a phrase.
        for (auto& c : feed(*grammar_, matcher_, tok)) report.commands.push_back(std::move(c));
        for (const auto& c : report.commands) append(report.outputs, dispatch(scheme_, scheduler_, CommandTrigger{c.phrase_id}, now));
        deliver(report);
        return report;
    }

    StepReport on_device(const DeviceEvent& e) {
        ++metrics_.device_events;
        StepReport report;
        report.timestamp_ms = e.timestamp_ms;
        if (mode_ != SessionMode::Running) return report;
        const std::int64_t now = advance_clock(e.timestamp_ms);
        settle_commands(now, report);
        append(report.outputs, dispatch(scheme_, scheduler_, e.trigger, now));
        deliver(report);
        return report;
    }

    /// Advances virtual time without input: hold repeats, mouse motion and
    /// stale partial phrases.
    StepReport advance_to(std::int64_t now_ms) {
        StepReport report;
        report.timestamp_ms = now_ms;
        const std::int64_t now = advance_clock(now_ms);
        if (mode_ == SessionMode::Running) {
            settle_commands(now, report);
            append(report.outputs, tick(scheme_, scheduler_, now));
        }
        deliver(report);
        return report;
    }

    /// End of input: settles pending phrases, then releases every hold.
    StepReport finish() {
        StepReport report;
        report.timestamp_ms = clock_ms_;
        if (mode_ == SessionMode::Running && grammar_) {
            report.commands = flush(*grammar_, matcher_);
            for (const auto& c : report.commands)
                append(report.outputs, dispatch(scheme_, scheduler_, CommandTrigger{c.phrase_id}, clock_ms_));
        }
        append(report.outputs, release_all(scheduler_, clock_ms_));
        deliver(report);
        return report;
    }

    // Mode machine -----------------------------------------------------------

    void start_recording(const std::string& pose_id) {
        if (mode_ != SessionMode::Running)
            throw Error(Errc::IllegalTransition, "recording can only start while running (mode is " + std::string(to_string(mode_)) + ")");
        if (pose_id.empty()) throw Error(Errc::InvalidPose, "pose id must be non-empty", "pose_id");
        if (scheme_.find_pose(pose_id)) throw Error(Errc::DuplicateId, "pose '" + pose_id + "' already exists", "pose_id");
        quiesce();
        recording_.clear();
        recording_pose_ = pose_id;
        recording_started_ms_ = clock_ms_;
        mode_ = SessionMode::Recording;
    }

    /// Infers a pose from the buffered frames and adds it to the scheme. The
    /// session returns to running whether or not inference succeeds.
    PoseDefinition finish_recording() {
        if (mode_ != SessionMode::Recording) throw Error(Errc::IllegalTransition, "no recording in progress");
        mode_ = SessionMode::Running;
        Recording rec = Recording::from_frames(std::move(recording_), fps_nominal_);
        recording_.clear();
        PoseDefinition pose = infer(rec, scheme_.inference, recording_pose_);
        scheme_.poses.push_back(pose);
        detector_.add(pose.id);
        return pose;
    }

    void cancel_recording() {
        if (mode_ != SessionMode::Recording) throw Error(Errc::IllegalTransition, "no recording in progress");
        recording_.clear();
        mode_ = SessionMode::Running;
    }

    void pause() {
        if (mode_ == SessionMode::Recording) throw Error(Errc::IllegalTransition, "cannot pause while recording");
        if (mode_ == SessionMode::Paused) return;
        quiesce();
        mode_ = SessionMode::Paused;
    }

    void resume() {
        if (mode_ == SessionMode::Recording) throw Error(Errc::IllegalTransition, "cannot resume while recording");
        mode_ = SessionMode::Running;
    }

    /// Swaps the scheme; all holds are released first.
    void replace_scheme(InteractionScheme scheme) {
        quiesce();
        install(std::move(scheme));
    }

    // Accessors -------------------------------------------------------------

    SessionMode mode() const noexcept { return mode_; }
    const InteractionScheme& scheme() const noexcept { return scheme_; }
    const DetectorState& detector() const noexcept { return detector_; }
    const MatchState& matcher() const noexcept { return matcher_; }
    const SchedulerState& scheduler() const noexcept { return scheduler_; }
    const Metrics& metrics() const noexcept { return metrics_; }
    Metrics& metrics() noexcept { return metrics_; }
    std::size_t recording_size() const noexcept { return recording_.size(); }
    const std::string& recording_pose() const noexcept { return recording_pose_; }
    std::int64_t recording_started_ms() const noexcept { return recording_started_ms_; }
    const std::optional<SkeletonFrame>& latest_frame() const noexcept { return latest_frame_; }
    std::int64_t clock_ms() const noexcept { return clock_ms_; }
    void set_fps_nominal(double fps) noexcept { fps_nominal_ = fps; }

private:
    void install(InteractionScheme scheme) {
        scheme_ = std::move(scheme);
        grammar_.reset();
        if (!scheme_.phrases.empty()) grammar_ = compile(scheme_.phrases, scheme_.max_intra_phrase_gap_ms);
        detector_ = DetectorState::covering(scheme_.poses);
        matcher_ = MatchState{};
    }

    /// Leaves no key held and no pose half-detected.
    void quiesce() {
        StepReport report;
        report.timestamp_ms = clock_ms_;
        report.outputs = release_all(scheduler_, clock_ms_);
        detector_ = DetectorState::covering(scheme_.poses);
        matcher_ = MatchState{};
        deliver(report);
    }

    std::int64_t advance_clock(std::int64_t t) {
        clock_ms_ = std::max(clock_ms_, t);
        return clock_ms_;
    }

    void settle_commands(std::int64_t now, StepReport& report) {
        if (!grammar_) return;
        auto settled = expire(*grammar_, matcher_, now);
        for (const auto& c : settled) append(report.outputs, dispatch(scheme_, scheduler_, CommandTrigger{c.phrase_id}, now));
        for (auto& c : settled) report.commands.push_back(std::move(c));
    }

    static void append(std::vector<OutputEvent>& into, std::vector<OutputEvent>&& more) {
        into.insert(into.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
    }

    void deliver(const StepReport& report) {
        if (sink_ && !report.outputs.empty()) sink_->emit(report.outputs);
        if (observer_) observer_(report);
    }

    InteractionScheme scheme_;
    std::optional<Grammar> grammar_;
    DetectorState detector_;
    MatchState matcher_;
    SchedulerState scheduler_;
    SessionMode mode_ = SessionMode::Running;
    std::vector<SkeletonFrame> recording_;
    std::string recording_pose_;
    std::int64_t recording_started_ms_ = 0;
    std::optional<std::int64_t> last_frame_ms_;
    std::optional<SkeletonFrame> latest_frame_;
    std::int64_t clock_ms_ = 0;
    double fps_nominal_ = 30.0;
    Metrics metrics_;
    EventSink* sink_ = nullptr;
    Observer observer_;
};

// ---------------------------------------------------------------------------
// Drivers

using InputEvent = std::variant<SkeletonFrame, TranscriptToken, DeviceEvent>;

inline std::int64_t timestamp_of(const InputEvent& e) {
    return std::visit([](const auto& v) { return timestamp_of(v); }, e);
}

inline void process(Session& session, const InputEvent& e) {
    std::visit(
        [&](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, SkeletonFrame>) session.on_frame(v);
            else if constexpr (std::is_same_v<T, TranscriptToken>) session.on_token(v);
            else session.on_device(v);
        },
        e);
}

/// Merges the sources by timestamp (frames before tokens before device
/// events at equal times) and runs them through the session in virtual time,
/// then finishes the session.
inline void run_virtual(Session& session, const std::vector<SkeletonFrame>& frames,
                        const std::vector<TranscriptToken>& tokens = {}, const std::vector<DeviceEvent>& devices = {}) {
    std::vector<InputEvent> merged;
    merged.reserve(frames.size() + tokens.size() + devices.size());
    merged.insert(merged.end(), frames.begin(), frames.end());
    merged.insert(merged.end(), tokens.begin(), tokens.end());
    merged.insert(merged.end(), devices.begin(), devices.end());
    std::stable_sort(merged.begin(), merged.end(), [](const InputEvent& a, const InputEvent& b) {
        return std::pair(timestamp_of(a), a.index()) < std::pair(timestamp_of(b), b.index());
    });
    for (const auto& e : merged) process(session, e);
    session.finish();
}

/// A live input: a queue fed by another thread plus a completion flag.
struct LiveFeed {
    std::function<std::optional<InputEvent>()> poll;
    std::function<bool()> finished;
};

template <class Record>
LiveFeed feed_from(BoundedQueue<Record>& q) {
    return {[&q]() -> std::optional<InputEvent> {
                if (auto r = q.try_pop()) return InputEvent{std::move(*r)};
                return std::nullopt;
            },
            [&q] { return q.closed_and_empty(); }};
}

/// Consumes live feeds until all are finished or `stop` is set. Frames that
/// arrive out of order are dropped and counted.
inline void run_live(Session& session, std::vector<LiveFeed> feeds, const std::atomic<bool>& stop,
                     const std::function<void(const std::function<void()>&)>& exclusive = {}) {
    auto guarded = [&](const std::function<void()>& fn) {
        if (exclusive) exclusive(fn);
        else fn();
    };
    while (!stop.load()) {
        bool any = false, all_done = true;
        for (auto& f : feeds) {
            while (auto e = f.poll()) {
                any = true;
                guarded([&] {
                    try {
                        process(session, *e);
                    } catch (const Error& err) {
                        if (err.code() != Errc::StaleFrame) throw;
                        ++session.metrics().dropped_frames;
                    }
                });
            }
            all_done &= f.finished();
        }
        if (all_done) break;
        if (!any) std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
    guarded([&] { session.finish(); });
}

/// Starts a thread that replays `records` in realtime into a bounded queue
/// and closes the queue at the end.
template <class Record>
std::thread start_replay(const std::vector<Record>& records, double speed, BoundedQueue<Record>& q,
                         const std::atomic<bool>& stop) {
    return std::thread([&records, speed, &q, &stop] {
        replay(records, speed, ReplayMode::Realtime, [&](const Record& r) { q.push(r); }, &stop);
        q.close();
    });
}

}  // namespace gemini

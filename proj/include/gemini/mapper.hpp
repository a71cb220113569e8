/**
 * @file mapper.hpp
 * @brief Trigger dispatch and virtual-time output scheduling.
 *
 * All time enters through `now_ms` arguments. Hold repeats are computed
 * exactly from the hold start, so the number of repeat pairs over a hold of
 * T ms at f Hz is floor(T * f / 1000). Mouse motion integrates the current
 * velocity and carries the sub-pixel remainder between ticks.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gemini/error.hpp"
#include "gemini/scheme.hpp"

namespace gemini {

enum class OutputKind { KeyDown, KeyUp, MouseDelta, MouseButtonDown, MouseButtonUp };

struct OutputEvent {
    std::int64_t timestamp_ms = 0;
    OutputKind kind = OutputKind::KeyDown;
    std::string code;  // key or mouse button
    std::int64_t dx = 0;
    std::int64_t dy = 0;

    friend bool operator==(const OutputEvent&, const OutputEvent&) = default;
};

inline std::string_view to_string(OutputKind k) noexcept {
    switch (k) {
    case OutputKind::KeyDown: return "key_down";
    case OutputKind::KeyUp: return "key_up";
    case OutputKind::MouseDelta: return "mouse_delta";
    case OutputKind::MouseButtonDown: return "mouse_down";
    case OutputKind::MouseButtonUp: return "mouse_up";
    }
    return "?";
}

/// `.events.jsonl` record: {"t":..,"kind":..,"key"|"button"|"dx","dy"}.
inline std::string encode_event(const OutputEvent& e) {
    std::string out = "{\"t\":" + std::to_string(e.timestamp_ms) + ",\"kind\":\"" + std::string(to_string(e.kind)) + "\"";
    switch (e.kind) {
    case OutputKind::KeyDown:
    case OutputKind::KeyUp: out += ",\"key\":\"" + e.code + "\""; break;
    case OutputKind::MouseButtonDown:
    case OutputKind::MouseButtonUp: out += ",\"button\":\"" + e.code + "\""; break;
    case OutputKind::MouseDelta: out += ",\"dx\":" + std::to_string(e.dx) + ",\"dy\":" + std::to_string(e.dy); break;
    }
    return out + "}";
}

inline OutputEvent decode_event(std::string_view line) {
    nlohmann::json obj = detail::parse_json_object(line);
    OutputEvent e;
    e.timestamp_ms = detail::parse_timestamp(obj);
    auto kind = obj.find("kind");
    if (kind == obj.end() || !kind->is_string()) throw Error(Errc::MalformedRecord, "missing 'kind'", "kind");
    const std::string k = kind->get<std::string>();
    auto text = [&](const char* key) {
        auto it = obj.find(key);
        if (it == obj.end() || !it->is_string()) throw Error(Errc::MalformedRecord, std::string("missing '") + key + "'", key);
        return it->get<std::string>();
    };
    auto integer = [&](const char* key) {
        auto it = obj.find(key);
        if (it == obj.end() || !detail::is_integer_json(*it))
            throw Error(Errc::MalformedRecord, std::string("missing integer '") + key + "'", key);
        return it->get<std::int64_t>();
    };
    if (k == "key_down" || k == "key_up") {
        e.kind = k == "key_down" ? OutputKind::KeyDown : OutputKind::KeyUp;
        e.code = text("key");
    } else if (k == "mouse_down" || k == "mouse_up") {
        e.kind = k == "mouse_down" ? OutputKind::MouseButtonDown : OutputKind::MouseButtonUp;
        e.code = text("button");
    } else if (k == "mouse_delta") {
        e.kind = OutputKind::MouseDelta;
        e.dx = integer("dx");
        e.dy = integer("dy");
    } else {
        throw Error(Errc::MalformedRecord, "unknown kind '" + k + "'", "kind");
    }
    return e;
}

struct SchedulerState {
    struct Hold {
        std::int64_t start_ms = 0;
        int repeat_hz = 0;
        std::uint64_t repeats = 0;  // pairs emitted so far
        int refcount = 1;
        friend bool operator==(const Hold&, const Hold&) = default;
    };
    std::map<std::string, Hold> key_holds;      // keys currently down
    std::map<std::string, int> button_holds;    // mouse buttons currently down
    double velocity_x = 0.0;                     // px/s
    double velocity_y = 0.0;
    double carry_x = 0.0;                        // sub-pixel remainder
    double carry_y = 0.0;
    std::int64_t last_ms = 0;
    bool clock_started = false;
    std::uint64_t unmapped_triggers = 0;

    friend bool operator==(const SchedulerState&, const SchedulerState&) = default;
};

namespace detail {

inline OutputEvent key_event(std::int64_t t, OutputKind k, const std::string& code) { return {t, k, code, 0, 0}; }

/// Emits hold repeats due in (last, now] and the mouse motion accumulated
/// since the last call, then moves the clock to `now`.
inline void advance(SchedulerState& s, std::int64_t now_ms, std::vector<OutputEvent>& out) {
    if (s.clock_started && now_ms < s.last_ms)
        throw Error(Errc::ClockRegression, "clock went from " + std::to_string(s.last_ms) + " to " + std::to_string(now_ms) + " ms");
    if (!s.clock_started) {
        s.clock_started = true;
        s.last_ms = now_ms;
    }

    const std::size_t first = out.size();
    for (auto& [key, hold] : s.key_holds) {
        if (hold.repeat_hz <= 0) continue;
        const auto due = static_cast<std::uint64_t>((now_ms - hold.start_ms) * hold.repeat_hz / 1000);
        for (std::uint64_t k = hold.repeats + 1; k <= due; ++k) {
            const std::int64_t t = hold.start_ms + static_cast<std::int64_t>(k) * 1000 / hold.repeat_hz;
            out.push_back(key_event(t, OutputKind::KeyUp, key));
            out.push_back(key_event(t, OutputKind::KeyDown, key));
        }
        hold.repeats = std::max(hold.repeats, due);
    }
    std::stable_sort(out.begin() + static_cast<std::ptrdiff_t>(first), out.end(),
                     [](const OutputEvent& a, const OutputEvent& b) { return a.timestamp_ms < b.timestamp_ms; });

    const std::int64_t elapsed = now_ms - s.last_ms;
    if (elapsed > 0 && (s.velocity_x != 0.0 || s.velocity_y != 0.0)) {
        s.carry_x += s.velocity_x * static_cast<double>(elapsed) / 1000.0;
        s.carry_y += s.velocity_y * static_cast<double>(elapsed) / 1000.0;
        const auto dx = static_cast<std::int64_t>(std::llround(s.carry_x));
        const auto dy = static_cast<std::int64_t>(std::llround(s.carry_y));
        s.carry_x -= static_cast<double>(dx);
        s.carry_y -= static_cast<double>(dy);
        if (dx != 0 || dy != 0) out.push_back({now_ms, OutputKind::MouseDelta, {}, dx, dy});
    }
    s.last_ms = now_ms;
}

inline void run_action(SchedulerState& s, const Action& action, std::int64_t now, double ax, double ay,
                       std::vector<OutputEvent>& out) {
    std::visit(
        [&](const auto& a) {
            using T = std::decay_t<decltype(a)>;
            if constexpr (std::is_same_v<T, KeyPress>) {
                if (s.key_holds.count(a.key)) {
                    // Re-stroke a held key; it stays down.
                    out.push_back(key_event(now, OutputKind::KeyUp, a.key));
                    out.push_back(key_event(now, OutputKind::KeyDown, a.key));
                } else {
                    out.push_back(key_event(now, OutputKind::KeyDown, a.key));
                    out.push_back(key_event(now, OutputKind::KeyUp, a.key));
                }
            } else if constexpr (std::is_same_v<T, KeyHoldStart>) {
                auto it = s.key_holds.find(a.key);
                if (it != s.key_holds.end()) {
                    ++it->second.refcount;
                } else {
                    out.push_back(key_event(now, OutputKind::KeyDown, a.key));
                    s.key_holds.emplace(a.key, SchedulerState::Hold{now, a.repeat_hz, 0, 1});
                }
            } else if constexpr (std::is_same_v<T, KeyHoldStop>) {
                auto it = s.key_holds.find(a.key);
                if (it != s.key_holds.end() && --it->second.refcount == 0) {
                    out.push_back(key_event(now, OutputKind::KeyUp, a.key));
                    s.key_holds.erase(it);
                }
            } else if constexpr (std::is_same_v<T, MouseMove>) {
                s.velocity_x = a.dx_px_per_s + ax * a.scale;
                s.velocity_y = a.dy_px_per_s + ay * a.scale;
            } else if constexpr (std::is_same_v<T, MouseButtonPress>) {
                if (s.button_holds.count(a.button)) {
                    out.push_back(key_event(now, OutputKind::MouseButtonUp, a.button));
                    out.push_back(key_event(now, OutputKind::MouseButtonDown, a.button));
                } else {
                    out.push_back(key_event(now, OutputKind::MouseButtonDown, a.button));
                    out.push_back(key_event(now, OutputKind::MouseButtonUp, a.button));
                }
            } else if constexpr (std::is_same_v<T, MouseButtonHoldStart>) {
                if (s.button_holds[a.button]++ == 0) out.push_back(key_event(now, OutputKind::MouseButtonDown, a.button));
            } else if constexpr (std::is_same_v<T, MouseButtonHoldStop>) {
                auto it = s.button_holds.find(a.button);
                if (it != s.button_holds.end() && --it->second == 0) {
                    out.push_back(key_event(now, OutputKind::MouseButtonUp, a.button));
                    s.button_holds.erase(it);
                }
            }
        },
        action);
}

}  // namespace detail

/// Runs the actions every matching mapping declares for `trig`. Unmapped
/// triggers produce nothing and are counted in `unmapped_triggers`.
inline std::vector<OutputEvent> dispatch(const InteractionScheme& scheme, SchedulerState& s, const Trigger& trig,
                                         std::int64_t now_ms) {
    std::vector<OutputEvent> out;
    detail::advance(s, now_ms, out);

    double ax = 0.0, ay = 0.0;
    if (auto* a = std::get_if<AnalogMove>(&trig)) {
        ax = std::clamp(a->x, -1.0, 1.0);
        ay = std::clamp(a->y, -1.0, 1.0);
        if (std::isnan(ax)) ax = 0.0;
        if (std::isnan(ay)) ay = 0.0;
    }

    bool matched = false;
    for (const auto& m : scheme.mappings) {
        const std::vector<Action>* actions = std::visit(
            [&](const auto& t) -> const std::vector<Action>* {
                using T = std::decay_t<decltype(t)>;
                if (const auto* p = std::get_if<PosePattern>(&m.trigger)) {
                    if constexpr (std::is_same_v<T, PoseActivated>) return p->pose == t.pose ? &m.on_activate : nullptr;
                    if constexpr (std::is_same_v<T, PoseDeactivated>) return p->pose == t.pose ? &m.on_deactivate : nullptr;
                } else if (const auto* p = std::get_if<PhrasePattern>(&m.trigger)) {
                    if constexpr (std::is_same_v<T, CommandTrigger>) return p->phrase == t.phrase ? &m.on_activate : nullptr;
                } else if (const auto* p = std::get_if<ButtonPattern>(&m.trigger)) {
                    if constexpr (std::is_same_v<T, ButtonDown> || std::is_same_v<T, ButtonUp>) {
                        if (p->device != t.device || p->button != t.button) return nullptr;
                        return std::is_same_v<T, ButtonDown> ? &m.on_activate : &m.on_deactivate;
                    }
                } else if (const auto* p = std::get_if<AnalogPattern>(&m.trigger)) {
                    if constexpr (std::is_same_v<T, AnalogMove>)
                        return p->device == t.device && p->analog == t.analog ? &m.on_activate : nullptr;
                }
                return nullptr;
            },
            trig);
        if (!actions) continue;
        matched = true;
        for (const auto& a : *actions) detail::run_action(s, a, now_ms, ax, ay, out);
    }
    if (!matched) ++s.unmapped_triggers;
    return out;
}

inline std::vector<OutputEvent> tick(const InteractionScheme& /*scheme*/, SchedulerState& s, std::int64_t now_ms) {
    std::vector<OutputEvent> out;
    detail::advance(s, now_ms, out);
    return out;
}

/// Releases every held key and button and stops mouse motion.
inline std::vector<OutputEvent> release_all(SchedulerState& s, std::int64_t now_ms) {
    std::vector<OutputEvent> out;
    detail::advance(s, now_ms, out);
    for (const auto& [key, hold] : s.key_holds) out.push_back(detail::key_event(now_ms, OutputKind::KeyUp, key));
    for (const auto& [button, count] : s.button_holds)
        out.push_back(detail::key_event(now_ms, OutputKind::MouseButtonUp, button));
    s.key_holds.clear();
    s.button_holds.clear();
    s.velocity_x = s.velocity_y = 0.0;
    s.carry_x = s.carry_y = 0.0;
    return out;
}

}  // namespace gemini

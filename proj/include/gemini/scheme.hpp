/**
 * @file scheme.hpp
 * @brief Interaction scheme model and the `.scheme.json` document format.
 *
 * A scheme binds poses, voice phrases and device inputs (triggers) to
 * ordered lists of keyboard/mouse actions. Loading validates the whole
 * document and reports every problem found, each with a path into the
 * document.
 */
#pragma once

#include <map>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "gemini/constraint.hpp"
#include "gemini/error.hpp"
#include "gemini/grammar.hpp"
#include "gemini/inference.hpp"
#include "gemini/keys.hpp"

namespace gemini {

inline constexpr int kFormatVersion = 1;

// Triggers: the logical input events the mapper consumes.

struct PoseActivated { std::string pose; };
struct PoseDeactivated { std::string pose; };
struct CommandTrigger { std::string phrase; };
struct ButtonDown { std::string device; std::string button; };
struct ButtonUp { std::string device; std::string button; };
/// Analog components are clamped to [-1, 1] on dispatch.
struct AnalogMove { std::string device; std::string analog; double x = 0.0; double y = 0.0; };

using Trigger = std::variant<PoseActivated, PoseDeactivated, CommandTrigger, ButtonDown, ButtonUp, AnalogMove>;

// Actions

struct KeyPress { std::string key; friend bool operator==(const KeyPress&, const KeyPress&) = default; };
/// repeat_hz in [1, 60] repeats Up/Down pairs; 0 holds a single Down until stopped.
struct KeyHoldStart { std::string key; int repeat_hz = 0; friend bool operator==(const KeyHoldStart&, const KeyHoldStart&) = default; };
struct KeyHoldStop { std::string key; friend bool operator==(const KeyHoldStop&, const KeyHoldStop&) = default; };
/// Sets mouse velocity to (dx + x * scale, dy + y * scale) px/s where (x, y)
/// is the triggering analog value, or (0, 0) for discrete triggers.
struct MouseMove {
    double dx_px_per_s = 0.0;
    double dy_px_per_s = 0.0;
    double scale = 0.0;
    friend bool operator==(const MouseMove&, const MouseMove&) = default;
};
struct MouseButtonPress { std::string button; friend bool operator==(const MouseButtonPress&, const MouseButtonPress&) = default; };
struct MouseButtonHoldStart { std::string button; friend bool operator==(const MouseButtonHoldStart&, const MouseButtonHoldStart&) = default; };
struct MouseButtonHoldStop { std::string button; friend bool operator==(const MouseButtonHoldStop&, const MouseButtonHoldStop&) = default; };

using Action = std::variant<KeyPress, KeyHoldStart, KeyHoldStop, MouseMove, MouseButtonPress, MouseButtonHoldStart,
                            MouseButtonHoldStop>;

// Trigger patterns used by mappings.

struct PosePattern { std::string pose; friend bool operator==(const PosePattern&, const PosePattern&) = default; };
struct PhrasePattern { std::string phrase; friend bool operator==(const PhrasePattern&, const PhrasePattern&) = default; };
struct ButtonPattern { std::string device; std::string button; friend bool operator==(const ButtonPattern&, const ButtonPattern&) = default; };
struct AnalogPattern { std::string device; std::string analog; friend bool operator==(const AnalogPattern&, const AnalogPattern&) = default; };

using TriggerPattern = std::variant<PosePattern, PhrasePattern, ButtonPattern, AnalogPattern>;

/// Pose and button triggers run on_activate on activation/press and
/// on_deactivate on release. Phrase and analog triggers only use on_activate.
struct Mapping {
    TriggerPattern trigger;
    std::vector<Action> on_activate;
    std::vector<Action> on_deactivate;
    friend bool operator==(const Mapping&, const Mapping&) = default;
};

struct DeviceBinding {
    std::string id;
    std::vector<std::string> buttons;
    std::vector<std::string> analogs;
    friend bool operator==(const DeviceBinding&, const DeviceBinding&) = default;
};

struct InteractionScheme {
    std::string name;
    std::vector<PoseDefinition> poses;
    std::vector<Phrase> phrases;
    std::vector<DeviceBinding> devices;
    std::vector<Mapping> mappings;
    InferenceConfig inference;
    std::int64_t max_intra_phrase_gap_ms = 1500;

    const PoseDefinition* find_pose(const std::string& id) const {
        for (const auto& p : poses)
            if (p.id == id) return &p;
        return nullptr;
    }

    friend bool operator==(const InteractionScheme&, const InteractionScheme&) = default;
};

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json action_to_json(const Action& a) {
    return std::visit(
        [](const auto& k) -> nlohmann::json {
            using T = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<T, KeyPress>) return {{"action", "key_press"}, {"key", k.key}};
            else if constexpr (std::is_same_v<T, KeyHoldStart>)
                return {{"action", "key_hold_start"}, {"key", k.key}, {"repeat_hz", k.repeat_hz}};
            else if constexpr (std::is_same_v<T, KeyHoldStop>) return {{"action", "key_hold_stop"}, {"key", k.key}};
            else if constexpr (std::is_same_v<T, MouseMove>)
                return {{"action", "mouse_move"}, {"dx", k.dx_px_per_s}, {"dy", k.dy_px_per_s}, {"scale", k.scale}};
            else if constexpr (std::is_same_v<T, MouseButtonPress>) return {{"action", "mouse_press"}, {"button", k.button}};
            else if constexpr (std::is_same_v<T, MouseButtonHoldStart>)
                return {{"action", "mouse_hold_start"}, {"button", k.button}};
            else return {{"action", "mouse_hold_stop"}, {"button", k.button}};
        },
        a);
}

inline Action action_from_json(const nlohmann::json& j, const std::string& path) {
    if (!j.is_object()) throw Error(Errc::ParseError, "action must be an object", path);
    const std::string type = detail::string_field(j, "action", path);
    auto key = [&] {
        std::string k = detail::string_field(j, "key", path);
        if (!is_key(k)) throw Error(Errc::UnknownKey, "unknown key '" + k + "'", path + ".key");
        return k;
    };
    auto button = [&] {
        std::string b = detail::string_field(j, "button", path);
        if (!is_mouse_button(b)) throw Error(Errc::UnknownKey, "unknown mouse button '" + b + "'", path + ".button");
        return b;
    };
    if (type == "key_press") return KeyPress{key()};
    if (type == "key_hold_start") {
        KeyHoldStart h{key(), 0};
        if (auto it = j.find("repeat_hz"); it != j.end()) {
            if (!detail::is_integer_json(*it)) throw Error(Errc::InvalidAction, "repeat_hz must be an integer", path + ".repeat_hz");
            h.repeat_hz = it->get<int>();
        }
        if (h.repeat_hz < 0 || h.repeat_hz > 60)
            throw Error(Errc::InvalidAction, "repeat_hz must be 0 (continuous) or within [1, 60]", path + ".repeat_hz");
        return h;
    }
    if (type == "key_hold_stop") return KeyHoldStop{key()};
    if (type == "mouse_move") {
        MouseMove m{detail::number_field(j, "dx", path, 0.0), detail::number_field(j, "dy", path, 0.0),
                    detail::number_field(j, "scale", path, 0.0)};
        if (!std::isfinite(m.dx_px_per_s) || !std::isfinite(m.dy_px_per_s) || !std::isfinite(m.scale))
            throw Error(Errc::InvalidAction, "mouse_move parameters must be finite", path);
        return m;
    }
    if (type == "mouse_press") return MouseButtonPress{button()};
    if (type == "mouse_hold_start") return MouseButtonHoldStart{button()};
    if (type == "mouse_hold_stop") return MouseButtonHoldStop{button()};
    throw Error(Errc::InvalidAction, "unknown action '" + type + "'", path + ".action");
}

inline nlohmann::json pattern_to_json(const TriggerPattern& t) {
    return std::visit(
        [](const auto& k) -> nlohmann::json {
            using T = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<T, PosePattern>) return {{"type", "pose"}, {"pose", k.pose}};
            else if constexpr (std::is_same_v<T, PhrasePattern>) return {{"type", "phrase"}, {"phrase", k.phrase}};
            else if constexpr (std::is_same_v<T, ButtonPattern>)
                return {{"type", "button"}, {"device", k.device}, {"button", k.button}};
            else return {{"type", "analog"}, {"device", k.device}, {"analog", k.analog}};
        },
        t);
}

inline TriggerPattern pattern_from_json(const nlohmann::json& j, const std::string& path) {
    if (!j.is_object()) throw Error(Errc::ParseError, "trigger must be an object", path);
    const std::string type = detail::string_field(j, "type", path);
    if (type == "pose") return PosePattern{detail::string_field(j, "pose", path)};
    if (type == "phrase") return PhrasePattern{detail::string_field(j, "phrase", path)};
    if (type == "button") return ButtonPattern{detail::string_field(j, "device", path), detail::string_field(j, "button", path)};
    if (type == "analog") return AnalogPattern{detail::string_field(j, "device", path), detail::string_field(j, "analog", path)};
    throw Error(Errc::InvalidTrigger, "unknown trigger type '" + type + "'", path + ".type");
}

inline nlohmann::json scheme_to_json(const InteractionScheme& s) {
    nlohmann::json j;
    j["format_version"] = kFormatVersion;
    j["name"] = s.name;
    j["poses"] = nlohmann::json::array();
    for (const auto& p : s.poses) j["poses"].push_back(pose_to_json(p));
    j["phrases"] = nlohmann::json::array();
    for (const auto& p : s.phrases) j["phrases"].push_back(phrase_to_json(p));
    j["devices"] = nlohmann::json::array();
    for (const auto& d : s.devices) j["devices"].push_back({{"id", d.id}, {"buttons", d.buttons}, {"analogs", d.analogs}});
    j["mappings"] = nlohmann::json::array();
    for (const auto& m : s.mappings) {
        nlohmann::json mj;
        mj["trigger"] = pattern_to_json(m.trigger);
        mj["on_activate"] = nlohmann::json::array();
        for (const auto& a : m.on_activate) mj["on_activate"].push_back(action_to_json(a));
        mj["on_deactivate"] = nlohmann::json::array();
        for (const auto& a : m.on_deactivate) mj["on_deactivate"].push_back(action_to_json(a));
        j["mappings"].push_back(std::move(mj));
    }
    j["inference"] = config_to_json(s.inference);
    j["speech"] = {{"max_intra_phrase_gap_ms", s.max_intra_phrase_gap_ms}};
    return j;
}

/// Canonical text form: sorted keys, two-space indent, trailing newline.
inline std::string dump_scheme(const InteractionScheme& s) { return scheme_to_json(s).dump(2) + "\n"; }

namespace detail {

class DiagnosticCollector {
public:
    /// Runs `fn`, recording any Error instead of propagating it.
    template <class Fn>
    bool attempt(Fn&& fn) {
        try {
            fn();
            return true;
        } catch (const Error& e) {
            diags_.push_back(e.diagnostic());
            return false;
        }
    }
    void add(Errc code, std::string message, std::string path) {
        diags_.push_back({code, std::move(path), std::move(message), {}});
    }
    std::vector<Diagnostic>& diagnostics() noexcept { return diags_; }

private:
    std::vector<Diagnostic> diags_;
};

inline std::string indexed(const std::string& base, std::size_t i) { return base + "[" + std::to_string(i) + "]"; }

/// Hold starts left open by `on_activate` must be closed by `on_deactivate`.
inline void check_hold_pairing(const Mapping& m, const std::string& path, DiagnosticCollector& diags) {
    std::map<std::string, int> open;
    auto track = [&](const std::vector<Action>& actions, std::map<std::string, int>& net) {
        for (const auto& a : actions) {
            if (auto* h = std::get_if<KeyHoldStart>(&a)) ++net[h->key];
            if (auto* h = std::get_if<KeyHoldStop>(&a)) --net[h->key];
            if (auto* h = std::get_if<MouseButtonHoldStart>(&a)) ++net[h->button];
            if (auto* h = std::get_if<MouseButtonHoldStop>(&a)) --net[h->button];
        }
    };
    track(m.on_activate, open);
    std::map<std::string, int> closed;
    track(m.on_deactivate, closed);
    for (const auto& [key, count] : open) {
        if (count > 0 && count + closed[key] > 0)
            diags.add(Errc::UnbalancedHold, "hold on '" + key + "' is never stopped", path + ".on_activate");
    }
}

}  // namespace detail

/// Validates a parsed document, returning every diagnostic (empty = valid).
/// On success `out` receives the scheme.
inline std::vector<Diagnostic> validate_scheme(const nlohmann::json& doc, InteractionScheme* out = nullptr) {
    detail::DiagnosticCollector diags;
    InteractionScheme s;

    if (!doc.is_object()) {
        diags.add(Errc::ParseError, "scheme must be a JSON object", "");
        return std::move(diags.diagnostics());
    }
    auto version = doc.find("format_version");
    if (version == doc.end() || !detail::is_integer_json(*version))
        diags.add(Errc::ParseError, "missing integer 'format_version'", "format_version");
    else if (version->get<std::int64_t>() != kFormatVersion)
        diags.add(Errc::UnsupportedVersion, "format_version " + version->dump() + " is not supported", "format_version");

    diags.attempt([&] { s.name = detail::string_field(doc, "name", ""); });

    auto array_section = [&](const char* key) -> const nlohmann::json* {
        auto it = doc.find(key);
        if (it == doc.end()) {
            static const nlohmann::json empty = nlohmann::json::array();
            return &empty;
        }
        if (!it->is_array()) {
            diags.add(Errc::ParseError, std::string("'") + key + "' must be an array", key);
            return nullptr;
        }
        return &*it;
    };

    std::set<std::string> pose_ids, phrase_ids;
    if (const auto* poses = array_section("poses")) {
        for (std::size_t i = 0; i < poses->size(); ++i) {
            const std::string path = detail::indexed("poses", i);
            diags.attempt([&] {
                PoseDefinition p = pose_from_json((*poses)[i], path);
                if (!pose_ids.insert(p.id).second)
                    throw Error(Errc::DuplicateId, "pose id '" + p.id + "' repeated", path + ".id");
                s.poses.push_back(std::move(p));
            });
        }
    }

    if (auto speech = doc.find("speech"); speech != doc.end()) {
        diags.attempt([&] {
            if (!speech->is_object()) throw Error(Errc::ParseError, "'speech' must be an object", "speech");
            if (auto g = speech->find("max_intra_phrase_gap_ms"); g != speech->end()) {
                if (!detail::is_integer_json(*g) || g->get<std::int64_t>() <= 0)
                    throw Error(Errc::InvalidConfig, "must be a positive integer", "speech.max_intra_phrase_gap_ms");
                s.max_intra_phrase_gap_ms = g->get<std::int64_t>();
            }
        });
    }

    if (const auto* phrases = array_section("phrases")) {
        std::map<std::vector<std::string>, std::string> by_words;
        for (std::size_t i = 0; i < phrases->size(); ++i) {
            const std::string path = detail::indexed("phrases", i);
            diags.attempt([&] {
                Phrase p = phrase_from_json((*phrases)[i], path);
                if (!phrase_ids.insert(p.id).second)
                    throw Error(Errc::DuplicateId, "phrase id '" + p.id + "' repeated", path + ".id");
                auto [it, fresh] = by_words.emplace(p.words, p.id);
                if (!fresh)
                    throw Error(Errc::DuplicatePhraseWords, "same words as phrase '" + it->second + "'", path + ".words");
                s.phrases.push_back(std::move(p));
            });
        }
    }

    std::map<std::string, const DeviceBinding*> devices;
    if (const auto* devs = array_section("devices")) {
        s.devices.reserve(devs->size());
        for (std::size_t i = 0; i < devs->size(); ++i) {
            const std::string path = detail::indexed("devices", i);
            diags.attempt([&] {
                const auto& dj = (*devs)[i];
                if (!dj.is_object()) throw Error(Errc::ParseError, "device must be an object", path);
                DeviceBinding d;
                d.id = detail::string_field(dj, "id", path);
                auto names = [&](const char* key, std::vector<std::string>& into) {
                    auto it = dj.find(key);
                    if (it == dj.end()) return;
                    if (!it->is_array()) throw Error(Errc::ParseError, std::string("'") + key + "' must be an array", path + "." + key);
                    std::set<std::string> uniq;
                    for (const auto& v : *it) {
                        if (!v.is_string()) throw Error(Errc::ParseError, "names must be strings", path + "." + key);
                        if (!uniq.insert(v.get<std::string>()).second)
                            throw Error(Errc::DuplicateId, "'" + v.get<std::string>() + "' repeated", path + "." + key);
                        into.push_back(v.get<std::string>());
                    }
                };
                names("buttons", d.buttons);
                names("analogs", d.analogs);
                if (devices.count(d.id)) throw Error(Errc::DuplicateId, "device id '" + d.id + "' repeated", path + ".id");
                s.devices.push_back(std::move(d));
                devices[s.devices.back().id] = &s.devices.back();
            });
        }
    }

    if (const auto* maps = array_section("mappings")) {
        for (std::size_t i = 0; i < maps->size(); ++i) {
            const std::string path = detail::indexed("mappings", i);
            const auto& mj = (*maps)[i];
            if (!mj.is_object()) {
                diags.add(Errc::ParseError, "mapping must be an object", path);
                continue;
            }
            Mapping m;
            bool ok = diags.attempt([&] {
                m.trigger = pattern_from_json(detail::required(mj, "trigger", path), path + ".trigger");
            });
            auto actions = [&](const char* key, std::vector<Action>& into) {
                auto it = mj.find(key);
                if (it == mj.end()) return true;
                if (!it->is_array()) {
                    diags.add(Errc::ParseError, std::string("'") + key + "' must be an array", path + "." + key);
                    return false;
                }
                bool all = true;
                for (std::size_t k = 0; k < it->size(); ++k) {
                    all &= diags.attempt([&] {
                        into.push_back(action_from_json((*it)[k], detail::indexed(path + "." + key, k)));
                    });
                }
                return all;
            };
            ok &= actions("on_activate", m.on_activate);
            ok &= actions("on_deactivate", m.on_deactivate);
            if (!ok) continue;

            const std::string tpath = path + ".trigger";
            std::visit(
                [&](const auto& t) {
                    using T = std::decay_t<decltype(t)>;
                    if constexpr (std::is_same_v<T, PosePattern>) {
                        if (!pose_ids.count(t.pose))
                            diags.add(Errc::UnknownReference, "unknown pose '" + t.pose + "'", tpath + ".pose");
                    } else if constexpr (std::is_same_v<T, PhrasePattern>) {
                        if (!phrase_ids.count(t.phrase))
                            diags.add(Errc::UnknownReference, "unknown phrase '" + t.phrase + "'", tpath + ".phrase");
                    } else {
                        auto dev = devices.find(t.device);
                        if (dev == devices.end()) {
                            diags.add(Errc::UnknownReference, "unknown device '" + t.device + "'", tpath + ".device");
                            return;
                        }
                        const auto& list = [&]() -> const std::vector<std::string>& {
                            if constexpr (std::is_same_v<T, ButtonPattern>) return dev->second->buttons;
                            else return dev->second->analogs;
                        }();
                        const std::string& name = [&]() -> const std::string& {
                            if constexpr (std::is_same_v<T, ButtonPattern>) return t.button;
                            else return t.analog;
                        }();
                        if (std::find(list.begin(), list.end(), name) == list.end())
                            diags.add(Errc::UnknownReference, "device '" + t.device + "' has no input '" + name + "'",
                                      tpath + (std::is_same_v<T, ButtonPattern> ? ".button" : ".analog"));
                    }
                },
                m.trigger);

            const bool edge_only = std::holds_alternative<PhrasePattern>(m.trigger) || std::holds_alternative<AnalogPattern>(m.trigger);
            if (edge_only && !m.on_deactivate.empty())
                diags.add(Errc::InvalidTrigger, "phrase and analog triggers have no deactivation", path + ".on_deactivate");
            detail::check_hold_pairing(m, path, diags);
            s.mappings.push_back(std::move(m));
        }
    }

    if (auto inf = doc.find("inference"); inf != doc.end())
        diags.attempt([&] { s.inference = config_from_json(*inf, "inference"); });

    if (diags.diagnostics().empty() && out) *out = std::move(s);
    return std::move(diags.diagnostics());
}

inline InteractionScheme load_scheme(const nlohmann::json& doc) {
    InteractionScheme s;
    auto diags = validate_scheme(doc, &s);
    if (!diags.empty()) throw ValidationError(std::move(diags));
    return s;
}

inline nlohmann::json parse_scheme_text(std::string_view text) {
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError({{Errc::ParseError, "", std::string("invalid JSON: ") + e.what(), {}}});
    }
}

inline InteractionScheme load_scheme_text(std::string_view text) { return load_scheme(parse_scheme_text(text)); }

}  // namespace gemini

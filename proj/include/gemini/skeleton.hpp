/**
 * @file skeleton.hpp
 * @brief Skeleton data model and the canonical `.skel.jsonl` record codec.
 *
 * Coordinates are meters in the sensor frame: +X to the camera's right (the
 * user's left when facing the sensor), +Y up, +Z away from the camera.
 */
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gemini/error.hpp"

namespace gemini {

enum class JointId : std::uint8_t {
    head,
    shoulder_center,
    shoulder_left,
    shoulder_right,
    elbow_left,
    elbow_right,
    wrist_left,
    wrist_right,
    hand_left,
    hand_right,
    spine,
    hip_center,
    hip_left,
    hip_right,
    knee_left,
    knee_right,
    ankle_left,
    ankle_right,
    foot_left,
    foot_right,
};

inline constexpr std::size_t kJointCount = 20;

inline constexpr std::array<std::string_view, kJointCount> kJointNames = {
    "head",       "shoulder_center", "shoulder_left", "shoulder_right", "elbow_left",
    "elbow_right", "wrist_left",     "wrist_right",   "hand_left",      "hand_right",
    "spine",      "hip_center",      "hip_left",      "hip_right",      "knee_left",
    "knee_right", "ankle_left",      "ankle_right",   "foot_left",      "foot_right",
};

constexpr std::string_view joint_name(JointId id) noexcept {
    return kJointNames[static_cast<std::size_t>(id)];
}

constexpr std::optional<JointId> joint_from_name(std::string_view name) noexcept {
    for (std::size_t i = 0; i < kJointCount; ++i) {
        if (kJointNames[i] == name) return static_cast<JointId>(i);
    }
    return std::nullopt;
}

constexpr std::array<JointId, kJointCount> all_joints() noexcept {
    std::array<JointId, kJointCount> out{};
    for (std::size_t i = 0; i < kJointCount; ++i) out[i] = static_cast<JointId>(i);
    return out;
}

/// Parses a joint name or throws with the given document path.
inline JointId parse_joint(const nlohmann::json& j, const std::string& path) {
    if (!j.is_string()) throw Error(Errc::ParseError, "joint id must be a string", path);
    auto id = joint_from_name(j.get<std::string>());
    if (!id) throw Error(Errc::UnknownReference, "unknown joint '" + j.get<std::string>() + "'", path);
    return *id;
}

struct JointPosition {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    friend bool operator==(const JointPosition&, const JointPosition&) = default;
};

/// One complete sample: exactly one position per joint.
struct SkeletonFrame {
    std::int64_t timestamp_ms = 0;
    std::array<JointPosition, kJointCount> joints{};

    JointPosition& operator[](JointId id) noexcept { return joints[static_cast<std::size_t>(id)]; }
    const JointPosition& operator[](JointId id) const noexcept { return joints[static_cast<std::size_t>(id)]; }

    friend bool operator==(const SkeletonFrame&, const SkeletonFrame&) = default;
};

struct SkeletonStream {
    double fps_nominal = 30.0;
    std::vector<SkeletonFrame> frames;
};

inline double joint_distance(const SkeletonFrame& frame, JointId a, JointId b) {
    if (a == b) throw Error(Errc::SameJoint, "distance requires two distinct joints");
    const auto& pa = frame[a];
    const auto& pb = frame[b];
    return std::sqrt((pa.x - pb.x) * (pa.x - pb.x) + (pa.y - pb.y) * (pa.y - pb.y) + (pa.z - pb.z) * (pa.z - pb.z));
}

namespace detail {

/// Fixed 4-decimal meters. Values that round to zero print unsigned.
inline void append_meters(std::string& out, double v) {
    char buf[64];
    int n = std::snprintf(buf, sizeof buf, "%.4f", v);
    std::string_view s(buf, static_cast<std::size_t>(n));
    if (s == "-0.0000") s = "0.0000";
    out += s;
}

inline bool is_integer_json(const nlohmann::json& j) {
    return j.is_number_integer() || j.is_number_unsigned();
}

inline std::int64_t parse_timestamp(const nlohmann::json& obj) {
    auto it = obj.find("t");
    if (it == obj.end()) throw Error(Errc::MalformedRecord, "missing field 't'", "t");
    if (!is_integer_json(*it)) throw Error(Errc::MalformedRecord, "'t' must be an integer", "t");
    if (it->is_number_integer() && it->get<std::int64_t>() < 0)
        throw Error(Errc::MalformedRecord, "'t' must be non-negative", "t");
    return it->get<std::int64_t>();
}

inline nlohmann::json parse_json_object(std::string_view line) {
    nlohmann::json obj = nlohmann::json::parse(line, nullptr, false);
    if (obj.is_discarded()) throw Error(Errc::MalformedRecord, "record is not valid JSON");
    if (!obj.is_object()) throw Error(Errc::MalformedRecord, "record must be a JSON object");
    return obj;
}

}  // namespace detail

/// Canonical record: `{"t":T,"joints":{"head":[x,y,z],...}}` in enum order.
inline std::string encode_frame(const SkeletonFrame& frame) {
    std::string out;
    out.reserve(900);
    out += "{\"t\":";
    out += std::to_string(frame.timestamp_ms);
    out += ",\"joints\":{";
    for (std::size_t i = 0; i < kJointCount; ++i) {
        if (i) out += ',';
        out += '"';
        out += kJointNames[i];
        out += "\":[";
        detail::append_meters(out, frame.joints[i].x);
        out += ',';
        detail::append_meters(out, frame.joints[i].y);
        out += ',';
        detail::append_meters(out, frame.joints[i].z);
        out += ']';
    }
    out += "}}";
    return out;
}

inline SkeletonFrame decode_frame(std::string_view line) {
    // The DOM collapses duplicate keys, so duplicates inside "joints" are
    // caught while parsing.
    std::optional<std::string> duplicate;
    std::array<bool, kJointCount> seen_key{};
    bool in_joints = false;
    auto callback = [&](int depth, nlohmann::json::parse_event_t event, nlohmann::json& parsed) {
        if (event != nlohmann::json::parse_event_t::key) return true;
        if (depth == 1) {
            in_joints = parsed == "joints";
        } else if (depth == 2 && in_joints) {
            if (auto id = joint_from_name(parsed.get<std::string>())) {
                auto& flag = seen_key[static_cast<std::size_t>(*id)];
                if (flag && !duplicate) duplicate = parsed.get<std::string>();
                flag = true;
            }
        }
        return true;
    };

    nlohmann::json obj;
    try {
        obj = nlohmann::json::parse(line, callback);
    } catch (const nlohmann::json::out_of_range& e) {
        // 406: a number literal overflowed to infinity.
        if (e.id == 406) throw Error(Errc::NonFiniteCoordinate, "coordinate is not finite");
        throw Error(Errc::MalformedRecord, std::string("invalid JSON: ") + e.what());
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::MalformedRecord, std::string("invalid JSON: ") + e.what());
    }
    if (!obj.is_object()) throw Error(Errc::MalformedRecord, "record must be a JSON object");
    if (duplicate) throw Error(Errc::DuplicateJoint, "joint '" + *duplicate + "' listed twice", "joints." + *duplicate);

    SkeletonFrame frame;
    frame.timestamp_ms = detail::parse_timestamp(obj);

    auto joints = obj.find("joints");
    if (joints == obj.end() || !joints->is_object())
        throw Error(Errc::MalformedRecord, "missing object field 'joints'", "joints");

    std::array<bool, kJointCount> present{};
    for (const auto& [name, value] : joints->items()) {
        auto id = joint_from_name(name);
        if (!id) throw Error(Errc::MalformedRecord, "unknown joint '" + name + "'", "joints." + name);
        if (!value.is_array() || value.size() != 3)
            throw Error(Errc::MalformedRecord, "joint position must be [x, y, z]", "joints." + name);
        double c[3];
        for (std::size_t k = 0; k < 3; ++k) {
            if (!value[k].is_number())
                throw Error(Errc::MalformedRecord, "coordinate must be a number", "joints." + name);
            c[k] = value[k].get<double>();
            if (!std::isfinite(c[k]))
                throw Error(Errc::NonFiniteCoordinate, "coordinate is not finite", "joints." + name);
        }
        frame[*id] = {c[0], c[1], c[2]};
        present[static_cast<std::size_t>(*id)] = true;
    }
    for (std::size_t i = 0; i < kJointCount; ++i) {
        if (!present[i])
            throw Error(Errc::MissingJoint, "joint '" + std::string(kJointNames[i]) + "' absent",
                        "joints." + std::string(kJointNames[i]));
    }
    return frame;
}

/// Calls `fn(line, record_index)` for every non-blank line; indices are
/// 1-based line numbers.
template <class Fn>
void for_each_record(std::istream& in, Fn&& fn) {
    std::string line;
    std::size_t index = 0;
    while (std::getline(in, line)) {
        ++index;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        fn(std::string_view(line), index);
    }
}

/// Decodes a whole stream, enforcing strictly increasing timestamps.
inline SkeletonStream decode_stream(std::istream& in, double fps_nominal = 30.0) {
    SkeletonStream stream;
    stream.fps_nominal = fps_nominal;
    for_each_record(in, [&](std::string_view line, std::size_t index) {
        SkeletonFrame f;
        try {
            f = decode_frame(line);
        } catch (const Error& e) {
            throw e.at_record(index);
        }
        if (!stream.frames.empty() && f.timestamp_ms <= stream.frames.back().timestamp_ms)
            throw Error(Errc::NonMonotonicTimestamp, "timestamp does not increase", "t").at_record(index);
        stream.frames.push_back(f);
    });
    return stream;
}

}  // namespace gemini

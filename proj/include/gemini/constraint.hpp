/**
 * @file constraint.hpp
 * @brief Spatial constraint predicates, pose definitions and the debounced
 * per-frame pose detector.
 */
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "gemini/error.hpp"
#include "gemini/skeleton.hpp"

namespace gemini {

/// Non-empty subset of {X, Y, Z}, stored as a bitmask (X=1, Y=2, Z=4).
class AxisSet {
public:
    static constexpr std::uint8_t kX = 1, kY = 2, kZ = 4;

    constexpr AxisSet() = default;
    constexpr explicit AxisSet(std::uint8_t bits) : bits_(bits) {}

    static constexpr AxisSet x() { return AxisSet(kX); }
    static constexpr AxisSet y() { return AxisSet(kY); }
    static constexpr AxisSet z() { return AxisSet(kZ); }
    static constexpr AxisSet xyz() { return AxisSet(kX | kY | kZ); }

    constexpr std::uint8_t bits() const noexcept { return bits_; }
    constexpr bool valid() const noexcept { return bits_ >= 1 && bits_ <= 7; }
    constexpr bool has_x() const noexcept { return bits_ & kX; }
    constexpr bool has_y() const noexcept { return bits_ & kY; }
    constexpr bool has_z() const noexcept { return bits_ & kZ; }
    constexpr int size() const noexcept { return has_x() + has_y() + has_z(); }
    constexpr bool single() const noexcept { return size() == 1; }

    /// True when this is a proper subset of `other`.
    constexpr bool strict_subset_of(AxisSet other) const noexcept {
        return bits_ != other.bits_ && (bits_ & other.bits_) == bits_;
    }

    std::string name() const {
        std::string s;
        if (has_x()) s += 'x';
        if (has_y()) s += 'y';
        if (has_z()) s += 'z';
        return s;
    }

    static std::optional<AxisSet> parse(std::string_view s) {
        std::uint8_t bits = 0;
        for (char c : s) {
            std::uint8_t b = c == 'x' ? kX : c == 'y' ? kY : c == 'z' ? kZ : 0;
            if (b == 0 || (bits & b)) return std::nullopt;
            bits |= b;
        }
        if (bits == 0) return std::nullopt;
        return AxisSet(bits);
    }

    friend constexpr bool operator==(AxisSet, AxisSet) = default;

private:
    std::uint8_t bits_ = kX | kY | kZ;
};

/// The seven axis sets in the order X, Y, Z, XY, YZ, XZ, XYZ.
inline constexpr std::array<AxisSet, 7> kAllAxisSets = {
    AxisSet(AxisSet::kX),
    AxisSet(AxisSet::kY),
    AxisSet(AxisSet::kZ),
    AxisSet(AxisSet::kX | AxisSet::kY),
    AxisSet(AxisSet::kY | AxisSet::kZ),
    AxisSet(AxisSet::kX | AxisSet::kZ),
    AxisSet(AxisSet::kX | AxisSet::kY | AxisSet::kZ),
};

/// Euclidean norm of (a - b) restricted to the axes in `axes`.
inline double projected_distance(const JointPosition& a, const JointPosition& b, AxisSet axes) noexcept {
    double s = 0.0;
    if (axes.has_x()) s += (a.x - b.x) * (a.x - b.x);
    if (axes.has_y()) s += (a.y - b.y) * (a.y - b.y);
    if (axes.has_z()) s += (a.z - b.z) * (a.z - b.z);
    return std::sqrt(s);
}

/// min <= |pa - pb| <= max, measured over `axes` (all three by default).
struct DistanceConstraint {
    JointId a;
    JointId b;
    double min = 0.0;
    double max = 0.0;
    AxisSet axes = AxisSet::xyz();
    friend bool operator==(const DistanceConstraint&, const DistanceConstraint&) = default;
};

/// a is nearer the camera than b by more than margin: pb.z - pa.z > margin.
struct InFrontConstraint {
    JointId a;
    JointId b;
    double margin = 0.0;
    friend bool operator==(const InFrontConstraint&, const InFrontConstraint&) = default;
};

/// a is left of b, seen from the camera: pb.x - pa.x > margin.
struct LeftToConstraint {
    JointId a;
    JointId b;
    double margin = 0.0;
    friend bool operator==(const LeftToConstraint&, const LeftToConstraint&) = default;
};

/// pa.y - pb.y > margin.
struct AboveOfConstraint {
    JointId a;
    JointId b;
    double margin = 0.0;
    friend bool operator==(const AboveOfConstraint&, const AboveOfConstraint&) = default;
};

/// pa.y > threshold.
struct AboveValueConstraint {
    JointId a;
    double threshold = 0.0;
    friend bool operator==(const AboveValueConstraint&, const AboveValueConstraint&) = default;
};

using Constraint =
    std::variant<DistanceConstraint, InFrontConstraint, LeftToConstraint, AboveOfConstraint, AboveValueConstraint>;

inline bool evaluate_constraint(const Constraint& c, const SkeletonFrame& f) noexcept {
    struct Visitor {
        const SkeletonFrame& f;
        bool operator()(const DistanceConstraint& d) const noexcept {
            double dist = projected_distance(f[d.a], f[d.b], d.axes);
            return d.min <= dist && dist <= d.max;
        }
        bool operator()(const InFrontConstraint& c) const noexcept { return f[c.b].z - f[c.a].z > c.margin; }
        bool operator()(const LeftToConstraint& c) const noexcept { return f[c.b].x - f[c.a].x > c.margin; }
        bool operator()(const AboveOfConstraint& c) const noexcept { return f[c.a].y - f[c.b].y > c.margin; }
        bool operator()(const AboveValueConstraint& c) const noexcept { return f[c.a].y > c.threshold; }
    };
    return std::visit(Visitor{f}, c);
}

inline std::string_view constraint_type_name(const Constraint& c) noexcept {
    static constexpr std::string_view names[] = {"distance", "in_front", "left_to", "above_of", "above_value"};
    return names[c.index()];
}

/// Throws InvalidConstraint when the parameter invariants do not hold.
inline void validate_constraint(const Constraint& c, const std::string& path = {}) {
    auto fail = [&](const std::string& why) { throw Error(Errc::InvalidConstraint, why, path); };
    auto check_margin = [&](double m) {
        if (!std::isfinite(m) || m < 0.0) fail("margin must be a finite value >= 0");
    };
    std::visit(
        [&](const auto& k) {
            using T = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<T, AboveValueConstraint>) {
                if (!std::isfinite(k.threshold)) fail("threshold must be finite");
            } else {
                if (k.a == k.b) fail("constraint joints must differ");
                if constexpr (std::is_same_v<T, DistanceConstraint>) {
                    if (!std::isfinite(k.min) || !std::isfinite(k.max) || k.min < 0.0 || k.min > k.max)
                        fail("distance band requires 0 <= min <= max");
                    if (!k.axes.valid()) fail("axes must be a non-empty subset of xyz");
                } else {
                    check_margin(k.margin);
                }
            }
        },
        c);
}

inline nlohmann::json constraint_to_json(const Constraint& c) {
    nlohmann::json j;
    j["type"] = constraint_type_name(c);
    std::visit(
        [&](const auto& k) {
            using T = std::decay_t<decltype(k)>;
            j["a"] = joint_name(k.a);
            if constexpr (std::is_same_v<T, AboveValueConstraint>) {
                j["threshold"] = k.threshold;
            } else {
                j["b"] = joint_name(k.b);
                if constexpr (std::is_same_v<T, DistanceConstraint>) {
                    j["min"] = k.min;
                    j["max"] = k.max;
                    if (k.axes != AxisSet::xyz()) j["axes"] = k.axes.name();
                } else {
                    j["margin"] = k.margin;
                }
            }
        },
        c);
    return j;
}

namespace detail {

inline double number_field(const nlohmann::json& j, const char* key, const std::string& path,
                           std::optional<double> fallback = std::nullopt) {
    auto it = j.find(key);
    if (it == j.end()) {
        if (fallback) return *fallback;
        throw Error(Errc::ParseError, std::string("missing number field '") + key + "'", path);
    }
    if (!it->is_number()) throw Error(Errc::ParseError, std::string("'") + key + "' must be a number", path + "." + key);
    return it->get<double>();
}

inline const nlohmann::json& required(const nlohmann::json& j, const char* key, const std::string& path) {
    auto it = j.find(key);
    if (it == j.end()) throw Error(Errc::ParseError, std::string("missing field '") + key + "'", path);
    return *it;
}

inline std::string string_field(const nlohmann::json& j, const char* key, const std::string& path) {
    const auto& v = required(j, key, path);
    if (!v.is_string()) throw Error(Errc::ParseError, std::string("'") + key + "' must be a string", path + "." + key);
    return v.get<std::string>();
}

}  // namespace detail

inline Constraint constraint_from_json(const nlohmann::json& j, const std::string& path = {}) {
    if (!j.is_object()) throw Error(Errc::ParseError, "constraint must be an object", path);
    const std::string type = detail::string_field(j, "type", path);
    const JointId a = parse_joint(detail::required(j, "a", path), path + ".a");
    auto joint_b = [&] { return parse_joint(detail::required(j, "b", path), path + ".b"); };
    auto margin = [&] { return detail::number_field(j, "margin", path, 0.0); };

    Constraint c;
    if (type == "distance") {
        DistanceConstraint d{a, joint_b(), detail::number_field(j, "min", path), detail::number_field(j, "max", path)};
        if (auto it = j.find("axes"); it != j.end()) {
            auto axes = it->is_string() ? AxisSet::parse(it->get<std::string>()) : std::nullopt;
            if (!axes) throw Error(Errc::InvalidConstraint, "axes must be a non-empty subset of \"xyz\"", path + ".axes");
            d.axes = *axes;
        }
        c = d;
    } else if (type == "in_front") {
        c = InFrontConstraint{a, joint_b(), margin()};
    } else if (type == "left_to") {
        c = LeftToConstraint{a, joint_b(), margin()};
    } else if (type == "above_of") {
        c = AboveOfConstraint{a, joint_b(), margin()};
    } else if (type == "above_value") {
        if (j.contains("b")) throw Error(Errc::InvalidConstraint, "above_value takes a single joint", path + ".b");
        c = AboveValueConstraint{a, detail::number_field(j, "threshold", path)};
    } else {
        throw Error(Errc::InvalidConstraint, "unknown constraint type '" + type + "'", path + ".type");
    }
    validate_constraint(c, path);
    return c;
}

/// One-line human-readable rendering, e.g. "above_of(hand_right, head, margin=0.2000 m)".
inline std::string describe(const Constraint& c) {
    char buf[160];
    std::visit(
        [&](const auto& k) {
            using T = std::decay_t<decltype(k)>;
            std::string a(joint_name(k.a));
            if constexpr (std::is_same_v<T, AboveValueConstraint>) {
                std::snprintf(buf, sizeof buf, "above_value(%s, threshold=%.4f m)", a.c_str(), k.threshold);
            } else if constexpr (std::is_same_v<T, DistanceConstraint>) {
                std::snprintf(buf, sizeof buf, "distance(%s, %s, axes=%s, min=%.4f m, max=%.4f m)", a.c_str(),
                              std::string(joint_name(k.b)).c_str(), k.axes.name().c_str(), k.min, k.max);
            } else {
                std::snprintf(buf, sizeof buf, "%s(%s, %s, margin=%.4f m)",
                              std::string(constraint_type_name(Constraint{k})).c_str(), a.c_str(),
                              std::string(joint_name(k.b)).c_str(), k.margin);
            }
        },
        c);
    return buf;
}

struct PoseDefinition {
    std::string id;
    std::vector<Constraint> constraints;
    int activate_frames = 2;
    int release_frames = 2;

    friend bool operator==(const PoseDefinition&, const PoseDefinition&) = default;
};

inline bool evaluate_pose(const PoseDefinition& pose, const SkeletonFrame& f) noexcept {
    for (const auto& c : pose.constraints) {
        if (!evaluate_constraint(c, f)) return false;
    }
    return true;
}

inline void validate_pose(const PoseDefinition& pose, const std::string& path = {}) {
    if (pose.id.empty()) throw Error(Errc::InvalidPose, "pose id must be non-empty", path + ".id");
    if (pose.constraints.empty()) throw Error(Errc::InvalidPose, "pose needs at least one constraint", path + ".constraints");
    if (pose.activate_frames < 1 || pose.release_frames < 1)
        throw Error(Errc::InvalidPose, "activate_frames and release_frames must be positive", path);
    for (std::size_t i = 0; i < pose.constraints.size(); ++i)
        validate_constraint(pose.constraints[i], path + ".constraints[" + std::to_string(i) + "]");
}

inline nlohmann::json pose_to_json(const PoseDefinition& pose) {
    nlohmann::json j;
    j["id"] = pose.id;
    j["constraints"] = nlohmann::json::array();
    for (const auto& c : pose.constraints) j["constraints"].push_back(constraint_to_json(c));
    j["activate_frames"] = pose.activate_frames;
    j["release_frames"] = pose.release_frames;
    return j;
}

inline PoseDefinition pose_from_json(const nlohmann::json& j, const std::string& path = {}) {
    if (!j.is_object()) throw Error(Errc::ParseError, "pose must be an object", path);
    PoseDefinition pose;
    pose.id = detail::string_field(j, "id", path);
    const auto& cs = detail::required(j, "constraints", path);
    if (!cs.is_array()) throw Error(Errc::ParseError, "'constraints' must be an array", path + ".constraints");
    for (std::size_t i = 0; i < cs.size(); ++i)
        pose.constraints.push_back(constraint_from_json(cs[i], path + ".constraints[" + std::to_string(i) + "]"));
    auto frames = [&](const char* key) {
        auto it = j.find(key);
        if (it == j.end()) return 2;
        if (!detail::is_integer_json(*it)) throw Error(Errc::ParseError, std::string("'") + key + "' must be an integer", path + "." + key);
        return it->get<int>();
    };
    pose.activate_frames = frames("activate_frames");
    pose.release_frames = frames("release_frames");
    validate_pose(pose, path);
    return pose;
}

// ---------------------------------------------------------------------------
// Detector

struct PoseTrack {
    bool active = false;
    bool satisfied = false;  // result of the last evaluation
    std::uint32_t satisfy_run = 0;
    std::uint32_t fail_run = 0;

    friend bool operator==(const PoseTrack&, const PoseTrack&) = default;
};

enum class PoseEventKind { Activated, Deactivated };

struct PoseEvent {
    std::string pose_id;
    PoseEventKind kind;
    std::int64_t timestamp_ms;

    friend bool operator==(const PoseEvent&, const PoseEvent&) = default;
};

inline std::string_view to_string(PoseEventKind k) noexcept {
    return k == PoseEventKind::Activated ? "activated" : "deactivated";
}

class DetectorState {
public:
    DetectorState() = default;

    static DetectorState covering(std::span<const PoseDefinition> poses) {
        DetectorState s;
        for (const auto& p : poses) s.tracks_.emplace(p.id, PoseTrack{});
        return s;
    }

    void add(const std::string& pose_id) { tracks_.try_emplace(pose_id); }
    void erase(const std::string& pose_id) { tracks_.erase(pose_id); }
    bool contains(const std::string& pose_id) const { return tracks_.count(pose_id) != 0; }

    const PoseTrack& at(const std::string& pose_id) const {
        auto it = tracks_.find(pose_id);
        if (it == tracks_.end()) throw Error(Errc::UnknownPose, "no detector state for pose '" + pose_id + "'");
        return it->second;
    }
    PoseTrack& at(const std::string& pose_id) {
        return const_cast<PoseTrack&>(static_cast<const DetectorState&>(*this).at(pose_id));
    }

    const std::map<std::string, PoseTrack>& tracks() const noexcept { return tracks_; }

    friend bool operator==(const DetectorState&, const DetectorState&) = default;

private:
    std::map<std::string, PoseTrack> tracks_;
};

/// Advances every pose by one frame. Events come out in pose definition
/// order and carry the frame's timestamp. Throws UnknownPose before
/// touching any state if a pose is not covered.
inline std::vector<PoseEvent> step_detector(DetectorState& state, std::span<const PoseDefinition> poses,
                                            const SkeletonFrame& f) {
    std::vector<PoseTrack*> tracks;
    tracks.reserve(poses.size());
    for (const auto& p : poses) tracks.push_back(&state.at(p.id));

    std::vector<PoseEvent> events;
    for (std::size_t i = 0; i < poses.size(); ++i) {
        const auto& pose = poses[i];
        PoseTrack& t = *tracks[i];
        t.satisfied = evaluate_pose(pose, f);
        if (t.satisfied) {
            t.fail_run = 0;
            ++t.satisfy_run;
            if (!t.active && t.satisfy_run >= static_cast<std::uint32_t>(pose.activate_frames)) {
                t.active = true;
                events.push_back({pose.id, PoseEventKind::Activated, f.timestamp_ms});
            }
        } else {
            t.satisfy_run = 0;
            ++t.fail_run;
            if (t.active && t.fail_run >= static_cast<std::uint32_t>(pose.release_frames)) {
                t.active = false;
                events.push_back({pose.id, PoseEventKind::Deactivated, f.timestamp_ms});
            }
        }
    }
    return events;
}

}  // namespace gemini

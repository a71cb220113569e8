/**
 * @file inference.hpp
 * @brief Automatic pose definition from a short recording.
 *
 * The recording is downsampled by a windowed median filter, then every pair
 * of tracked joints is examined over the seven axis subsets. Pair/axis
 * combinations whose projected distance varies by more than the motion
 * threshold become constraints, parameterized from the last window frame.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "gemini/constraint.hpp"
#include "gemini/error.hpp"
#include "gemini/skeleton.hpp"

namespace gemini {

struct InferenceConfig {
    std::int64_t window_ms = 1500;
    std::int64_t window_overlap_ms = 500;
    double motion_threshold_m = 0.15;
    double band_tolerance_m = 0.10;
    double order_margin_fraction = 0.5;
    // shoulder_center stands in for the neck.
    std::vector<JointId> tracked_joints = {JointId::knee_left,  JointId::knee_right, JointId::foot_left,
                                           JointId::foot_right, JointId::spine,      JointId::shoulder_center,
                                           JointId::hand_left,  JointId::hand_right, JointId::head};

    std::int64_t step_ms() const noexcept { return window_ms - window_overlap_ms; }

    friend bool operator==(const InferenceConfig&, const InferenceConfig&) = default;
};

inline void validate_config(const InferenceConfig& cfg, const std::string& path = "inference") {
    auto fail = [&](const std::string& field, const std::string& why) {
        throw Error(Errc::InvalidConfig, why, path + "." + field);
    };
    if (cfg.window_ms <= 0) fail("window_ms", "must be positive");
    if (cfg.window_overlap_ms <= 0 || cfg.window_overlap_ms >= cfg.window_ms)
        fail("window_overlap_ms", "must be positive and smaller than window_ms");
    if (!(cfg.motion_threshold_m > 0.0) || !std::isfinite(cfg.motion_threshold_m))
        fail("motion_threshold_m", "must be a positive number");
    if (!(cfg.band_tolerance_m >= 0.0) || !std::isfinite(cfg.band_tolerance_m))
        fail("band_tolerance_m", "must be a non-negative number");
    if (!(cfg.order_margin_fraction >= 0.0 && cfg.order_margin_fraction < 1.0))
        fail("order_margin_fraction", "must lie in [0, 1)");
    if (cfg.tracked_joints.size() < 2) fail("tracked_joints", "needs at least two joints");
    for (std::size_t i = 0; i < cfg.tracked_joints.size(); ++i)
        for (std::size_t k = i + 1; k < cfg.tracked_joints.size(); ++k)
            if (cfg.tracked_joints[i] == cfg.tracked_joints[k]) fail("tracked_joints", "joints must be distinct");
}

inline nlohmann::json config_to_json(const InferenceConfig& cfg) {
    nlohmann::json j;
    j["window_ms"] = cfg.window_ms;
    j["window_overlap_ms"] = cfg.window_overlap_ms;
    j["motion_threshold_m"] = cfg.motion_threshold_m;
    j["band_tolerance_m"] = cfg.band_tolerance_m;
    j["order_margin_fraction"] = cfg.order_margin_fraction;
    j["tracked_joints"] = nlohmann::json::array();
    for (auto id : cfg.tracked_joints) j["tracked_joints"].push_back(joint_name(id));
    return j;
}

/// Missing fields keep their defaults.
inline InferenceConfig config_from_json(const nlohmann::json& j, const std::string& path = "inference") {
    if (!j.is_object()) throw Error(Errc::ParseError, "inference config must be an object", path);
    InferenceConfig cfg;
    auto integer = [&](const char* key, std::int64_t& out) {
        if (auto it = j.find(key); it != j.end()) {
            if (!detail::is_integer_json(*it)) throw Error(Errc::ParseError, "must be an integer", path + "." + key);
            out = it->get<std::int64_t>();
        }
    };
    integer("window_ms", cfg.window_ms);
    integer("window_overlap_ms", cfg.window_overlap_ms);
    cfg.motion_threshold_m = detail::number_field(j, "motion_threshold_m", path, cfg.motion_threshold_m);
    cfg.band_tolerance_m = detail::number_field(j, "band_tolerance_m", path, cfg.band_tolerance_m);
    cfg.order_margin_fraction = detail::number_field(j, "order_margin_fraction", path, cfg.order_margin_fraction);
    if (auto it = j.find("tracked_joints"); it != j.end()) {
        if (!it->is_array()) throw Error(Errc::ParseError, "must be an array", path + ".tracked_joints");
        cfg.tracked_joints.clear();
        for (std::size_t i = 0; i < it->size(); ++i)
            cfg.tracked_joints.push_back(parse_joint((*it)[i], path + ".tracked_joints[" + std::to_string(i) + "]"));
    }
    validate_config(cfg, path);
    return cfg;
}

struct Recording {
    std::vector<SkeletonFrame> frames;
    std::int64_t duration_ms = 5000;
    double fps_nominal = 30.0;

    /// Duration is the covered span: last - first timestamp plus one
    /// nominal frame period, rounded up to whole milliseconds.
    static Recording from_frames(std::vector<SkeletonFrame> frames, double fps = 30.0) {
        Recording r;
        r.fps_nominal = fps;
        r.duration_ms = frames.empty() ? 0
                                       : static_cast<std::int64_t>(std::ceil(
                                             static_cast<double>(frames.back().timestamp_ms - frames.front().timestamp_ms) +
                                             1000.0 / fps));
        r.frames = std::move(frames);
        return r;
    }
};

/// Number of median windows a recording of `duration_ms` yields.
inline std::int64_t window_count(std::int64_t duration_ms, const InferenceConfig& cfg) noexcept {
    if (duration_ms < cfg.window_ms) return 0;
    return (duration_ms - cfg.window_ms) / cfg.step_ms() + 1;
}

namespace detail {

/// Median of `v` (reorders it). Even counts average the two middle values.
inline double median_inplace(std::vector<double>& v) {
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    double upper = v[mid];
    if (v.size() % 2 == 1) return upper;
    double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return lower + (upper - lower) / 2.0;
}

}  // namespace detail

/// One median frame per window of `window_ms`, windows advancing by
/// window_ms - window_overlap_ms. Window frames are stamped at the window
/// center.
inline Recording smooth(const Recording& r, const InferenceConfig& cfg) {
    validate_config(cfg);
    const std::int64_t count = window_count(r.duration_ms, cfg);
    if (r.frames.empty() || count < 2)
        throw Error(Errc::RecordingTooShort, "recording too short: " + std::to_string(r.duration_ms) +
                                                 " ms gives fewer than 2 filter windows");

    const std::int64_t t0 = r.frames.front().timestamp_ms;
    Recording out;
    out.fps_nominal = r.fps_nominal;
    out.duration_ms = r.duration_ms;
    out.frames.reserve(static_cast<std::size_t>(count));

    std::vector<double> column;
    auto first = r.frames.begin();
    for (std::int64_t k = 0; k < count; ++k) {
        const std::int64_t lo = t0 + k * cfg.step_ms();
        const std::int64_t hi = lo + cfg.window_ms;
        while (first != r.frames.end() && first->timestamp_ms < lo) ++first;
        auto last = first;
        while (last != r.frames.end() && last->timestamp_ms < hi) ++last;
        if (first == last)
            throw Error(Errc::RecordingGap, "no frames in window starting at " + std::to_string(lo) + " ms");

        SkeletonFrame m;
        m.timestamp_ms = lo + cfg.window_ms / 2;
        for (std::size_t j = 0; j < kJointCount; ++j) {
            for (double JointPosition::*axis : {&JointPosition::x, &JointPosition::y, &JointPosition::z}) {
                column.clear();
                for (auto it = first; it != last; ++it) column.push_back(it->joints[j].*axis);
                m.joints[j].*axis = detail::median_inplace(column);
            }
        }
        out.frames.push_back(m);
    }
    return out;
}

struct RelevantRelation {
    JointId a;
    JointId b;
    AxisSet axes;
    double observed_min;
    double observed_max;
    double final_value;
    JointPosition final_difference;  // p_a - p_b at the last window frame

    friend bool operator==(const RelevantRelation&, const RelevantRelation&) = default;
};

/// Every (pair, axis set) whose projected distance range exceeds the motion
/// threshold. Pairs are reported with a < b in joint order.
inline std::vector<RelevantRelation> analyze_motion(const Recording& smoothed, const InferenceConfig& cfg) {
    validate_config(cfg);
    std::vector<RelevantRelation> out;
    if (smoothed.frames.size() < 2) return out;

    std::vector<JointId> joints = cfg.tracked_joints;
    std::sort(joints.begin(), joints.end());
    const SkeletonFrame& last = smoothed.frames.back();

    for (std::size_t i = 0; i < joints.size(); ++i) {
        for (std::size_t k = i + 1; k < joints.size(); ++k) {
            const JointId a = joints[i], b = joints[k];
            for (AxisSet axes : kAllAxisSets) {
                double lo = INFINITY, hi = -INFINITY;
                for (const auto& f : smoothed.frames) {
                    double d = projected_distance(f[a], f[b], axes);
                    lo = std::min(lo, d);
                    hi = std::max(hi, d);
                }
                if (hi - lo > cfg.motion_threshold_m) {
                    const auto& pa = last[a];
                    const auto& pb = last[b];
                    out.push_back({a, b, axes, lo, hi, projected_distance(pa, pb, axes),
                                   {pa.x - pb.x, pa.y - pb.y, pa.z - pb.z}});
                }
            }
        }
    }
    return out;
}

/// Drops relations for which a strict subset of the axes is already
/// relevant on the same joint pair.
inline std::vector<RelevantRelation> prune_supersets(const std::vector<RelevantRelation>& relations) {
    std::vector<RelevantRelation> kept;
    for (const auto& r : relations) {
        bool redundant = std::any_of(relations.begin(), relations.end(), [&](const RelevantRelation& o) {
            return o.a == r.a && o.b == r.b && o.axes.strict_subset_of(r.axes);
        });
        if (!redundant) kept.push_back(r);
    }
    return kept;
}

inline Constraint constraint_for(const RelevantRelation& r, const InferenceConfig& cfg) {
    if (r.axes.single()) {
        const double diff = r.axes.has_x() ? r.final_difference.x
                            : r.axes.has_y() ? r.final_difference.y
                                             : r.final_difference.z;
        if (std::abs(diff) > cfg.band_tolerance_m) {
            const double margin = cfg.order_margin_fraction * std::abs(diff);
            // Argument order makes the predicate hold at the final frame.
            if (r.axes.has_y()) return diff > 0 ? AboveOfConstraint{r.a, r.b, margin} : AboveOfConstraint{r.b, r.a, margin};
            if (r.axes.has_x()) return diff < 0 ? LeftToConstraint{r.a, r.b, margin} : LeftToConstraint{r.b, r.a, margin};
            return diff < 0 ? InFrontConstraint{r.a, r.b, margin} : InFrontConstraint{r.b, r.a, margin};
        }
    }
    return DistanceConstraint{r.a, r.b, std::max(0.0, r.final_value - cfg.band_tolerance_m),
                              r.final_value + cfg.band_tolerance_m, r.axes};
}

inline PoseDefinition synthesize_pose(const std::vector<RelevantRelation>& relations, const Recording& /*smoothed*/,
                                      const InferenceConfig& cfg, const std::string& pose_id) {
    if (relations.empty())
        throw Error(Errc::NoRelevantMotion, "no relevant motion: pose indistinguishable from rest");
    PoseDefinition pose;
    pose.id = pose_id;
    for (const auto& r : prune_supersets(relations)) pose.constraints.push_back(constraint_for(r, cfg));
    return pose;
}

inline PoseDefinition infer(const Recording& r, const InferenceConfig& cfg, const std::string& pose_id) {
    Recording smoothed = smooth(r, cfg);
    return synthesize_pose(analyze_motion(smoothed, cfg), smoothed, cfg, pose_id);
}

}  // namespace gemini

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "gemini/harness.hpp"
#include "gemini/skeleton.hpp"

namespace gemini::test {

inline SkeletonFrame rest_frame(std::int64_t t = 0) {
    SkeletonFrame f;
    f.timestamp_ms = t;
    f.joints = rest_posture();
    return f;
}

/// Uniform coordinates inside a box roughly the size of a tracked subject.
inline SkeletonFrame random_frame(std::mt19937_64& rng, std::int64_t t = 0) {
    std::uniform_real_distribution<double> x(-1.0, 1.0), y(0.0, 2.0), z(0.5, 4.0);
    SkeletonFrame f;
    f.timestamp_ms = t;
    for (auto& p : f.joints) p = {x(rng), y(rng), z(rng)};
    return f;
}

/// Same, snapped to the 0.1 mm grid of the canonical encoding.
inline SkeletonFrame random_grid_frame(std::mt19937_64& rng, std::int64_t t = 0) {
    std::uniform_int_distribution<int> x(-10000, 10000), y(0, 20000), z(5000, 40000);
    SkeletonFrame f;
    f.timestamp_ms = t;
    for (auto& p : f.joints) p = {x(rng) / 10000.0, y(rng) / 10000.0, z(rng) / 10000.0};
    return f;
}

inline JointId random_joint(std::mt19937_64& rng) {
    return static_cast<JointId>(std::uniform_int_distribution<int>(0, kJointCount - 1)(rng));
}

inline std::string fixture_path(const std::string& name) { return std::string(GEMINI_FIXTURES_DIR) + "/" + name; }

inline std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Scratch directory removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::uint64_t counter = 0;
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("gemini_test_" + std::to_string(rd()) + "_" + std::to_string(++counter));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path_ / name).string(); }

    void write(const std::string& name, const std::string& content) const {
        std::ofstream(file(name), std::ios::binary) << content;
    }

private:
    std::filesystem::path path_;
};

}  // namespace gemini::test

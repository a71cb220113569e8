#include <gtest/gtest.h>

#include <random>

#include "gemini/constraint.hpp"
#include "support.hpp"

using namespace gemini;
using gemini::test::random_frame;
using gemini::test::random_joint;
using gemini::test::rest_frame;

namespace {

std::pair<JointId, JointId> distinct_pair(std::mt19937_64& rng) {
    JointId a = random_joint(rng), b = random_joint(rng);
    while (b == a) b = random_joint(rng);
    return {a, b};
}

Constraint random_constraint(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> m(0.0, 0.8), lo(0.0, 1.5), span(0.0, 1.5), th(0.0, 2.0);
    auto [a, b] = distinct_pair(rng);
    switch (std::uniform_int_distribution<int>(0, 4)(rng)) {
    case 0: {
        double min = lo(rng);
        return DistanceConstraint{a, b, min, min + span(rng),
                                  kAllAxisSets[std::uniform_int_distribution<std::size_t>(0, 6)(rng)]};
    }
    case 1: return InFrontConstraint{a, b, m(rng)};
    case 2: return LeftToConstraint{a, b, m(rng)};
    case 3: return AboveOfConstraint{a, b, m(rng)};
    default: return AboveValueConstraint{a, th(rng)};
    }
}

}  // namespace

TEST(EvaluateConstraint, DistanceBetweenCloseHands) {
    auto f = rest_frame();
    f[JointId::hand_left] = {0, 1, 2};
    f[JointId::hand_right] = {0.05, 1, 2};
    EXPECT_TRUE(evaluate_constraint(DistanceConstraint{JointId::hand_left, JointId::hand_right, 0, 0.10}, f));
}

TEST(EvaluateConstraint, HandAboveHead) {
    auto f = rest_frame();
    f[JointId::hand_right].y = 1.80;
    f[JointId::head].y = 1.70;
    EXPECT_TRUE(evaluate_constraint(AboveOfConstraint{JointId::hand_right, JointId::head, 0}, f));
}

TEST(EvaluateConstraint, RightFootForwardTwentyCentimetres) {
    auto f = rest_frame();
    f[JointId::foot_right].z = 1.70;
    f[JointId::foot_left].z = 2.00;
    EXPECT_TRUE(evaluate_constraint(InFrontConstraint{JointId::foot_right, JointId::foot_left, 0.20}, f));
    EXPECT_FALSE(evaluate_constraint(InFrontConstraint{JointId::foot_left, JointId::foot_right, 0.20}, f));
}

TEST(EvaluateConstraint, TiesEvaluateFalse) {
    auto f = rest_frame();
    f[JointId::hand_left] = {0.5, 1.0, 2.0};
    f[JointId::hand_right] = {0.5, 1.0, 2.0};
    EXPECT_FALSE(evaluate_constraint(InFrontConstraint{JointId::hand_left, JointId::hand_right, 0}, f));
    EXPECT_FALSE(evaluate_constraint(LeftToConstraint{JointId::hand_left, JointId::hand_right, 0}, f));
    EXPECT_FALSE(evaluate_constraint(AboveOfConstraint{JointId::hand_left, JointId::hand_right, 0}, f));
    EXPECT_FALSE(evaluate_constraint(AboveValueConstraint{JointId::hand_left, 1.0}, f));
    // Distance bounds are inclusive.
    EXPECT_TRUE(evaluate_constraint(DistanceConstraint{JointId::hand_left, JointId::hand_right, 0, 0}, f));
}

TEST(EvaluateConstraint, LeftToUsesSmallerX) {
    auto f = rest_frame();
    // shoulder_right sits at negative x: the camera's left.
    EXPECT_TRUE(evaluate_constraint(LeftToConstraint{JointId::shoulder_right, JointId::shoulder_left, 0.3}, f));
    EXPECT_FALSE(evaluate_constraint(LeftToConstraint{JointId::shoulder_left, JointId::shoulder_right, 0}, f));
}

TEST(EvaluateConstraint, DistanceRestrictedToAxes) {
    auto f = rest_frame();
    f[JointId::hand_left] = {0, 1, 2};
    f[JointId::hand_right] = {0.3, 1, 2.4};
    EXPECT_TRUE(evaluate_constraint(DistanceConstraint{JointId::hand_left, JointId::hand_right, 0.29, 0.31, AxisSet::x()}, f));
    EXPECT_TRUE(evaluate_constraint(DistanceConstraint{JointId::hand_left, JointId::hand_right, 0.49, 0.51}, f));
    EXPECT_FALSE(evaluate_constraint(DistanceConstraint{JointId::hand_left, JointId::hand_right, 0.49, 0.51, AxisSet::x()}, f));
}

TEST(EvaluatePose, ConjunctionOfConstraints) {
    auto f = rest_frame();
    PoseDefinition pose{"p", {AboveValueConstraint{JointId::head, 1.0}, InFrontConstraint{JointId::foot_left, JointId::spine, 0.0}}};
    EXPECT_TRUE(evaluate_pose(pose, f));
    std::vector<Constraint> five = {AboveValueConstraint{JointId::head, 1.0}, AboveValueConstraint{JointId::head, 1.1},
                                    AboveValueConstraint{JointId::head, 5.0}, AboveValueConstraint{JointId::head, 1.2},
                                    AboveValueConstraint{JointId::head, 1.3}};
    EXPECT_FALSE(evaluate_pose(PoseDefinition{"q", five}, f));
}

TEST(EvaluatePose, EqualsFoldOverConstraints) {
    std::mt19937_64 rng(21);
    for (int i = 0; i < 2000; ++i) {
        PoseDefinition p{"p", {}};
        const int n = std::uniform_int_distribution<int>(1, 8)(rng);
        for (int k = 0; k < n; ++k) p.constraints.push_back(random_constraint(rng));
        const auto f = random_frame(rng);
        bool all = true;
        for (const auto& c : p.constraints) all = all && evaluate_constraint(c, f);
        ASSERT_EQ(evaluate_pose(p, f), all);
    }
}

TEST(ConstraintProperties, PureRepeatedCalls) {
    std::mt19937_64 rng(22);
    for (int i = 0; i < 2000; ++i) {
        const auto c = random_constraint(rng);
        const auto f = random_frame(rng);
        const bool first = evaluate_constraint(c, f);
        for (int k = 0; k < 3; ++k) ASSERT_EQ(evaluate_constraint(c, f), first);
    }
}

TEST(ConstraintProperties, MarginMonotonicity) {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 5000; ++i) {
        auto c = random_constraint(rng);
        const auto f = random_frame(rng);
        std::visit(
            [&](auto k) {
                using T = decltype(k);
                if constexpr (std::is_same_v<T, InFrontConstraint> || std::is_same_v<T, LeftToConstraint> ||
                              std::is_same_v<T, AboveOfConstraint>) {
                    if (!evaluate_constraint(k, f)) return;
                    T looser = k;
                    looser.margin = k.margin * u(rng);
                    ASSERT_TRUE(evaluate_constraint(looser, f));
                }
            },
            c);
    }
}

TEST(ConstraintProperties, DistanceBandNesting) {
    std::mt19937_64 rng(24);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int satisfied = 0;
    for (int i = 0; i < 5000; ++i) {
        auto [a, b] = distinct_pair(rng);
        const auto f = random_frame(rng);
        const double d = joint_distance(f, a, b);
        DistanceConstraint inner{a, b, std::max(0.0, d - u(rng)), d + u(rng)};
        if (!evaluate_constraint(inner, f)) continue;
        ++satisfied;
        DistanceConstraint outer{a, b, inner.min * u(rng), inner.max + u(rng)};
        ASSERT_TRUE(evaluate_constraint(outer, f));
    }
    EXPECT_GT(satisfied, 4000);
}

TEST(ValidateConstraint, RejectsBrokenParameters) {
    auto invalid = [](const Constraint& c) {
        try {
            validate_constraint(c, "c");
        } catch (const Error& e) {
            return e.code() == Errc::InvalidConstraint;
        }
        return false;
    };
    EXPECT_TRUE(invalid(DistanceConstraint{JointId::head, JointId::head, 0, 1}));
    EXPECT_TRUE(invalid(DistanceConstraint{JointId::head, JointId::spine, 1, 0.5}));
    EXPECT_TRUE(invalid(DistanceConstraint{JointId::head, JointId::spine, -0.1, 0.5}));
    EXPECT_TRUE(invalid(InFrontConstraint{JointId::head, JointId::spine, -0.01}));
    EXPECT_TRUE(invalid(LeftToConstraint{JointId::spine, JointId::spine, 0}));
    EXPECT_TRUE(invalid(AboveOfConstraint{JointId::head, JointId::spine, std::nan("")}));
    EXPECT_TRUE(invalid(AboveValueConstraint{JointId::head, INFINITY}));
    EXPECT_FALSE(invalid(AboveValueConstraint{JointId::head, -1.0}));
}

TEST(ConstraintJson, RoundTripsEveryType) {
    std::mt19937_64 rng(25);
    for (int i = 0; i < 500; ++i) {
        const auto c = random_constraint(rng);
        ASSERT_EQ(constraint_from_json(constraint_to_json(c)), c);
    }
}

TEST(ConstraintJson, AxesOnlyWrittenWhenRestricted) {
    EXPECT_FALSE(constraint_to_json(DistanceConstraint{JointId::head, JointId::spine, 0, 1}).contains("axes"));
    EXPECT_EQ(constraint_to_json(DistanceConstraint{JointId::head, JointId::spine, 0, 1, AxisSet::parse("xz").value()})["axes"], "xz");
}

TEST(ConstraintJson, ErrorsCarryPaths) {
    auto error_of = [](const char* text) {
        try {
            constraint_from_json(nlohmann::json::parse(text), "poses[0].constraints[1]");
        } catch (const Error& e) {
            return std::pair(e.code(), e.path());
        }
        return std::pair(Errc::IoError, std::string());
    };
    EXPECT_EQ(error_of(R"({"type":"in_front","a":"head","b":"neck"})"),
              std::pair(Errc::UnknownReference, std::string("poses[0].constraints[1].b")));
    EXPECT_EQ(error_of(R"({"type":"tilted","a":"head","b":"spine"})").first, Errc::InvalidConstraint);
    EXPECT_EQ(error_of(R"({"type":"distance","a":"head","b":"spine","min":0})").first, Errc::ParseError);
    EXPECT_EQ(error_of(R"({"type":"distance","a":"head","b":"spine","min":0,"max":1,"axes":"xx"})").first,
              Errc::InvalidConstraint);
    EXPECT_EQ(error_of(R"({"type":"above_value","a":"head","b":"spine","threshold":1})").first, Errc::InvalidConstraint);
}

TEST(AxisSet, ParsingAndSubsets) {
    EXPECT_EQ(AxisSet::parse("zx")->name(), "xz");
    EXPECT_FALSE(AxisSet::parse("").has_value());
    EXPECT_FALSE(AxisSet::parse("w").has_value());
    EXPECT_TRUE(AxisSet::y().strict_subset_of(AxisSet::xyz()));
    EXPECT_FALSE(AxisSet::xyz().strict_subset_of(AxisSet::xyz()));
    EXPECT_FALSE(AxisSet::x().strict_subset_of(AxisSet::parse("yz").value()));
    EXPECT_EQ(kAllAxisSets.size(), 7u);
}

TEST(Describe, NamesJointsAndMargin) {
    EXPECT_EQ(describe(AboveOfConstraint{JointId::hand_right, JointId::head, 0.2}),
              "above_of(hand_right, head, margin=0.2000 m)");
    EXPECT_EQ(describe(DistanceConstraint{JointId::hand_left, JointId::hand_right, 0.1, 0.3, AxisSet::x()}),
              "distance(hand_left, hand_right, axes=x, min=0.1000 m, max=0.3000 m)");
}

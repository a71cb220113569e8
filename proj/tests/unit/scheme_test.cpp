#include <gtest/gtest.h>

#include "gemini/scheme.hpp"
#include "support.hpp"

using namespace gemini;
using gemini::test::fixture_path;
using gemini::test::slurp;

namespace {

nlohmann::json skyrim_doc() { return nlohmann::json::parse(slurp(fixture_path("skyrim.scheme.json"))); }

std::vector<Diagnostic> diagnose(const nlohmann::json& doc) { return validate_scheme(doc); }

}  // namespace

TEST(Scheme, SkyrimFixtureLoads) {
    const auto s = load_scheme(skyrim_doc());
    EXPECT_EQ(s.name, "skyrim");
    EXPECT_EQ(s.poses.size(), 8u);
    EXPECT_EQ(s.phrases.size(), 6u);
    EXPECT_EQ(s.mappings.size(), 12u);
    ASSERT_EQ(s.devices.size(), 1u);
    EXPECT_EQ(s.devices[0].id, "nunchuk");
    ASSERT_NE(s.find_pose("step_forward"), nullptr);
    EXPECT_EQ(s.find_pose("step_forward")->constraints.front(),
              Constraint(InFrontConstraint{JointId::foot_right, JointId::foot_left, 0.2}));
    EXPECT_EQ(s.find_pose("nope"), nullptr);
}

TEST(Scheme, UnknownPoseReference) {
    auto doc = skyrim_doc();
    doc["mappings"][0]["trigger"]["pose"] = "flyy";
    const auto d = diagnose(doc);
    ASSERT_EQ(d.size(), 1u);
    EXPECT_EQ(d[0].code, Errc::UnknownReference);
    EXPECT_EQ(d[0].path, "mappings[0].trigger.pose");
}

TEST(Scheme, HoldWithoutStop) {
    auto doc = skyrim_doc();
    doc["mappings"][3].erase("on_deactivate");
    const auto d = diagnose(doc);
    ASSERT_EQ(d.size(), 1u);
    EXPECT_EQ(d[0].code, Errc::UnbalancedHold);
    EXPECT_EQ(d[0].path, "mappings[3].on_activate");
}

TEST(Scheme, HoldStartedAndStoppedInOneListIsBalanced) {
    auto doc = skyrim_doc();
    doc["mappings"][4]["on_activate"] = nlohmann::json::parse(
        R"([{"action":"key_hold_start","key":"alt","repeat_hz":0},{"action":"key_press","key":"f"},{"action":"key_hold_stop","key":"alt"}])");
    EXPECT_TRUE(diagnose(doc).empty());
}

TEST(Scheme, DuplicateIds) {
    auto doc = skyrim_doc();
    doc["poses"][1]["id"] = "step_forward";
    doc["phrases"][1]["id"] = "hello";
    const auto d = diagnose(doc);
    ASSERT_GE(d.size(), 2u);
    EXPECT_EQ(d[0].code, Errc::DuplicateId);
    EXPECT_EQ(d[0].path, "poses[1].id");
    EXPECT_EQ(d[1].code, Errc::DuplicateId);
    EXPECT_EQ(d[1].path, "phrases[1].id");
}

TEST(Scheme, DuplicatePhraseWords) {
    auto doc = skyrim_doc();
    doc["phrases"][4]["words"] = {"buy"};
    const auto d = diagnose(doc);
    ASSERT_FALSE(d.empty());
    EXPECT_EQ(d[0].code, Errc::DuplicatePhraseWords);
    EXPECT_EQ(d[0].path, "phrases[4].words");
}

TEST(Scheme, CollectsEveryDiagnostic) {
    auto doc = skyrim_doc();
    doc["format_version"] = 2;
    doc["poses"][0]["constraints"][0]["margin"] = -1;
    doc["mappings"][6]["on_activate"][0]["key"] = "hyperspace";
    doc["mappings"][7]["trigger"]["phrase"] = "farewell";
    doc["mappings"][8]["on_deactivate"] = nlohmann::json::array({{{"action", "key_press"}, {"key", "a"}}});
    doc["mappings"][9]["trigger"] = {{"type", "button"}, {"device", "nunchuk"}, {"button", "q"}};
    ValidationError err({{Errc::ParseError, "", "", {}}});
    try {
        load_scheme(doc);
        FAIL() << "expected ValidationError";
    } catch (const ValidationError& e) {
        err = e;
    }
    std::vector<std::pair<Errc, std::string>> got;
    for (const auto& d : err.diagnostics()) got.emplace_back(d.code, d.path);
    const std::vector<std::pair<Errc, std::string>> want = {
        {Errc::UnsupportedVersion, "format_version"},
        {Errc::InvalidConstraint, "poses[0].constraints[0]"},
        {Errc::UnknownReference, "mappings[0].trigger.pose"},
        {Errc::UnknownKey, "mappings[6].on_activate[0].key"},
        {Errc::UnknownReference, "mappings[7].trigger.phrase"},
        {Errc::InvalidTrigger, "mappings[8].on_deactivate"},
        {Errc::UnknownReference, "mappings[9].trigger.button"},
    };
    EXPECT_EQ(got, want);
    EXPECT_EQ(err.code(), Errc::UnsupportedVersion);
}

TEST(Scheme, StructuralErrors) {
    EXPECT_EQ(diagnose(nlohmann::json::array()).at(0).code, Errc::ParseError);
    auto doc = skyrim_doc();
    doc.erase("format_version");
    EXPECT_EQ(diagnose(doc).at(0).path, "format_version");
    doc = skyrim_doc();
    doc["poses"] = "none";
    EXPECT_EQ(diagnose(doc).at(0).code, Errc::ParseError);
    doc = skyrim_doc();
    doc["speech"] = {{"max_intra_phrase_gap_ms", 0}};
    EXPECT_EQ(diagnose(doc).at(0).code, Errc::InvalidConfig);
    doc = skyrim_doc();
    doc["mappings"][0]["on_activate"][0]["repeat_hz"] = -1;
    EXPECT_EQ(diagnose(doc).at(0).path, "mappings[0].on_activate[0].repeat_hz");
    EXPECT_THROW(load_scheme_text("{ not json"), ValidationError);
}

TEST(Scheme, CanonicalRoundTrip) {
    const auto s = load_scheme(skyrim_doc());
    const std::string once = dump_scheme(s);
    const auto back = load_scheme_text(once);
    EXPECT_EQ(back, s);
    EXPECT_EQ(dump_scheme(back), once);
}

TEST(Scheme, SpeechGapAndInferenceSurviveRoundTrip) {
    auto doc = skyrim_doc();
    doc["speech"] = {{"max_intra_phrase_gap_ms", 900}};
    doc["inference"] = {{"motion_threshold_m", 0.12}};
    const auto s = load_scheme(doc);
    EXPECT_EQ(s.max_intra_phrase_gap_ms, 900);
    EXPECT_DOUBLE_EQ(s.inference.motion_threshold_m, 0.12);
    EXPECT_EQ(load_scheme_text(dump_scheme(s)), s);
}

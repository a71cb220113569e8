#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gemini {

/// Every structured failure the engine can report. Names are stable and
/// appear verbatim in diagnostics and API error bodies.
enum class Errc {
    MalformedRecord,
    MissingJoint,
    DuplicateJoint,
    NonFiniteCoordinate,
    NonMonotonicTimestamp,
    SameJoint,
    InvalidConstraint,
    InvalidPose,
    UnknownPose,
    RecordingTooShort,
    RecordingGap,
    NoRelevantMotion,
    InvalidConfig,
    InvalidPhrase,
    DuplicatePhraseWords,
    EmptyVocabulary,
    ParseError,
    UnsupportedVersion,
    UnknownReference,
    UnbalancedHold,
    DuplicateId,
    UnknownKey,
    InvalidAction,
    InvalidTrigger,
    ClockRegression,
    SinkClosed,
    InvalidScript,
    BindFailure,
    StaleFrame,
    IllegalTransition,
    IoError,
};

constexpr std::string_view to_string(Errc code) noexcept {
    switch (code) {
    case Errc::MalformedRecord: return "MalformedRecord";
    case Errc::MissingJoint: return "MissingJoint";
    case Errc::DuplicateJoint: return "DuplicateJoint";
    case Errc::NonFiniteCoordinate: return "NonFiniteCoordinate";
    case Errc::NonMonotonicTimestamp: return "NonMonotonicTimestamp";
    case Errc::SameJoint: return "SameJoint";
    case Errc::InvalidConstraint: return "InvalidConstraint";
    case Errc::InvalidPose: return "InvalidPose";
    case Errc::UnknownPose: return "UnknownPose";
    case Errc::RecordingTooShort: return "RecordingTooShort";
    case Errc::RecordingGap: return "RecordingGap";
    case Errc::NoRelevantMotion: return "NoRelevantMotion";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::InvalidPhrase: return "InvalidPhrase";
    case Errc::DuplicatePhraseWords: return "DuplicatePhraseWords";
    case Errc::EmptyVocabulary: return "EmptyVocabulary";
    case Errc::ParseError: return "ParseError";
    case Errc::UnsupportedVersion: return "UnsupportedVersion";
    case Errc::UnknownReference: return "UnknownReference";
    case Errc::UnbalancedHold: return "UnbalancedHold";
    case Errc::DuplicateId: return "DuplicateId";
    case Errc::UnknownKey: return "UnknownKey";
    case Errc::InvalidAction: return "InvalidAction";
    case Errc::InvalidTrigger: return "InvalidTrigger";
    case Errc::ClockRegression: return "ClockRegression";
    case Errc::SinkClosed: return "SinkClosed";
    case Errc::InvalidScript: return "InvalidScript";
    case Errc::BindFailure: return "BindFailure";
    case Errc::StaleFrame: return "StaleFrame";
    case Errc::IllegalTransition: return "IllegalTransition";
    case Errc::IoError: return "IoError";
    }
    return "Unknown";
}

/// One structured diagnostic. `path` points into the offending document
/// (e.g. "mappings[3].on_activate"); `record` is the 1-based record index
/// for line-oriented streams.
struct Diagnostic {
    Errc code;
    std::string path;
    std::string message;
    std::optional<std::size_t> record;
};

class Error : public std::runtime_error {
public:
    Error(Errc code, std::string message, std::string path = {})
        : std::runtime_error(compose(code, message, path)), diag_{code, std::move(path), std::move(message), {}} {}

    Error(Diagnostic diag)
        : std::runtime_error(compose(diag.code, diag.message, diag.path)), diag_(std::move(diag)) {}

    Errc code() const noexcept { return diag_.code; }
    const std::string& path() const noexcept { return diag_.path; }
    const std::string& detail() const noexcept { return diag_.message; }
    std::optional<std::size_t> record() const noexcept { return diag_.record; }
    const Diagnostic& diagnostic() const noexcept { return diag_; }

    /// Same error, annotated with the stream record it came from.
    Error at_record(std::size_t index) const {
        Diagnostic d = diag_;
        d.record = index;
        d.message = "record " + std::to_string(index) + ": " + d.message;
        return Error(std::move(d));
    }

    /// Same error, with `prefix` prepended to its document path.
    Error under(const std::string& prefix) const {
        Diagnostic d = diag_;
        d.path = d.path.empty() ? prefix : (d.path.front() == '[' ? prefix + d.path : prefix + "." + d.path);
        return Error(std::move(d));
    }

private:
    static std::string compose(Errc code, const std::string& message, const std::string& path) {
        std::string out(to_string(code));
        if (!path.empty()) out += " at " + path;
        if (!message.empty()) out += ": " + message;
        return out;
    }

    Diagnostic diag_;
};

/// Carries every diagnostic found while validating a document; the first is
/// reported as the primary error.
class ValidationError : public Error {
public:
    explicit ValidationError(std::vector<Diagnostic> diags)
        : Error(diags.front()), all_(std::move(diags)) {}

    const std::vector<Diagnostic>& diagnostics() const noexcept { return all_; }

private:
    std::vector<Diagnostic> all_;
};

}  // namespace gemini

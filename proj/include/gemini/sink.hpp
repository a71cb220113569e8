#pragma once

#include <algorithm>
#include <fstream>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "gemini/error.hpp"
#include "gemini/mapper.hpp"

namespace gemini {

/// Destination for synthesized output events. An OS-injection backend would
/// implement this interface.
class EventSink {
public:
    virtual ~EventSink() = default;

    /// Writes a batch in timestamp order (stable for equal timestamps).
    void emit(std::span<const OutputEvent> events) {
        if (closed_) throw Error(Errc::SinkClosed, "sink is closed");
        std::vector<OutputEvent> batch(events.begin(), events.end());
        std::stable_sort(batch.begin(), batch.end(),
                         [](const OutputEvent& a, const OutputEvent& b) { return a.timestamp_ms < b.timestamp_ms; });
        for (const auto& e : batch) write(e);
    }

    void close() {
        if (!closed_) finish();
        closed_ = true;
    }
    bool closed() const noexcept { return closed_; }

protected:
    virtual void write(const OutputEvent& e) = 0;
    virtual void finish() {}

private:
    bool closed_ = false;
};

class NullSink final : public EventSink {
protected:
    void write(const OutputEvent&) override {}
};

class CaptureSink final : public EventSink {
public:
    const std::vector<OutputEvent>& events() const noexcept { return events_; }

protected:
    void write(const OutputEvent& e) override { events_.push_back(e); }

private:
    std::vector<OutputEvent> events_;
};

/// `.events.jsonl` writer: a version header line, then one record per event.
class LogSink final : public EventSink {
public:
    explicit LogSink(std::ostream& out) : out_(&out) { header(); }

    explicit LogSink(const std::string& path) : file_(std::make_unique<std::ofstream>(path, std::ios::binary)) {
        if (!*file_) throw Error(Errc::IoError, "cannot open event log '" + path + "'");
        out_ = file_.get();
        header();
    }

protected:
    void write(const OutputEvent& e) override { *out_ << encode_event(e) << '\n'; }
    void finish() override { out_->flush(); }

private:
    void header() { *out_ << "{\"format_version\":" << kFormatVersion << ",\"stream\":\"events\"}\n"; }

    std::unique_ptr<std::ofstream> file_;
    std::ostream* out_;
};

}  // namespace gemini

/**
 * @file grammar.hpp
 * @brief Streaming voice-command phrase matcher over transcript tokens.
 *
 * Matching is case-folded and exact per word. When phrases overlap the
 * longest completed phrase wins and its tokens are consumed. A partial
 * match is resolved as soon as the next token arrives later than the
 * configured intra-phrase gap.
 */
#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gemini/constraint.hpp"
#include "gemini/error.hpp"

namespace gemini {

inline constexpr std::size_t kMaxPhraseWords = 5;

struct Phrase {
    std::string id;
    std::vector<std::string> words;

    friend bool operator==(const Phrase&, const Phrase&) = default;
};

struct TranscriptToken {
    std::int64_t timestamp_ms = 0;
    std::string word;

    friend bool operator==(const TranscriptToken&, const TranscriptToken&) = default;
};

struct CommandEvent {
    std::string phrase_id;
    std::int64_t timestamp_ms;  // of the final matched token
    std::uint64_t first_token;  // stream token indices, inclusive
    std::uint64_t last_token;

    friend bool operator==(const CommandEvent&, const CommandEvent&) = default;
};

inline std::string fold_case(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

inline void validate_phrase(const Phrase& p, const std::string& path = {}) {
    if (p.id.empty()) throw Error(Errc::InvalidPhrase, "phrase id must be non-empty", path + ".id");
    if (p.words.empty() || p.words.size() > kMaxPhraseWords)
        throw Error(Errc::InvalidPhrase, "phrase must have 1 to 5 words", path + ".words");
    for (const auto& w : p.words) {
        bool bad = w.empty() || std::any_of(w.begin(), w.end(), [](unsigned char c) {
                       return std::isspace(c) || std::isupper(c);
                   });
        if (bad) throw Error(Errc::InvalidPhrase, "word '" + w + "' must be a non-empty lowercase token", path + ".words");
    }
}

inline nlohmann::json phrase_to_json(const Phrase& p) {
    return {{"id", p.id}, {"words", p.words}};
}

inline Phrase phrase_from_json(const nlohmann::json& j, const std::string& path = {}) {
    if (!j.is_object()) throw Error(Errc::ParseError, "phrase must be an object", path);
    Phrase p;
    p.id = detail::string_field(j, "id", path);
    const auto& words = detail::required(j, "words", path);
    if (!words.is_array()) throw Error(Errc::ParseError, "'words' must be an array", path + ".words");
    for (const auto& w : words) {
        if (!w.is_string()) throw Error(Errc::ParseError, "words must be strings", path + ".words");
        p.words.push_back(w.get<std::string>());
    }
    validate_phrase(p, path);
    return p;
}

class Grammar {
public:
    const std::vector<Phrase>& phrases() const noexcept { return phrases_; }
    std::int64_t max_gap_ms() const noexcept { return max_gap_ms_; }

    friend Grammar compile(std::vector<Phrase> phrases, std::int64_t max_gap_ms);

    struct Node {
        std::map<std::string, std::size_t, std::less<>> next;
        int phrase = -1;
    };
    const std::vector<Node>& nodes() const noexcept { return nodes_; }

private:
    std::vector<Phrase> phrases_;
    std::vector<Node> nodes_{1};
    std::int64_t max_gap_ms_ = 1500;
};

inline Grammar compile(std::vector<Phrase> phrases, std::int64_t max_gap_ms = 1500) {
    if (phrases.empty()) throw Error(Errc::EmptyVocabulary, "grammar needs at least one phrase");
    Grammar g;
    g.max_gap_ms_ = max_gap_ms;
    std::set<std::string> ids;
    for (std::size_t i = 0; i < phrases.size(); ++i) {
        const auto& p = phrases[i];
        const std::string path = "phrases[" + std::to_string(i) + "]";
        validate_phrase(p, path);
        if (!ids.insert(p.id).second) throw Error(Errc::DuplicateId, "phrase id '" + p.id + "' repeated", path + ".id");
        std::size_t node = 0;
        for (const auto& w : p.words) {
            auto it = g.nodes_[node].next.find(w);
            if (it == g.nodes_[node].next.end()) {
                g.nodes_.emplace_back();
                it = g.nodes_[node].next.emplace(w, g.nodes_.size() - 1).first;
            }
            node = it->second;
        }
        if (g.nodes_[node].phrase >= 0)
            throw Error(Errc::DuplicatePhraseWords,
                        "phrase '" + p.id + "' has the same words as '" + phrases[static_cast<std::size_t>(g.nodes_[node].phrase)].id + "'",
                        path + ".words");
        g.nodes_[node].phrase = static_cast<int>(i);
    }
    g.phrases_ = std::move(phrases);
    return g;
}

struct MatchState {
    struct Pending {
        std::string word;
        std::int64_t timestamp_ms;
        std::uint64_t index;
        friend bool operator==(const Pending&, const Pending&) = default;
    };
    std::vector<Pending> pending;
    std::uint64_t next_index = 0;

    friend bool operator==(const MatchState&, const MatchState&) = default;
};

namespace detail {

/// Resolves pending tokens. Without `final`, stops while the pending run is
/// still a proper prefix of some phrase.
inline void scan(const Grammar& g, MatchState& s, std::vector<CommandEvent>& out, bool final) {
    const auto& nodes = g.nodes();
    while (!s.pending.empty()) {
        std::size_t node = 0, depth = 0, best_len = 0;
        int best_phrase = -1;
        for (; depth < s.pending.size(); ++depth) {
            auto it = nodes[node].next.find(s.pending[depth].word);
            if (it == nodes[node].next.end()) break;
            node = it->second;
            if (nodes[node].phrase >= 0) {
                best_len = depth + 1;
                best_phrase = nodes[node].phrase;
            }
        }
        if (depth == s.pending.size() && !final) {
            if (!nodes[node].next.empty()) return;  // could still extend
            // A leaf is always a complete phrase, handled below.
        }
        if (best_len > 0) {
            const auto& p = g.phrases()[static_cast<std::size_t>(best_phrase)];
            out.push_back({p.id, s.pending[best_len - 1].timestamp_ms, s.pending.front().index,
                           s.pending[best_len - 1].index});
            s.pending.erase(s.pending.begin(), s.pending.begin() + static_cast<std::ptrdiff_t>(best_len));
        } else {
            s.pending.erase(s.pending.begin());
        }
    }
}

}  // namespace detail

/// Resolves a stale partial match: if the last pending token is older than
/// the gap limit relative to `now_ms`, everything pending is settled.
inline std::vector<CommandEvent> expire(const Grammar& g, MatchState& s, std::int64_t now_ms) {
    std::vector<CommandEvent> out;
    if (!s.pending.empty() && now_ms - s.pending.back().timestamp_ms > g.max_gap_ms()) detail::scan(g, s, out, true);
    return out;
}

/// End of stream: settles whatever is pending.
inline std::vector<CommandEvent> flush(const Grammar& g, MatchState& s) {
    std::vector<CommandEvent> out;
    detail::scan(g, s, out, true);
    return out;
}

inline std::vector<CommandEvent> feed(const Grammar& g, MatchState& s, const TranscriptToken& tok) {
    std::vector<CommandEvent> out = expire(g, s, tok.timestamp_ms);
    s.pending.push_back({fold_case(tok.word), tok.timestamp_ms, s.next_index++});
    detail::scan(g, s, out, false);
    return out;
}

// ---------------------------------------------------------------------------
// ".words.jsonl" codec

inline std::string encode_token(const TranscriptToken& tok) {
    nlohmann::json j = tok.word;
    return "{\"t\":" + std::to_string(tok.timestamp_ms) + ",\"word\":" + j.dump() + "}";
}

inline TranscriptToken decode_token(std::string_view line) {
    nlohmann::json obj = detail::parse_json_object(line);
    TranscriptToken tok;
    tok.timestamp_ms = detail::parse_timestamp(obj);
    auto it = obj.find("word");
    if (it == obj.end() || !it->is_string() || it->get<std::string>().empty())
        throw Error(Errc::MalformedRecord, "missing non-empty string field 'word'", "word");
    tok.word = it->get<std::string>();
    return tok;
}

inline std::vector<TranscriptToken> decode_transcript(std::istream& in) {
    std::vector<TranscriptToken> out;
    for_each_record(in, [&](std::string_view line, std::size_t index) {
        TranscriptToken tok;
        try {
            tok = decode_token(line);
        } catch (const Error& e) {
            throw e.at_record(index);
        }
        if (!out.empty() && tok.timestamp_ms < out.back().timestamp_ms)
            throw Error(Errc::NonMonotonicTimestamp, "token timestamps must not decrease", "t").at_record(index);
        out.push_back(std::move(tok));
    });
    return out;
}

}  // namespace gemini

#pragma once
// JSON-lines corpus records. One object per line:
//
//   {"id": "q17", "query": "...",
//    "supplementary_tokens": ["..", ..] | "whitespace separated text",
//    "conflicting_tokens":   ["..", ..] | "whitespace separated text",
//    "context_kind":  "supplementary" | "conflicting" | "mixed",       (optional)
//    "context_tokens": [..], "context_tags": "sscc.." | ["s","c",..]}  (optional)
//
// `context_tokens`/`context_tags` give a fully tagged context and take
// precedence over `context_kind`; without either the context kind is drawn.

#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "swinvib/error.hpp"
#include "swinvib/feature_store.hpp"
#include "swinvib/windowing.hpp"

namespace swinvib {

enum class ContextKind { supplementary, conflicting, mixed };

inline std::string to_string(ContextKind k) {
    switch (k) {
        case ContextKind::supplementary: return "supplementary";
        case ContextKind::conflicting: return "conflicting";
        case ContextKind::mixed: return "mixed";
    }
    return "mixed";
}

inline ContextKind parse_context_kind(const std::string& s) {
    if (s == "supplementary" || s == "s") return ContextKind::supplementary;
    if (s == "conflicting" || s == "c") return ContextKind::conflicting;
    if (s == "mixed" || s == "m") return ContextKind::mixed;
    throw ValidationError("unknown context kind '" + s + "'");
}

inline char tag_char(SourceTag t) { return t == SourceTag::conflicting ? 'c' : 's'; }

struct CorpusSample {
    std::string id;
    std::string query;
    std::vector<std::string> supplementary;
    std::vector<std::string> conflicting;
    std::optional<ContextKind> kind;
    std::optional<TokenSequence> context;  // explicit tagged context
};

namespace detail {

inline std::vector<std::string> token_field(const nlohmann::json& j, const char* key) {
    if (!j.contains(key)) {
        return {};
    }
    const auto& v = j.at(key);
    if (v.is_string()) {
        return whitespace_tokenize(v.get<std::string>());
    }
    return v.get<std::vector<std::string>>();
}

inline std::vector<SourceTag> tag_field(const nlohmann::json& v) {
    std::vector<SourceTag> tags;
    auto push = [&tags](char c) {
        if (c == 'c') tags.push_back(SourceTag::conflicting);
        else if (c == 's') tags.push_back(SourceTag::supplementary);
        else throw ValidationError(std::string("context tag must be 'c' or 's', got '") + c + "'");
    };
    if (v.is_string()) {
        for (char c : v.get<std::string>()) push(c);
    } else {
        for (const auto& s : v) push(s.get<std::string>().at(0));
    }
    return tags;
}

}  // namespace detail

inline CorpusSample corpus_sample_from_json(const nlohmann::json& j) {
    CorpusSample s;
    s.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
    s.query = j.value("query", std::string{});
    s.supplementary = detail::token_field(j, "supplementary_tokens");
    s.conflicting = detail::token_field(j, "conflicting_tokens");
    if (j.contains("context_kind")) {
        s.kind = parse_context_kind(j.at("context_kind").get<std::string>());
    }
    if (j.contains("context_tokens")) {
        TokenSequence ctx;
        ctx.tokens = detail::token_field(j, "context_tokens");
        ctx.tags = detail::tag_field(j.at("context_tags"));
        ctx.validate();
        s.context = std::move(ctx);
    }
    return s;
}

inline nlohmann::json to_json(const CorpusSample& s) {
    nlohmann::json j = {{"id", s.id},
                        {"query", s.query},
                        {"supplementary_tokens", s.supplementary},
                        {"conflicting_tokens", s.conflicting}};
    if (s.kind) {
        j["context_kind"] = to_string(*s.kind);
    }
    if (s.context) {
        j["context_tokens"] = s.context->tokens;
        std::string tags;
        for (auto t : s.context->tags) tags.push_back(tag_char(t));
        j["context_tags"] = tags;
    }
    return j;
}

inline std::vector<CorpusSample> read_corpus(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("path", "cannot open corpus " + path.string());
    }
    std::vector<CorpusSample> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            out.push_back(corpus_sample_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("corpus", path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

inline void write_corpus(const std::filesystem::path& path, std::span<const CorpusSample> samples) {
    std::string text;
    for (const auto& s : samples) {
        text += to_json(s).dump();
        text += '\n';
    }
    io::write_text_atomic(path, text);
}

/// Builds the tagged context of one kind from the record's source tokens.
inline TokenSequence build_context(const CorpusSample& s, ContextKind kind,
                                   std::size_t block = kDefaultInterleaveBlock) {
    auto sup = TokenSequence::single_source(s.supplementary, SourceTag::supplementary);
    auto con = TokenSequence::single_source(s.conflicting, SourceTag::conflicting);
    switch (kind) {
        case ContextKind::supplementary: return sup;
        case ContextKind::conflicting: return con;
        case ContextKind::mixed: return interleave_mixed(sup, con, block);
    }
    return sup;
}

/// Chooses each sample's context: explicit context, then `context_kind`, else
/// mixed with probability `mixed_fraction` and otherwise one source at random.
inline std::vector<PreparedSample> prepare_corpus(std::span<const CorpusSample> corpus, double mixed_fraction,
                                                  std::size_t block, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution pick_mixed(mixed_fraction);
    std::bernoulli_distribution pick_conflicting(0.5);
    std::vector<PreparedSample> out;
    out.reserve(corpus.size());
    for (const auto& s : corpus) {
        PreparedSample p{s.id, s.query, {}};
        if (s.context) {
            p.context = *s.context;
        } else {
            ContextKind kind;
            if (s.kind) {
                kind = *s.kind;
            } else if (s.supplementary.empty() || s.conflicting.empty()) {
                kind = s.supplementary.empty() ? ContextKind::conflicting : ContextKind::supplementary;
            } else if (pick_mixed(rng)) {
                kind = ContextKind::mixed;
            } else {
                kind = pick_conflicting(rng) ? ContextKind::conflicting : ContextKind::supplementary;
            }
            p.context = build_context(s, kind, block);
        }
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace swinvib

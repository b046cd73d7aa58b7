#pragma once
// Token-level context segmentation: mixed-context interleaving, random training
// windows, fixed-length partitioning and single-source labelling.

#include <algorithm>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "swinvib/error.hpp"

namespace swinvib {

enum class SourceTag : std::uint8_t { conflicting, supplementary };

inline constexpr std::size_t kDefaultWindowLength = 7;
inline constexpr std::size_t kDefaultInterleaveBlock = 4;

/// Tokens with a per-token source tag. Tokens are opaque strings.
struct TokenSequence {
    std::vector<std::string> tokens;
    std::vector<SourceTag> tags;

    std::size_t size() const noexcept { return tokens.size(); }
    bool empty() const noexcept { return tokens.empty(); }

    void validate() const {
        if (tokens.size() != tags.size()) {
            throw ValidationError("token sequence: tokens and tags differ in length");
        }
    }

    static TokenSequence single_source(std::vector<std::string> tokens, SourceTag tag) {
        TokenSequence seq;
        seq.tags.assign(tokens.size(), tag);
        seq.tokens = std::move(tokens);
        return seq;
    }
};

/// Default tokenizer: split on runs of whitespace.
inline std::vector<std::string> whitespace_tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::istringstream in{std::string(text)};
    std::string tok;
    while (in >> tok) {
        out.push_back(std::move(tok));
    }
    return out;
}

struct WindowSpec {
    std::size_t start = 0;
    std::size_t length = 0;
    std::size_t window_index = 0;
    bool mixed = false;  // covered tags are not all equal

    std::size_t end() const noexcept { return start + length; }
    friend bool operator==(const WindowSpec&, const WindowSpec&) = default;
};

struct LabeledWindow {
    WindowSpec window;
    int label = 1;  // 1: single source, 0: multiple sources
};

inline bool covers_single_source(const TokenSequence& seq, std::size_t start, std::size_t length) {
    const auto first = seq.tags.begin() + static_cast<std::ptrdiff_t>(start);
    const auto last = first + static_cast<std::ptrdiff_t>(length);
    return std::all_of(first, last, [&](SourceTag t) { return t == *first; });
}

inline WindowSpec make_window(const TokenSequence& seq, std::size_t start, std::size_t length,
                              std::size_t index) {
    if (length == 0 || start + length > seq.size()) {
        throw ValidationError("window exceeds its parent sequence");
    }
    return {start, length, index, !covers_single_source(seq, start, length)};
}

enum class InterleaveStart { supplementary, conflicting };

/// Alternates `block`-token runs of the two sources, starting with the
/// supplementary one by default. When one side runs out the remainder of the
/// other is appended.
inline TokenSequence interleave_mixed(const TokenSequence& supplementary, const TokenSequence& conflicting,
                                      std::size_t block = kDefaultInterleaveBlock,
                                      InterleaveStart first = InterleaveStart::supplementary) {
    if (block < 1) {
        throw ValidationError("interleave block must be >= 1");
    }
    supplementary.validate();
    conflicting.validate();
    const TokenSequence* sides[2] = {&supplementary, &conflicting};
    if (first == InterleaveStart::conflicting) {
        std::swap(sides[0], sides[1]);
    }
    TokenSequence out;
    out.tokens.reserve(supplementary.size() + conflicting.size());
    out.tags.reserve(out.tokens.capacity());
    std::size_t pos[2] = {0, 0};
    std::size_t turn = 0;
    while (pos[0] < sides[0]->size() || pos[1] < sides[1]->size()) {
        const auto& src = *sides[turn];
        std::size_t& p = pos[turn];
        const std::size_t take = std::min(block, src.size() - p);
        for (std::size_t i = 0; i < take; ++i, ++p) {
            out.tokens.push_back(src.tokens[p]);
            out.tags.push_back(src.tags[p]);
        }
        turn ^= 1u;
    }
    return out;
}

class WindowTooShortError : public ValidationError {
public:
    WindowTooShortError(std::size_t have, std::size_t need)
        : ValidationError("sequence of " + std::to_string(have) + " tokens is shorter than window length " +
                          std::to_string(need) + "; pad or skip the sample") {}
};

/// Uniform start in [0, |seq| - len] drawn from `rng`.
template <typename Engine>
WindowSpec random_window(const TokenSequence& seq, std::size_t len, Engine& rng) {
    if (len == 0) {
        throw ValidationError("window length must be positive");
    }
    if (seq.size() < len) {
        throw WindowTooShortError(seq.size(), len);
    }
    std::uniform_int_distribution<std::size_t> start(0, seq.size() - len);
    return make_window(seq, start(rng), len, 0);
}

inline WindowSpec random_window(const TokenSequence& seq, std::size_t len, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return random_window(seq, len, rng);
}

/// Windows of `len` tokens every `stride` tokens (stride == len partitions the
/// sequence). The last window may be shorter and is kept.
inline std::vector<WindowSpec> partition_windows(const TokenSequence& seq, std::size_t len = kDefaultWindowLength,
                                                 std::size_t stride = 0) {
    if (len == 0) {
        throw ValidationError("window length must be positive");
    }
    if (stride == 0) {
        stride = len;
    }
    seq.validate();
    std::vector<WindowSpec> out;
    for (std::size_t start = 0; start < seq.size(); start += stride) {
        const std::size_t length = std::min(len, seq.size() - start);
        out.push_back(make_window(seq, start, length, out.size()));
        if (start + length == seq.size()) {
            break;
        }
    }
    return out;
}

inline LabeledWindow label_window(const TokenSequence& seq, const WindowSpec& w) {
    const bool single = covers_single_source(seq, w.start, w.length);
    return {w, single ? 1 : 0};
}

inline std::vector<std::string> window_tokens(const TokenSequence& seq, const WindowSpec& w) {
    return {seq.tokens.begin() + static_cast<std::ptrdiff_t>(w.start),
            seq.tokens.begin() + static_cast<std::ptrdiff_t>(w.end())};
}

}  // namespace swinvib

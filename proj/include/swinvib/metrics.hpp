#pragma once
// Answer-level evaluation: preference rates, accuracy, correction and
// resistance rates, TRE, Mean-psi, exact match, and Pearson correlation.
//
// Answer records, one JSON object per line:
//   {"id": "q1", "closed_book_correct": true, "answer_source": "memory"|"context"|"uncertain",
//    "correct": false, "token_logprobs": [-0.1, -2.3]}          (token_logprobs optional)

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "swinvib/error.hpp"
#include "swinvib/uncertainty_math.hpp"

namespace swinvib {

enum class AnswerSource { memory, context, uncertain };

inline AnswerSource parse_answer_source(const std::string& s) {
    if (s == "memory") return AnswerSource::memory;
    if (s == "context") return AnswerSource::context;
    if (s == "uncertain") return AnswerSource::uncertain;
    throw ValidationError("unknown answer_source '" + s + "'");
}

struct AnswerRecord {
    std::string id;
    bool closed_book_correct = false;  // member of L
    AnswerSource answer_source = AnswerSource::uncertain;
    bool correct = false;
    std::optional<TokenLikelihoods> token_logprobs;

    bool corrected() const noexcept { return !closed_book_correct && correct; }
    bool resisted() const noexcept { return closed_book_correct && correct; }
};

inline AnswerRecord answer_record_from_json(const nlohmann::json& j) {
    AnswerRecord r;
    r.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
    r.closed_book_correct = j.at("closed_book_correct").get<bool>();
    r.answer_source = parse_answer_source(j.at("answer_source").get<std::string>());
    r.correct = j.at("correct").get<bool>();
    if (j.contains("token_logprobs") && !j.at("token_logprobs").is_null()) {
        r.token_logprobs = TokenLikelihoods(j.at("token_logprobs").get<std::vector<double>>());
    }
    return r;
}

inline std::vector<AnswerRecord> read_answers(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("path", "cannot open answers " + path.string());
    }
    std::vector<AnswerRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(answer_record_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("answers", path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

struct MetricsReport {
    std::size_t S = 0, f_m = 0, f_c = 0, L = 0, C_r = 0, C_crt = 0, C_def = 0;
    double MPR = 0.0, CPR = 0.0, UAR = 0.0, ACC = 0.0, TRE = 0.0;
    std::optional<double> CR;        // undefined when S == L
    std::optional<double> RR;        // undefined when L == 0
    std::optional<double> mean_psi;  // undefined without token log-probabilities

    bool has_undefined() const noexcept { return !CR || !RR || !mean_psi; }

    nlohmann::json to_json() const {
        auto opt = [](const std::optional<double>& v) -> nlohmann::json {
            return v ? nlohmann::json(*v) : nlohmann::json("undefined");
        };
        return {{"S", S},     {"f_m", f_m}, {"f_c", f_c}, {"L", L},     {"C_r", C_r},
                {"C_crt", C_crt}, {"C_def", C_def}, {"MPR", MPR}, {"CPR", CPR}, {"UAR", UAR},
                {"ACC", ACC}, {"CR", opt(CR)}, {"RR", opt(RR)}, {"TRE", TRE}, {"mean_psi", opt(mean_psi)}};
    }

    static std::string csv_header() { return "S,f_m,f_c,L,C_r,C_crt,C_def,MPR,CPR,UAR,ACC,CR,RR,TRE,mean_psi"; }

    std::string csv_row() const {
        auto num = [](double v) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.10g", v);
            return std::string(buf);
        };
        auto opt = [&](const std::optional<double>& v) { return v ? num(*v) : std::string("undefined"); };
        return std::to_string(S) + ',' + std::to_string(f_m) + ',' + std::to_string(f_c) + ',' + std::to_string(L) +
               ',' + std::to_string(C_r) + ',' + std::to_string(C_crt) + ',' + std::to_string(C_def) + ',' +
               num(MPR) + ',' + num(CPR) + ',' + num(UAR) + ',' + num(ACC) + ',' + opt(CR) + ',' + opt(RR) + ',' +
               num(TRE) + ',' + opt(mean_psi);
    }
};

inline MetricsReport compute_report(std::span<const AnswerRecord> records) {
    if (records.empty()) {
        throw ValidationError("metrics need at least one answer record");
    }
    MetricsReport r;
    std::vector<TokenLikelihoods> likelihoods;
    for (const auto& a : records) {
        ++r.S;
        r.f_m += a.answer_source == AnswerSource::memory;
        r.f_c += a.answer_source == AnswerSource::context;
        r.L += a.closed_book_correct;
        r.C_r += a.correct;
        r.C_crt += a.corrected();
        r.C_def += a.resisted();
        if (a.token_logprobs) likelihoods.push_back(*a.token_logprobs);
    }
    const auto s = static_cast<double>(r.S);
    r.MPR = static_cast<double>(r.f_m) / s;
    r.CPR = static_cast<double>(r.f_c) / s;
    r.UAR = static_cast<double>(r.S - r.f_m - r.f_c) / s;
    r.ACC = static_cast<double>(r.C_r) / s;
    if (r.S > r.L) r.CR = static_cast<double>(r.C_crt) / static_cast<double>(r.S - r.L);
    if (r.L > 0) r.RR = static_cast<double>(r.C_def) / static_cast<double>(r.L);
    r.TRE = total_response_entropy({r.ACC, std::min(r.UAR, 1.0 - r.ACC)});
    if (!likelihoods.empty()) r.mean_psi = mean_psi(likelihoods);
    return r;
}

namespace detail {

inline std::string normalize_answer(const std::string& text) {
    std::string lower;
    for (unsigned char c : text) lower.push_back(static_cast<char>(std::tolower(c)));
    std::vector<std::string> words;
    std::string word;
    auto flush = [&]() {
        if (!word.empty()) words.push_back(std::move(word));
        word.clear();
    };
    for (char c : lower) {
        if (std::isspace(static_cast<unsigned char>(c))) flush();
        else word.push_back(c);
    }
    flush();
    // terminal punctuation of the whole answer
    while (!words.empty()) {
        auto& last = words.back();
        while (!last.empty() && std::string_view(".,!?;:").find(last.back()) != std::string_view::npos) last.pop_back();
        if (!last.empty()) break;
        words.pop_back();
    }
    std::string out;
    for (const auto& w : words) {
        if (w == "a" || w == "an" || w == "the") continue;
        if (!out.empty()) out.push_back(' ');
        out += w;
    }
    return out;
}

}  // namespace detail

/// Lowercase, drop articles and terminal punctuation, collapse whitespace.
inline bool exact_match(const std::string& prediction, const std::string& gold) {
    return detail::normalize_answer(prediction) == detail::normalize_answer(gold);
}

/// Pearson r; nullopt when either coordinate has zero variance.
inline std::optional<double> pearson(std::span<const std::pair<double, double>> points) {
    if (points.size() < 3) {
        throw ValidationError("correlation needs at least 3 runs");
    }
    const auto n = static_cast<double>(points.size());
    double mx = 0.0, my = 0.0;
    for (const auto& [x, y] : points) {
        mx += x;
        my += y;
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (const auto& [x, y] : points) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if (sxx == 0.0 || syy == 0.0) {
        return std::nullopt;
    }
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Runs are (mean_psi, tre) pairs.
inline std::optional<double> psi_tre_correlation(std::span<const std::pair<double, double>> runs) {
    return pearson(runs);
}

}  // namespace swinvib

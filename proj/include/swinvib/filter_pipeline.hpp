#pragma once
// Inference-time window filtering: per-layer acceptance probabilities from
// z = mu, weighted averaging over layers, threshold test, prompt assembly.
//
// Ensemble directory: ensemble.json {"xi", "weights", "models": [file, ...]}
// next to one SVM1 checkpoint per layer.

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "swinvib/binary_io.hpp"
#include "swinvib/error.hpp"
#include "swinvib/feature_store.hpp"
#include "swinvib/vib.hpp"
#include "swinvib/windowing.hpp"

namespace swinvib {

inline constexpr double kDefaultThreshold = 0.68;

struct LayerEnsemble {
    std::vector<VibModel> models;
    std::vector<double> weights;
    double xi = kDefaultThreshold;

    static LayerEnsemble uniform(std::vector<VibModel> models, double xi = kDefaultThreshold) {
        LayerEnsemble e;
        e.weights.assign(models.size(), models.empty() ? 0.0 : 1.0 / static_cast<double>(models.size()));
        e.models = std::move(models);
        e.xi = xi;
        e.validate();
        return e;
    }

    std::size_t n_layers() const noexcept { return models.size(); }

    void validate() const {
        if (models.empty()) {
            throw ValidationError("ensemble needs at least one model");
        }
        if (weights.size() != models.size()) {
            throw ValidationError("ensemble needs one weight per model");
        }
        for (const auto& m : models) {
            if (m.arch.input_dim != models.front().arch.input_dim ||
                m.arch.latent_dim != models.front().arch.latent_dim) {
                throw ValidationError("ensemble models disagree on input or latent dimension");
            }
        }
        double sum = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0)) throw ValidationError("ensemble weights must be non-negative");
            sum += w;
        }
        if (std::abs(sum - 1.0) > 1e-9) {
            throw ValidationError("ensemble weights must sum to 1");
        }
        if (!(xi >= 0.0 && xi <= 1.0)) {
            throw ValidationError("threshold xi must lie in [0, 1]");
        }
    }
};

struct FilterDecision {
    WindowSpec window;
    std::vector<double> per_layer_probs;
    double p_hat = 0.0;
    bool accepted = false;

    nlohmann::json to_json() const {
        return {{"window_index", window.window_index},
                {"start", window.start},
                {"length", window.length},
                {"per_layer_probs", per_layer_probs},
                {"p_hat", p_hat},
                {"accepted", accepted}};
    }
};

namespace detail {

inline FilterDecision aggregate(const LayerEnsemble& e, std::vector<double> probs, const WindowSpec& w) {
    FilterDecision d;
    d.window = w;
    for (std::size_t n = 0; n < probs.size(); ++n) d.p_hat += e.weights[n] * probs[n];
    d.per_layer_probs = std::move(probs);
    d.accepted = d.p_hat >= e.xi;
    return d;
}

}  // namespace detail

/// Scores one window from its per-layer features G_1..G_N.
inline FilterDecision score_window(const LayerEnsemble& e, std::span<const Eigen::VectorXd> features,
                                   const WindowSpec& window = {}) {
    if (features.size() != e.n_layers()) {
        throw ValidationError("expected features for " + std::to_string(e.n_layers()) + " layers, got " +
                              std::to_string(features.size()));
    }
    std::vector<double> probs(features.size());
    for (std::size_t n = 0; n < features.size(); ++n) {
        probs[n] = predict_batch(e.models[n], features[n])(0);
    }
    return detail::aggregate(e, std::move(probs), window);
}

/// Scores K windows at once; features[n] is the (D x K) matrix for layer n.
inline std::vector<FilterDecision> score_windows(const LayerEnsemble& e, std::span<const Eigen::MatrixXd> features,
                                                 std::span<const WindowSpec> windows) {
    if (features.size() != e.n_layers()) {
        throw ValidationError("expected features for " + std::to_string(e.n_layers()) + " layers, got " +
                              std::to_string(features.size()));
    }
    const auto k = static_cast<Eigen::Index>(windows.size());
    std::vector<Eigen::RowVectorXd> per_layer;
    per_layer.reserve(features.size());
    for (std::size_t n = 0; n < features.size(); ++n) {
        if (features[n].cols() != k) {
            throw ValidationError("feature matrix columns must match the window count");
        }
        per_layer.push_back(predict_batch(e.models[n], features[n]));
    }
    std::vector<FilterDecision> out;
    out.reserve(windows.size());
    for (Eigen::Index j = 0; j < k; ++j) {
        std::vector<double> probs(features.size());
        for (std::size_t n = 0; n < features.size(); ++n) probs[n] = per_layer[n](j);
        out.push_back(detail::aggregate(e, std::move(probs), windows[static_cast<std::size_t>(j)]));
    }
    return out;
}

/// Per-layer (D x K) feature matrices for the given windows.
inline std::vector<Eigen::MatrixXd> gather_window_features(const FeatureSource& source, const TokenSequence& context,
                                                           std::span<const WindowSpec> windows) {
    std::vector<Eigen::MatrixXd> out;
    for (std::size_t n = 0; n < source.n_layers(); ++n) {
        Eigen::MatrixXd m(static_cast<Eigen::Index>(source.feature_dim()), static_cast<Eigen::Index>(windows.size()));
        for (std::size_t j = 0; j < windows.size(); ++j) {
            m.col(static_cast<Eigen::Index>(j)) = source.features(context, windows[j], n);
        }
        out.push_back(std::move(m));
    }
    return out;
}

enum class FallbackPolicy {
    keep_top1,      // keep the single highest-scoring window
    empty_context,  // prompt is the query alone
    pass_through,   // keep every window
};

inline std::string to_string(FallbackPolicy p) {
    switch (p) {
        case FallbackPolicy::keep_top1: return "keep-top-1";
        case FallbackPolicy::empty_context: return "empty-context";
        case FallbackPolicy::pass_through: return "pass-through";
    }
    return "keep-top-1";
}

inline FallbackPolicy parse_fallback_policy(const std::string& s) {
    if (s == "keep-top-1") return FallbackPolicy::keep_top1;
    if (s == "empty-context") return FallbackPolicy::empty_context;
    if (s == "pass-through") return FallbackPolicy::pass_through;
    throw ValidationError("unknown fallback policy '" + s + "' (keep-top-1 | empty-context | pass-through)");
}

struct FilterOptions {
    std::size_t window_len = kDefaultWindowLength;
    std::size_t stride = 0;  // 0: equal to window_len
    FallbackPolicy fallback = FallbackPolicy::keep_top1;
    std::string separator = " ";
};

struct FilterResult {
    std::vector<WindowSpec> accepted;  // in context order, after any fallback
    std::vector<FilterDecision> decisions;
    std::string prompt;
    bool fallback_applied = false;
};

inline std::string assemble_prompt(const std::string& query, const TokenSequence& context,
                                   std::span<const WindowSpec> windows, const std::string& separator) {
    std::string prompt = query;
    for (const auto& w : windows) {
        prompt += separator;
        for (std::size_t i = w.start; i < w.end(); ++i) {
            if (i > w.start) prompt += ' ';
            prompt += context.tokens[i];
        }
    }
    return prompt;
}

/// Keeps accepted windows in order; decisions stay the raw threshold outcome.
inline FilterResult select_windows(std::vector<FilterDecision> decisions, FallbackPolicy fallback) {
    FilterResult r;
    for (const auto& d : decisions) {
        if (d.accepted) r.accepted.push_back(d.window);
    }
    if (r.accepted.empty() && !decisions.empty()) {
        r.fallback_applied = true;
        if (fallback == FallbackPolicy::keep_top1) {
            const auto best = std::max_element(decisions.begin(), decisions.end(),
                                               [](const auto& a, const auto& b) { return a.p_hat < b.p_hat; });
            r.accepted.push_back(best->window);
        } else if (fallback == FallbackPolicy::pass_through) {
            for (const auto& d : decisions) r.accepted.push_back(d.window);
        }
    }
    r.decisions = std::move(decisions);
    return r;
}

inline FilterResult filter_context(const LayerEnsemble& e, const std::string& query, const TokenSequence& context,
                                   const FeatureSource& source, const FilterOptions& opt = {}) {
    e.validate();
    if (context.empty()) {
        throw ValidationError("context must not be empty");
    }
    if (source.n_layers() != e.n_layers() || source.feature_dim() != e.models.front().arch.input_dim) {
        throw ValidationError("feature source does not match the ensemble (layers or dimension)");
    }
    const auto windows = partition_windows(context, opt.window_len, opt.stride);
    const auto features = gather_window_features(source, context, windows);
    auto r = select_windows(score_windows(e, features, windows), opt.fallback);
    r.prompt = assemble_prompt(query, context, r.accepted, opt.separator);
    return r;
}

inline std::filesystem::path write_ensemble(const std::filesystem::path& dir, const LayerEnsemble& e) {
    e.validate();
    std::filesystem::create_directories(dir);
    nlohmann::json j;
    j["xi"] = e.xi;
    j["weights"] = e.weights;
    j["models"] = nlohmann::json::array();
    for (std::size_t n = 0; n < e.models.size(); ++n) {
        char name[32];
        std::snprintf(name, sizeof name, "layer_%02zu.svm", n);
        write_checkpoint(dir / name, e.models[n]);
        j["models"].push_back(name);
    }
    const auto path = dir / "ensemble.json";
    io::write_text_atomic(path, j.dump(2) + "\n");
    return path;
}

/// Accepts the ensemble directory or its ensemble.json.
inline LayerEnsemble read_ensemble(const std::filesystem::path& where) {
    const auto path = std::filesystem::is_directory(where) ? where / "ensemble.json" : where;
    const auto raw = io::read_file(path);
    const auto j = nlohmann::json::parse(raw.begin(), raw.end(), nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw FormatError("ensemble", "ensemble description is not a JSON object: " + path.string());
    }
    LayerEnsemble e;
    try {
        e.xi = j.value("xi", kDefaultThreshold);
        for (const auto& name : j.at("models")) {
            e.models.push_back(read_checkpoint(path.parent_path() / name.get<std::string>()));
        }
        if (j.contains("weights")) {
            e.weights = j.at("weights").get<std::vector<double>>();
        } else {
            e.weights.assign(e.models.size(), 1.0 / static_cast<double>(e.models.size()));
        }
    } catch (const nlohmann::json::exception& ex) {
        throw FormatError("ensemble", std::string("invalid ensemble description: ") + ex.what());
    }
    e.validate();
    return e;
}

}  // namespace swinvib

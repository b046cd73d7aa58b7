#pragma once
// Seeded stand-in for frozen-LLM attention. Every layer n has a random unit
// direction u_n in R^D; a window whose tokens all come from the conflicting
// source draws its features around +sep/2 u_n, an all-supplementary window
// around -sep/2 u_n, and a mixed window around the midpoint 0. Noise is
// isotropic Gaussian with standard deviation `noise_scale`.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "swinvib/corpus.hpp"
#include "swinvib/feature_store.hpp"
#include "swinvib/windowing.hpp"

namespace swinvib {

struct SyntheticSpec {
    std::size_t n_layers = 4;
    std::size_t feature_dim = 49;
    std::size_t n_samples = 2000;
    std::size_t n_heldout = 1000;
    std::size_t n_eval = 200;
    double cluster_separation = 6.0;
    double noise_scale = 1.0;
    double mixed_fraction = 0.5;
    std::size_t window_len = kDefaultWindowLength;
    std::size_t block = kDefaultInterleaveBlock;
    std::size_t tokens_per_source = 14;
    std::size_t heads = 2;
    std::uint64_t seed = 7;

    void validate() const {
        if (n_layers < 1) throw ValidationError("synthetic spec: need at least one layer");
        if (feature_dim < 2) throw ValidationError("synthetic spec: feature_dim must be >= 2");
        if (!(cluster_separation > 0.0)) throw ValidationError("synthetic spec: separation must be positive");
        if (!(noise_scale > 0.0)) throw ValidationError("synthetic spec: noise must be positive");
        if (!(mixed_fraction >= 0.0 && mixed_fraction <= 1.0)) {
            throw ValidationError("synthetic spec: mixed_fraction must lie in [0, 1]");
        }
        if (window_len < 1 || block < 1 || heads < 1) {
            throw ValidationError("synthetic spec: window_len, block and heads must be positive");
        }
        if (tokens_per_source < window_len) {
            throw ValidationError("synthetic spec: tokens_per_source must be >= window_len");
        }
    }

    nlohmann::json to_json() const {
        return {{"n_layers", n_layers},
                {"feature_dim", feature_dim},
                {"n_samples", n_samples},
                {"n_heldout", n_heldout},
                {"n_eval", n_eval},
                {"cluster_separation", cluster_separation},
                {"noise_scale", noise_scale},
                {"mixed_fraction", mixed_fraction},
                {"window_len", window_len},
                {"block", block},
                {"tokens_per_source", tokens_per_source},
                {"heads", heads},
                {"seed", seed}};
    }

    static SyntheticSpec from_json(const nlohmann::json& j) {
        SyntheticSpec s;
        s.n_layers = j.at("n_layers").get<std::size_t>();
        s.feature_dim = j.at("feature_dim").get<std::size_t>();
        s.n_samples = j.value("n_samples", s.n_samples);
        s.n_heldout = j.value("n_heldout", s.n_heldout);
        s.n_eval = j.value("n_eval", s.n_eval);
        s.cluster_separation = j.at("cluster_separation").get<double>();
        s.noise_scale = j.at("noise_scale").get<double>();
        s.mixed_fraction = j.value("mixed_fraction", s.mixed_fraction);
        s.window_len = j.value("window_len", s.window_len);
        s.block = j.value("block", s.block);
        s.tokens_per_source = j.value("tokens_per_source", s.tokens_per_source);
        s.heads = j.value("heads", s.heads);
        s.seed = j.at("seed").get<std::uint64_t>();
        s.validate();
        return s;
    }
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xCBF29CE484222325ull) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

}  // namespace detail

class SyntheticFeatureSource final : public FeatureSource {
public:
    explicit SyntheticFeatureSource(SyntheticSpec spec) : spec_(std::move(spec)) {
        spec_.validate();
        const auto d = static_cast<Eigen::Index>(spec_.feature_dim);
        for (std::size_t n = 0; n < spec_.n_layers; ++n) {
            std::mt19937_64 rng(detail::splitmix64(spec_.seed ^ (0xD1B54A32D192ED03ull * (n + 1))));
            std::normal_distribution<double> normal;
            Eigen::VectorXd u(d);
            for (Eigen::Index i = 0; i < d; ++i) u[i] = normal(rng);
            directions_.push_back(u.normalized());
        }
    }

    std::size_t n_layers() const override { return spec_.n_layers; }
    std::size_t feature_dim() const override { return spec_.feature_dim; }
    const SyntheticSpec& spec() const noexcept { return spec_; }
    const Eigen::VectorXd& direction(std::size_t layer) const { return directions_.at(layer); }

    /// Cluster draw for the window, before it is spread over attention heads.
    Eigen::VectorXd latent_features(const TokenSequence& seq, const WindowSpec& w, std::size_t layer) const {
        std::mt19937_64 rng(window_seed(seq, w, layer));
        std::normal_distribution<double> normal(0.0, spec_.noise_scale);
        const auto d = static_cast<Eigen::Index>(spec_.feature_dim);
        Eigen::VectorXd x(d);
        for (Eigen::Index i = 0; i < d; ++i) x[i] = normal(rng);
        if (covers_single_source(seq, w.start, w.length)) {
            const double sign = seq.tags[w.start] == SourceTag::conflicting ? 1.0 : -1.0;
            x += sign * 0.5 * spec_.cluster_separation * directions_.at(layer);
        }
        return x;
    }

    /// Heads whose mean is the w x w row-major reshape of the latent draw; the
    /// per-head offsets cancel in the mean.
    std::vector<Eigen::MatrixXd> attention(const TokenSequence& seq, const WindowSpec& w,
                                           std::size_t layer) const override {
        const Eigen::VectorXd x = latent_features(seq, w, layer);
        const auto side = static_cast<Eigen::Index>(w.length);
        Eigen::MatrixXd base = Eigen::MatrixXd::Zero(side, side);
        for (Eigen::Index k = 0; k < std::min<Eigen::Index>(side * side, x.size()); ++k) {
            base(k / side, k % side) = x[k];
        }
        std::vector<Eigen::MatrixXd> heads(spec_.heads, base);
        if (spec_.heads > 1) {
            std::mt19937_64 rng(window_seed(seq, w, layer) ^ 0xA5A5A5A5A5A5A5A5ull);
            std::normal_distribution<double> jitter(0.0, 0.25);
            for (std::size_t h = 0; h + 1 < spec_.heads; ++h) {
                Eigen::MatrixXd j(side, side);
                for (Eigen::Index k = 0; k < j.size(); ++k) j(k / side, k % side) = jitter(rng);
                heads[h] += j;
                heads.back() -= j;
            }
        }
        return heads;
    }

private:
    std::uint64_t window_seed(const TokenSequence& seq, const WindowSpec& w, std::size_t layer) const {
        std::uint64_t h = detail::fnv1a(std::to_string(layer));
        for (std::size_t i = w.start; i < w.end(); ++i) {
            h = detail::fnv1a(seq.tokens[i], h);
            h = detail::fnv1a(std::string_view("\x1f", 1), h);
        }
        return detail::splitmix64(h ^ spec_.seed);
    }

    SyntheticSpec spec_;
    std::vector<Eigen::VectorXd> directions_;
};

namespace detail {

inline std::vector<std::string> synthetic_tokens(const std::string& prefix, std::size_t n) {
    std::vector<std::string> out;
    out.reserve(n);
    for (std::size_t k = 0; k < n; ++k) out.push_back(prefix + std::to_string(k));
    return out;
}

inline std::vector<CorpusSample> synthetic_training_corpus(const SyntheticSpec& spec, const std::string& prefix,
                                                           std::size_t count, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution pick_mixed(spec.mixed_fraction);
    std::bernoulli_distribution pick_conflicting(0.5);
    std::vector<CorpusSample> out;
    for (std::size_t i = 0; i < count; ++i) {
        CorpusSample s;
        s.id = prefix + std::to_string(i);
        s.query = "query " + s.id;
        s.supplementary = synthetic_tokens(s.id + "_s", spec.tokens_per_source);
        s.conflicting = synthetic_tokens(s.id + "_c", spec.tokens_per_source);
        if (pick_mixed(rng)) {
            s.kind = ContextKind::mixed;
        } else {
            s.kind = pick_conflicting(rng) ? ContextKind::conflicting : ContextKind::supplementary;
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace detail

/// Evaluation contexts: two single-source segments from one (gold) source and
/// two interleaved segments, each segment two windows long, in random order.
/// With window-aligned segments half of all windows are mixed.
inline std::vector<CorpusSample> synthetic_eval_corpus(const SyntheticSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(detail::splitmix64(spec.seed ^ 0xE7A1u));
    std::bernoulli_distribution pick_conflicting(0.5);
    const std::size_t seg = 2 * spec.window_len;
    std::vector<CorpusSample> out;
    for (std::size_t i = 0; i < spec.n_eval; ++i) {
        CorpusSample s;
        s.id = "eval" + std::to_string(i);
        s.query = "query " + s.id;
        s.supplementary = detail::synthetic_tokens(s.id + "_s", 3 * seg);
        s.conflicting = detail::synthetic_tokens(s.id + "_c", 3 * seg);
        const SourceTag gold = pick_conflicting(rng) ? SourceTag::conflicting : SourceTag::supplementary;
        std::vector<int> order = {0, 0, 1, 1};  // 0: pure, 1: mixed
        std::shuffle(order.begin(), order.end(), rng);
        TokenSequence ctx;
        std::size_t pure_used = 0, mix_used = 0;
        const auto& gold_tokens = gold == SourceTag::conflicting ? s.conflicting : s.supplementary;
        for (int part : order) {
            TokenSequence piece;
            if (part == 0) {
                piece = TokenSequence::single_source(
                    {gold_tokens.begin() + static_cast<std::ptrdiff_t>(pure_used),
                     gold_tokens.begin() + static_cast<std::ptrdiff_t>(pure_used + seg)},
                    gold);
                pure_used += seg;
            } else {
                // Mixed segments use the pool tail beyond the 2*seg tokens reserved for pure segments.
                const auto half = static_cast<std::ptrdiff_t>(spec.window_len);
                const auto base = static_cast<std::ptrdiff_t>(2 * seg + mix_used);
                piece = interleave_mixed(
                    TokenSequence::single_source({s.supplementary.begin() + base, s.supplementary.begin() + base + half},
                                                 SourceTag::supplementary),
                    TokenSequence::single_source({s.conflicting.begin() + base, s.conflicting.begin() + base + half},
                                                 SourceTag::conflicting),
                    spec.block);
                mix_used += spec.window_len;
            }
            ctx.tokens.insert(ctx.tokens.end(), piece.tokens.begin(), piece.tokens.end());
            ctx.tags.insert(ctx.tags.end(), piece.tags.begin(), piece.tags.end());
        }
        s.context = std::move(ctx);
        out.push_back(std::move(s));
    }
    return out;
}

struct SyntheticDataset {
    TrainingSets train;
    TrainingSets heldout;
    std::vector<CorpusSample> eval_corpus;
    FeatureManifest manifest;
};

inline SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    const SyntheticFeatureSource source(spec);
    SyntheticDataset ds;
    auto build = [&](const std::string& prefix, std::size_t count, std::uint64_t stream) {
        const auto corpus =
            detail::synthetic_training_corpus(spec, prefix, count, detail::splitmix64(spec.seed ^ stream));
        const auto prepared = prepare_corpus(corpus, spec.mixed_fraction, spec.block, spec.seed);
        return build_training_sets(prepared, source, spec.window_len, detail::splitmix64(spec.seed ^ (stream << 1)));
    };
    ds.train = build("train", spec.n_samples, 0x7121u);
    if (spec.n_heldout > 0) {
        ds.heldout = build("heldout", spec.n_heldout, 0x4E1Du);
    }
    ds.eval_corpus = synthetic_eval_corpus(spec);
    ds.manifest.model_name = "synthetic";
    ds.manifest.n_layers = spec.n_layers;
    ds.manifest.feature_dim = spec.feature_dim;
    ds.manifest.window_len = spec.window_len;
    ds.manifest.synthetic = spec.to_json();
    return ds;
}

inline std::string layer_file_name(const std::string& stem, std::size_t layer, const std::string& ext) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%02zu", layer);
    return stem + "_" + buf + ext;
}

/// Writes training/held-out SVF1 files, eval corpus, build report and the
/// manifest into `dir`; returns the manifest path.
inline std::filesystem::path write_synthetic_dataset(SyntheticDataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    ds.manifest.files.clear();
    ds.manifest.heldout_files.clear();
    for (std::size_t n = 0; n < ds.train.layers.size(); ++n) {
        const auto name = layer_file_name("train_layer", n, ".svf");
        write_feature_file(dir / name, ds.train.layers[n]);
        ds.manifest.files.push_back(name);
    }
    for (std::size_t n = 0; n < ds.heldout.layers.size(); ++n) {
        const auto name = layer_file_name("heldout_layer", n, ".svf");
        write_feature_file(dir / name, ds.heldout.layers[n]);
        ds.manifest.heldout_files.push_back(name);
    }
    ds.manifest.eval_corpus = "eval_corpus.jsonl";
    write_corpus(dir / ds.manifest.eval_corpus, ds.eval_corpus);
    io::write_text_atomic(dir / "build_report.json", ds.train.report.to_json().dump(2) + "\n");
    const auto manifest_path = dir / "manifest.json";
    write_manifest(manifest_path, ds.manifest);
    return manifest_path;
}

}  // namespace swinvib

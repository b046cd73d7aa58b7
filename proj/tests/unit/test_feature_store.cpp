#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <random>

#include "swinvib/feature_store.hpp"
#include "swinvib/synthetic.hpp"

using namespace swinvib;

namespace {

// Attention whose entries encode (layer, start, row, col) so features are traceable.
class IndexSource final : public FeatureSource {
public:
    IndexSource(std::size_t layers, std::size_t dim) : layers_(layers), dim_(dim) {}
    std::size_t n_layers() const override { return layers_; }
    std::size_t feature_dim() const override { return dim_; }
    std::vector<Eigen::MatrixXd> attention(const TokenSequence&, const WindowSpec& w, std::size_t layer) const override {
        const auto n = static_cast<Eigen::Index>(w.length);
        Eigen::MatrixXd m(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j)
                m(i, j) = 1000.0 * static_cast<double>(layer) + static_cast<double>(w.start) + 0.01 * (i * n + j);
        return {m, m};
    }

private:
    std::size_t layers_, dim_;
};

TokenSequence tagged(std::size_t n, SourceTag t) {
    std::vector<std::string> toks(n);
    for (std::size_t i = 0; i < n; ++i) toks[i] = "t" + std::to_string(i);
    return TokenSequence::single_source(toks, t);
}

FeatureFile random_file(std::mt19937_64& rng, bool labeled, std::size_t dim, std::size_t n) {
    std::uniform_real_distribution<float> u(-1e6f, 1e6f);
    FeatureFile f;
    f.layer_index = static_cast<std::uint32_t>(rng() % 64);
    f.feature_dim = static_cast<std::uint32_t>(dim);
    f.labeled = labeled;
    for (std::size_t r = 0; r < n; ++r) {
        FeatureRecord rec;
        rec.window_ref = rng();
        if (labeled) rec.label = static_cast<std::uint8_t>(rng() % 2);
        for (std::size_t d = 0; d < dim; ++d) rec.features.push_back(u(rng));
        f.records.push_back(std::move(rec));
    }
    return f;
}

template <typename Fn>
std::string format_field(Fn&& fn) {
    try {
        fn();
    } catch (const FormatError& e) {
        return e.field() + ": " + e.what();
    }
    return "no error";
}

}  // namespace

TEST(MeanHeads, SingleHeadIdentity) {
    Eigen::MatrixXd h = Eigen::MatrixXd::Random(5, 5);
    std::vector<Eigen::MatrixXd> heads{h};
    EXPECT_EQ(mean_heads(heads), h);
}

TEST(MeanHeads, ConstantHeads) {
    std::vector<Eigen::MatrixXd> heads{Eigen::MatrixXd::Constant(3, 3, 0.2), Eigen::MatrixXd::Constant(3, 3, 0.6)};
    const auto m = mean_heads(heads);
    for (Eigen::Index i = 0; i < m.size(); ++i) EXPECT_NEAR(m.data()[i], 0.4, 1e-15);
}

TEST(MeanHeads, MatchesLoopOracle) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<Eigen::MatrixXd> heads(3, Eigen::MatrixXd(2, 2));
    for (auto& h : heads)
        for (Eigen::Index k = 0; k < 4; ++k) h.data()[k] = u(rng);
    const auto m = mean_heads(heads);
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            double s = 0.0;
            for (const auto& h : heads) s += h(i, j);
            EXPECT_NEAR(m(i, j), s / 3.0, 1e-15);
        }
    }
}

TEST(MeanHeads, RejectsRaggedOrEmpty) {
    std::vector<Eigen::MatrixXd> ragged{Eigen::MatrixXd::Zero(3, 3), Eigen::MatrixXd::Zero(2, 2)};
    EXPECT_THROW(mean_heads(ragged), ValidationError);
    std::vector<Eigen::MatrixXd> rect{Eigen::MatrixXd::Zero(2, 3)};
    EXPECT_THROW(mean_heads(rect), ValidationError);
    EXPECT_THROW(mean_heads(std::span<const Eigen::MatrixXd>{}), ValidationError);
}

TEST(Featurize, ExactPadAndTruncate) {
    auto grid = [](int w) {
        Eigen::MatrixXd g(w, w);
        for (int i = 0; i < w; ++i)
            for (int j = 0; j < w; ++j) g(i, j) = i * w + j + 1;
        return g;
    };
    const auto exact = featurize(grid(7), 49);
    for (int k = 0; k < 49; ++k) EXPECT_EQ(exact[k], k + 1);

    const auto padded = featurize(grid(6), 49);
    for (int k = 0; k < 36; ++k) EXPECT_EQ(padded[k], k + 1);
    for (int k = 36; k < 49; ++k) EXPECT_EQ(padded[k], 0.0);

    const auto cut = featurize(grid(7), 16);
    ASSERT_EQ(cut.size(), 16);
    for (int k = 0; k < 16; ++k) EXPECT_EQ(cut[k], k + 1);
}

TEST(BuildTrainingSets, ThreeSamplesTwoLayers) {
    std::vector<PreparedSample> corpus{
        {"a", "q", tagged(9, SourceTag::supplementary)},
        {"b", "q", interleave_mixed(tagged(8, SourceTag::supplementary), tagged(8, SourceTag::conflicting))},
        {"c", "q", tagged(7, SourceTag::conflicting)},
    };
    const IndexSource source(2, 49);
    const auto sets = build_training_sets(corpus, source, 7, 3);
    ASSERT_EQ(sets.layers.size(), 2u);
    for (const auto& f : sets.layers) {
        ASSERT_EQ(f.records.size(), 3u);
        EXPECT_TRUE(f.labeled);
        EXPECT_EQ(f.feature_dim, 49u);
    }
    for (std::size_t r = 0; r < 3; ++r) {
        EXPECT_EQ(sets.layers[0].records[r].label, sets.layers[1].records[r].label);
        EXPECT_EQ(sets.layers[0].records[r].window_ref, r);
    }
    EXPECT_EQ(sets.layers[0].records[0].label, 1);
    EXPECT_EQ(sets.layers[0].records[1].label, 0);
    EXPECT_EQ(sets.layers[0].records[2].label, 1);
    // layer 1 features are offset by 1000 from layer 0 for the same window
    EXPECT_FLOAT_EQ(sets.layers[1].records[1].features[0] - sets.layers[0].records[1].features[0], 1000.0f);
    EXPECT_EQ(sets.report.processed, 3u);
    EXPECT_EQ(sets.report.per_label_counts[0], 1u);
    EXPECT_EQ(sets.report.per_label_counts[1], 2u);
}

TEST(BuildTrainingSets, MixedOnlyCorpusIsAllZero) {
    std::vector<PreparedSample> corpus;
    for (int i = 0; i < 20; ++i) {
        corpus.push_back({std::to_string(i), "q",
                          interleave_mixed(tagged(12, SourceTag::supplementary), tagged(12, SourceTag::conflicting))});
    }
    const auto sets = build_training_sets(corpus, IndexSource(1, 16), 7, 5);
    for (const auto& r : sets.layers[0].records) EXPECT_EQ(r.label, 0);
}

TEST(BuildTrainingSets, ShortSamplesSkippedAndReported) {
    std::vector<PreparedSample> corpus{{"short", "q", tagged(3, SourceTag::supplementary)},
                                       {"ok", "q", tagged(7, SourceTag::supplementary)}};
    const auto sets = build_training_sets(corpus, IndexSource(1, 16), 7, 5);
    EXPECT_EQ(sets.report.skipped, 1u);
    EXPECT_EQ(sets.report.processed, 1u);
    ASSERT_EQ(sets.report.warnings.size(), 1u);
    EXPECT_NE(sets.report.warnings[0].find("short"), std::string::npos);
    EXPECT_EQ(sets.layers[0].records.size(), 1u);
    std::vector<PreparedSample> none;
    EXPECT_THROW(build_training_sets(none, IndexSource(1, 16), 7, 5), ValidationError);
}

TEST(BuildTrainingSets, DeterministicBytes) {
    SyntheticSpec spec;
    spec.n_layers = 2;
    spec.n_samples = 60;
    spec.n_heldout = 0;
    spec.n_eval = 3;
    const auto a = generate_synthetic(spec);
    const auto b = generate_synthetic(spec);
    for (std::size_t n = 0; n < 2; ++n) {
        EXPECT_EQ(encode_feature_file(a.train.layers[n]), encode_feature_file(b.train.layers[n]));
    }
}

TEST(FeatureFileFormat, HeaderLayout) {
    FeatureFile f;
    f.layer_index = 3;
    f.feature_dim = 2;
    f.records.push_back({42, 1, {1.5f, -2.0f}});
    const auto bytes = encode_feature_file(f);
    ASSERT_EQ(bytes.size(), 25u + 8 + 1 + 8);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "SVF1");
    auto u32 = [&](std::size_t off) {
        std::uint32_t v = 0;
        for (int k = 3; k >= 0; --k) v = v << 8 | static_cast<unsigned char>(bytes[off + k]);
        return v;
    };
    EXPECT_EQ(u32(4), 1u);
    EXPECT_EQ(u32(8), 3u);
    EXPECT_EQ(u32(12), 2u);
    EXPECT_EQ(u32(16), 1u);
    EXPECT_EQ(u32(20), 0u);
    EXPECT_EQ(bytes[24], 1);
    EXPECT_EQ(static_cast<unsigned char>(bytes[25]), 42);
    EXPECT_EQ(bytes[33], 1);
    float x;
    std::memcpy(&x, bytes.data() + 34, 4);
    EXPECT_EQ(x, 1.5f);

    f.labeled = false;
    f.records[0].label.reset();
    const auto q = encode_feature_file(f);
    EXPECT_EQ(std::string(q.begin(), q.begin() + 4), "SVQ1");
    EXPECT_EQ(q[24], 0);
    EXPECT_EQ(q.size(), 25u + 8 + 8);
}

TEST(FeatureFileFormat, RoundTripBitIdentical) {
    std::mt19937_64 rng(17);
    for (int t = 0; t < 50; ++t) {
        const auto f = random_file(rng, t % 2 == 0, 1 + rng() % 60, rng() % 20);
        const auto bytes = encode_feature_file(f);
        const auto g = decode_feature_file(bytes);
        EXPECT_EQ(f, g);
        EXPECT_EQ(encode_feature_file(g), bytes);
    }
}

TEST(FeatureFileFormat, RoundTripThroughDisk) {
    std::mt19937_64 rng(4);
    const auto f = random_file(rng, true, 49, 30);
    const auto path = std::filesystem::temp_directory_path() / "swinvib_ff_roundtrip.svf";
    write_feature_file(path, f);
    EXPECT_EQ(read_feature_file(path), f);
    std::filesystem::remove(path);
    EXPECT_THROW(read_feature_file(path), FormatError);
}

TEST(FeatureFileFormat, StructuredErrors) {
    std::mt19937_64 rng(8);
    const auto good = encode_feature_file(random_file(rng, true, 4, 3));

    auto truncated = good;
    truncated.resize(truncated.size() - 5);
    EXPECT_EQ(format_field([&] { decode_feature_file(truncated); }), "record_count: record_count mismatch");

    auto extra = good;
    extra.push_back(0);
    EXPECT_EQ(format_field([&] { decode_feature_file(extra); }), "record_count: record_count mismatch");

    auto magic = good;
    magic[0] = 'X';
    EXPECT_EQ(format_field([&] { decode_feature_file(magic); }), "magic: bad magic");

    auto version = good;
    version[4] = 9;
    EXPECT_EQ(format_field([&] { decode_feature_file(version); }).substr(0, 8), "version:");

    auto flag = good;
    flag[24] = 0;
    EXPECT_EQ(format_field([&] { decode_feature_file(flag); }).substr(0, 11), "has_labels:");

    auto dim = good;
    dim[12] = dim[13] = dim[14] = dim[15] = 0;
    EXPECT_EQ(format_field([&] { decode_feature_file(dim); }).substr(0, 12), "feature_dim:");

    auto label = good;
    label[25 + 8] = 2;
    EXPECT_EQ(format_field([&] { decode_feature_file(label); }).substr(0, 6), "label:");

    std::vector<char> tiny(good.begin(), good.begin() + 10);
    EXPECT_EQ(format_field([&] { decode_feature_file(tiny); }).substr(0, 7), "header:");
}

TEST(FeatureMatrixTest, ToMatrix) {
    FeatureFile f;
    f.feature_dim = 2;
    f.records = {{0, 1, {1.0f, 2.0f}}, {1, 0, {3.0f, 4.0f}}};
    const auto m = to_matrix(f);
    EXPECT_EQ(m.x.rows(), 2);
    EXPECT_EQ(m.x.cols(), 2);
    EXPECT_EQ(m.x(1, 0), 2.0);
    EXPECT_EQ(m.x(0, 1), 3.0);
    EXPECT_EQ(m.y, (std::vector<int>{1, 0}));
}

TEST(StoredSource, ServesByWindowIndex) {
    FeatureFile f;
    f.feature_dim = 2;
    f.labeled = false;
    f.records = {{1, std::nullopt, {5.0f, 6.0f}}, {0, std::nullopt, {7.0f, 8.0f}}};
    const StoredFeatureSource src({f});
    WindowSpec w;
    w.window_index = 1;
    const auto v = src.features({}, w, 0);
    EXPECT_EQ(v[0], 5.0);
    w.window_index = 5;
    EXPECT_THROW(src.features({}, w, 0), ValidationError);
}

TEST(Synthetic, MixedFractionZeroGivesAllPositive) {
    SyntheticSpec spec;
    spec.n_layers = 1;
    spec.n_samples = 200;
    spec.n_heldout = 0;
    spec.n_eval = 1;
    spec.mixed_fraction = 0.0;
    const auto ds = generate_synthetic(spec);
    for (const auto& r : ds.train.layers[0].records) EXPECT_EQ(r.label, 1);
}

TEST(Synthetic, ClusterStructure) {
    SyntheticSpec spec;
    spec.n_layers = 2;
    spec.n_samples = 400;
    spec.n_heldout = 0;
    spec.n_eval = 1;
    const auto ds = generate_synthetic(spec);
    const SyntheticFeatureSource source(spec);
    for (std::size_t n = 0; n < 2; ++n) {
        const auto m = to_matrix(ds.train.layers[n]);
        const Eigen::VectorXd proj = source.direction(n).transpose() * m.x;
        double pos = 0, neg = 0;
        int npos = 0, nneg = 0;
        for (Eigen::Index j = 0; j < proj.size(); ++j) {
            (m.y[j] ? pos : neg) += std::abs(proj[j]);
            (m.y[j] ? npos : nneg)++;
        }
        EXPECT_GT(npos, 100);
        EXPECT_GT(nneg, 100);
        EXPECT_GT(pos / npos, 2.0);
        EXPECT_LT(neg / nneg, 1.5);
    }
}

TEST(Synthetic, SameSpecSameManifestAndEval) {
    SyntheticSpec spec;
    spec.n_layers = 1;
    spec.n_samples = 30;
    spec.n_heldout = 10;
    spec.n_eval = 5;
    const auto a = generate_synthetic(spec);
    const auto b = generate_synthetic(spec);
    EXPECT_EQ(a.manifest.to_json().dump(), b.manifest.to_json().dump());
    ASSERT_EQ(a.eval_corpus.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(a.eval_corpus[i].context->tokens, b.eval_corpus[i].context->tokens);
        const auto ws = partition_windows(*a.eval_corpus[i].context, 7);
        EXPECT_EQ(ws.size(), 8u);
        int mixed = 0;
        for (const auto& w : ws) mixed += w.mixed;
        EXPECT_EQ(mixed, 4);
    }
    spec.validate();
    spec.mixed_fraction = 1.5;
    EXPECT_THROW(spec.validate(), ValidationError);
}

TEST(Manifest, RoundTripAndErrors) {
    FeatureManifest m;
    m.n_layers = 2;
    m.feature_dim = 49;
    m.files = {"a.svf", "b.svf"};
    const auto j = m.to_json();
    const auto back = FeatureManifest::from_json(j);
    EXPECT_EQ(back.files, m.files);
    EXPECT_EQ(back.feature_dim, 49u);
    auto bad = j;
    bad["N"] = 3;
    EXPECT_THROW(FeatureManifest::from_json(bad), FormatError);
    bad.erase("files");
    EXPECT_THROW(FeatureManifest::from_json(bad), FormatError);
}

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "swinvib/cli.hpp"

using namespace swinvib;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code;
    std::string out, err;
};

Outcome run_cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        unsetenv("SVIB_CONFIG");
        dir = fs::temp_directory_path() /
              ("swinvib_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }

    std::string path(const std::string& name) const { return (dir / name).string(); }

    // Small synthetic dataset: 2 layers, D = 9.
    std::string small_synth(const std::string& name = "synth", const std::string& mixed = "0.5") {
        const auto r = run_cli({"gen-synth", "--layers", "2", "--dim", "9", "--samples", "160", "--heldout", "80",
                                "--eval-samples", "4", "--mixed-fraction", mixed, "--out", path(name)});
        EXPECT_EQ(r.code, 0) << r.err;
        return path(name) + "/manifest.json";
    }

    std::string small_models(const std::string& manifest, const std::string& name = "models") {
        const auto r = run_cli({"train", "--features", manifest, "--models", path(name), "--epochs", "3"});
        EXPECT_EQ(r.code, 0) << r.err;
        return path(name);
    }

    fs::path dir;
};

}  // namespace

TEST_F(CliTest, GenSynthInventoryAndDeterminism) {
    const auto r = run_cli({"gen-synth", "--layers", "4", "--dim", "49", "--samples", "2000", "--seed", "7", "--heldout",
                            "10", "--eval-samples", "2", "--out", path("a")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(lines(r.out).back(), path("a") + "/manifest.json");
    for (int n = 0; n < 4; ++n) {
        const auto f = read_feature_file(path("a") + "/train_layer_0" + std::to_string(n) + ".svf");
        EXPECT_TRUE(f.labeled);
        EXPECT_EQ(f.records.size(), 2000u);
        EXPECT_EQ(f.feature_dim, 49u);
    }
    const auto m = read_manifest(path("a") + "/manifest.json");
    EXPECT_EQ(m.n_layers, 4u);
    EXPECT_EQ(m.files.size(), 4u);

    run_cli({"gen-synth", "--layers", "4", "--dim", "49", "--samples", "2000", "--seed", "7", "--heldout", "10",
             "--eval-samples", "2", "--out", path("b")});
    EXPECT_EQ(slurp(path("a") + "/manifest.json"), slurp(path("b") + "/manifest.json"));
    EXPECT_EQ(slurp(path("a") + "/train_layer_02.svf"), slurp(path("b") + "/train_layer_02.svf"));
}

TEST_F(CliTest, GenSynthWithoutMixingHasNoNegatives) {
    small_synth("pure", "0");
    const auto report = nlohmann::json::parse(slurp(path("pure") + "/build_report.json"));
    EXPECT_EQ(report["per_label_counts"]["0"], 0);
    EXPECT_EQ(report["per_label_counts"]["1"], 160);
}

TEST_F(CliTest, PrepareCountsAndSkips) {
    const auto manifest = small_synth();
    std::ofstream corpus(path("corpus.jsonl"));
    for (int i = 0; i < 100; ++i) {
        std::string s, c;
        for (int k = 0; k < 8; ++k) {
            s += " s" + std::to_string(k);
            c += " c" + std::to_string(k);
        }
        corpus << nlohmann::json{{"id", "r" + std::to_string(i)}, {"query", "q"}, {"supplementary_tokens", s},
                                 {"conflicting_tokens", c}}
                      .dump()
               << '\n';
    }
    corpus << R"({"id":"tiny","supplementary_tokens":"a b","conflicting_tokens":"c d"})" << '\n';
    corpus.close();

    auto r = run_cli({"prepare", "--corpus", path("corpus.jsonl"), "--features", manifest, "--out", path("prep")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.err.find("tiny"), std::string::npos);
    const auto report = nlohmann::json::parse(slurp(path("prep") + "/build_report.json"));
    EXPECT_EQ(report["skipped"], 1);
    EXPECT_EQ(report["processed"], 100);
    for (int n = 0; n < 2; ++n) {
        EXPECT_EQ(read_feature_file(path("prep") + "/train_layer_0" + std::to_string(n) + ".svf").records.size(), 100u);
    }

    r = run_cli({"prepare", "--corpus", path("corpus.jsonl"), "--features", manifest, "--out", path("mixed"),
                 "--mixed-fraction", "1", "--block", "4", "--window-len", "7"});
    ASSERT_EQ(r.code, 0) << r.err;
    for (const auto& rec : read_feature_file(path("mixed") + "/train_layer_00.svf").records) EXPECT_EQ(rec.label, 0);
}

TEST_F(CliTest, TrainWritesEnsembleAndIsDeterministic) {
    const auto manifest = small_synth();
    const auto models = small_models(manifest);
    for (const char* f : {"ensemble.json", "layer_00.svm", "layer_01.svm", "loss_layer_00.csv", "train_report.json"}) {
        EXPECT_TRUE(fs::exists(fs::path(models) / f)) << f;
    }
    const auto report = nlohmann::json::parse(slurp(models + "/train_report.json"));
    ASSERT_EQ(report["layers"].size(), 2u);
    EXPECT_EQ(report["layers"][0]["fold_auc"].size(), 2u);
    EXPECT_TRUE(report["layers"][0].contains("heldout_auc"));
    EXPECT_EQ(lines(slurp(models + "/loss_layer_01.csv")).size(), 4u);

    small_models(manifest, "again");
    EXPECT_EQ(slurp(models + "/layer_01.svm"), slurp(path("again") + "/layer_01.svm"));
}

TEST_F(CliTest, FilterThresholdExtremes) {
    const auto manifest = small_synth();
    const auto models = small_models(manifest);
    const auto ctx = read_corpus(path("synth") + "/eval_corpus.jsonl").front();

    auto r = run_cli({"filter", "--models", models, "--features", manifest, "--id", ctx.id, "--xi", "0", "--out",
                      path("f0")});
    ASSERT_EQ(r.code, 0) << r.err;
    std::string full = ctx.query;
    for (const auto& t : ctx.context->tokens) full += " " + t;
    EXPECT_EQ(lines(r.out).front(), full);
    EXPECT_EQ(slurp(path("f0") + "/prompt.txt"), full + "\n");
    const auto decisions = lines(slurp(path("f0") + "/decisions.jsonl"));
    EXPECT_EQ(decisions.size(), 8u);
    for (const auto& d : decisions) EXPECT_TRUE(nlohmann::json::parse(d)["accepted"].get<bool>());

    r = run_cli({"filter", "--models", models, "--features", manifest, "--id", ctx.id, "--xi", "0.99", "--fallback",
                 "keep-top-1"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(whitespace_tokenize(lines(r.out).front()).size(), whitespace_tokenize(ctx.query).size() + 7);
}

TEST_F(CliTest, FilterInlineContext) {
    const auto manifest = small_synth();
    const auto models = small_models(manifest);
    const auto r = run_cli({"filter", "--models", models, "--features", manifest, "--query", "who", "--context",
                            "a b c d e f g h i j", "--tags", "sssssccccc", "--xi", "0", "--separator", " || "});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(lines(r.out).front(), "who || a b c d e f g || h i j");
    EXPECT_EQ(run_cli({"filter", "--models", models, "--features", manifest, "--context", "a b", "--tags", "s"}).code, 2);
    EXPECT_EQ(run_cli({"filter", "--models", models, "--features", manifest}).code, 2);
}

TEST_F(CliTest, EvalMcReportsAndExitCodes) {
    std::ofstream a(path("answers.jsonl"));
    a << R"({"id":"1","closed_book_correct":true,"answer_source":"memory","correct":true,"token_logprobs":[-0.2]})" << '\n'
      << R"({"id":"2","closed_book_correct":false,"answer_source":"context","correct":true,"token_logprobs":[-0.4]})" << '\n'
      << R"({"id":"3","closed_book_correct":false,"answer_source":"uncertain","correct":false,"token_logprobs":[-1.0]})"
      << '\n';
    a.close();
    auto r = run_cli({"eval-mc", path("answers.jsonl")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_NEAR(j["CR"].get<double>(), 0.5, 1e-12);
    EXPECT_NEAR(j["mean_psi"].get<double>(), 1.6 / 3.0, 1e-12);

    r = run_cli({"eval-mc", "--answers", path("answers.jsonl"), "--format", "csv"});
    EXPECT_EQ(lines(r.out).front(), MetricsReport::csv_header());

    std::ofstream b(path("known.jsonl"));
    b << R"({"id":"1","closed_book_correct":true,"answer_source":"memory","correct":true})" << '\n';
    b.close();
    r = run_cli({"eval-mc", path("known.jsonl")});
    EXPECT_EQ(r.code, 4);
    EXPECT_EQ(nlohmann::json::parse(r.out)["CR"], "undefined");

    std::ofstream c(path("runs.csv"));
    c << "run_id,mean_psi,tre\na,0.24,0.64\nb,0.34,0.69\nc,0.29,0.87\nd,0.28,0.79\n";
    c.close();
    r = run_cli({"eval-mc", "--runs", path("runs.csv")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NEAR(nlohmann::json::parse(r.out)["pearson_r"].get<double>(), 0.16365970573926264, 1e-9);
}

TEST_F(CliTest, TheoryCurves) {
    auto r = run_cli({"theory", "--curve", "psi-vs-delta"});
    ASSERT_EQ(r.code, 0) << r.err;
    auto rows = lines(r.out);
    EXPECT_EQ(rows.front(), "delta_i,psi");
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto comma = rows[i].find(',');
        pts.emplace_back(std::stod(rows[i].substr(0, comma)), std::stod(rows[i].substr(comma + 1)));
    }
    EXPECT_EQ(pts.size(), 41u);
    std::sort(pts.begin(), pts.end(), [](auto x, auto y) { return std::abs(x.first) < std::abs(y.first); });
    for (std::size_t i = 1; i < pts.size(); ++i) EXPECT_LE(pts[i].second, pts[i - 1].second + 1e-12);

    r = run_cli({"theory", "--curve", "mix-ratio", "--out", path("mix.csv")});
    ASSERT_EQ(r.code, 0) << r.err;
    rows = lines(slurp(path("mix.csv")));
    EXPECT_EQ(rows.front(), "ratio,uncertainty");
    std::string best;
    double best_u = -1;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto comma = rows[i].find(',');
        const double u = std::stod(rows[i].substr(comma + 1));
        if (u > best_u) {
            best_u = u;
            best = rows[i].substr(0, comma);
        }
    }
    EXPECT_EQ(best, "2:2");
    EXPECT_EQ(run_cli({"theory", "--curve", "bogus"}).code, 2);
}

TEST_F(CliTest, SweepGridRows) {
    const auto manifest = small_synth();
    const auto models = small_models(manifest);
    const auto r = run_cli({"sweep", "--models", models, "--features", manifest, "--grid", "xi=0.1:0.9:0.1"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(lines(r.out).size(), 10u);
}

TEST_F(CliTest, ExitCodes) {
    EXPECT_EQ(run_cli({}).code, 2);
    EXPECT_EQ(run_cli({"nonsense"}).code, 2);
    EXPECT_EQ(run_cli({"--help"}).code, 0);
    EXPECT_EQ(run_cli({"train", "--features", path("missing.json")}).code, 3);
    std::ofstream(path("bad.svf")) << "XXXX garbage header bytes";
    FeatureManifest m;
    m.n_layers = 1;
    m.feature_dim = 9;
    m.files = {"bad.svf"};
    write_manifest(path("bad.json"), m);
    const auto bad = run_cli({"train", "--features", path("bad.json")});
    EXPECT_EQ(bad.code, 3);
    EXPECT_NE(bad.err.find("magic"), std::string::npos);
    const auto manifest = small_synth();
    EXPECT_EQ(run_cli({"train", "--features", manifest, "--epochs", "0", "--models", path("m")}).code, 2);
    EXPECT_EQ(run_cli({"train", "--features", manifest, "--beta", "-1", "--models", path("m")}).code, 2);
}

TEST_F(CliTest, ConfigFileAndOverride) {
    std::ofstream(path("svib.toml")) << "seed = 3\nwindow_len = 7\n[gen-synth]\nlayers = 1\ndim = 4\nsamples = 20\n"
                                        "heldout = 0\neval-samples = 1\n";
    auto r = run_cli({"--config", path("svib.toml"), "gen-synth", "--out", path("c1")});
    ASSERT_EQ(r.code, 0) << r.err;
    auto m = read_manifest(path("c1") + "/manifest.json");
    EXPECT_EQ(m.n_layers, 1u);
    EXPECT_EQ(m.synthetic["seed"], 3);

    setenv("SVIB_CONFIG", path("svib.toml").c_str(), 1);
    r = run_cli({"gen-synth", "--seed", "5", "--out", path("c2")});
    unsetenv("SVIB_CONFIG");
    ASSERT_EQ(r.code, 0) << r.err;
    m = read_manifest(path("c2") + "/manifest.json");
    EXPECT_EQ(m.feature_dim, 4u);
    EXPECT_EQ(m.synthetic["seed"], 5);
}

#pragma once
// Command-line front end: gen-synth, prepare, train, filter, eval-mc, sweep, theory.
//
// Shared settings (window_len, stride, block, xi, beta, seed, corpus, features,
// models, out, fallback, threads and the training knobs) are top-level options
// and may appear before or after the subcommand. Each can also be set in a
// config file (`--config FILE` or $SVIB_CONFIG) as `key = value` lines;
// subcommand-only options go under a `[subcommand]` section. Flags win over
// the file.
//
// Exit codes: 0 ok, 1 training failure, 2 validation error, 3 format error,
// 4 report with undefined metrics.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "swinvib/corpus.hpp"
#include "swinvib/error.hpp"
#include "swinvib/feature_store.hpp"
#include "swinvib/filter_pipeline.hpp"
#include "swinvib/metrics.hpp"
#include "swinvib/sweep.hpp"
#include "swinvib/synthetic.hpp"
#include "swinvib/theory_sim.hpp"
#include "swinvib/trainer.hpp"

namespace swinvib::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitTraining = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitFormat = 3;
inline constexpr int kExitUndefinedMetric = 4;

struct RunConfig {
    std::size_t window_len = kDefaultWindowLength;
    std::size_t stride = 0;  // 0: window_len
    std::size_t block = kDefaultInterleaveBlock;
    double xi = kDefaultThreshold;
    double beta = 1e-5;
    std::uint64_t seed = 7;
    std::string corpus;
    std::string features;
    std::string models;
    std::string out;
    std::string fallback = "keep-top-1";
    std::size_t threads = 1;
    TrainConfig train;
};

struct LoadedManifest {
    FeatureManifest manifest;
    fs::path dir;
};

inline LoadedManifest load_manifest(const std::string& path) {
    if (path.empty()) throw ValidationError("--features (a manifest path) is required");
    const fs::path p(path);
    return {read_manifest(p), p.parent_path()};
}

inline std::unique_ptr<FeatureSource> make_feature_source(const LoadedManifest& lm) {
    if (!lm.manifest.synthetic.is_null()) {
        auto src = std::make_unique<SyntheticFeatureSource>(SyntheticSpec::from_json(lm.manifest.synthetic));
        if (src->n_layers() != lm.manifest.n_layers || src->feature_dim() != lm.manifest.feature_dim) {
            throw FormatError("synthetic", "manifest N/D disagree with its synthetic spec");
        }
        return src;
    }
    std::vector<FeatureFile> files;
    for (const auto& f : lm.manifest.files) {
        auto file = read_feature_file(lm.dir / f);
        if (file.labeled) {
            throw ValidationError("inference needs SVQ1 feature files; " + f + " is a training file");
        }
        files.push_back(std::move(file));
    }
    return std::make_unique<StoredFeatureSource>(std::move(files));
}

inline std::vector<Batch> load_layers(const LoadedManifest& lm, const std::vector<std::string>& names) {
    std::vector<Batch> out;
    for (const auto& name : names) {
        const auto file = read_feature_file(lm.dir / name);
        if (!file.labeled) throw ValidationError(name + " carries no labels");
        if (file.feature_dim != lm.manifest.feature_dim) {
            throw FormatError("feature_dim", name + " has D=" + std::to_string(file.feature_dim) +
                                                 " but the manifest says " + std::to_string(lm.manifest.feature_dim));
        }
        out.push_back(to_matrix(file));
    }
    return out;
}

inline TrainConfig train_config(const RunConfig& rc) {
    TrainConfig c = rc.train;
    c.beta = rc.beta;
    c.seed = rc.seed;
    c.validate();
    return c;
}

inline std::string fmt(double v, int digits = 4) {
    std::ostringstream os;
    os.precision(digits);
    os << std::fixed << v;
    return os.str();
}

// ---- gen-synth ---------------------------------------------------------------

inline int cmd_gen_synth(const RunConfig& rc, SyntheticSpec spec, std::ostream& out) {
    spec.seed = rc.seed;
    spec.window_len = rc.window_len;
    spec.block = rc.block;
    spec.validate();
    auto ds = generate_synthetic(spec);
    const fs::path dir = rc.out.empty() ? fs::path("synthetic") : fs::path(rc.out);
    out << write_synthetic_dataset(ds, dir).string() << '\n';
    return kExitOk;
}

// ---- prepare -----------------------------------------------------------------

inline int cmd_prepare(const RunConfig& rc, double mixed_fraction, std::ostream& out, std::ostream& err) {
    if (rc.corpus.empty()) throw ValidationError("--corpus is required");
    const auto lm = load_manifest(rc.features);
    if (lm.manifest.synthetic.is_null()) {
        throw ValidationError("prepare computes features from a synthetic source; manifest has no synthetic spec");
    }
    if (!(mixed_fraction >= 0.0 && mixed_fraction <= 1.0)) throw ValidationError("--mixed-fraction must lie in [0, 1]");
    const auto source = make_feature_source(lm);
    const auto corpus = read_corpus(rc.corpus);
    const auto prepared = prepare_corpus(corpus, mixed_fraction, rc.block, rc.seed);
    const auto sets = build_training_sets(prepared, *source, rc.window_len, rc.seed);
    const fs::path dir = rc.out.empty() ? fs::path("prepared") : fs::path(rc.out);
    FeatureManifest m = lm.manifest;
    m.window_len = rc.window_len;
    m.files.clear();
    m.heldout_files.clear();
    m.eval_corpus.clear();
    for (std::size_t n = 0; n < sets.layers.size(); ++n) {
        const auto name = layer_file_name("train_layer", n, ".svf");
        write_feature_file(dir / name, sets.layers[n]);
        m.files.push_back(name);
    }
    io::write_text_atomic(dir / "build_report.json", sets.report.to_json().dump(2) + "\n");
    write_manifest(dir / "manifest.json", m);
    for (const auto& w : sets.report.warnings) err << "warning: " << w << '\n';
    out << sets.report.to_json().dump() << '\n' << (dir / "manifest.json").string() << '\n';
    return kExitOk;
}

// ---- train -------------------------------------------------------------------

inline int cmd_train(const RunConfig& rc, std::ostream& out, std::ostream& err) {
    const auto lm = load_manifest(rc.features);
    const auto layers = load_layers(lm, lm.manifest.files);
    const auto cfg = train_config(rc);
    const auto results = train_layers(layers, cfg, rc.threads);
    std::vector<Batch> heldout;
    if (!lm.manifest.heldout_files.empty()) heldout = load_layers(lm, lm.manifest.heldout_files);

    const fs::path dir = rc.models.empty() ? fs::path("models") : fs::path(rc.models);
    std::vector<VibModel> models;
    nlohmann::json report = {{"beta", cfg.beta},     {"epochs", cfg.epochs}, {"learning_rate", cfg.learning_rate},
                             {"batch_size", cfg.batch_size}, {"folds", cfg.cross_validation_folds},
                             {"seed", cfg.seed},     {"layers", nlohmann::json::array()}};
    for (std::size_t n = 0; n < results.size(); ++n) {
        const auto& r = results[n];
        std::ostringstream csv;
        write_trace_csv(csv, r.trace);
        io::write_text_atomic(dir / layer_file_name("loss_layer", n, ".csv"), csv.str());
        nlohmann::json layer = {{"layer", n},
                                {"fold_auc", r.fold_auc},
                                {"selected_epochs", r.selected_epochs},
                                {"warnings", r.warnings}};
        out << "layer " << n << ": fold AUC";
        for (double a : r.fold_auc) out << ' ' << fmt(a);
        out << ", " << r.selected_epochs << " epochs";
        if (n < heldout.size()) {
            const double auc = detail::evaluate_auc(r.model, heldout[n]);
            layer["heldout_auc"] = auc;
            out << ", held-out AUC " << fmt(auc);
        }
        out << '\n';
        for (const auto& w : r.warnings) err << "warning: layer " << n << ": " << w << '\n';
        report["layers"].push_back(layer);
        models.push_back(r.model);
    }
    write_ensemble(dir, LayerEnsemble::uniform(std::move(models), rc.xi));
    io::write_text_atomic(dir / "train_report.json", report.dump(2) + "\n");
    out << (dir / "ensemble.json").string() << '\n';
    return kExitOk;
}

// ---- filter ------------------------------------------------------------------

struct FilterArgs {
    std::string id;
    std::string query;
    std::string context;
    std::string tags;
    std::string separator = " ";
    std::string decisions;
};

inline TokenSequence context_from_text(const std::string& text, const std::string& tags) {
    TokenSequence seq;
    seq.tokens = whitespace_tokenize(text);
    if (tags.empty()) {
        seq.tags.assign(seq.tokens.size(), SourceTag::supplementary);
    } else {
        for (char c : tags) {
            if (c == 'c') seq.tags.push_back(SourceTag::conflicting);
            else if (c == 's') seq.tags.push_back(SourceTag::supplementary);
            else throw ValidationError(std::string("--tags takes 'c'/'s' characters, got '") + c + "'");
        }
    }
    if (seq.tags.size() != seq.tokens.size()) {
        throw ValidationError("--tags has " + std::to_string(seq.tags.size()) + " entries for " +
                              std::to_string(seq.tokens.size()) + " tokens");
    }
    return seq;
}

inline int cmd_filter(const RunConfig& rc, const FilterArgs& fa, std::ostream& out) {
    if (rc.models.empty()) throw ValidationError("--models is required");
    auto ensemble = read_ensemble(rc.models);
    ensemble.xi = rc.xi;
    const auto lm = load_manifest(rc.features);
    const auto source = make_feature_source(lm);

    std::string query = fa.query;
    TokenSequence context;
    if (!fa.id.empty()) {
        const fs::path corpus_path = !rc.corpus.empty() ? fs::path(rc.corpus) : lm.dir / lm.manifest.eval_corpus;
        if (rc.corpus.empty() && lm.manifest.eval_corpus.empty()) {
            throw ValidationError("--id needs --corpus or a manifest with an eval corpus");
        }
        const auto corpus = read_corpus(corpus_path);
        const auto prepared = prepare_corpus(corpus, 1.0 / 3.0, rc.block, rc.seed);
        const auto it = std::find_if(prepared.begin(), prepared.end(), [&](const auto& p) { return p.id == fa.id; });
        if (it == prepared.end()) throw ValidationError("no corpus record with id '" + fa.id + "'");
        context = it->context;
        if (query.empty()) query = it->query;
    } else if (!fa.context.empty()) {
        context = context_from_text(fa.context, fa.tags);
    } else {
        throw ValidationError("filter needs --id or --context");
    }

    FilterOptions opt;
    opt.window_len = rc.window_len;
    opt.stride = rc.stride;
    opt.fallback = parse_fallback_policy(rc.fallback);
    opt.separator = fa.separator;
    const auto result = filter_context(ensemble, query, context, *source, opt);

    std::string jsonl;
    for (const auto& d : result.decisions) jsonl += d.to_json().dump() + "\n";
    fs::path decisions_path = fa.decisions;
    if (decisions_path.empty() && !rc.out.empty()) decisions_path = fs::path(rc.out) / "decisions.jsonl";
    if (!decisions_path.empty()) io::write_text_atomic(decisions_path, jsonl);
    if (!rc.out.empty()) io::write_text_atomic(fs::path(rc.out) / "prompt.txt", result.prompt + "\n");
    out << result.prompt << '\n';
    return kExitOk;
}

// ---- eval-mc -----------------------------------------------------------------

struct EvalArgs {
    std::string answers;
    std::string runs;
    std::string format = "json";
};

inline std::vector<std::pair<double, double>> read_runs_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("path", "cannot open runs file " + path.string());
    std::vector<std::pair<double, double>> runs;
    std::string line;
    std::getline(in, line);
    if (line.rfind("run_id,mean_psi,tre", 0) != 0) {
        throw FormatError("header", "runs CSV must start with run_id,mean_psi,tre");
    }
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::stringstream ss(line);
        std::string id, psi, tre;
        std::getline(ss, id, ',');
        std::getline(ss, psi, ',');
        std::getline(ss, tre, ',');
        try {
            runs.emplace_back(std::stod(psi), std::stod(tre));
        } catch (const std::exception&) {
            throw FormatError("runs", path.string() + ":" + std::to_string(line_no) + ": expected numbers");
        }
    }
    return runs;
}

inline int cmd_eval_mc(const RunConfig& rc, const EvalArgs& ea, std::ostream& out) {
    if (!ea.runs.empty()) {
        const auto runs = read_runs_csv(ea.runs);
        const auto r = psi_tre_correlation(runs);
        nlohmann::json j = {{"runs", runs.size()}, {"pearson_r", r ? nlohmann::json(*r) : nlohmann::json("undefined")}};
        out << j.dump() << '\n';
        return r ? kExitOk : kExitUndefinedMetric;
    }
    if (ea.answers.empty()) throw ValidationError("eval-mc needs an answers file (or --runs)");
    const auto records = read_answers(ea.answers);
    const auto report = compute_report(records);
    if (ea.format == "csv") {
        out << MetricsReport::csv_header() << '\n' << report.csv_row() << '\n';
    } else {
        out << report.to_json().dump(2) << '\n';
    }
    if (!rc.out.empty()) io::write_text_atomic(rc.out, report.to_json().dump(2) + "\n");
    return report.has_undefined() ? kExitUndefinedMetric : kExitOk;
}

// ---- sweep -------------------------------------------------------------------

inline int cmd_sweep(const RunConfig& rc, const std::vector<std::string>& axes, std::ostream& out) {
    SweepGrid grid;
    grid.xi = {rc.xi};
    grid.beta = {rc.beta};
    grid.window_len = {rc.window_len};
    bool beta_axis = false;
    for (const auto& a : axes) {
        apply_grid_axis(grid, a);
        beta_axis = beta_axis || a.rfind("beta=", 0) == 0;
    }
    const auto lm = load_manifest(rc.features);
    const auto source = make_feature_source(lm);
    fs::path corpus_path = rc.corpus;
    if (corpus_path.empty()) {
        if (lm.manifest.eval_corpus.empty()) throw ValidationError("sweep needs --corpus or a manifest eval corpus");
        corpus_path = lm.dir / lm.manifest.eval_corpus;
    }
    const auto corpus = read_corpus(corpus_path);
    const auto eval = prepare_corpus(corpus, 1.0 / 3.0, rc.block, rc.seed);

    EnsembleProvider provider;
    if (!rc.models.empty() && !beta_axis) {
        auto loaded = read_ensemble(rc.models);
        provider = [loaded](double) { return loaded; };
    } else {
        provider = training_provider(load_layers(lm, lm.manifest.files), train_config(rc), rc.threads);
    }
    SweepOptions opt;
    opt.filter.stride = rc.stride;
    opt.filter.fallback = parse_fallback_policy(rc.fallback);
    opt.response.seed = rc.seed;
    const auto rows = sweep(provider, grid, eval, *source, opt);
    std::ostringstream csv;
    write_sweep_csv(csv, rows);
    if (rc.out.empty()) {
        out << csv.str();
    } else {
        io::write_text_atomic(rc.out, csv.str());
        out << rc.out << '\n';
    }
    return kExitOk;
}

// ---- theory ------------------------------------------------------------------

struct TheoryArgs {
    std::string curve = "psi-vs-delta";
    double alpha = 1.0;
    std::size_t points = 41;
    double max_delta = 5.0;
    unsigned total = 4;
    double strength = 1.0;
};

inline int cmd_theory(const RunConfig& rc, const TheoryArgs& ta, std::ostream& out) {
    std::ostringstream csv;
    if (ta.curve == "psi-vs-delta") {
        if (ta.points < 2) throw ValidationError("--points must be >= 2");
        std::vector<double> grid(ta.points);
        for (std::size_t i = 0; i < ta.points; ++i) {
            grid[i] = -ta.max_delta + 2.0 * ta.max_delta * static_cast<double>(i) / static_cast<double>(ta.points - 1);
        }
        write_psi_curve_csv(csv, psi_vs_delta_i_curve(grid, ta.alpha));
    } else if (ta.curve == "mix-ratio") {
        write_mix_ratio_csv(csv, mix_ratio_uncertainty(default_mix_ratio_scenarios(ta.total, ta.strength)));
    } else {
        throw ValidationError("unknown curve '" + ta.curve + "' (psi-vs-delta | mix-ratio)");
    }
    if (rc.out.empty()) {
        out << csv.str();
    } else {
        io::write_text_atomic(rc.out, csv.str());
        out << rc.out << '\n';
    }
    return kExitOk;
}

// ---- entry -------------------------------------------------------------------

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Window filtering for retrieval contexts with per-layer information bottlenecks", "swinvib"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Key-value config file")->envname("SVIB_CONFIG");

    RunConfig rc;
    app.add_option("--window-len,--window_len", rc.window_len, "Window length in tokens")->capture_default_str();
    app.add_option("--stride", rc.stride, "Window stride (0: window length)")->capture_default_str();
    app.add_option("--block", rc.block, "Interleave block for mixed contexts")->capture_default_str();
    app.add_option("--xi", rc.xi, "Acceptance threshold")->capture_default_str();
    app.add_option("--beta", rc.beta, "Bottleneck weight")->capture_default_str();
    app.add_option("--seed", rc.seed, "Random seed")->capture_default_str();
    app.add_option("--corpus", rc.corpus, "JSON-lines corpus");
    app.add_option("--features", rc.features, "Feature manifest (manifest.json)");
    app.add_option("--models", rc.models, "Ensemble directory");
    app.add_option("--out", rc.out, "Output path (file or directory, per command)");
    app.add_option("--fallback", rc.fallback, "keep-top-1 | empty-context | pass-through")->capture_default_str();
    app.add_option("--threads", rc.threads, "Layers trained concurrently")->capture_default_str();
    app.add_option("--epochs", rc.train.epochs, "Training epochs")->capture_default_str();
    app.add_option("--batch-size,--batch_size", rc.train.batch_size, "Minibatch size")->capture_default_str();
    app.add_option("--lr,--learning_rate", rc.train.learning_rate, "Adam learning rate")->capture_default_str();
    app.add_option("--folds", rc.train.cross_validation_folds, "Cross-validation folds")->capture_default_str();
    app.add_option("--latent-samples,--latent_samples", rc.train.latent_samples, "Latent samples per example")
        ->capture_default_str();
    app.add_option("--width-factor,--width_factor", rc.train.width_factor, "Hidden width = factor * D for D < 256")
        ->capture_default_str();
    bool fixed_epochs = false;
    app.add_flag("--fixed-epochs,--fixed_epochs", fixed_epochs, "Refit for all epochs instead of the best CV epoch");

    SyntheticSpec spec;
    auto* gen = app.add_subcommand("gen-synth", "Generate a synthetic feature dataset and manifest");
    gen->fallthrough();
    gen->add_option("--layers", spec.n_layers)->capture_default_str();
    gen->add_option("--dim", spec.feature_dim)->capture_default_str();
    gen->add_option("--samples", spec.n_samples)->capture_default_str();
    gen->add_option("--heldout", spec.n_heldout)->capture_default_str();
    gen->add_option("--eval-samples", spec.n_eval)->capture_default_str();
    gen->add_option("--separation", spec.cluster_separation)->capture_default_str();
    gen->add_option("--noise", spec.noise_scale)->capture_default_str();
    gen->add_option("--mixed-fraction", spec.mixed_fraction)->capture_default_str();
    gen->add_option("--tokens-per-source", spec.tokens_per_source)->capture_default_str();
    gen->add_option("--heads", spec.heads)->capture_default_str();

    double prep_mixed = 1.0 / 3.0;
    auto* prep = app.add_subcommand("prepare", "Build per-layer training files from a corpus");
    prep->fallthrough();
    prep->add_option("--mixed-fraction", prep_mixed, "Share of samples given a mixed context")->capture_default_str();

    auto* train_cmd = app.add_subcommand("train", "Train one bottleneck per layer");
    train_cmd->fallthrough();

    FilterArgs fa;
    auto* filter = app.add_subcommand("filter", "Score the windows of one context and assemble the prompt");
    filter->fallthrough();
    filter->add_option("--id", fa.id, "Corpus record id");
    filter->add_option("--query", fa.query, "Query text");
    filter->add_option("--context", fa.context, "Context text (whitespace tokens)");
    filter->add_option("--tags", fa.tags, "Per-token source tags for --context, e.g. sssscccc");
    filter->add_option("--separator", fa.separator, "Delimiter between query and windows")->capture_default_str();
    filter->add_option("--decisions", fa.decisions, "Write decisions JSON-lines here");

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval-mc", "Metrics report for answer records");
    eval->fallthrough();
    eval->add_option("answers,--answers", ea.answers, "Answer records (JSON-lines)");
    eval->add_option("--runs", ea.runs, "CSV run_id,mean_psi,tre: report their Pearson correlation");
    eval->add_option("--format", ea.format, "json | csv")->check(CLI::IsMember({"json", "csv"}))->capture_default_str();

    std::vector<std::string> axes;
    auto* sweep_cmd = app.add_subcommand("sweep", "Grid sweep over xi, beta and window length");
    sweep_cmd->fallthrough();
    sweep_cmd->add_option("--grid", axes, "Axis name=start:stop:step or name=v1,v2 (repeatable)");

    TheoryArgs ta;
    auto* theory = app.add_subcommand("theory", "Emit theory curves as CSV");
    theory->fallthrough();
    theory->add_option("--curve", ta.curve, "psi-vs-delta | mix-ratio")->capture_default_str();
    theory->add_option("--alpha", ta.alpha)->capture_default_str();
    theory->add_option("--points", ta.points)->capture_default_str();
    theory->add_option("--max-delta", ta.max_delta)->capture_default_str();
    theory->add_option("--total", ta.total, "Windows per mix-ratio scenario")->capture_default_str();
    theory->add_option("--strength", ta.strength)->capture_default_str();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitValidation;
    }
    rc.train.select_epochs = !fixed_epochs;

    try {
        if (*gen) return cmd_gen_synth(rc, spec, out);
        if (*prep) return cmd_prepare(rc, prep_mixed, out, err);
        if (*train_cmd) return cmd_train(rc, out, err);
        if (*filter) return cmd_filter(rc, fa, out);
        if (*eval) return cmd_eval_mc(rc, ea, out);
        if (*sweep_cmd) return cmd_sweep(rc, axes, out);
        if (*theory) return cmd_theory(rc, ta, out);
    } catch (const FormatError& e) {
        err << "format error [" << e.field() << "]: " << e.what() << '\n';
        return kExitFormat;
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const TrainingError& e) {
        err << "training failed: " << e.what() << '\n';
        return kExitTraining;
    } catch (const nlohmann::json::exception& e) {
        err << "format error [json]: " << e.what() << '\n';
        return kExitFormat;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    }
    return kExitValidation;
}

}  // namespace swinvib::cli

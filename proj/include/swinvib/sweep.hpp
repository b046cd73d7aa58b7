#pragma once
// Grid sweeps over (xi, beta, window_len) on a tagged evaluation corpus, with
// a simulated answer model standing in for the LLM.
//
// Answer model: each sample gets an evidence strength s ~ U(s_min, s_max).
// Every accepted single-source window adds +s (gold source) or -s (other
// source); every accepted mixed window adds u - b with u ~ U(-m, m) and b a
// pull toward the other source. The evidence dI is the mean over accepted
// windows (0 with none). The answer is correct with
// p = sigmoid(dI); the model answers with confidence max(p, 1 - p) and is
// uncertain below `confidence`. All draws are keyed on the sample id and the
// window span, so settings share their randomness.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "swinvib/error.hpp"
#include "swinvib/feature_store.hpp"
#include "swinvib/filter_pipeline.hpp"
#include "swinvib/metrics.hpp"
#include "swinvib/synthetic.hpp"
#include "swinvib/trainer.hpp"
#include "swinvib/uncertainty_math.hpp"

namespace swinvib {

struct SweepGrid {
    std::vector<double> xi{kDefaultThreshold};
    std::vector<double> beta{1e-5};
    std::vector<std::size_t> window_len{kDefaultWindowLength};

    std::size_t size() const noexcept { return xi.size() * beta.size() * window_len.size(); }
};

/// Parses `name=start:stop:step` (inclusive) or `name=v1,v2,...` into the grid.
inline void apply_grid_axis(SweepGrid& grid, const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == text.size()) {
        throw ValidationError("grid axis must look like name=start:stop:step or name=v1,v2: '" + text + "'");
    }
    const std::string name = text.substr(0, eq);
    const std::string spec = text.substr(eq + 1);
    std::vector<double> values;
    auto number = [&](const std::string& s) {
        try {
            std::size_t used = 0;
            const double v = std::stod(s, &used);
            if (used != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ValidationError("bad number '" + s + "' in grid axis " + name);
        }
    };
    if (spec.find(':') != std::string::npos) {
        std::vector<std::string> parts;
        std::stringstream ss(spec);
        for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
        if (parts.size() != 3) throw ValidationError("range must be start:stop:step in axis " + name);
        const double start = number(parts[0]), stop = number(parts[1]), step = number(parts[2]);
        if (!(step > 0.0) || stop < start) throw ValidationError("range needs step > 0 and stop >= start");
        const auto count = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9)) + 1;
        for (std::size_t i = 0; i < count; ++i) {
            // round away accumulated binary noise (0.30000000000000004 -> 0.3)
            values.push_back(std::round((start + static_cast<double>(i) * step) * 1e12) / 1e12);
        }
    } else {
        std::stringstream ss(spec);
        for (std::string p; std::getline(ss, p, ',');) values.push_back(number(p));
    }
    if (values.empty()) throw ValidationError("grid axis " + name + " is empty");
    if (name == "xi") {
        for (double v : values)
            if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("xi values must lie in [0, 1]");
        grid.xi = values;
    } else if (name == "beta") {
        for (double v : values)
            if (!(v > 0.0)) throw ValidationError("beta values must be > 0");
        grid.beta = values;
    } else if (name == "window_len" || name == "window-len") {
        grid.window_len.clear();
        for (double v : values) {
            if (!(v >= 1.0) || v != std::floor(v)) throw ValidationError("window_len values must be positive integers");
            grid.window_len.push_back(static_cast<std::size_t>(v));
        }
    } else {
        throw ValidationError("unknown grid axis '" + name + "' (xi, beta, window_len)");
    }
}

struct ResponseModel {
    double strength_min = 0.5;
    double strength_max = 3.5;
    double mixed_noise = 4.0;
    double mixed_bias = 0.5;
    double confidence = 0.7;
    std::uint64_t seed = 0;
};

struct SimulatedAnswer {
    bool correct = false;
    bool uncertain = false;
    double p_answer = 0.5;  // probability of the emitted answer
};

/// Source holding most of the context's tokens.
inline SourceTag majority_source(const TokenSequence& ctx) {
    const auto c = std::count(ctx.tags.begin(), ctx.tags.end(), SourceTag::conflicting);
    return 2 * static_cast<std::size_t>(c) > ctx.size() ? SourceTag::conflicting : SourceTag::supplementary;
}

inline SimulatedAnswer simulate_answer(const ResponseModel& rm, const std::string& sample_id,
                                       const TokenSequence& context, std::span<const WindowSpec> accepted) {
    const std::uint64_t key = detail::fnv1a(sample_id) ^ rm.seed;
    auto unit = [](std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; };
    const double s = rm.strength_min + (rm.strength_max - rm.strength_min) * unit(detail::splitmix64(key));
    const SourceTag gold = majority_source(context);
    double delta = 0.0;
    for (const auto& w : accepted) {
        if (covers_single_source(context, w.start, w.length)) {
            delta += context.tags[w.start] == gold ? s : -s;
        } else {
            const auto h = detail::splitmix64(key ^ detail::splitmix64((w.start << 20) ^ w.length));
            delta += rm.mixed_noise * (2.0 * unit(h) - 1.0) - rm.mixed_bias;
        }
    }
    if (!accepted.empty()) delta /= static_cast<double>(accepted.size());
    const double p = sigmoid(delta);
    SimulatedAnswer a;
    a.p_answer = std::max(p, 1.0 - p);
    a.uncertain = a.p_answer < rm.confidence;
    a.correct = !a.uncertain && p > 0.5;
    return a;
}

struct SweepRow {
    double xi = 0.0;
    double beta = 0.0;
    std::size_t window_len = 0;
    std::optional<double> window_auc;  // undefined when every window has one label
    double window_accuracy = 0.0;      // accepted <=> single-source
    double acc = 0.0, uar = 0.0, mean_psi = 0.0, tre = 0.0;
    double accepted_fraction = 0.0;
    double accepted_mixed_share = 0.0;  // mixed windows among accepted (threshold outcome)
    double rejected_mixed_share = 0.0;  // mixed windows among rejected
    double latency_ms_per_window = 0.0;
    double latency_ms_per_context = 0.0;
};

inline void write_sweep_csv(std::ostream& os, std::span<const SweepRow> rows) {
    os << "xi,beta,window_len,window_auc,window_accuracy,acc,uar,mean_psi,tre,accepted_fraction,"
          "accepted_mixed_share,rejected_mixed_share,latency_ms_per_window,latency_ms_per_context\n";
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.8g", v);
        return std::string(buf);
    };
    for (const auto& r : rows) {
        os << num(r.xi) << ',' << num(r.beta) << ',' << r.window_len << ','
           << (r.window_auc ? num(*r.window_auc) : std::string("undefined")) << ',' << num(r.window_accuracy) << ','
           << num(r.acc) << ',' << num(r.uar) << ',' << num(r.mean_psi) << ',' << num(r.tre) << ','
           << num(r.accepted_fraction) << ',' << num(r.accepted_mixed_share) << ','
           << num(r.rejected_mixed_share) << ',' << num(r.latency_ms_per_window) << ','
           << num(r.latency_ms_per_context) << '\n';
    }
}

struct SweepOptions {
    FilterOptions filter;  // window_len is taken from the grid
    ResponseModel response;
    std::size_t timing_repeats = 5;
};

/// Supplies the ensemble for a given beta (trains it, or returns a loaded one).
using EnsembleProvider = std::function<LayerEnsemble(double beta)>;

inline EnsembleProvider training_provider(std::span<const Batch> layers, TrainConfig cfg, std::size_t threads = 1) {
    std::vector<Batch> data(layers.begin(), layers.end());
    return [data = std::move(data), cfg, threads](double beta) {
        TrainConfig c = cfg;
        c.beta = beta;
        auto results = train_layers(data, c, threads);
        std::vector<VibModel> models;
        for (auto& r : results) models.push_back(std::move(r.model));
        return LayerEnsemble::uniform(std::move(models));
    };
}

inline std::vector<SweepRow> sweep(const EnsembleProvider& provider, const SweepGrid& grid,
                                   std::span<const PreparedSample> eval, const FeatureSource& source,
                                   const SweepOptions& opt = {}) {
    if (grid.size() == 0) throw ValidationError("sweep grid is empty");
    if (eval.empty()) throw ValidationError("sweep needs a non-empty evaluation corpus");
    std::vector<SweepRow> rows;
    for (double beta : grid.beta) {
        LayerEnsemble ensemble = provider(beta);
        for (std::size_t len : grid.window_len) {
            // All windows of the corpus are scored as one batch per layer.
            std::vector<WindowSpec> windows;
            std::vector<std::size_t> offsets{0};
            std::vector<Eigen::MatrixXd> features(source.n_layers());
            std::vector<std::vector<Eigen::MatrixXd>> per_context;
            for (const auto& sample : eval) {
                const auto w = partition_windows(sample.context, len, opt.filter.stride);
                per_context.push_back(gather_window_features(source, sample.context, w));
                windows.insert(windows.end(), w.begin(), w.end());
                offsets.push_back(windows.size());
            }
            const std::size_t n_windows = windows.size();
            for (std::size_t n = 0; n < features.size(); ++n) {
                features[n].resize(static_cast<Eigen::Index>(source.feature_dim()),
                                   static_cast<Eigen::Index>(n_windows));
                for (std::size_t i = 0; i < eval.size(); ++i) {
                    features[n].middleCols(static_cast<Eigen::Index>(offsets[i]),
                                           static_cast<Eigen::Index>(offsets[i + 1] - offsets[i])) = per_context[i][n];
                }
            }
            std::vector<FilterDecision> all;
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t rep = 0; rep < std::max<std::size_t>(1, opt.timing_repeats); ++rep) {
                const auto t0 = std::chrono::steady_clock::now();
                all = score_windows(ensemble, features, windows);
                const auto t1 = std::chrono::steady_clock::now();
                best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
            }
            std::vector<double> p_hat;
            std::vector<int> single;
            for (std::size_t i = 0; i < eval.size(); ++i) {
                for (std::size_t k = offsets[i]; k < offsets[i + 1]; ++k) {
                    p_hat.push_back(all[k].p_hat);
                    single.push_back(covers_single_source(eval[i].context, windows[k].start, windows[k].length) ? 1 : 0);
                }
            }
            std::optional<double> auc;
            const auto n_single = std::count(single.begin(), single.end(), 1);
            if (n_single > 0 && static_cast<std::size_t>(n_single) < single.size()) auc = roc_auc(p_hat, single);

            for (double xi : grid.xi) {
                LayerEnsemble thresholded = ensemble;
                thresholded.xi = xi;
                SweepRow row;
                row.xi = xi;
                row.beta = beta;
                row.window_len = len;
                row.window_auc = auc;
                row.latency_ms_per_context = best / static_cast<double>(eval.size());
                row.latency_ms_per_window = best / static_cast<double>(n_windows);
                std::size_t agree = 0, accepted = 0, acc_mixed = 0, rej_mixed = 0, k = 0;
                std::size_t correct = 0, uncertain = 0;
                double psi_sum = 0.0;
                for (std::size_t i = 0; i < eval.size(); ++i) {
                    std::vector<FilterDecision> decisions(all.begin() + static_cast<std::ptrdiff_t>(offsets[i]),
                                                          all.begin() + static_cast<std::ptrdiff_t>(offsets[i + 1]));
                    for (auto& d : decisions) {
                        d.accepted = d.p_hat >= xi;
                        const bool mixed = single[k++] == 0;
                        agree += d.accepted == !mixed;
                        if (d.accepted) {
                            ++accepted;
                            acc_mixed += mixed;
                        } else {
                            rej_mixed += mixed;
                        }
                    }
                    const auto result = select_windows(std::move(decisions), opt.filter.fallback);
                    const auto ans = simulate_answer(opt.response, eval[i].id, eval[i].context, result.accepted);
                    correct += ans.correct;
                    uncertain += ans.uncertain;
                    psi_sum += -std::log(ans.p_answer);
                }
                const auto n_ctx = static_cast<double>(eval.size());
                row.window_accuracy = static_cast<double>(agree) / static_cast<double>(n_windows);
                row.accepted_fraction = static_cast<double>(accepted) / static_cast<double>(n_windows);
                row.accepted_mixed_share = accepted ? static_cast<double>(acc_mixed) / static_cast<double>(accepted) : 0.0;
                row.rejected_mixed_share = n_windows > accepted
                                               ? static_cast<double>(rej_mixed) / static_cast<double>(n_windows - accepted)
                                               : 0.0;
                row.acc = static_cast<double>(correct) / n_ctx;
                row.uar = static_cast<double>(uncertain) / n_ctx;
                row.mean_psi = psi_sum / n_ctx;
                row.tre = total_response_entropy({row.acc, row.uar});
                rows.push_back(row);
            }
        }
    }
    return rows;
}

}  // namespace swinvib

#pragma once
// Minibatch Adam on the bottleneck loss with stratified k-fold validation.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "swinvib/error.hpp"
#include "swinvib/vib.hpp"

namespace swinvib {

struct TrainConfig {
    double beta = 1e-5;
    double learning_rate = 1e-3;
    std::size_t epochs = 200;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
    std::size_t cross_validation_folds = 2;
    std::size_t latent_samples = 1;
    std::size_t width_factor = VibArchitecture::kDefaultWidthFactor;
    bool refit = true;         // retrain on all data after validation
    bool select_epochs = true;  // refit for the epoch count with the best mean fold AUC

    void validate() const {
        if (!(beta > 0.0) || !std::isfinite(beta)) throw ValidationError("beta must be > 0");
        if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be > 0");
        if (epochs < 1) throw ValidationError("epochs must be >= 1");
        if (batch_size < 2) throw ValidationError("batch size must be >= 2");
        if (cross_validation_folds < 2) throw ValidationError("cross-validation folds must be >= 2");
        if (latent_samples < 1) throw ValidationError("latent samples must be >= 1");
        if (width_factor < 1) throw ValidationError("width factor must be >= 1");
    }
};

/// Area under the ROC curve via the rank-sum statistic (ties get mean rank).
inline double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) {
        throw ValidationError("AUC: scores and labels differ in length");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double pos_rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double mean_rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] == 1) {
                pos_rank_sum += mean_rank;
                ++n_pos;
            }
        }
        i = j;
    }
    const std::size_t n_neg = scores.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw ValidationError("AUC needs both classes");
    }
    const double np = static_cast<double>(n_pos);
    return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

struct EpochStats {
    std::size_t epoch = 0;
    double bce = 0.0;
    double kl = 0.0;
    double total = 0.0;
    double fold_auc = 0.0;  // mean held-out AUC over folds after this epoch
};

struct TrainResult {
    VibModel model;
    std::vector<EpochStats> trace;
    std::vector<double> fold_auc;  // held-out AUC per fold at the selected epoch
    std::size_t selected_epochs = 0;
    std::vector<std::string> warnings;
};

inline void write_trace_csv(std::ostream& os, std::span<const EpochStats> trace) {
    os << "epoch,bce,kl,total,fold_auc\n";
    os.precision(10);
    for (const auto& e : trace) {
        os << e.epoch << ',' << e.bce << ',' << e.kl << ',' << e.total << ',' << e.fold_auc << '\n';
    }
}

class AdamOptimizer {
public:
    AdamOptimizer(const VibParams& like, double lr) : m_(like.zeros_like()), v_(like.zeros_like()), lr_(lr) {}

    void step(VibParams& params, VibParams& grads) {
        ++t_;
        const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
        auto p = params.tensors();
        auto g = grads.tensors();
        auto m = m_.tensors();
        auto v = v_.tensors();
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i]->array() = kBeta1 * m[i]->array() + (1.0 - kBeta1) * g[i]->array();
            v[i]->array() = kBeta2 * v[i]->array() + (1.0 - kBeta2) * g[i]->array().square();
            p[i]->array() -= lr_ * (m[i]->array() / c1) / ((v[i]->array() / c2).sqrt() + kEps);
        }
    }

private:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;
    VibParams m_, v_;
    double lr_;
    std::size_t t_ = 0;
};

namespace detail {

inline Batch gather(const Batch& data, std::span<const std::size_t> idx) {
    Batch b;
    b.x.resize(data.x.rows(), static_cast<Eigen::Index>(idx.size()));
    b.y.resize(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
        b.x.col(static_cast<Eigen::Index>(j)) = data.x.col(static_cast<Eigen::Index>(idx[j]));
        b.y[j] = data.y[idx[j]];
    }
    return b;
}

// Minibatch boundaries; a trailing batch of one example joins the previous one
// (batch statistics need at least two).
inline std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t batch_size) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t s = 0; s < n; s += batch_size) out.emplace_back(s, std::min(n, s + batch_size));
    if (out.size() > 1 && out.back().second - out.back().first == 1) {
        out[out.size() - 2].second = n;
        out.pop_back();
    }
    return out;
}

struct EpochLoss {
    double bce = 0.0, kl = 0.0, total = 0.0;
};

inline EpochLoss run_epoch(VibModel& model, AdamOptimizer& opt, const Batch& data, const TrainConfig& cfg,
                           std::mt19937_64& rng, std::size_t epoch) {
    std::vector<std::size_t> order(data.y.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    EpochLoss sum;
    VibParams grads = model.params.zeros_like();
    VibParams sample_grads = grads;
    const auto ranges = batch_ranges(order.size(), cfg.batch_size);
    for (std::size_t bi = 0; bi < ranges.size(); ++bi) {
        const auto [lo, hi] = ranges[bi];
        const Batch batch = gather(data, std::span<const std::size_t>(order).subspan(lo, hi - lo));
        IbLossBreakdown loss;
        BatchNormState running = model.running;
        for (std::size_t s = 0; s < cfg.latent_samples; ++s) {
            auto l = evaluate_loss(model, batch, cfg.beta, Mode::training, rng, s == 0 ? &grads : &sample_grads,
                                   s == 0 ? &running : nullptr);
            if (s == 0) {
                loss = l;
            } else {
                loss.bce += l.bce;
                loss.kl += l.kl;
                loss.total += l.total;
                auto g = grads.tensors();
                auto sg = sample_grads.tensors();
                for (std::size_t i = 0; i < g.size(); ++i) *g[i] += *sg[i];
            }
        }
        if (cfg.latent_samples > 1) {
            const double inv = 1.0 / static_cast<double>(cfg.latent_samples);
            loss.bce *= inv;
            loss.kl *= inv;
            loss.total *= inv;
            for (auto* g : grads.tensors()) *g *= inv;
        }
        if (!std::isfinite(loss.total)) {
            throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                std::to_string(bi) + " (examples " + std::to_string(lo) + ".." +
                                std::to_string(hi - 1) + " of the shuffled order): bce=" +
                                std::to_string(loss.bce) + " kl=" + std::to_string(loss.kl));
        }
        model.running = std::move(running);
        opt.step(model.params, grads);
        const double w = static_cast<double>(hi - lo);
        sum.bce += w * loss.bce;
        sum.kl += w * loss.kl;
        sum.total += w * loss.total;
    }
    const double inv_n = 1.0 / static_cast<double>(order.size());
    return {sum.bce * inv_n, sum.kl * inv_n, sum.total * inv_n};
}

// Each class is shuffled and dealt round-robin over the folds.
inline std::vector<std::size_t> stratified_folds(std::span<const int> labels, std::size_t folds, std::mt19937_64& rng) {
    std::vector<std::size_t> fold(labels.size());
    for (int cls : {0, 1}) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == cls) idx.push_back(i);
        if (idx.size() < folds) {
            throw ValidationError("class " + std::to_string(cls) + " has " + std::to_string(idx.size()) +
                                  " examples, fewer than the " + std::to_string(folds) + " folds");
        }
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t k = 0; k < idx.size(); ++k) fold[idx[k]] = k % folds;
    }
    return fold;
}

inline double evaluate_auc(const VibModel& m, const Batch& data) {
    const Eigen::RowVectorXd p = predict_batch(m, data.x);
    return roc_auc(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())), data.y);
}

}  // namespace detail

inline std::vector<std::string> check_training_data(const Batch& data) {
    if (data.y.empty() || static_cast<std::size_t>(data.x.cols()) != data.y.size()) {
        throw ValidationError("training data must be non-empty with one label per record");
    }
    std::size_t pos = 0;
    for (int y : data.y) {
        if (y != 0 && y != 1) throw ValidationError("labels must be 0 or 1");
        pos += static_cast<std::size_t>(y);
    }
    const std::size_t neg = data.y.size() - pos;
    if (pos == 0 || neg == 0) {
        throw ValidationError("training data contains a single class");
    }
    if (!data.x.allFinite()) {
        throw ValidationError("training features contain non-finite values");
    }
    std::vector<std::string> warnings;
    const double ratio = static_cast<double>(std::max(pos, neg)) / static_cast<double>(std::min(pos, neg));
    if (ratio > 10.0) {
        warnings.push_back("class imbalance " + std::to_string(pos) + ":" + std::to_string(neg) +
                           " exceeds 10:1; no reweighting is applied");
    }
    return warnings;
}

/// Trains one layer's bottleneck. The trace averages the k fold runs. The
/// returned model is refit on all data for the selected number of epochs (or,
/// with refit off, is the fold model with the best final AUC).
inline TrainResult train(const Batch& data, const TrainConfig& cfg) {
    cfg.validate();
    TrainResult result;
    result.warnings = check_training_data(data);
    const auto arch = VibArchitecture::for_input(static_cast<std::size_t>(data.x.rows()), cfg.width_factor);

    std::mt19937_64 split_rng(cfg.seed ^ 0x5DEECE66DULL);
    const auto fold_of = detail::stratified_folds(data.y, cfg.cross_validation_folds, split_rng);
    const std::size_t k = cfg.cross_validation_folds;
    result.trace.resize(cfg.epochs);
    for (std::size_t e = 0; e < cfg.epochs; ++e) result.trace[e].epoch = e + 1;

    double best_auc = -1.0;
    std::vector<std::vector<double>> auc_by_fold(k);
    for (std::size_t f = 0; f < k; ++f) {
        std::vector<std::size_t> train_idx, val_idx;
        for (std::size_t i = 0; i < fold_of.size(); ++i) (fold_of[i] == f ? val_idx : train_idx).push_back(i);
        const Batch train_set = detail::gather(data, train_idx);
        const Batch val_set = detail::gather(data, val_idx);
        VibModel model = make_vib_model(arch, cfg.seed * 1000003ULL + f + 1);
        AdamOptimizer opt(model.params, cfg.learning_rate);
        std::mt19937_64 rng(cfg.seed * 7919ULL + f + 11);
        double auc = 0.0;
        for (std::size_t e = 0; e < cfg.epochs; ++e) {
            const auto loss = detail::run_epoch(model, opt, train_set, cfg, rng, e + 1);
            auc = detail::evaluate_auc(model, val_set);
            auto& row = result.trace[e];
            row.bce += loss.bce / static_cast<double>(k);
            row.kl += loss.kl / static_cast<double>(k);
            row.total += loss.total / static_cast<double>(k);
            row.fold_auc += auc / static_cast<double>(k);
            auc_by_fold[f].push_back(auc);
        }
        if (!cfg.refit && auc > best_auc) {
            best_auc = auc;
            result.model = std::move(model);
        }
    }
    result.selected_epochs = cfg.epochs;
    if (cfg.refit && cfg.select_epochs) {
        const auto best = std::max_element(result.trace.begin(), result.trace.end(),
                                           [](const EpochStats& a, const EpochStats& b) { return a.fold_auc < b.fold_auc; });
        result.selected_epochs = best->epoch;
    }
    for (const auto& per_epoch : auc_by_fold) result.fold_auc.push_back(per_epoch[result.selected_epochs - 1]);
    if (cfg.refit) {
        VibModel model = make_vib_model(arch, cfg.seed * 1000003ULL);
        AdamOptimizer opt(model.params, cfg.learning_rate);
        std::mt19937_64 rng(cfg.seed * 7919ULL + 7);
        for (std::size_t e = 0; e < result.selected_epochs; ++e) {
            detail::run_epoch(model, opt, data, cfg, rng, e + 1);
        }
        result.model = std::move(model);
    }
    return result;
}

/// Trains every layer independently; layer n uses seed cfg.seed + n. Up to
/// `threads` layers run concurrently.
inline std::vector<TrainResult> train_layers(std::span<const Batch> layers, const TrainConfig& cfg,
                                             std::size_t threads = 1) {
    std::vector<TrainResult> out(layers.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    auto worker = [&]() {
        for (std::size_t n = next++; n < layers.size(); n = next++) {
            try {
                TrainConfig layer_cfg = cfg;
                layer_cfg.seed = cfg.seed + n;
                out[n] = train(layers[n], layer_cfg);
            } catch (...) {
                std::lock_guard lock(failure_mu);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, layers.size()));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
    return out;
}

}  // namespace swinvib

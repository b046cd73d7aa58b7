#pragma once
// Closed-form information measures: instance uncertainty psi(p) = -p ln p,
// conditional response entropy, Mean-psi, total response entropy (TRE),
// Gaussian KL to the standard normal and the KL / entropy-drop proxy.
//
// Natural logarithms throughout, except TRE which is base 2. 0 * log 0 == 0.

#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "swinvib/error.hpp"

namespace swinvib {

inline constexpr double kProbabilitySumTolerance = 1e-9;

/// Finite distribution over a fixed support. Construction validates it.
class DiscreteDistribution {
public:
    explicit DiscreteDistribution(std::vector<double> probabilities)
        : probs_(std::move(probabilities)) {
        if (probs_.empty()) {
            throw ValidationError("distribution support must be non-empty");
        }
        double total = 0.0;
        for (double p : probs_) {
            if (!std::isfinite(p) || p < 0.0 || p > 1.0) {
                throw ValidationError("distribution entries must lie in [0, 1]");
            }
            total += p;
        }
        if (std::abs(total - 1.0) > kProbabilitySumTolerance) {
            throw ValidationError("distribution must sum to 1 (got " + std::to_string(total) + ")");
        }
    }

    std::span<const double> probabilities() const noexcept { return probs_; }
    std::size_t support_size() const noexcept { return probs_.size(); }
    double operator[](std::size_t i) const { return probs_[i]; }

private:
    std::vector<double> probs_;
};

/// Natural-log probabilities of each generated answer token.
class TokenLikelihoods {
public:
    explicit TokenLikelihoods(std::vector<double> per_token_logprob)
        : logprobs_(std::move(per_token_logprob)) {
        if (logprobs_.empty()) {
            throw ValidationError("token likelihoods need at least one token");
        }
        for (double lp : logprobs_) {
            if (std::isnan(lp) || lp > 0.0) {
                throw ValidationError("token log-probabilities must be <= 0");
            }
        }
    }

    std::span<const double> per_token_logprob() const noexcept { return logprobs_; }
    std::size_t answer_length() const noexcept { return logprobs_.size(); }

private:
    std::vector<double> logprobs_;
};

struct ResponseTally {
    double acc = 0.0;
    double uar = 0.0;
    double epsilon = 1e-12;

    void validate() const {
        if (!(acc >= 0.0 && acc <= 1.0) || !(uar >= 0.0 && uar <= 1.0)) {
            throw ValidationError("ACC and UAR must lie in [0, 1]");
        }
        if (acc + uar > 1.0 + kProbabilitySumTolerance) {
            throw ValidationError("ACC + UAR must not exceed 1");
        }
        if (!(epsilon > 0.0)) {
            throw ValidationError("TRE epsilon must be positive");
        }
    }
};

/// psi(p) = -p ln p with psi(0) = 0.
inline double instance_uncertainty(double p) {
    if (!(p >= 0.0 && p <= 1.0)) {
        throw DomainError("instance_uncertainty: p must lie in [0, 1]");
    }
    return p == 0.0 ? 0.0 : -p * std::log(p);
}

/// Shannon entropy in nats, the sum of psi over the support.
inline double entropy(const DiscreteDistribution& dist) {
    double h = 0.0;
    for (double p : dist.probabilities()) {
        h += instance_uncertainty(p);
    }
    return h;
}

struct ContextTerm {
    double weight = 0.0;  // p(r | q)
    DiscreteDistribution response;  // p(o | r, q)
};

struct QueryTerm {
    double weight = 0.0;  // p(q)
    std::vector<ContextTerm> contexts;
};

namespace detail {

template <typename Range, typename Weight>
void require_normalized(const Range& items, Weight weight_of, const char* what) {
    double total = 0.0;
    for (const auto& item : items) {
        const double w = weight_of(item);
        if (!std::isfinite(w) || w < 0.0) {
            throw ValidationError(std::string(what) + " weights must be non-negative");
        }
        total += w;
    }
    if (std::abs(total - 1.0) > kProbabilitySumTolerance) {
        throw ValidationError(std::string(what) + " weights must sum to 1");
    }
}

}  // namespace detail

/// H(O | R, Q) = sum_q p(q) sum_r p(r|q) sum_o psi(p(o|r,q)).
inline double conditional_entropy(std::span<const QueryTerm> joint) {
    detail::require_normalized(joint, [](const QueryTerm& q) { return q.weight; }, "query");
    double h = 0.0;
    for (const auto& q : joint) {
        detail::require_normalized(q.contexts, [](const ContextTerm& r) { return r.weight; },
                                   "context");
        double inner = 0.0;
        for (const auto& r : q.contexts) {
            inner += r.weight * entropy(r.response);
        }
        h += q.weight * inner;
    }
    return h;
}

/// Average token-wise negative log-likelihood of one generated answer.
inline double sequence_psi(const TokenLikelihoods& sample) {
    double nll = 0.0;
    for (double lp : sample.per_token_logprob()) {
        nll -= lp;
    }
    return nll / static_cast<double>(sample.answer_length());
}

inline double mean_psi(std::span<const TokenLikelihoods> samples) {
    if (samples.empty()) {
        throw ValidationError("mean_psi needs at least one sample");
    }
    double total = 0.0;
    for (const auto& s : samples) {
        total += sequence_psi(s);
    }
    return total / static_cast<double>(samples.size());
}

/// TRE over the (correct, incorrect, uncertain) response mass, base 2.
inline double total_response_entropy(const ResponseTally& tally) {
    tally.validate();
    const double eps = tally.epsilon;
    const double wrong = std::max(0.0, 1.0 - tally.acc - tally.uar);
    auto term = [eps](double m) { return m * std::log2(m + eps); };
    return -(term(tally.acc) + term(wrong) + term(tally.uar));
}

/// KL( N(mu, diag(exp(log_var))) || N(0, I) ).
inline double gaussian_kl_to_standard(std::span<const double> mu, std::span<const double> log_var) {
    if (mu.size() != log_var.size()) {
        throw ValidationError("gaussian_kl_to_standard: mu and log_var lengths differ");
    }
    double kl = 0.0;
    for (std::size_t d = 0; d < mu.size(); ++d) {
        kl += 0.5 * (mu[d] * mu[d] + std::exp(log_var[d]) - log_var[d] - 1.0);
    }
    return kl;
}

/// KL(p || q) in nats; +infinity when q has zero mass where p does not.
inline double kl_divergence(const DiscreteDistribution& p, const DiscreteDistribution& q) {
    if (p.support_size() != q.support_size()) {
        throw ValidationError("kl_divergence: support sizes differ");
    }
    double kl = 0.0;
    for (std::size_t i = 0; i < p.support_size(); ++i) {
        if (p[i] == 0.0) {
            continue;
        }
        if (q[i] == 0.0) {
            return std::numeric_limits<double>::infinity();
        }
        kl += p[i] * std::log(p[i] / q[i]);
    }
    return std::max(kl, 0.0);
}

struct EntropyDrop {
    double u = 0.0;          // KL(p0 || p)
    double delta_psi = 0.0;  // Psi(p) - Psi(p0); negative means more confident
};

/// Shift from the no-retrieval output p0 to the retrieval-augmented output p.
inline EntropyDrop entropy_drop_proxy(const DiscreteDistribution& p0, const DiscreteDistribution& p) {
    if (p0.support_size() != p.support_size()) {
        throw ValidationError("entropy_drop_proxy: support sizes differ");
    }
    return {kl_divergence(p0, p), entropy(p) - entropy(p0)};
}

}  // namespace swinvib

#pragma once
// Numerical harness for the information-difference analysis: the tilted family
// p_alpha(o) = a_o exp(alpha b_o) / Z(alpha), its entropy derivative in alpha,
// the psi-vs-|delta I| curve and the conflicting:supplementary mixing experiment.

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include "swinvib/error.hpp"
#include "swinvib/uncertainty_math.hpp"

namespace swinvib {

struct TiltedFamily {
    std::vector<double> base_weights;  // a_o > 0
    std::vector<double> scores;        // b_o, the per-answer information difference
    double alpha = 1.0;

    void validate() const {
        if (base_weights.size() != scores.size() || scores.size() < 2) {
            throw ValidationError("tilted family needs matching a/b vectors of length >= 2");
        }
        for (double a : base_weights) {
            if (!(a > 0.0) || !std::isfinite(a)) {
                throw ValidationError("tilted family base weights must be strictly positive");
            }
        }
        if (!(alpha > 0.0)) {
            throw ValidationError("tilted family alpha must be positive");
        }
    }
};

namespace detail {

// Unvalidated normalised weights; alpha may be any real (used by finite differences).
inline std::vector<double> tilted_weights(const TiltedFamily& f, double alpha) {
    const std::size_t n = f.scores.size();
    std::vector<double> logits(n);
    for (std::size_t i = 0; i < n; ++i) {
        logits[i] = std::log(f.base_weights[i]) + alpha * f.scores[i];
    }
    const double shift = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (auto& l : logits) {
        l = std::exp(l - shift);
        z += l;
    }
    for (auto& l : logits) {
        l /= z;
    }
    return logits;
}

inline double tilted_entropy(const TiltedFamily& f, double alpha) {
    double h = 0.0;
    for (double p : tilted_weights(f, alpha)) {
        h += instance_uncertainty(p);
    }
    return h;
}

}  // namespace detail

inline DiscreteDistribution tilted_distribution(const TiltedFamily& f) {
    f.validate();
    return DiscreteDistribution(detail::tilted_weights(f, f.alpha));
}

struct EntropyDerivative {
    double analytic = 0.0;
    double numeric = 0.0;
};

inline constexpr double kEntropyDerivativeStep = 1e-5;

/// d Psi_alpha / d alpha = -alpha Var(b) - Cov(log a, b) under p_alpha, together
/// with a central finite difference of Psi_alpha for cross-checking.
inline EntropyDerivative tilted_entropy_derivative(const TiltedFamily& f) {
    f.validate();
    const auto p = detail::tilted_weights(f, f.alpha);
    double mean_b = 0.0;
    double mean_log_a = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        mean_b += p[i] * f.scores[i];
        mean_log_a += p[i] * std::log(f.base_weights[i]);
    }
    double var_b = 0.0;
    double cov = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double db = f.scores[i] - mean_b;
        var_b += p[i] * db * db;
        cov += p[i] * (std::log(f.base_weights[i]) - mean_log_a) * db;
    }
    const double h = kEntropyDerivativeStep;
    const double numeric =
        (detail::tilted_entropy(f, f.alpha + h) - detail::tilted_entropy(f, f.alpha - h)) / (2.0 * h);
    return {-f.alpha * var_b - cov, numeric};
}

struct PsiCurvePoint {
    double delta_i = 0.0;
    double psi = 0.0;
};

/// psi of the dominant answer of a two-answer tilted model with scores [0, delta_i].
inline double binary_decision_psi(double delta_i, double alpha) {
    TiltedFamily f{{1.0, 1.0}, {0.0, delta_i}, alpha};
    const auto dist = tilted_distribution(f);
    return instance_uncertainty(std::max(dist[0], dist[1]));
}

/// Emits (delta_i, psi) for each grid point. Throws if the curve ever increases
/// with |delta_i|, which would contradict the monotonicity result.
inline std::vector<PsiCurvePoint> psi_vs_delta_i_curve(std::span<const double> delta_i_grid,
                                                       double alpha = 1.0) {
    if (delta_i_grid.empty()) {
        throw ValidationError("psi curve grid must be non-empty");
    }
    std::vector<PsiCurvePoint> curve;
    curve.reserve(delta_i_grid.size());
    for (double d : delta_i_grid) {
        curve.push_back({d, binary_decision_psi(d, alpha)});
    }
    auto by_magnitude = curve;
    std::stable_sort(by_magnitude.begin(), by_magnitude.end(),
                     [](const auto& x, const auto& y) { return std::abs(x.delta_i) < std::abs(y.delta_i); });
    for (std::size_t i = 1; i < by_magnitude.size(); ++i) {
        if (by_magnitude[i].psi > by_magnitude[i - 1].psi + 1e-15) {
            throw ValidationError("psi curve is not non-increasing in |delta I|");
        }
    }
    return curve;
}

struct MixRatioScenario {
    unsigned n_conflicting = 0;
    unsigned n_supplementary = 0;
    double evidence_strength = 1.0;

    std::string label() const {
        return std::to_string(n_conflicting) + ":" + std::to_string(n_supplementary);
    }
};

struct MixRatioPoint {
    std::string ratio_label;
    double uncertainty = 0.0;
};

/// Net score difference b = strength * (n_c - n_s) fed through the binary tilted model.
inline std::vector<MixRatioPoint> mix_ratio_uncertainty(std::span<const MixRatioScenario> scenarios) {
    if (scenarios.empty()) {
        throw ValidationError("mix-ratio scenario list must be non-empty");
    }
    std::vector<MixRatioPoint> out;
    for (const auto& s : scenarios) {
        if (s.n_conflicting + s.n_supplementary == 0) {
            throw ValidationError("mix-ratio scenario needs at least one context");
        }
        if (!(s.evidence_strength > 0.0)) {
            throw ValidationError("mix-ratio evidence strength must be positive");
        }
        const double net = s.evidence_strength * (static_cast<double>(s.n_conflicting) -
                                                  static_cast<double>(s.n_supplementary));
        out.push_back({s.label(), binary_decision_psi(net, 1.0)});
    }
    return out;
}

/// The 4:0 .. 0:4 sweep of the mixing experiment.
inline std::vector<MixRatioScenario> default_mix_ratio_scenarios(unsigned total = 4, double strength = 1.0) {
    std::vector<MixRatioScenario> out;
    for (unsigned c = total + 1; c-- > 0;) {
        out.push_back({c, total - c, strength});
    }
    return out;
}

inline void write_psi_curve_csv(std::ostream& os, std::span<const PsiCurvePoint> curve) {
    os << "delta_i,psi\n";
    os.precision(17);
    for (const auto& p : curve) {
        os << p.delta_i << ',' << p.psi << '\n';
    }
}

inline void write_mix_ratio_csv(std::ostream& os, std::span<const MixRatioPoint> points) {
    os << "ratio,uncertainty\n";
    os.precision(17);
    for (const auto& p : points) {
        os << p.ratio_label << ',' << p.uncertainty << '\n';
    }
}

}  // namespace swinvib

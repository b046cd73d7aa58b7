#pragma once
// Per-layer variational information bottleneck.
//
//   encoder:  G --W1--> BN --ReLU--> dropout --+--Wmu,bmu--> mu
//                                              +--Wlv,blv--> log sigma^2
//   sample:   Z = mu + exp(log sigma^2 / 2) * eps,  eps ~ N(0, I)
//   decoder:  Z --W2--> BN --ReLU--> dropout --W3--> BN --ReLU--> dropout --wo,bo--> logit
//
// Loss = mean BCE(logit, Y) + beta * mean KL(q(Z|G) || N(0, I)).
//
// Linear maps that feed a batch norm carry no bias: the normalisation removes
// it in both modes. Gradients are derived by hand; gradient_check() compares
// them against central finite differences.
//
// Checkpoint layout (SVM1), little-endian:
//   "SVM1" | version u32 | D u32 | H1 u32 | L u32 | H2 u32 | H3 u32 | dropout f64
//   | parameter tensors, in VibParams::names() order, each row-major f64
//   | running mean and variance of the three batch norms (trunk, dec1, dec2), f64

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "swinvib/binary_io.hpp"
#include "swinvib/error.hpp"
#include "swinvib/feature_store.hpp"
#include "swinvib/uncertainty_math.hpp"

namespace swinvib {

using Tensor = Eigen::MatrixXd;

/// Layer widths D -> H1 -> L (mu, log-var) -> H2 -> H3 -> 1.
struct VibArchitecture {
    std::size_t input_dim = 0;
    std::size_t trunk_width = 2048;
    std::size_t latent_dim = 512;
    std::size_t decoder_width1 = 256;
    std::size_t decoder_width2 = 128;

    static constexpr std::size_t kFullSizeInputDim = 256;
    static constexpr std::size_t kDefaultWidthFactor = 2;

    /// Full widths for D >= 256; smaller inputs use min(full width, factor * D).
    static VibArchitecture for_input(std::size_t dim, std::size_t width_factor = kDefaultWidthFactor) {
        if (dim == 0) {
            throw ValidationError("input dimension must be positive");
        }
        VibArchitecture a;
        a.input_dim = dim;
        if (dim < kFullSizeInputDim) {
            const std::size_t cap = std::max<std::size_t>(1, width_factor * dim);
            a.trunk_width = std::min(a.trunk_width, cap);
            a.latent_dim = std::min(a.latent_dim, cap);
            a.decoder_width1 = std::min(a.decoder_width1, cap);
            a.decoder_width2 = std::min(a.decoder_width2, cap);
        }
        return a;
    }

    friend bool operator==(const VibArchitecture&, const VibArchitecture&) = default;
};

/// Every trainable tensor. Also used to hold gradients and optimiser moments.
struct VibParams {
    Tensor trunk_w, trunk_gamma, trunk_beta;
    Tensor mu_w, mu_b;
    Tensor logvar_w, logvar_b;
    Tensor dec1_w, dec1_gamma, dec1_beta;
    Tensor dec2_w, dec2_gamma, dec2_beta;
    Tensor out_w, out_b;

    static constexpr std::array<std::string_view, 15> names() {
        return {"trunk_w", "trunk_gamma", "trunk_beta", "mu_w",       "mu_b",
                "logvar_w", "logvar_b",   "dec1_w",     "dec1_gamma", "dec1_beta",
                "dec2_w",  "dec2_gamma",  "dec2_beta",  "out_w",      "out_b"};
    }

    std::array<Tensor*, 15> tensors() {
        return {&trunk_w, &trunk_gamma, &trunk_beta, &mu_w,       &mu_b,
                &logvar_w, &logvar_b,   &dec1_w,     &dec1_gamma, &dec1_beta,
                &dec2_w,  &dec2_gamma,  &dec2_beta,  &out_w,      &out_b};
    }

    std::array<const Tensor*, 15> tensors() const {
        auto t = const_cast<VibParams*>(this)->tensors();
        std::array<const Tensor*, 15> out{};
        std::copy(t.begin(), t.end(), out.begin());
        return out;
    }

    /// Same shapes, all zeros.
    VibParams zeros_like() const {
        VibParams z = *this;
        for (auto* t : z.tensors()) t->setZero();
        return z;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto* t : tensors()) n += static_cast<std::size_t>(t->size());
        return n;
    }
};

struct RunningStat {
    Eigen::VectorXd mean;
    Eigen::VectorXd var;
};

struct BatchNormState {
    RunningStat trunk, dec1, dec2;

    std::array<RunningStat*, 3> all() { return {&trunk, &dec1, &dec2}; }
    std::array<const RunningStat*, 3> all() const { return {&trunk, &dec1, &dec2}; }
};

struct VibModel {
    VibArchitecture arch;
    VibParams params;
    BatchNormState running;
    double dropout = 0.5;
    double bn_momentum = 0.1;
    double bn_eps = 1e-5;
};

enum class Mode {
    training,   // batch statistics, dropout active
    inference,  // running statistics, no dropout
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, unit gamma, zero beta.
inline VibModel make_vib_model(const VibArchitecture& arch, std::uint64_t seed) {
    if (arch.input_dim == 0 || arch.trunk_width == 0 || arch.latent_dim == 0 || arch.decoder_width1 == 0 ||
        arch.decoder_width2 == 0) {
        throw ValidationError("all layer widths must be positive");
    }
    std::mt19937_64 rng(seed);
    auto uniform = [&rng](Eigen::Index rows, Eigen::Index cols, std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        Tensor t(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) t(i, j) = dist(rng);
        return t;
    };
    const auto d = static_cast<Eigen::Index>(arch.input_dim);
    const auto h1 = static_cast<Eigen::Index>(arch.trunk_width);
    const auto l = static_cast<Eigen::Index>(arch.latent_dim);
    const auto h2 = static_cast<Eigen::Index>(arch.decoder_width1);
    const auto h3 = static_cast<Eigen::Index>(arch.decoder_width2);

    VibModel m;
    m.arch = arch;
    auto& p = m.params;
    p.trunk_w = uniform(h1, d, arch.input_dim);
    p.trunk_gamma = Tensor::Ones(h1, 1);
    p.trunk_beta = Tensor::Zero(h1, 1);
    p.mu_w = uniform(l, h1, arch.trunk_width);
    p.mu_b = uniform(l, 1, arch.trunk_width);
    p.logvar_w = uniform(l, h1, arch.trunk_width);
    p.logvar_b = uniform(l, 1, arch.trunk_width);
    p.dec1_w = uniform(h2, l, arch.latent_dim);
    p.dec1_gamma = Tensor::Ones(h2, 1);
    p.dec1_beta = Tensor::Zero(h2, 1);
    p.dec2_w = uniform(h3, h2, arch.decoder_width1);
    p.dec2_gamma = Tensor::Ones(h3, 1);
    p.dec2_beta = Tensor::Zero(h3, 1);
    p.out_w = uniform(1, h3, arch.decoder_width2);
    p.out_b = uniform(1, 1, arch.decoder_width2);
    m.running.trunk = {Eigen::VectorXd::Zero(h1), Eigen::VectorXd::Ones(h1)};
    m.running.dec1 = {Eigen::VectorXd::Zero(h2), Eigen::VectorXd::Ones(h2)};
    m.running.dec2 = {Eigen::VectorXd::Zero(h3), Eigen::VectorXd::Ones(h3)};
    return m;
}

inline double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

/// Binary cross-entropy from a logit, log-sum-exp form.
inline double bce_with_logit(double logit, int label) {
    return std::max(logit, 0.0) - logit * static_cast<double>(label) + std::log1p(std::exp(-std::abs(logit)));
}

namespace detail {

struct BatchNormCache {
    Tensor xhat;
    Eigen::VectorXd inv_std;
};

inline Tensor batch_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, const RunningStat& running,
                         Mode mode, double eps, double momentum, BatchNormCache* cache, RunningStat* update) {
    const auto batch = a.cols();
    Eigen::VectorXd mean, var;
    if (mode == Mode::training) {
        mean = a.rowwise().mean();
        var = (a.colwise() - mean).array().square().rowwise().mean();
        if (update != nullptr) {
            const double unbias = batch > 1 ? static_cast<double>(batch) / static_cast<double>(batch - 1) : 1.0;
            update->mean = (1.0 - momentum) * update->mean + momentum * mean;
            update->var = (1.0 - momentum) * update->var + momentum * (unbias * var);
        }
    } else {
        mean = running.mean;
        var = running.var;
    }
    const Eigen::VectorXd inv_std = (var.array() + eps).rsqrt().matrix();
    Tensor xhat = (a.colwise() - mean).array().colwise() * inv_std.array();
    Tensor y = (xhat.array().colwise() * gamma.col(0).array()).colwise() + beta.col(0).array();
    if (cache != nullptr) {
        cache->xhat = std::move(xhat);
        cache->inv_std = inv_std;
    }
    return y;
}

// Gradient w.r.t. the pre-norm activations for training-mode batch norm.
inline Tensor batch_norm_backward(const Tensor& dy, const Tensor& gamma, const BatchNormCache& cache,
                                  Tensor& dgamma, Tensor& dbeta) {
    dgamma = (dy.array() * cache.xhat.array()).rowwise().sum().matrix();
    dbeta = dy.rowwise().sum();
    const Tensor dxhat = dy.array().colwise() * gamma.col(0).array();
    const Eigen::VectorXd mean_dxhat = dxhat.rowwise().mean();
    const Eigen::VectorXd mean_dxhat_xhat = (dxhat.array() * cache.xhat.array()).rowwise().mean().matrix();
    Tensor centered = (dxhat.colwise() - mean_dxhat).array() - cache.xhat.array().colwise() * mean_dxhat_xhat.array();
    return centered.array().colwise() * cache.inv_std.array();
}

inline Tensor dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, std::mt19937_64& rng) {
    Tensor mask(rows, cols);
    if (rate <= 0.0) {
        mask.setOnes();
        return mask;
    }
    std::bernoulli_distribution keep(1.0 - rate);
    const double scale = 1.0 / (1.0 - rate);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) mask(i, j) = keep(rng) ? scale : 0.0;
    return mask;
}

inline Tensor relu(const Tensor& x) { return x.cwiseMax(0.0); }

inline Tensor standard_normal(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    std::normal_distribution<double> normal;
    Tensor t(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) t(i, j) = normal(rng);
    return t;
}

}  // namespace detail

struct Encoding {
    Tensor mu;       // L x B
    Tensor log_var;  // L x B
};

inline void require_input_dim(const VibModel& m, Eigen::Index rows) {
    if (static_cast<std::size_t>(rows) != m.arch.input_dim) {
        throw ValidationError("feature dimension " + std::to_string(rows) + " does not match model input " +
                              std::to_string(m.arch.input_dim));
    }
}

/// Inference-mode encoder over a (D x B) batch: running statistics, no dropout.
inline Encoding encode_batch(const VibModel& m, const Tensor& x) {
    require_input_dim(m, x.rows());
    const auto& p = m.params;
    const Tensor a1 = p.trunk_w * x;
    const Tensor h1 = detail::relu(detail::batch_norm(a1, p.trunk_gamma, p.trunk_beta, m.running.trunk,
                                                      Mode::inference, m.bn_eps, m.bn_momentum, nullptr, nullptr));
    Encoding e;
    e.mu = (p.mu_w * h1).colwise() + p.mu_b.col(0);
    e.log_var = (p.logvar_w * h1).colwise() + p.logvar_b.col(0);
    return e;
}

struct VectorEncoding {
    Eigen::VectorXd mu;
    Eigen::VectorXd log_var;
};

inline VectorEncoding encode(const VibModel& m, const Eigen::VectorXd& g) {
    auto e = encode_batch(m, g);
    return {e.mu.col(0), e.log_var.col(0)};
}

/// z = mu + exp(log_var / 2) * noise, element-wise.
inline Tensor reparameterize(const Tensor& mu, const Tensor& log_var, const Tensor& noise) {
    if (mu.rows() != log_var.rows() || mu.cols() != log_var.cols() || mu.rows() != noise.rows() ||
        mu.cols() != noise.cols()) {
        throw ValidationError("reparameterize: mu, log_var and noise shapes differ");
    }
    return (mu.array() + (0.5 * log_var.array()).exp() * noise.array()).matrix();
}

/// Inference-mode decoder logits for a (L x B) latent batch, as a 1 x B row.
inline Tensor decode_logits(const VibModel& m, const Tensor& z) {
    if (static_cast<std::size_t>(z.rows()) != m.arch.latent_dim) {
        throw ValidationError("latent dimension does not match model");
    }
    const auto& p = m.params;
    const Tensor h2 = detail::relu(detail::batch_norm(p.dec1_w * z, p.dec1_gamma, p.dec1_beta, m.running.dec1,
                                                      Mode::inference, m.bn_eps, m.bn_momentum, nullptr, nullptr));
    const Tensor h3 = detail::relu(detail::batch_norm(p.dec2_w * h2, p.dec2_gamma, p.dec2_beta, m.running.dec2,
                                                      Mode::inference, m.bn_eps, m.bn_momentum, nullptr, nullptr));
    return (p.out_w * h3).array() + p.out_b(0, 0);
}

inline Eigen::RowVectorXd decode_batch(const VibModel& m, const Tensor& z) {
    return decode_logits(m, z).unaryExpr([](double s) { return sigmoid(s); });
}

/// Acceptance probability p(Y = 1 | z).
inline double decode(const VibModel& m, const Eigen::VectorXd& z) { return decode_batch(m, z)(0); }

/// Deterministic scoring path: z = mu, no sampling.
inline Eigen::RowVectorXd predict_batch(const VibModel& m, const Tensor& x) {
    return decode_batch(m, encode_batch(m, x).mu);
}

struct IbLossBreakdown {
    double bce = 0.0;
    double kl = 0.0;
    double beta = 0.0;
    double total = 0.0;
};

using Batch = FeatureMatrix;

/// Forward pass, loss and (optionally) the full backward pass. Noise and
/// dropout masks are drawn from `rng`; in training mode `running_update`, if
/// given, receives the momentum update of the batch-norm statistics.
inline IbLossBreakdown evaluate_loss(const VibModel& m, const Batch& batch, double beta, Mode mode,
                                     std::mt19937_64& rng, VibParams* grads = nullptr,
                                     BatchNormState* running_update = nullptr) {
    require_input_dim(m, batch.x.rows());
    const auto b = batch.x.cols();
    if (b == 0 || static_cast<std::size_t>(b) != batch.y.size()) {
        throw ValidationError("loss batch must be non-empty with one label per column");
    }
    const auto& p = m.params;
    const double rate = mode == Mode::training ? m.dropout : 0.0;
    detail::BatchNormCache c1, c2, c3;
    auto* up = running_update;

    const Tensor y1 = detail::batch_norm(p.trunk_w * batch.x, p.trunk_gamma, p.trunk_beta, m.running.trunk, mode,
                                         m.bn_eps, m.bn_momentum, &c1, up ? &up->trunk : nullptr);
    const Tensor mask1 = detail::dropout_mask(y1.rows(), y1.cols(), rate, rng);
    const Tensor h1 = detail::relu(y1).cwiseProduct(mask1);

    const Tensor mu = (p.mu_w * h1).colwise() + p.mu_b.col(0);
    const Tensor log_var = (p.logvar_w * h1).colwise() + p.logvar_b.col(0);
    const Tensor eps = detail::standard_normal(mu.rows(), b, rng);
    const Tensor sigma = (0.5 * log_var.array()).exp();
    const Tensor z = (mu.array() + sigma.array() * eps.array()).matrix();

    const Tensor y2 = detail::batch_norm(p.dec1_w * z, p.dec1_gamma, p.dec1_beta, m.running.dec1, mode, m.bn_eps,
                                         m.bn_momentum, &c2, up ? &up->dec1 : nullptr);
    const Tensor mask2 = detail::dropout_mask(y2.rows(), y2.cols(), rate, rng);
    const Tensor h2 = detail::relu(y2).cwiseProduct(mask2);

    const Tensor y3 = detail::batch_norm(p.dec2_w * h2, p.dec2_gamma, p.dec2_beta, m.running.dec2, mode, m.bn_eps,
                                         m.bn_momentum, &c3, up ? &up->dec2 : nullptr);
    const Tensor mask3 = detail::dropout_mask(y3.rows(), y3.cols(), rate, rng);
    const Tensor h3 = detail::relu(y3).cwiseProduct(mask3);

    const Eigen::RowVectorXd logits = (p.out_w * h3).array() + p.out_b(0, 0);

    const double inv_b = 1.0 / static_cast<double>(b);
    IbLossBreakdown loss;
    loss.beta = beta;
    for (Eigen::Index j = 0; j < b; ++j) {
        loss.bce += bce_with_logit(logits(j), batch.y[static_cast<std::size_t>(j)]);
    }
    loss.bce *= inv_b;
    loss.kl = 0.5 * (mu.array().square() + log_var.array().exp() - log_var.array() - 1.0).sum() * inv_b;
    loss.total = loss.bce + beta * loss.kl;

    if (grads == nullptr) {
        return loss;
    }
    if (mode != Mode::training) {
        throw ValidationError("gradients are only defined for training-mode forward passes");
    }
    auto& g = *grads;
    Eigen::RowVectorXd ds(b);
    for (Eigen::Index j = 0; j < b; ++j) {
        ds(j) = (sigmoid(logits(j)) - static_cast<double>(batch.y[static_cast<std::size_t>(j)])) * inv_b;
    }
    g.out_w = ds * h3.transpose();
    g.out_b = Tensor::Constant(1, 1, ds.sum());

    auto relu_dropout_back = [](const Tensor& dh, const Tensor& y, const Tensor& mask) {
        return Tensor(dh.array() * mask.array() * (y.array() > 0.0).cast<double>());
    };

    const Tensor dy3 = relu_dropout_back(p.out_w.transpose() * ds, y3, mask3);
    const Tensor da3 = detail::batch_norm_backward(dy3, p.dec2_gamma, c3, g.dec2_gamma, g.dec2_beta);
    g.dec2_w = da3 * h2.transpose();

    const Tensor dy2 = relu_dropout_back(p.dec2_w.transpose() * da3, y2, mask2);
    const Tensor da2 = detail::batch_norm_backward(dy2, p.dec1_gamma, c2, g.dec1_gamma, g.dec1_beta);
    g.dec1_w = da2 * z.transpose();

    const Tensor dz = p.dec1_w.transpose() * da2;
    const Tensor dmu = dz + (beta * inv_b) * mu;
    const Tensor dlv = (dz.array() * eps.array() * 0.5 * sigma.array() +
                        (beta * inv_b * 0.5) * (log_var.array().exp() - 1.0))
                           .matrix();
    g.mu_w = dmu * h1.transpose();
    g.mu_b = dmu.rowwise().sum();
    g.logvar_w = dlv * h1.transpose();
    g.logvar_b = dlv.rowwise().sum();

    const Tensor dy1 = relu_dropout_back(p.mu_w.transpose() * dmu + p.logvar_w.transpose() * dlv, y1, mask1);
    const Tensor da1 = detail::batch_norm_backward(dy1, p.trunk_gamma, c1, g.trunk_gamma, g.trunk_beta);
    g.trunk_w = da1 * batch.x.transpose();
    return loss;
}

/// Information bottleneck loss with one reparameterised sample per example.
/// Inference mode uses running batch-norm statistics and no dropout.
inline IbLossBreakdown ib_loss(const VibModel& m, const Batch& batch, double beta, std::uint64_t noise_seed,
                               Mode mode = Mode::inference) {
    std::mt19937_64 rng(noise_seed);
    return evaluate_loss(m, batch, beta, mode, rng);
}

struct GradientCheckReport {
    double max_relative_error = 0.0;
    std::string worst_parameter;
    std::size_t checked = 0;
};

inline constexpr double kGradientCheckStep = 1e-6;
inline constexpr double kGradientCheckFloor = 1e-6;

/// Analytic vs central finite-difference gradients of the training-mode loss,
/// with noise and dropout masks frozen by reseeding every evaluation.
/// Relative error is |a - n| / max(|a|, |n|, floor).
inline GradientCheckReport gradient_check(const VibModel& model, const Batch& batch, double beta,
                                          std::uint64_t seed = 0) {
    VibParams analytic = model.params.zeros_like();
    {
        std::mt19937_64 rng(seed);
        evaluate_loss(model, batch, beta, Mode::training, rng, &analytic);
    }
    VibModel probe = model;
    auto loss_at = [&]() {
        std::mt19937_64 rng(seed);
        return evaluate_loss(probe, batch, beta, Mode::training, rng).total;
    };
    GradientCheckReport report;
    const auto names = VibParams::names();
    auto probe_tensors = probe.params.tensors();
    auto grad_tensors = analytic.tensors();
    for (std::size_t t = 0; t < probe_tensors.size(); ++t) {
        Tensor& param = *probe_tensors[t];
        const Tensor& grad = *grad_tensors[t];
        for (Eigen::Index k = 0; k < param.size(); ++k) {
            double& w = param.data()[k];
            const double saved = w;
            w = saved + kGradientCheckStep;
            const double up = loss_at();
            w = saved - kGradientCheckStep;
            const double down = loss_at();
            w = saved;
            const double numeric = (up - down) / (2.0 * kGradientCheckStep);
            const double a = grad.data()[k];
            const double denom = std::max({std::abs(a), std::abs(numeric), kGradientCheckFloor});
            const double rel = std::abs(a - numeric) / denom;
            if (rel > report.max_relative_error) {
                report.max_relative_error = rel;
                report.worst_parameter = std::string(names[t]) + "[" + std::to_string(k) + "]";
            }
            ++report.checked;
        }
    }
    return report;
}

inline constexpr std::string_view kCheckpointMagic = "SVM1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<char> encode_checkpoint(const VibModel& m) {
    io::ByteWriter w;
    w.bytes(kCheckpointMagic);
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(m.arch.input_dim));
    w.u32(static_cast<std::uint32_t>(m.arch.trunk_width));
    w.u32(static_cast<std::uint32_t>(m.arch.latent_dim));
    w.u32(static_cast<std::uint32_t>(m.arch.decoder_width1));
    w.u32(static_cast<std::uint32_t>(m.arch.decoder_width2));
    w.f64(m.dropout);
    for (const auto* t : m.params.tensors()) {
        for (Eigen::Index i = 0; i < t->rows(); ++i)
            for (Eigen::Index j = 0; j < t->cols(); ++j) w.f64((*t)(i, j));
    }
    for (const auto* rs : m.running.all()) {
        for (Eigen::Index i = 0; i < rs->mean.size(); ++i) w.f64(rs->mean[i]);
        for (Eigen::Index i = 0; i < rs->var.size(); ++i) w.f64(rs->var[i]);
    }
    return w.data();
}

inline VibModel decode_checkpoint(std::span<const char> data) {
    io::ByteReader r(data);
    if (r.bytes(std::min<std::size_t>(4, data.size()), "magic") != kCheckpointMagic) {
        throw FormatError("magic", "bad magic");
    }
    if (r.u32("version") != kCheckpointVersion) {
        throw FormatError("version", "unsupported version");
    }
    VibArchitecture arch;
    arch.input_dim = r.u32("input_dim");
    arch.trunk_width = r.u32("trunk_width");
    arch.latent_dim = r.u32("latent_dim");
    arch.decoder_width1 = r.u32("decoder_width1");
    arch.decoder_width2 = r.u32("decoder_width2");
    const double dropout = r.f64("dropout");
    if (arch.input_dim == 0 || arch.trunk_width == 0 || arch.latent_dim == 0 || arch.decoder_width1 == 0 ||
        arch.decoder_width2 == 0) {
        throw FormatError("architecture", "layer widths must be positive");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
        throw FormatError("dropout", "dropout rate out of range");
    }
    VibModel m = make_vib_model(arch, 0);
    m.dropout = dropout;
    std::size_t expected = 0;
    for (const auto* t : m.params.tensors()) expected += static_cast<std::size_t>(t->size());
    for (const auto* rs : m.running.all()) expected += static_cast<std::size_t>(rs->mean.size() + rs->var.size());
    if (r.remaining() != expected * 8) {
        throw FormatError("payload", "parameter payload size mismatch");
    }
    for (auto* t : m.params.tensors()) {
        for (Eigen::Index i = 0; i < t->rows(); ++i)
            for (Eigen::Index j = 0; j < t->cols(); ++j) (*t)(i, j) = r.f64("parameters");
    }
    for (auto* rs : m.running.all()) {
        for (Eigen::Index i = 0; i < rs->mean.size(); ++i) rs->mean[i] = r.f64("running_stats");
        for (Eigen::Index i = 0; i < rs->var.size(); ++i) {
            rs->var[i] = r.f64("running_stats");
            if (!std::isfinite(rs->var[i]) || rs->var[i] < 0.0) {
                throw FormatError("running_stats", "batch-norm running variance must be finite and >= 0");
            }
        }
    }
    return m;
}

inline void write_checkpoint(const std::filesystem::path& path, const VibModel& m) {
    io::write_file_atomic(path, encode_checkpoint(m));
}

inline VibModel read_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_file(path)); }

}  // namespace swinvib

#pragma once
// Attention features per window and layer, the SVF1/SVQ1 feature files and
// training-set construction (one labelled file per decoder layer).
//
// Feature file layout, all integers and floats little-endian:
//
//   offset  size  field
//   0       4     magic         "SVF1" (training, labelled) | "SVQ1" (inference)
//   4       4     version       u32, currently 1
//   8       4     layer_index   u32
//   12      4     feature_dim   u32 (D)
//   16      8     record_count  u64
//   24      1     has_labels    u8, 1 for SVF1 and 0 for SVQ1
//   25      ...   records, each:
//                   window_ref  u64
//                   label       u8 in {0,1}   (SVF1 only)
//                   features    D x f32

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "swinvib/binary_io.hpp"
#include "swinvib/error.hpp"
#include "swinvib/windowing.hpp"

namespace swinvib {

inline constexpr std::uint32_t kFeatureFileVersion = 1;
inline constexpr std::string_view kTrainingMagic = "SVF1";
inline constexpr std::string_view kInferenceMagic = "SVQ1";
inline constexpr std::size_t kFeatureHeaderSize = 25;

/// Element-wise mean over the head axis of a (heads, w, w) attention stack.
inline Eigen::MatrixXd mean_heads(std::span<const Eigen::MatrixXd> heads) {
    if (heads.empty()) {
        throw ValidationError("mean_heads needs at least one head");
    }
    const auto rows = heads.front().rows();
    const auto cols = heads.front().cols();
    if (rows != cols || rows == 0) {
        throw ValidationError("attention heads must be non-empty square matrices");
    }
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(rows, cols);
    for (const auto& h : heads) {
        if (h.rows() != rows || h.cols() != cols) {
            throw ValidationError("ragged attention stack: heads differ in shape");
        }
        sum += h;
    }
    return sum / static_cast<double>(heads.size());
}

/// Row-major flatten, zero-padded or truncated to `dim`.
inline Eigen::VectorXd featurize(const Eigen::MatrixXd& g, std::size_t dim) {
    if (g.size() == 0) {
        throw ValidationError("featurize needs a non-empty matrix");
    }
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
    const Eigen::Index n = std::min<Eigen::Index>(g.size(), out.size());
    for (Eigen::Index k = 0; k < n; ++k) {
        out[k] = g(k / g.cols(), k % g.cols());
    }
    return out;
}

struct FeatureRecord {
    std::uint64_t window_ref = 0;
    std::optional<std::uint8_t> label;  // present in training files only
    std::vector<float> features;

    friend bool operator==(const FeatureRecord&, const FeatureRecord&) = default;
};

/// Contents of one per-layer feature file.
struct FeatureFile {
    std::uint32_t layer_index = 0;
    std::uint32_t feature_dim = 0;
    bool labeled = true;
    std::vector<FeatureRecord> records;

    friend bool operator==(const FeatureFile&, const FeatureFile&) = default;
};

inline std::vector<char> encode_feature_file(const FeatureFile& file) {
    if (file.feature_dim == 0) {
        throw ValidationError("feature_dim must be positive");
    }
    io::ByteWriter w;
    w.bytes(file.labeled ? kTrainingMagic : kInferenceMagic);
    w.u32(kFeatureFileVersion);
    w.u32(file.layer_index);
    w.u32(file.feature_dim);
    w.u64(file.records.size());
    w.u8(file.labeled ? 1 : 0);
    for (const auto& r : file.records) {
        if (r.features.size() != file.feature_dim) {
            throw ValidationError("record feature length does not match feature_dim");
        }
        if (r.label.has_value() != file.labeled) {
            throw ValidationError(file.labeled ? "training records need a label"
                                               : "inference records must not carry a label");
        }
        w.u64(r.window_ref);
        if (file.labeled) {
            if (*r.label > 1) {
                throw ValidationError("labels must be 0 or 1");
            }
            w.u8(*r.label);
        }
        for (float v : r.features) {
            w.f32(v);
        }
    }
    return w.data();
}

inline FeatureFile decode_feature_file(std::span<const char> data) {
    io::ByteReader r(data);
    if (data.size() < kFeatureHeaderSize) {
        throw FormatError("header", "truncated header");
    }
    const auto magic = r.bytes(4, "magic");
    if (magic != kTrainingMagic && magic != kInferenceMagic) {
        throw FormatError("magic", "bad magic");
    }
    FeatureFile file;
    file.labeled = magic == kTrainingMagic;
    if (r.u32("version") != kFeatureFileVersion) {
        throw FormatError("version", "unsupported version");
    }
    file.layer_index = r.u32("layer_index");
    file.feature_dim = r.u32("feature_dim");
    const std::uint64_t count = r.u64("record_count");
    const std::uint8_t has_labels = r.u8("has_labels");
    if (has_labels > 1 || (has_labels == 1) != file.labeled) {
        throw FormatError("has_labels", "has_labels flag inconsistent with magic");
    }
    if (file.feature_dim == 0) {
        throw FormatError("feature_dim", "feature_dim must be positive");
    }
    const std::uint64_t record_size = 8u + (file.labeled ? 1u : 0u) + 4ull * file.feature_dim;
    if (count > r.remaining() / record_size || count * record_size != r.remaining()) {
        throw FormatError("record_count", "record_count mismatch");
    }
    file.records.resize(count);
    for (auto& rec : file.records) {
        rec.window_ref = r.u64("window_ref");
        if (file.labeled) {
            const auto label = r.u8("label");
            if (label > 1) {
                throw FormatError("label", "label must be 0 or 1");
            }
            rec.label = label;
        }
        rec.features.resize(file.feature_dim);
        for (auto& v : rec.features) {
            v = r.f32("features");
        }
    }
    return file;
}

inline void write_feature_file(const std::filesystem::path& path, const FeatureFile& file) {
    io::write_file_atomic(path, encode_feature_file(file));
}

inline FeatureFile read_feature_file(const std::filesystem::path& path) {
    return decode_feature_file(io::read_file(path));
}

/// Features of one file as a (D x records) matrix plus labels.
struct FeatureMatrix {
    Eigen::MatrixXd x;
    std::vector<int> y;
};

inline FeatureMatrix to_matrix(const FeatureFile& file) {
    FeatureMatrix m;
    m.x.resize(file.feature_dim, static_cast<Eigen::Index>(file.records.size()));
    m.y.reserve(file.records.size());
    for (std::size_t j = 0; j < file.records.size(); ++j) {
        const auto& rec = file.records[j];
        for (std::size_t i = 0; i < rec.features.size(); ++i) {
            m.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rec.features[i];
        }
        m.y.push_back(rec.label.value_or(0));
    }
    return m;
}

/// Supplies per-layer window features G_n. Implementations must be pure: the
/// same window always yields the same features.
class FeatureSource {
public:
    virtual ~FeatureSource() = default;

    virtual std::size_t n_layers() const = 0;
    virtual std::size_t feature_dim() const = 0;

    /// Head-resolved attention (heads of shape w x w) for one window and layer.
    virtual std::vector<Eigen::MatrixXd> attention(const TokenSequence& seq, const WindowSpec& w,
                                                   std::size_t layer) const = 0;

    virtual Eigen::VectorXd features(const TokenSequence& seq, const WindowSpec& w, std::size_t layer) const {
        const auto heads = attention(seq, w, layer);
        return featurize(mean_heads(heads), feature_dim());
    }
};

/// Serves precomputed inference features (one SVQ1 file per layer); record
/// window_ref is the window index within the context.
class StoredFeatureSource final : public FeatureSource {
public:
    explicit StoredFeatureSource(std::vector<FeatureFile> layers) : layers_(std::move(layers)) {
        if (layers_.empty()) {
            throw ValidationError("stored feature source needs at least one layer");
        }
        for (const auto& f : layers_) {
            if (f.feature_dim != layers_.front().feature_dim) {
                throw ValidationError("stored feature layers disagree on feature_dim");
            }
        }
    }

    std::size_t n_layers() const override { return layers_.size(); }
    std::size_t feature_dim() const override { return layers_.front().feature_dim; }

    std::vector<Eigen::MatrixXd> attention(const TokenSequence&, const WindowSpec&, std::size_t) const override {
        throw ValidationError("stored features carry no raw attention");
    }

    Eigen::VectorXd features(const TokenSequence&, const WindowSpec& w, std::size_t layer) const override {
        const auto& file = layers_.at(layer);
        for (const auto& rec : file.records) {
            if (rec.window_ref == w.window_index) {
                return Eigen::Map<const Eigen::VectorXf>(rec.features.data(),
                                                         static_cast<Eigen::Index>(rec.features.size()))
                    .cast<double>();
            }
        }
        throw ValidationError("no stored features for window " + std::to_string(w.window_index) + " at layer " +
                              std::to_string(layer));
    }

private:
    std::vector<FeatureFile> layers_;
};

/// A corpus sample after its context has been chosen and tagged.
struct PreparedSample {
    std::string id;
    std::string query;
    TokenSequence context;
};

struct BuildReport {
    std::size_t processed = 0;
    std::size_t skipped = 0;
    std::array<std::size_t, 2> per_label_counts{0, 0};
    std::vector<std::string> warnings;

    nlohmann::json to_json() const {
        return {{"processed", processed},
                {"skipped", skipped},
                {"per_label_counts", {{"0", per_label_counts[0]}, {"1", per_label_counts[1]}}}};
    }
};

struct TrainingSets {
    std::vector<FeatureFile> layers;  // T_1 .. T_N
    BuildReport report;
};

/// For each sample: draw a random window, label it single/multi-source, and
/// append its features at every layer to that layer's training file. Samples
/// shorter than the window are skipped and counted.
inline TrainingSets build_training_sets(std::span<const PreparedSample> corpus, const FeatureSource& source,
                                        std::size_t len, std::uint64_t seed) {
    if (corpus.empty()) {
        throw ValidationError("training corpus is empty");
    }
    TrainingSets out;
    const auto n_layers = source.n_layers();
    const auto dim = static_cast<std::uint32_t>(source.feature_dim());
    out.layers.resize(n_layers);
    for (std::size_t n = 0; n < n_layers; ++n) {
        out.layers[n].layer_index = static_cast<std::uint32_t>(n);
        out.layers[n].feature_dim = dim;
        out.layers[n].labeled = true;
    }
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& sample = corpus[i];
        if (sample.context.size() < len) {
            ++out.report.skipped;
            out.report.warnings.push_back("sample '" + sample.id + "' has " + std::to_string(sample.context.size()) +
                                          " tokens (< window length " + std::to_string(len) + "), skipped");
            continue;
        }
        auto window = random_window(sample.context, len, rng);
        window.window_index = i;
        const auto labeled = label_window(sample.context, window);
        for (std::size_t n = 0; n < n_layers; ++n) {
            const Eigen::VectorXd g = source.features(sample.context, window, n);
            FeatureRecord rec;
            rec.window_ref = i;
            rec.label = static_cast<std::uint8_t>(labeled.label);
            rec.features.assign(g.data(), g.data() + g.size());
            out.layers[n].records.push_back(std::move(rec));
        }
        ++out.report.processed;
        ++out.report.per_label_counts[static_cast<std::size_t>(labeled.label)];
    }
    return out;
}

/// Bundles per-layer files: {model_name, N, D, window_len, files[], ...}.
struct FeatureManifest {
    std::string model_name = "synthetic";
    std::size_t n_layers = 0;
    std::size_t feature_dim = 0;
    std::size_t window_len = kDefaultWindowLength;
    std::vector<std::string> files;
    std::vector<std::string> heldout_files;
    std::string eval_corpus;
    nlohmann::json synthetic;  // generator spec, null for extractor runs

    nlohmann::json to_json() const {
        nlohmann::json j = {{"model_name", model_name}, {"N", n_layers},          {"D", feature_dim},
                            {"window_len", window_len}, {"files", files}};
        if (!heldout_files.empty()) {
            j["heldout_files"] = heldout_files;
        }
        if (!eval_corpus.empty()) {
            j["eval_corpus"] = eval_corpus;
        }
        if (!synthetic.is_null()) {
            j["synthetic"] = synthetic;
        }
        return j;
    }

    static FeatureManifest from_json(const nlohmann::json& j) {
        FeatureManifest m;
        try {
            m.model_name = j.at("model_name").get<std::string>();
            m.n_layers = j.at("N").get<std::size_t>();
            m.feature_dim = j.at("D").get<std::size_t>();
            m.window_len = j.at("window_len").get<std::size_t>();
            m.files = j.at("files").get<std::vector<std::string>>();
            m.heldout_files = j.value("heldout_files", std::vector<std::string>{});
            m.eval_corpus = j.value("eval_corpus", std::string{});
            if (j.contains("synthetic")) {
                m.synthetic = j.at("synthetic");
            }
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("manifest", std::string("invalid manifest: ") + e.what());
        }
        if (m.files.size() != m.n_layers) {
            throw FormatError("files", "manifest lists " + std::to_string(m.files.size()) + " files for N=" +
                                           std::to_string(m.n_layers));
        }
        return m;
    }
};

inline void write_manifest(const std::filesystem::path& path, const FeatureManifest& m) {
    io::write_text_atomic(path, m.to_json().dump(2) + "\n");
}

inline FeatureManifest read_manifest(const std::filesystem::path& path) {
    const auto raw = io::read_file(path);
    nlohmann::json j = nlohmann::json::parse(raw.begin(), raw.end(), nullptr, false);
    if (j.is_discarded()) {
        throw FormatError("manifest", "manifest is not valid JSON: " + path.string());
    }
    return FeatureManifest::from_json(j);
}

}  // namespace swinvib

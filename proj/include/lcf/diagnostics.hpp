#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "lcf/encoder.hpp"
#include "lcf/features.hpp"
#include "lcf/training.hpp"

namespace lcf {

inline constexpr int kReportSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Layer transitions

struct Transition {
    std::size_t layer_from = 0;
    std::size_t layer_to = 0;
    double l2_mean = 0;
    double cos_mean = 0;
};

struct ConsistencyReport {
    std::string model_tag;
    std::vector<Transition> transitions;
    std::size_t frames = 0;

    /// Mean cosine over transitions whose target layer lies in [first_to, last_to].
    double mean_cosine(std::size_t first_to, std::size_t last_to) const {
        double s = 0;
        std::size_t n = 0;
        for (const auto& t : transitions) {
            if (t.layer_to < first_to || t.layer_to > last_to) continue;
            s += t.cos_mean;
            ++n;
        }
        if (n == 0) throw ContractError("mean_cosine: no transitions in range");
        return s / double(n);
    }
};

/// Cosine of two frame vectors; two zero vectors count as identical, one zero vector as orthogonal.
template <typename T>
double frame_cosine(std::span<const T> a, std::span<const T> b) {
    long double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<long double>(a[i]) * b[i];
        na += static_cast<long double>(a[i]) * a[i];
        nb += static_cast<long double>(b[i]) * b[i];
    }
    if (na == 0 && nb == 0) return 1.0;
    if (na == 0 || nb == 0) return 0.0;
    const double c = static_cast<double>(dot / std::sqrt(na * nb));
    return std::clamp(c, -1.0, 1.0);
}

/// Frame-wise L2 distance and cosine between consecutive trace entries,
/// averaged over every frame of every trace.
template <typename T>
ConsistencyReport layer_transitions(const std::vector<LayerTrace<T>>& traces, std::string model_tag = {}) {
    if (traces.empty()) throw ContractError("layer_transitions: no traces");
    const std::size_t entries = traces.front().embeddings.size();
    if (entries < 2) throw ContractError("layer_transitions: traces need at least one layer");
    for (const auto& tr : traces) {
        if (tr.embeddings.size() != entries) throw ContractError("layer_transitions: inconsistent trace lengths");
    }
    const std::size_t n = entries - 1;
    std::vector<long double> l2(n, 0), cs(n, 0);
    std::size_t frames = 0;
    for (const auto& tr : traces) {
        const std::size_t rows = tr.embeddings[0].rows();
        for (const auto& e : tr.embeddings) e.require_same_shape(tr.embeddings[0], "layer_transitions");
        frames += rows;
        for (std::size_t i = 0; i < n; ++i) {
            const auto& a = tr.embeddings[i];
            const auto& b = tr.embeddings[i + 1];
            for (std::size_t r = 0; r < rows; ++r) {
                long double d2 = 0;
                for (std::size_t c = 0; c < a.cols(); ++c) {
                    const long double diff = static_cast<long double>(b(r, c)) - a(r, c);
                    d2 += diff * diff;
                }
                l2[i] += std::sqrt(d2);
                cs[i] += frame_cosine<T>(a.row_span(r), b.row_span(r));
            }
        }
    }
    ConsistencyReport rep;
    rep.model_tag = std::move(model_tag);
    rep.frames = frames;
    for (std::size_t i = 0; i < n; ++i) {
        rep.transitions.push_back({i, i + 1, static_cast<double>(l2[i] / frames), static_cast<double>(cs[i] / frames)});
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Gradient decomposition over shared-layer applications

struct GradDecomposition {
    std::vector<std::vector<double>> contributions;  // g_i, flattened shared-group gradient of application i
    std::vector<double> total;                       // g from an ordinary shared backward pass
    std::vector<double> norms;                       // |g_i|
    std::vector<std::vector<double>> cosine;         // pairwise cos(g_i, g_j)
    double total_norm = 0;
    double scaling_ratio = 0;      // |g| / (N |g_N|)
    double sum_relative_error = 0; // |sum_i g_i - g| / |g|

    double mean_pairwise_cosine() const {
        const std::size_t n = cosine.size();
        if (n < 2) return 1.0;
        double s = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) s += cosine[i][j];
        return s / double(n * (n - 1) / 2);
    }
};

namespace detail {

inline double vec_norm(const std::vector<double>& v) {
    long double s = 0;
    for (double x : v) s += static_cast<long double>(x) * x;
    return static_cast<double>(std::sqrt(s));
}

inline double vec_cosine(const std::vector<double>& a, const std::vector<double>& b) {
    return frame_cosine<double>(a, b);
}

}  // namespace detail

/// Isolates the contribution of every block application to the gradient of the
/// shared layer group by giving each application its own leaf copy of the
/// group, and checks that the contributions sum to the ordinary shared gradient.
template <typename T>
GradDecomposition gradient_decomposition(const ParameterStore<T>& store, const std::vector<MpcExample<T>>& batch,
                                         std::size_t n_layers, LossMode mode = LossMode::all_frames) {
    if (!store.config().share_params) throw ContractError("gradient_decomposition: store is not parameter-shared");
    if (n_layers < 1) throw ContractError("gradient_decomposition: need at least one layer");
    if (batch.empty()) throw ContractError("gradient_decomposition: empty batch");

    const std::size_t base = store.group_offset(0);
    std::size_t group_size = 0;
    for (std::size_t p = 0; p < kNumLayerParams; ++p) group_size += store.tensor(base + p).numel();

    GradDecomposition out;
    out.contributions.assign(n_layers, std::vector<double>(group_size, 0.0));
    for (const auto& ex : batch) {
        Graph<T> g;
        StoreBinding<T> bind(g, store);
        EncodeOptions<T> opt;
        opt.alias_per_application = true;
        auto grads = g.backward(example_loss(bind, ex, n_layers, mode, opt));
        for (std::size_t app = 0; app < n_layers; ++app) {
            std::size_t off = 0;
            for (std::size_t p = 0; p < kNumLayerParams; ++p) {
                const auto it = grads.find(bind.alias_slot(base + p, app));
                const std::size_t len = store.tensor(base + p).numel();
                if (it != grads.end()) {
                    for (std::size_t i = 0; i < len; ++i) out.contributions[app][off + i] += double(it->second[i]);
                }
                off += len;
            }
        }
    }
    for (auto& c : out.contributions)
        for (auto& v : c) v /= double(batch.size());

    const auto shared = batch_gradients(store, batch, n_layers, mode, false, {}, 1);
    out.total.assign(group_size, 0.0);
    {
        std::size_t off = 0;
        for (std::size_t p = 0; p < kNumLayerParams; ++p) {
            const auto it = shared.grads.find(base + p);
            const std::size_t len = store.tensor(base + p).numel();
            if (it != shared.grads.end()) {
                for (std::size_t i = 0; i < len; ++i) out.total[off + i] = double(it->second[i]);
            }
            off += len;
        }
    }

    std::vector<double> summed(group_size, 0.0);
    for (const auto& c : out.contributions)
        for (std::size_t i = 0; i < group_size; ++i) summed[i] += c[i];
    std::vector<double> diff(group_size);
    for (std::size_t i = 0; i < group_size; ++i) diff[i] = summed[i] - out.total[i];

    out.total_norm = detail::vec_norm(out.total);
    out.sum_relative_error = detail::vec_norm(diff) / std::max(out.total_norm, std::numeric_limits<double>::min());
    for (const auto& c : out.contributions) out.norms.push_back(detail::vec_norm(c));
    out.cosine.assign(n_layers, std::vector<double>(n_layers, 1.0));
    for (std::size_t i = 0; i < n_layers; ++i)
        for (std::size_t j = i + 1; j < n_layers; ++j)
            out.cosine[i][j] = out.cosine[j][i] = detail::vec_cosine(out.contributions[i], out.contributions[j]);
    const double last = out.norms.back();
    out.scaling_ratio = last > 0 ? out.total_norm / (double(n_layers) * last) : std::numeric_limits<double>::infinity();
    return out;
}

// ---------------------------------------------------------------------------
// 2-D projection (PCA)

struct Projection {
    std::vector<std::vector<std::array<double, 2>>> coords;  // [layer][frame]
    std::array<double, 2> explained_variance{0, 0};
    std::vector<double> mean;
    std::array<std::vector<double>, 2> components;
    bool degenerate = false;
};

/// PCA fitted on frames [start, end) of every trace entry pooled together.
/// Each component's largest-magnitude entry is made positive.
template <typename T>
Projection project_2d(const LayerTrace<T>& trace, std::size_t start, std::size_t end) {
    if (trace.embeddings.empty()) throw ContractError("project_2d: empty trace");
    if (end < start + 3) throw ContractError("project_2d: need at least 3 frames");
    const std::size_t rows = trace.embeddings[0].rows(), d = trace.embeddings[0].cols();
    if (end > rows) throw ContractError("project_2d: frame range exceeds utterance length");
    const std::size_t frames = end - start, layers = trace.embeddings.size();

    Eigen::MatrixXd pool(frames * layers, d);
    for (std::size_t l = 0; l < layers; ++l) {
        trace.embeddings[l].require_same_shape(trace.embeddings[0], "project_2d");
        for (std::size_t f = 0; f < frames; ++f)
            for (std::size_t c = 0; c < d; ++c) pool(l * frames + f, c) = double(trace.embeddings[l](start + f, c));
    }
    const Eigen::RowVectorXd mean = pool.colwise().mean();
    const Eigen::MatrixXd centered = pool.rowwise() - mean;
    const Eigen::MatrixXd cov = centered.transpose() * centered / double(pool.rows());

    Projection out;
    out.mean.assign(mean.data(), mean.data() + d);
    out.coords.assign(layers, std::vector<std::array<double, 2>>(frames, {0.0, 0.0}));
    out.components = {std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
    if (cov.trace() <= 1e-300) {
        out.degenerate = true;
        return out;
    }

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    const auto& vals = eig.eigenvalues();  // ascending
    const std::size_t ncomp = std::min<std::size_t>(2, d);
    for (std::size_t k = 0; k < ncomp; ++k) {
        const Eigen::Index col = static_cast<Eigen::Index>(d - 1 - k);
        Eigen::VectorXd v = eig.eigenvectors().col(col);
        Eigen::Index arg;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        out.components[k].assign(v.data(), v.data() + d);
        out.explained_variance[k] = std::max(0.0, vals(col));
        const Eigen::VectorXd proj = centered * v;
        for (std::size_t l = 0; l < layers; ++l)
            for (std::size_t f = 0; f < frames; ++f) out.coords[l][f][k] = proj(l * frames + f);
    }
    return out;
}

// ---------------------------------------------------------------------------
// FLOP accounting

/// Multiply-accumulates of one Conformer block on T frames.
inline std::uint64_t block_macs(const ConformerConfig& c, std::size_t len) {
    const std::uint64_t t = len, d = c.model_dim, f = c.ff_dim, k = c.conv_kernel;
    const std::uint64_t ff = 2 * (2 * t * d * f);        // two macaron feed-forwards
    const std::uint64_t attn = 4 * t * d * d + 2 * t * t * d;  // q/k/v/out projections, scores, context
    const std::uint64_t conv = 2 * t * d * d + t * k * d + t * d * d;  // pointwise-GLU, depthwise, pointwise
    return ff + attn + conv;
}

inline std::uint64_t frontend_macs(const ConformerConfig& c, std::size_t len) {
    return std::uint64_t(len) * c.input_dim * c.model_dim;
}

inline std::uint64_t predictor_macs(const ConformerConfig& c, std::size_t len) {
    return std::uint64_t(len) * c.model_dim * c.input_dim;
}

/// Encoder forward cost (frontend + N blocks); affine in N.
inline std::uint64_t encoder_macs(const ConformerConfig& c, std::size_t len, std::size_t n_layers) {
    return frontend_macs(c, len) + n_layers * block_macs(c, len);
}

struct FlopReport {
    std::size_t frames = 0;
    std::size_t max_layers = 0;
    std::uint64_t block = 0;
    std::uint64_t frontend = 0;
    std::uint64_t predictor = 0;
    std::vector<std::uint64_t> per_depth;  // encoder_macs for N = 0..H
    double expected_depth = 0;
    double training_block_ratio = 0;  // E[N] / H
    double training_total_ratio = 0;  // including frontend and predictor
    std::size_t sli_layers = 0;
    double sli_block_ratio = 0;  // M / H
    double sli_total_ratio = 0;
};

inline FlopReport flop_report(const ConformerConfig& cfg, std::size_t len, const DepthPolicy& depth, std::size_t sli_m) {
    cfg.validate();
    if (sli_m < 1 || sli_m > cfg.max_layers) throw ContractError("flop_report: SLI depth out of range");
    FlopReport r;
    r.frames = len;
    r.max_layers = cfg.max_layers;
    r.block = block_macs(cfg, len);
    r.frontend = frontend_macs(cfg, len);
    r.predictor = predictor_macs(cfg, len);
    for (std::size_t n = 0; n <= cfg.max_layers; ++n) r.per_depth.push_back(encoder_macs(cfg, len, n));
    const double h = double(cfg.max_layers);
    r.expected_depth = depth.expected();
    r.training_block_ratio = r.expected_depth / h;
    const double fixed_total = double(r.frontend + r.predictor) + h * double(r.block);
    r.training_total_ratio = (double(r.frontend + r.predictor) + r.expected_depth * double(r.block)) / fixed_total;
    r.sli_layers = sli_m;
    r.sli_block_ratio = double(sli_m) / h;
    r.sli_total_ratio = double(encoder_macs(cfg, len, sli_m)) / double(encoder_macs(cfg, len, cfg.max_layers));
    return r;
}

// ---------------------------------------------------------------------------
// Linear probe

struct ProbeConfig {
    std::size_t steps = 500;
    double learning_rate = 0.5;
};

struct ProbeResult {
    std::size_t layer = 0;
    double accuracy = 0;
    std::vector<double> per_class_accuracy;  // NaN for classes absent from the held-out split
};

/// Frozen frames (one matrix per utterance) with their frame labels.
template <typename T>
struct ProbeData {
    std::vector<Tensor<T>> frames;
    std::vector<std::vector<std::uint16_t>> labels;

    std::size_t total_frames() const {
        std::size_t n = 0;
        for (const auto& l : labels) n += l.size();
        return n;
    }
};

namespace detail {

template <typename T>
void stack(const ProbeData<T>& data, Eigen::MatrixXd& x, std::vector<std::uint16_t>& y) {
    const std::size_t n = data.total_frames();
    const std::size_t d = data.frames.empty() ? 0 : data.frames.front().cols();
    x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    y.clear();
    std::size_t row = 0;
    for (std::size_t u = 0; u < data.frames.size(); ++u) {
        const auto& f = data.frames[u];
        if (f.rows() != data.labels[u].size()) throw ContractError("probe: label count differs from frame count");
        if (f.cols() != d) throw ContractError("probe: inconsistent feature width");
        for (std::size_t r = 0; r < f.rows(); ++r, ++row) {
            for (std::size_t c = 0; c < d; ++c) x(row, c) = double(f(r, c));
            y.push_back(data.labels[u][r]);
        }
    }
}

}  // namespace detail

/// Affine softmax classifier on standardized frozen features, trained by
/// full-batch gradient descent for a fixed number of steps. Reports frame
/// accuracy on the held-out split.
template <typename T>
ProbeResult linear_probe(const ProbeData<T>& train, const ProbeData<T>& heldout, std::size_t num_classes,
                         const ProbeConfig& pc = {}, std::size_t layer = 0) {
    Eigen::MatrixXd x, xh;
    std::vector<std::uint16_t> y, yh;
    detail::stack(train, x, y);
    detail::stack(heldout, xh, yh);
    if (y.empty() || yh.empty()) throw ContractError("probe: empty train or held-out split");
    if (x.cols() != xh.cols()) throw ContractError("probe: train and held-out widths differ");
    if (std::set<std::uint16_t>(y.begin(), y.end()).size() < 2) {
        throw ContractError("probe: training labels contain a single class");
    }
    for (auto l : y)
        if (l >= num_classes) throw ContractError("probe: label out of range");

    const Eigen::RowVectorXd mu = x.colwise().mean();
    Eigen::RowVectorXd sd = ((x.rowwise() - mu).array().square().colwise().sum() / double(x.rows())).sqrt();
    for (Eigen::Index c = 0; c < sd.size(); ++c)
        if (sd(c) < 1e-12) sd(c) = 1.0;
    auto standardize = [&](const Eigen::MatrixXd& m) {
        Eigen::MatrixXd s = (m.rowwise() - mu).array().rowwise() / sd.array();
        return s;
    };
    const Eigen::MatrixXd xs = standardize(x), xhs = standardize(xh);

    const Eigen::Index n = xs.rows(), d = xs.cols(), k = static_cast<Eigen::Index>(num_classes);
    Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(n, k);
    for (Eigen::Index i = 0; i < n; ++i) onehot(i, y[i]) = 1.0;
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(d, k);
    Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(k);

    auto softmax = [](Eigen::MatrixXd z) {
        for (Eigen::Index i = 0; i < z.rows(); ++i) {
            z.row(i).array() -= z.row(i).maxCoeff();
            z.row(i) = z.row(i).array().exp();
            z.row(i) /= z.row(i).sum();
        }
        return z;
    };

    for (std::size_t step = 0; step < pc.steps; ++step) {
        Eigen::MatrixXd logits = xs * w;
        logits.rowwise() += b;
        const Eigen::MatrixXd err = (softmax(std::move(logits)) - onehot) / double(n);
        w -= pc.learning_rate * (xs.transpose() * err);
        b -= pc.learning_rate * err.colwise().sum();
    }

    Eigen::MatrixXd logits = xhs * w;
    logits.rowwise() += b;
    ProbeResult r;
    r.layer = layer;
    std::vector<std::size_t> hit(num_classes, 0), seen(num_classes, 0);
    std::size_t correct = 0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        Eigen::Index arg;
        logits.row(i).maxCoeff(&arg);
        const std::size_t truth = yh[i];
        if (truth >= num_classes) throw ContractError("probe: held-out label out of range");
        ++seen[truth];
        if (static_cast<std::size_t>(arg) == truth) {
            ++correct;
            ++hit[truth];
        }
    }
    r.accuracy = double(correct) / double(yh.size());
    for (std::size_t c = 0; c < num_classes; ++c) {
        r.per_class_accuracy.push_back(seen[c] ? double(hit[c]) / double(seen[c]) : std::numeric_limits<double>::quiet_NaN());
    }
    return r;
}

/// Pairs every feature sequence with its labels by utterance id.
inline std::vector<LabelSequence> align_labels(const std::vector<FeatureSequence>& seqs,
                                               const std::vector<LabelSequence>& labels) {
    std::map<std::string, const LabelSequence*> by_id;
    for (const auto& l : labels) by_id[l.utterance_id] = &l;
    std::vector<LabelSequence> out;
    for (const auto& s : seqs) {
        auto it = by_id.find(s.utterance_id);
        if (it == by_id.end()) throw ContractError("missing labels for utterance " + s.utterance_id);
        if (it->second->labels.size() != s.num_frames()) {
            throw ContractError("label count for utterance " + s.utterance_id + " differs from its frame count");
        }
        out.push_back(*it->second);
    }
    return out;
}

/// Utterance-disjoint split: the first `train_fraction` of utterances train the probe.
inline std::size_t probe_split_point(std::size_t num_utts, double train_fraction) {
    if (num_utts < 2) throw ContractError("probe: need at least two utterances to split");
    auto cut = static_cast<std::size_t>(std::floor(train_fraction * double(num_utts)));
    return std::clamp<std::size_t>(cut, 1, num_utts - 1);
}

/// One probe per SLI depth M, embeddings from the first M blocks. Sorted by M.
template <typename T>
std::vector<ProbeResult> sli_sweep(const ParameterStore<T>& store, const std::vector<FeatureSequence>& seqs,
                                   const std::vector<LabelSequence>& labels, std::vector<std::size_t> layers,
                                   std::size_t num_classes, double train_fraction = 0.8, const ProbeConfig& pc = {}) {
    std::sort(layers.begin(), layers.end());
    layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
    for (auto m : layers) {
        if (m < 1 || m > store.config().max_layers) {
            throw ContractError("sli_sweep: layer " + std::to_string(m) + " outside [1, " +
                                std::to_string(store.config().max_layers) + "]");
        }
    }
    const auto aligned = align_labels(seqs, labels);
    const std::size_t cut = probe_split_point(seqs.size(), train_fraction);
    std::vector<ProbeResult> out;
    for (auto m : layers) {
        ProbeData<T> tr, ho;
        for (std::size_t u = 0; u < seqs.size(); ++u) {
            auto emb = sli_forward(seqs[u].frames.template cast<T>(), store, m).embeddings;
            auto& dst = u < cut ? tr : ho;
            dst.frames.push_back(std::move(emb));
            dst.labels.push_back(aligned[u].labels);
        }
        out.push_back(linear_probe(tr, ho, num_classes, pc, m));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Report files

namespace report {

inline std::ofstream open(const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.precision(17);
    return out;
}

inline void write_transitions(const ConsistencyReport& rep, const std::string& csv_path, const std::string& jsonl_path) {
    auto csv = open(csv_path);
    csv << "layer_from,layer_to,l2_mean,cos_mean\n";
    for (const auto& t : rep.transitions) csv << t.layer_from << ',' << t.layer_to << ',' << t.l2_mean << ',' << t.cos_mean << '\n';
    auto js = open(jsonl_path);
    for (const auto& t : rep.transitions) {
        nlohmann::ordered_json j{{"schema_version", kReportSchemaVersion}, {"model", rep.model_tag},
                                 {"layer_from", t.layer_from},          {"layer_to", t.layer_to},
                                 {"l2_mean", t.l2_mean},                {"cos_mean", t.cos_mean},
                                 {"frames", rep.frames}};
        js << j.dump() << '\n';
    }
}

inline void write_sweep(const std::vector<ProbeResult>& rows, const std::string& csv_path, const std::string& jsonl_path) {
    auto csv = open(csv_path);
    csv << "layer,accuracy\n";
    for (const auto& r : rows) csv << r.layer << ',' << r.accuracy << '\n';
    auto js = open(jsonl_path);
    for (const auto& r : rows) {
        nlohmann::ordered_json per_class = nlohmann::ordered_json::array();
        for (double a : r.per_class_accuracy) per_class.push_back(std::isnan(a) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(a));
        nlohmann::ordered_json j{{"schema_version", kReportSchemaVersion}, {"layer", r.layer}, {"accuracy", r.accuracy},
                                 {"per_class_accuracy", per_class}};
        js << j.dump() << '\n';
    }
}

inline void write_projection(const Projection& p, std::size_t frame_start, const std::string& csv_path,
                             const std::string& jsonl_path) {
    auto csv = open(csv_path);
    csv << "layer,frame,pc1,pc2\n";
    auto js = open(jsonl_path);
    for (std::size_t l = 0; l < p.coords.size(); ++l) {
        for (std::size_t f = 0; f < p.coords[l].size(); ++f) {
            csv << l << ',' << frame_start + f << ',' << p.coords[l][f][0] << ',' << p.coords[l][f][1] << '\n';
            nlohmann::ordered_json j{{"schema_version", kReportSchemaVersion}, {"layer", l}, {"frame", frame_start + f},
                                     {"pc1", p.coords[l][f][0]}, {"pc2", p.coords[l][f][1]}};
            js << j.dump() << '\n';
        }
    }
}

inline void write_grads(const GradDecomposition& gd, const std::string& csv_path, const std::string& jsonl_path) {
    auto csv = open(csv_path);
    csv << "layer,contribution_norm,cos_with_total\n";
    for (std::size_t i = 0; i < gd.norms.size(); ++i) {
        csv << i + 1 << ',' << gd.norms[i] << ',' << detail::vec_cosine(gd.contributions[i], gd.total) << '\n';
    }
    auto js = open(jsonl_path);
    nlohmann::ordered_json j{{"schema_version", kReportSchemaVersion},
                             {"depth", gd.norms.size()},
                             {"total_norm", gd.total_norm},
                             {"contribution_norms", gd.norms},
                             {"pairwise_cosine", gd.cosine},
                             {"mean_pairwise_cosine", gd.mean_pairwise_cosine()},
                             {"scaling_ratio", gd.scaling_ratio},
                             {"sum_relative_error", gd.sum_relative_error}};
    js << j.dump() << '\n';
}

inline void write_flops(const FlopReport& r, const std::string& csv_path, const std::string& jsonl_path) {
    auto csv = open(csv_path);
    csv << "depth,encoder_macs\n";
    for (std::size_t n = 0; n < r.per_depth.size(); ++n) csv << n << ',' << r.per_depth[n] << '\n';
    auto js = open(jsonl_path);
    nlohmann::ordered_json j{{"schema_version", kReportSchemaVersion},
                             {"frames", r.frames},
                             {"max_layers", r.max_layers},
                             {"block_macs", r.block},
                             {"frontend_macs", r.frontend},
                             {"predictor_macs", r.predictor},
                             {"expected_depth", r.expected_depth},
                             {"training_block_ratio", r.training_block_ratio},
                             {"training_total_ratio", r.training_total_ratio},
                             {"sli_layers", r.sli_layers},
                             {"sli_block_ratio", r.sli_block_ratio},
                             {"sli_total_ratio", r.sli_total_ratio}};
    js << j.dump() << '\n';
}

}  // namespace report

}  // namespace lcf

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "lcf/autograd.hpp"
#include "lcf/errors.hpp"
#include "lcf/rng.hpp"
#include "lcf/tensor.hpp"

namespace lcf {

enum class PositionalMode { none, relative_bias };

inline std::string to_string(PositionalMode m) { return m == PositionalMode::none ? "none" : "relative-bias"; }

inline PositionalMode parse_positional(std::string_view s) {
    if (s == "none") return PositionalMode::none;
    if (s == "relative-bias") return PositionalMode::relative_bias;
    throw ConfigError("unknown positional mode '" + std::string(s) + "'");
}

struct ConformerConfig {
    std::size_t input_dim = 16;
    std::size_t model_dim = 16;
    std::size_t num_heads = 2;
    std::size_t ff_dim = 32;
    std::size_t conv_kernel = 7;
    std::size_t max_layers = 8;  // H
    std::size_t min_layers = 2;  // L
    bool share_params = true;
    double dropout = 0.1;  // attention dropout, train mode only
    PositionalMode positional = PositionalMode::relative_bias;
    double norm_eps = 1e-5;

    std::size_t head_dim() const { return model_dim / num_heads; }
    std::size_t layer_groups() const { return share_params ? 1 : max_layers; }

    void validate() const {
        if (input_dim < 1 || model_dim < 2 || ff_dim < 1) throw ConfigError("model dims must be positive (model_dim >= 2)");
        if (num_heads < 1 || model_dim % num_heads != 0) {
            throw ConfigError("model_dim " + std::to_string(model_dim) + " not divisible by num_heads " +
                              std::to_string(num_heads));
        }
        if (conv_kernel % 2 == 0) throw ConfigError("conv kernel must be odd, got " + std::to_string(conv_kernel));
        if (min_layers < 1 || min_layers > max_layers) {
            throw ConfigError("need 1 <= min_layers <= max_layers, got L=" + std::to_string(min_layers) +
                              " H=" + std::to_string(max_layers));
        }
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
        if (!(norm_eps > 0.0)) throw ConfigError("norm eps must be positive");
    }

    bool operator==(const ConformerConfig&) const = default;
};

/// Tensors of one Conformer layer group, in storage order.
enum LayerParam : std::size_t {
    kFf1NormGamma, kFf1NormBeta, kFf1W1, kFf1B1, kFf1W2, kFf1B2,
    kAttnNormGamma, kAttnNormBeta, kAttnWq, kAttnBq, kAttnWk, kAttnBk, kAttnWv, kAttnBv, kAttnWo, kAttnBo,
    kConvNormGamma, kConvNormBeta, kConvPw1W, kConvPw1B, kConvDwW, kConvDwB, kConvMidNormGamma,
    kConvMidNormBeta, kConvPw2W, kConvPw2B,
    kFf2NormGamma, kFf2NormBeta, kFf2W1, kFf2B1, kFf2W2, kFf2B2,
    kFinalNormGamma, kFinalNormBeta,
    kNumLayerParams
};

enum class ParamInit { uniform, ones, zeros };

struct ParamSpec {
    std::string name;
    Shape shape;
    ParamInit init = ParamInit::zeros;
    std::size_t fan_in = 1;
};

inline std::vector<ParamSpec> layer_param_specs(const ConformerConfig& c) {
    const std::size_t d = c.model_dim, f = c.ff_dim, k = c.conv_kernel;
    auto w = [](std::string n, std::size_t in, std::size_t out) {
        return ParamSpec{std::move(n), {in, out}, ParamInit::uniform, in};
    };
    auto b = [](std::string n, std::size_t out) { return ParamSpec{std::move(n), {1, out}, ParamInit::zeros, 1}; };
    auto g = [](std::string n, std::size_t out) { return ParamSpec{std::move(n), {1, out}, ParamInit::ones, 1}; };
    std::vector<ParamSpec> s = {
        g("ff1.norm.gamma", d), b("ff1.norm.beta", d), w("ff1.w1", d, f), b("ff1.b1", f), w("ff1.w2", f, d),
        b("ff1.b2", d),
        g("attn.norm.gamma", d), b("attn.norm.beta", d), w("attn.wq", d, d), b("attn.bq", d), w("attn.wk", d, d),
        b("attn.bk", d), w("attn.wv", d, d), b("attn.bv", d), w("attn.wo", d, d), b("attn.bo", d),
        g("conv.norm.gamma", d), b("conv.norm.beta", d), w("conv.pw1.w", d, 2 * d), b("conv.pw1.b", 2 * d),
        ParamSpec{"conv.dw.w", {k, d}, ParamInit::uniform, k}, b("conv.dw.b", d), g("conv.mid_norm.gamma", d),
        b("conv.mid_norm.beta", d), w("conv.pw2.w", d, d), b("conv.pw2.b", d),
        g("ff2.norm.gamma", d), b("ff2.norm.beta", d), w("ff2.w1", d, f), b("ff2.b1", f), w("ff2.w2", f, d),
        b("ff2.b2", d),
        g("final_norm.gamma", d), b("final_norm.beta", d),
    };
    return s;
}

/// Named parameters of frontend, layer groups and predictor. In shared mode
/// exactly one layer group exists and every block application aliases it.
template <typename T>
class ParameterStore {
   public:
    ParameterStore() = default;

    /// All tensors allocated; weights zero, norm gains one.
    explicit ParameterStore(const ConformerConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        const std::size_t D = cfg.input_dim, d = cfg.model_dim;
        add({"frontend.weight", {D, d}, ParamInit::uniform, D});
        add({"frontend.bias", {1, d}, ParamInit::zeros, 1});
        const auto layer = layer_param_specs(cfg);
        for (std::size_t gidx = 0; gidx < cfg.layer_groups(); ++gidx) {
            for (auto spec : layer) {
                spec.name = "layers." + std::to_string(gidx) + "." + spec.name;
                add(std::move(spec));
            }
        }
        add({"predictor.weight", {d, D}, ParamInit::uniform, d});
        add({"predictor.bias", {1, D}, ParamInit::zeros, 1});
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, unit norm gains.
    static ParameterStore initialized(const ConformerConfig& cfg, Rng& rng) {
        ParameterStore s(cfg);
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s.specs_[i].init != ParamInit::uniform) continue;
            const double bound = 1.0 / std::sqrt(double(s.specs_[i].fan_in));
            std::uniform_real_distribution<double> u(-bound, bound);
            for (auto& v : s.tensors_[i].data()) v = static_cast<T>(u(rng));
        }
        return s;
    }

    const ConformerConfig& config() const { return cfg_; }
    std::size_t size() const { return tensors_.size(); }
    const std::string& name(std::size_t i) const { return specs_.at(i).name; }
    const ParamSpec& spec(std::size_t i) const { return specs_.at(i); }
    Tensor<T>& tensor(std::size_t i) { return tensors_.at(i); }
    const Tensor<T>& tensor(std::size_t i) const { return tensors_.at(i); }

    std::size_t index(std::string_view name) const {
        auto it = by_name_.find(std::string(name));
        if (it == by_name_.end()) throw ContractError("unknown parameter '" + std::string(name) + "'");
        return it->second;
    }

    static constexpr std::size_t kFrontendWeight = 0;
    static constexpr std::size_t kFrontendBias = 1;
    std::size_t group_offset(std::size_t group) const { return 2 + group * kNumLayerParams; }
    std::size_t predictor_weight() const { return size() - 2; }
    std::size_t predictor_bias() const { return size() - 1; }
    std::size_t group_of_application(std::size_t layer) const { return cfg_.share_params ? 0 : layer; }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& t : tensors_) n += t.numel();
        return n;
    }

    template <typename U>
    ParameterStore<U> cast() const {
        ParameterStore<U> out(cfg_);
        for (std::size_t i = 0; i < size(); ++i) out.tensor(i) = tensors_[i].template cast<U>();
        return out;
    }

    bool operator==(const ParameterStore& o) const { return cfg_ == o.cfg_ && tensors_ == o.tensors_; }

   private:
    void add(ParamSpec spec) {
        Tensor<T> t(spec.shape, spec.init == ParamInit::ones ? T(1) : T(0));
        by_name_.emplace(spec.name, specs_.size());
        specs_.push_back(std::move(spec));
        tensors_.push_back(std::move(t));
    }

    ConformerConfig cfg_;
    std::vector<ParamSpec> specs_;
    std::vector<Tensor<T>> tensors_;
    std::map<std::string, std::size_t> by_name_;
};

/// Lazily turns store tensors into graph leaves. `get` returns one leaf per
/// tensor (slot = store index) no matter how often it is used; `alias` makes a
/// fresh leaf per block application so per-layer contributions can be isolated.
template <typename T>
class StoreBinding {
   public:
    StoreBinding(Graph<T>& g, const ParameterStore<T>& store) : g_(&g), store_(&store), leaves_(store.size()) {}

    Var<T> get(std::size_t index) {
        auto& leaf = leaves_.at(index);
        if (!leaf) leaf = g_->parameter(store_->tensor(index), index);
        return *leaf;
    }

    std::size_t alias_slot(std::size_t index, std::size_t application) const {
        return store_->size() * (application + 1) + index;
    }

    Var<T> alias(std::size_t index, std::size_t application) {
        return g_->parameter(store_->tensor(index), alias_slot(index, application));
    }

    std::vector<Var<T>> layer(std::size_t application, bool per_application_alias) {
        const std::size_t base = store_->group_offset(store_->group_of_application(application));
        std::vector<Var<T>> vars;
        vars.reserve(kNumLayerParams);
        for (std::size_t p = 0; p < kNumLayerParams; ++p) {
            vars.push_back(per_application_alias ? alias(base + p, application) : get(base + p));
        }
        return vars;
    }

    Graph<T>& graph() { return *g_; }
    const ParameterStore<T>& store() const { return *store_; }

   private:
    Graph<T>* g_;
    const ParameterStore<T>* store_;
    std::vector<std::optional<Var<T>>> leaves_;
};

/// Fixed sinusoidal bias over relative offsets, one frequency per head.
template <typename T>
Tensor<T> relative_position_bias(std::size_t len, std::size_t head, std::size_t num_heads) {
    const double freq = std::pow(10000.0, -double(head) / double(num_heads));
    Tensor<T> b = Tensor<T>::matrix(len, len);
    for (std::size_t i = 0; i < len; ++i)
        for (std::size_t j = 0; j < len; ++j) b(i, j) = static_cast<T>(std::cos(freq * (double(i) - double(j))));
    return b;
}

template <typename T>
struct BlockOptions {
    bool train_mode = false;
    Rng* dropout_rng = nullptr;
    std::vector<Tensor<T>>* attention_maps = nullptr;  // appended per head when set
};

namespace detail {

template <typename T>
Var<T> feed_forward(Var<T> x, const std::vector<Var<T>>& p, std::size_t first, T eps) {
    Var<T> h = layer_norm(x, p[first], p[first + 1], eps);
    h = swish(affine(h, p[first + 2], p[first + 3]));
    return affine(h, p[first + 4], p[first + 5]);
}

}  // namespace detail

/// Macaron Conformer block:
///   x + FF/2 -> + MHSA -> + conv module -> + FF/2 -> layer norm.
template <typename T>
Var<T> conformer_block(Var<T> x, const std::vector<Var<T>>& p, const ConformerConfig& cfg,
                       const BlockOptions<T>& opt = {}) {
    if (p.size() != kNumLayerParams) throw ContractError("conformer_block: wrong parameter count");
    if (x.cols() != cfg.model_dim) {
        throw ContractError("conformer_block: input width " + std::to_string(x.cols()) + " != model_dim " +
                            std::to_string(cfg.model_dim));
    }
    auto& g = *x.graph;
    const T eps = static_cast<T>(cfg.norm_eps);
    const std::size_t len = x.rows(), dh = cfg.head_dim();

    x = add(x, scale(detail::feed_forward(x, p, kFf1NormGamma, eps), T(0.5)));

    {
        Var<T> h = layer_norm(x, p[kAttnNormGamma], p[kAttnNormBeta], eps);
        Var<T> q = affine(h, p[kAttnWq], p[kAttnBq]);
        Var<T> k = affine(h, p[kAttnWk], p[kAttnBk]);
        Var<T> v = affine(h, p[kAttnWv], p[kAttnBv]);
        const T inv_sqrt = T(1) / std::sqrt(T(dh));
        std::vector<Var<T>> heads;
        for (std::size_t hd = 0; hd < cfg.num_heads; ++hd) {
            Var<T> qh = slice_cols(q, hd * dh, dh);
            Var<T> kh = slice_cols(k, hd * dh, dh);
            Var<T> vh = slice_cols(v, hd * dh, dh);
            Var<T> scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
            if (cfg.positional == PositionalMode::relative_bias) {
                scores = add(scores, g.constant(relative_position_bias<T>(len, hd, cfg.num_heads)));
            }
            Var<T> attn = softmax_rows(scores);
            if (opt.attention_maps) opt.attention_maps->push_back(attn.value());
            if (opt.train_mode && cfg.dropout > 0.0) {
                if (!opt.dropout_rng) throw ContractError("conformer_block: train mode dropout needs a generator");
                attn = dropout(attn, static_cast<T>(cfg.dropout), *opt.dropout_rng);
            }
            heads.push_back(matmul(attn, vh));
        }
        x = add(x, affine(concat_cols(heads), p[kAttnWo], p[kAttnBo]));
    }

    {
        Var<T> h = layer_norm(x, p[kConvNormGamma], p[kConvNormBeta], eps);
        h = glu(affine(h, p[kConvPw1W], p[kConvPw1B]));
        h = add_row(depthwise_conv1d(h, p[kConvDwW]), p[kConvDwB]);
        h = swish(layer_norm(h, p[kConvMidNormGamma], p[kConvMidNormBeta], eps));
        x = add(x, affine(h, p[kConvPw2W], p[kConvPw2B]));
    }

    x = add(x, scale(detail::feed_forward(x, p, kFf2NormGamma, eps), T(0.5)));
    x = layer_norm(x, p[kFinalNormGamma], p[kFinalNormBeta], eps);
    g.stats().block_applications += 1;
    return x;
}

/// Per-layer embeddings of one forward pass: entry 0 is the frontend output,
/// entry i the output of the i-th block.
template <typename T>
struct LayerTrace {
    std::vector<Tensor<T>> embeddings;

    std::size_t num_layers() const { return embeddings.empty() ? 0 : embeddings.size() - 1; }
};

template <typename T>
struct EncodeOptions {
    bool collect_trace = false;
    bool train_mode = false;
    Rng* dropout_rng = nullptr;
    bool alias_per_application = false;
    std::vector<Tensor<T>>* attention_maps = nullptr;
};

template <typename T>
struct Encoded {
    Var<T> embeddings;
    LayerTrace<T> trace;
};

inline void check_depth(const ConformerConfig& cfg, std::size_t n_layers) {
    if (!cfg.share_params && n_layers > cfg.max_layers) {
        throw ContractError("requested " + std::to_string(n_layers) + " layers but the unshared model only has " +
                            std::to_string(cfg.max_layers));
    }
}

/// Frontend projection followed by `n_layers` block applications, recorded on
/// the binding's graph.
template <typename T>
Encoded<T> encode(StoreBinding<T>& bind, Var<T> x, std::size_t n_layers, const EncodeOptions<T>& opt = {}) {
    const auto& store = bind.store();
    const auto& cfg = store.config();
    check_depth(cfg, n_layers);
    if (x.cols() != cfg.input_dim) {
        throw ContractError("encoder input width " + std::to_string(x.cols()) + " != input_dim " +
                            std::to_string(cfg.input_dim));
    }
    Encoded<T> out;
    Var<T> h = affine(x, bind.get(ParameterStore<T>::kFrontendWeight), bind.get(ParameterStore<T>::kFrontendBias));
    if (opt.collect_trace) out.trace.embeddings.push_back(h.value());
    BlockOptions<T> bopt{opt.train_mode, opt.dropout_rng, opt.attention_maps};
    for (std::size_t i = 0; i < n_layers; ++i) {
        h = conformer_block(h, bind.layer(i, opt.alias_per_application), cfg, bopt);
        if (opt.collect_trace) out.trace.embeddings.push_back(h.value());
    }
    out.embeddings = h;
    return out;
}

template <typename T>
struct ForwardResult {
    Tensor<T> embeddings;
    LayerTrace<T> trace;
    OpStats stats;
};

/// Gradient-free forward pass over a feature matrix.
template <typename T>
ForwardResult<T> forward(const Tensor<T>& x, const ParameterStore<T>& store, std::size_t n_layers,
                         bool collect_trace = false, bool train_mode = false, Rng* dropout_rng = nullptr) {
    Graph<T> g(false);
    StoreBinding<T> bind(g, store);
    EncodeOptions<T> opt;
    opt.collect_trace = collect_trace;
    opt.train_mode = train_mode;
    opt.dropout_rng = dropout_rng;
    auto enc = encode(bind, g.constant(x), n_layers, opt);
    return {enc.embeddings.value(), std::move(enc.trace), g.stats()};
}

/// Shallow-layer inference: the first M blocks only, no dropout.
template <typename T>
ForwardResult<T> sli_forward(const Tensor<T>& x, const ParameterStore<T>& store, std::size_t m) {
    const auto& cfg = store.config();
    if (m < 1 || m > cfg.max_layers) {
        throw ContractError("SLI depth " + std::to_string(m) + " outside [1, " + std::to_string(cfg.max_layers) + "]");
    }
    return forward(x, store, m, false, false);
}

/// N ~ U{L, ..., H}.
inline std::size_t sample_depth(std::size_t min_layers, std::size_t max_layers, Rng& rng) {
    if (min_layers < 1 || min_layers > max_layers) {
        throw ConfigError("depth range requires 1 <= L <= H, got L=" + std::to_string(min_layers) +
                          " H=" + std::to_string(max_layers));
    }
    return std::uniform_int_distribution<std::size_t>(min_layers, max_layers)(rng);
}

struct ParamCount {
    std::size_t frontend = 0;
    std::size_t per_layer = 0;
    std::size_t total_encoder = 0;
    std::size_t predictor = 0;
};

inline ParamCount param_count(const ConformerConfig& cfg) {
    cfg.validate();
    ParamCount c;
    for (const auto& s : layer_param_specs(cfg)) c.per_layer += shape_numel(s.shape);
    c.frontend = cfg.input_dim * cfg.model_dim + cfg.model_dim;
    c.predictor = cfg.model_dim * cfg.input_dim + cfg.input_dim;
    c.total_encoder = c.per_layer * cfg.layer_groups() + c.frontend;
    return c;
}

}  // namespace lcf

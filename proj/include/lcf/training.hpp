#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "lcf/autograd.hpp"
#include "lcf/checkpoint.hpp"
#include "lcf/encoder.hpp"
#include "lcf/features.hpp"
#include "lcf/masking.hpp"
#include "lcf/rng.hpp"

namespace lcf {

enum class DepthMode { fixed, uniform };
enum class LossMode { all_frames, masked_only };

inline std::string to_string(LossMode m) { return m == LossMode::all_frames ? "all-frames" : "masked-only"; }

inline LossMode parse_loss_mode(std::string_view s) {
    if (s == "all-frames") return LossMode::all_frames;
    if (s == "masked-only") return LossMode::masked_only;
    throw ConfigError("unknown loss mode '" + std::string(s) + "'");
}

/// How many blocks each training iteration runs.
struct DepthPolicy {
    DepthMode mode = DepthMode::uniform;
    std::size_t fixed_depth = 8;
    std::size_t min_layers = 2;
    std::size_t max_layers = 8;

    static DepthPolicy fixed(std::size_t n) { return {DepthMode::fixed, n, n, n}; }
    static DepthPolicy uniform(std::size_t lo, std::size_t hi) { return {DepthMode::uniform, hi, lo, hi}; }

    std::size_t draw(Rng& rng) const {
        return mode == DepthMode::fixed ? fixed_depth : sample_depth(min_layers, max_layers, rng);
    }

    double expected() const {
        return mode == DepthMode::fixed ? double(fixed_depth) : 0.5 * double(min_layers + max_layers);
    }
};

struct AdamParams {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;
};

struct TrainConfig {
    std::size_t batch_size = 8;
    std::size_t max_steps = 2000;
    std::size_t warmup_steps = 200;
    double peak_scale = 1.0;
    AdamParams adam;
    std::size_t validation_every = 100;
    std::uint64_t seed = 1;
    DepthPolicy depth;
    LossMode loss_mode = LossMode::all_frames;
    double clip_norm = 0.0;  // 0 disables max-norm clipping
    MaskParams mask;
    MaskPolicy mask_policy;
    std::size_t threads = 1;
    bool log_wall_time = true;

    void validate() const {
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (warmup_steps < 1) throw ConfigError("warmup_steps must be >= 1");
        if (validation_every < 1) throw ConfigError("validation_every must be >= 1");
        if (threads < 1) throw ConfigError("threads must be >= 1");
        if (!(peak_scale > 0)) throw ConfigError("peak_scale must be positive");
        if (clip_norm < 0) throw ConfigError("clip_norm must be non-negative");
        if (depth.mode == DepthMode::uniform && (depth.min_layers < 1 || depth.min_layers > depth.max_layers)) {
            throw ConfigError("uniform depth needs 1 <= L <= H");
        }
    }
};

// ---------------------------------------------------------------------------
// Objective

/// Linear predictor mapping embeddings (T x d) back to feature space (T x D).
template <typename T>
Var<T> predictor_apply(Var<T> embeddings, Var<T> weight, Var<T> bias) {
    if (embeddings.cols() != weight.rows()) {
        throw ContractError("predictor: embedding width " + std::to_string(embeddings.cols()) +
                            " != weight rows " + std::to_string(weight.rows()));
    }
    return affine(embeddings, weight, bias);
}

/// Mean absolute reconstruction error over all entries, or over the masked frames only.
template <typename T>
Var<T> mpc_loss(Var<T> pred, const Tensor<T>& target, const MaskPlan& plan, LossMode mode) {
    pred.value().require_same_shape(target, "mpc_loss");
    if (mode == LossMode::all_frames) return l1_mean(pred, target);
    if (plan.blocks.empty()) throw ContractError("mpc_loss: masked-only loss with an empty mask plan");
    if (plan.num_frames != target.rows()) throw ContractError("mpc_loss: plan length differs from target");
    return l1_mean(pred, target, plan.frame_mask());
}

/// scale * d^-0.5 * min(s^-0.5, s * w^-1.5)
inline double noam_lr(std::size_t step, std::size_t warmup, std::size_t model_dim, double scale) {
    if (step < 1) throw ContractError("noam_lr: step must be >= 1");
    if (warmup < 1) throw ContractError("noam_lr: warmup must be >= 1");
    const double s = double(step), w = double(warmup);
    return scale / std::sqrt(double(model_dim)) * std::min(1.0 / std::sqrt(s), s / (w * std::sqrt(w)));
}

/// One masked utterance ready for the encoder.
template <typename T>
struct MpcExample {
    std::string utterance_id;
    Tensor<T> input;   // masked
    Tensor<T> target;  // original
    MaskPlan plan;
};

template <typename T>
MpcExample<T> make_example(const FeatureSequence& seq, const MaskParams& mp, const MaskPolicy& policy, Rng& rng) {
    MaskPlan plan = plan_masks(seq.num_frames(), mp, rng);
    FeatureSequence masked = apply_masks(seq, plan, policy, &rng);
    return {seq.utterance_id, masked.frames.template cast<T>(), seq.frames.template cast<T>(), std::move(plan)};
}

/// Builds encoder + predictor + loss for one example on the binding's graph.
template <typename T>
Var<T> example_loss(StoreBinding<T>& bind, const MpcExample<T>& ex, std::size_t n_layers, LossMode mode,
                    const EncodeOptions<T>& opt = {}) {
    auto& g = bind.graph();
    auto enc = encode(bind, g.constant(ex.input), n_layers, opt);
    const auto& store = bind.store();
    Var<T> pred = predictor_apply(enc.embeddings, bind.get(store.predictor_weight()), bind.get(store.predictor_bias()));
    return mpc_loss(pred, ex.target, ex.plan, mode);
}

// ---------------------------------------------------------------------------
// Optimizer

template <typename T>
struct AdamState {
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;
    std::vector<std::uint64_t> steps;  // per parameter; parameters without a gradient are not stepped

    explicit AdamState(const ParameterStore<T>& store = {}) {
        for (std::size_t i = 0; i < store.size(); ++i) {
            m.emplace_back(store.tensor(i).shape(), T(0));
            v.emplace_back(store.tensor(i).shape(), T(0));
        }
        steps.assign(store.size(), 0);
    }
};

/// Bias-corrected Adam on every parameter present in `grads` (keyed by store index).
template <typename T>
void adam_step(ParameterStore<T>& store, AdamState<T>& st, const Gradients<T>& grads, double lr, const AdamParams& ap) {
    for (const auto& [idx, g] : grads) {
        if (idx >= store.size()) throw ContractError("adam_step: gradient for unknown parameter slot");
        if (!g.all_finite()) throw NumericError("adam_step: non-finite gradient for parameter " + store.name(idx));
        store.tensor(idx).require_same_shape(g, "adam_step");
    }
    for (const auto& [idx, g] : grads) {
        auto& p = store.tensor(idx);
        auto& m = st.m[idx];
        auto& v = st.v[idx];
        const std::uint64_t t = ++st.steps[idx];
        const T b1 = T(ap.beta1), b2 = T(ap.beta2);
        const T c1 = T(1) - T(std::pow(ap.beta1, double(t)));
        const T c2 = T(1) - T(std::pow(ap.beta2, double(t)));
        for (std::size_t i = 0; i < p.numel(); ++i) {
            m[i] = b1 * m[i] + (T(1) - b1) * g[i];
            v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
            const T mhat = m[i] / c1;
            const T vhat = v[i] / c2;
            p[i] -= T(lr) * mhat / (std::sqrt(vhat) + T(ap.eps));
        }
    }
}

template <typename T>
double grad_norm(const Gradients<T>& grads) {
    long double s = 0;
    for (const auto& [idx, g] : grads)
        for (T v : g.data()) s += static_cast<long double>(v) * v;
    return static_cast<double>(std::sqrt(s));
}

// ---------------------------------------------------------------------------
// Training loop

struct MetricsRow {
    std::size_t step = 0;
    std::size_t sampled_depth = 0;
    double lr = 0;
    double train_loss = 0;
    std::optional<double> val_loss;
    std::uint64_t cum_layer_apps = 0;
    std::int64_t wall_ms = 0;

    std::string to_json() const {
        nlohmann::ordered_json j;
        j["step"] = step;
        j["sampled_depth"] = sampled_depth;
        j["lr"] = lr;
        j["train_loss"] = train_loss;
        j["val_loss"] = val_loss ? nlohmann::ordered_json(*val_loss) : nlohmann::ordered_json(nullptr);
        j["cum_layer_apps"] = cum_layer_apps;
        j["wall_ms"] = wall_ms;
        return j.dump();
    }

    static MetricsRow from_json(const std::string& line) {
        const auto j = nlohmann::json::parse(line);
        MetricsRow r;
        r.step = j.at("step").get<std::size_t>();
        r.sampled_depth = j.at("sampled_depth").get<std::size_t>();
        r.lr = j.at("lr").get<double>();
        r.train_loss = j.at("train_loss").get<double>();
        if (!j.at("val_loss").is_null()) r.val_loss = j.at("val_loss").get<double>();
        r.cum_layer_apps = j.at("cum_layer_apps").get<std::uint64_t>();
        r.wall_ms = j.at("wall_ms").get<std::int64_t>();
        return r;
    }
};

template <typename T>
struct TrainState {
    ParameterStore<T> store;
    AdamState<T> adam;
    std::size_t step = 0;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t best_step = 0;
    std::optional<ParameterStore<T>> best_store;
    std::uint64_t cum_layer_apps = 0;
    RngStreams rng;
};

template <typename T>
TrainState<T> initial_state(const ConformerConfig& model, const TrainConfig& tc) {
    RngStreams streams(tc.seed);
    auto store = ParameterStore<T>::initialized(model, streams.init);
    AdamState<T> adam(store);
    return TrainState<T>{std::move(store), std::move(adam), 0, std::numeric_limits<double>::infinity(), 0,
                         std::nullopt, 0, std::move(streams)};
}

/// Validation mask for an utterance depends only on (seed, utterance id).
inline Rng validation_mask_rng(std::uint64_t seed, const std::string& utterance_id) {
    return derive_rng(seed, "validation-mask:" + utterance_id);
}

/// Mean MPC loss at full depth, inference mode, fixed per-utterance masks.
template <typename T>
double validation_loss(const ParameterStore<T>& store, const std::vector<FeatureSequence>& val, const TrainConfig& tc) {
    if (val.empty()) throw ContractError("validation_loss: empty validation split");
    double total = 0;
    for (const auto& seq : val) {
        Rng rng = validation_mask_rng(tc.seed, seq.utterance_id);
        const auto ex = make_example<T>(seq, tc.mask, tc.mask_policy, rng);
        Graph<T> g(false);
        StoreBinding<T> bind(g, store);
        total += static_cast<double>(example_loss(bind, ex, store.config().max_layers, tc.loss_mode).value().item());
    }
    return total / double(val.size());
}

template <typename T>
struct BatchResult {
    double loss = 0;
    Gradients<T> grads;  // mean over the batch, keyed by store index
};

/// Loss and mean gradient over a batch. Work may be spread over threads; the
/// reduction always runs in example order.
template <typename T>
BatchResult<T> batch_gradients(const ParameterStore<T>& store, const std::vector<MpcExample<T>>& batch,
                               std::size_t n_layers, LossMode mode, bool train_mode,
                               const std::vector<std::uint64_t>& dropout_seeds, std::size_t threads) {
    const std::size_t n = batch.size();
    std::vector<double> losses(n);
    std::vector<Gradients<T>> grads(n);
    std::vector<std::exception_ptr> errors(n);

    auto work = [&](std::size_t i) {
        try {
            Rng drop(dropout_seeds.empty() ? 0 : dropout_seeds[i]);
            Graph<T> g;
            StoreBinding<T> bind(g, store);
            EncodeOptions<T> opt;
            opt.train_mode = train_mode;
            opt.dropout_rng = &drop;
            Var<T> loss = example_loss(bind, batch[i], n_layers, mode, opt);
            losses[i] = static_cast<double>(loss.value().item());
            grads[i] = g.backward(loss);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };

    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) work(i);
    } else {
        std::vector<std::thread> pool;
        const std::size_t workers = std::min(threads, n);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t i = w; i < n; i += workers) work(i);
            });
        }
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    BatchResult<T> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.loss += losses[i];
        for (auto& [slot, g] : grads[i]) {
            auto it = out.grads.find(slot);
            if (it == out.grads.end()) {
                out.grads.emplace(slot, std::move(g));
            } else {
                it->second += g;
            }
        }
    }
    out.loss /= double(n);
    for (auto& [slot, g] : out.grads) g *= T(1) / T(n);
    return out;
}

template <typename T>
struct TrainHooks {
    std::function<void(const MetricsRow&)> on_metrics;
    std::function<void(const TrainState<T>&)> on_validation;  // after each validation (state includes best)
};

template <typename T>
struct TrainResult {
    TrainState<T> state;  // last good state
    std::vector<MetricsRow> metrics;
    bool diverged = false;
    std::string message;
};

/// MPC pretraining. Each iteration draws a depth, masks a batch, runs the
/// encoder and predictor, backpropagates and takes a Noam-scheduled Adam step.
/// Validation runs every `validation_every` steps (and at the last step) at
/// full depth; the parameters with the lowest validation loss are retained.
template <typename T>
TrainResult<T> train(const std::vector<FeatureSequence>& train_set, const std::vector<FeatureSequence>& val_set,
                     const ConformerConfig& model, const TrainConfig& tc, std::optional<TrainState<T>> resume = {},
                     const TrainHooks<T>& hooks = {}) {
    model.validate();
    tc.validate();
    if (train_set.empty() || val_set.empty()) throw ContractError("train: train and validation splits must be non-empty");
    for (const auto* set : {&train_set, &val_set}) {
        for (const auto& s : *set) {
            if (s.dim() != model.input_dim) {
                throw ContractError("train: utterance " + s.utterance_id + " has dim " + std::to_string(s.dim()) +
                                    ", model expects " + std::to_string(model.input_dim));
            }
        }
    }
    if (!model.share_params && tc.depth.max_layers > model.max_layers) {
        throw ConfigError("depth policy exceeds the unshared model's layer count");
    }

    TrainResult<T> res{resume ? std::move(*resume) : initial_state<T>(model, tc), {}, false, {}};
    auto& st = res.state;
    if (!(st.store.config() == model)) throw ContractError("train: resumed state was trained with a different model config");

    std::uniform_int_distribution<std::size_t> pick(0, train_set.size() - 1);
    const auto t0 = std::chrono::steady_clock::now();

    while (st.step < tc.max_steps) {
        TrainState<T> next = st;
        const std::size_t step = next.step + 1;
        const std::size_t depth = tc.depth.draw(next.rng.depth);

        std::vector<MpcExample<T>> batch;
        std::vector<std::uint64_t> drop_seeds;
        for (std::size_t b = 0; b < tc.batch_size; ++b) {
            const auto& seq = train_set[pick(next.rng.data)];
            batch.push_back(make_example<T>(seq, tc.mask, tc.mask_policy, next.rng.mask));
            drop_seeds.push_back(next.rng.dropout());
        }

        BatchResult<T> br;
        try {
            br = batch_gradients(next.store, batch, depth, tc.loss_mode, true, drop_seeds, tc.threads);
        } catch (const NumericError& e) {
            res.diverged = true;
            res.message = std::string("step ") + std::to_string(step) + ": " + e.what();
            return res;
        }
        if (!std::isfinite(br.loss)) {
            res.diverged = true;
            res.message = "step " + std::to_string(step) + ": non-finite training loss";
            return res;
        }
        if (tc.clip_norm > 0) {
            const double norm = grad_norm(br.grads);
            if (norm > tc.clip_norm) {
                for (auto& [slot, g] : br.grads) g *= T(tc.clip_norm / norm);
            }
        }

        const double lr = noam_lr(step, tc.warmup_steps, model.model_dim, tc.peak_scale);
        try {
            adam_step(next.store, next.adam, br.grads, lr, tc.adam);
        } catch (const NumericError& e) {
            res.diverged = true;
            res.message = std::string("step ") + std::to_string(step) + ": " + e.what();
            return res;
        }
        for (std::size_t i = 0; i < next.store.size(); ++i) {
            if (!next.store.tensor(i).all_finite()) {
                res.diverged = true;
                res.message = "step " + std::to_string(step) + ": parameter " + next.store.name(i) + " became non-finite";
                return res;
            }
        }
        next.step = step;
        next.cum_layer_apps += depth;

        MetricsRow row;
        row.step = step;
        row.sampled_depth = depth;
        row.lr = lr;
        row.train_loss = br.loss;
        row.cum_layer_apps = next.cum_layer_apps;

        const bool validate_now = step % tc.validation_every == 0 || step == tc.max_steps;
        if (validate_now) {
            double vl;
            try {
                vl = validation_loss(next.store, val_set, tc);
            } catch (const NumericError& e) {
                res.diverged = true;
                res.message = std::string("step ") + std::to_string(step) + " validation: " + e.what();
                return res;
            }
            row.val_loss = vl;
            if (vl < next.best_val) {
                next.best_val = vl;
                next.best_step = step;
                next.best_store = next.store;
            }
        }
        if (tc.log_wall_time) {
            row.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0)
                              .count();
        }

        st = std::move(next);
        res.metrics.push_back(row);
        if (hooks.on_metrics) hooks.on_metrics(row);
        if (validate_now && hooks.on_validation) hooks.on_validation(st);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Train state <-> checkpoint

inline std::string exact_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

inline double parse_exact_double(const std::string& s) { return std::strtod(s.c_str(), nullptr); }

/// Model parameters plus the full optimizer/rng state needed to resume.
template <typename T>
Checkpoint state_checkpoint(const TrainState<T>& st) {
    Checkpoint ck;
    put_store(ck, st.store);
    ck.meta.emplace_back("state.step", std::to_string(st.step));
    ck.meta.emplace_back("state.best_val", exact_double(st.best_val));
    ck.meta.emplace_back("state.best_step", std::to_string(st.best_step));
    ck.meta.emplace_back("state.cum_layer_apps", std::to_string(st.cum_layer_apps));
    std::string steps;
    for (auto s : st.adam.steps) steps += (steps.empty() ? "" : " ") + std::to_string(s);
    ck.meta.emplace_back("state.adam_steps", steps);
    ck.meta.emplace_back("state.rng.data", rng_state(st.rng.data));
    ck.meta.emplace_back("state.rng.mask", rng_state(st.rng.mask));
    ck.meta.emplace_back("state.rng.init", rng_state(st.rng.init));
    ck.meta.emplace_back("state.rng.depth", rng_state(st.rng.depth));
    ck.meta.emplace_back("state.rng.dropout", rng_state(st.rng.dropout));
    for (std::size_t i = 0; i < st.store.size(); ++i) {
        ck.tensors.emplace_back("adam.m." + st.store.name(i), st.adam.m[i].template cast<float>());
        ck.tensors.emplace_back("adam.v." + st.store.name(i), st.adam.v[i].template cast<float>());
    }
    if (st.best_store) {
        for (std::size_t i = 0; i < st.best_store->size(); ++i) {
            ck.tensors.emplace_back("best." + st.best_store->name(i), st.best_store->tensor(i).template cast<float>());
        }
    }
    return ck;
}

template <typename T>
TrainState<T> state_from_checkpoint(const Checkpoint& ck) {
    TrainState<T> st;
    st.store = get_store<T>(ck);
    st.adam = AdamState<T>(st.store);
    try {
        st.step = std::stoull(ck.get("state.step"));
        st.best_val = parse_exact_double(ck.get("state.best_val"));
        st.best_step = std::stoull(ck.get("state.best_step"));
        st.cum_layer_apps = std::stoull(ck.get("state.cum_layer_apps"));
        std::istringstream steps(ck.get("state.adam_steps"));
        for (auto& s : st.adam.steps) {
            if (!(steps >> s)) throw FormatError("state.adam_steps has too few entries", 0);
        }
    } catch (const std::logic_error& e) {
        throw FormatError(std::string("bad train state in checkpoint: ") + e.what(), 0);
    }
    set_rng_state(st.rng.data, ck.get("state.rng.data"));
    set_rng_state(st.rng.mask, ck.get("state.rng.mask"));
    set_rng_state(st.rng.init, ck.get("state.rng.init"));
    set_rng_state(st.rng.depth, ck.get("state.rng.depth"));
    set_rng_state(st.rng.dropout, ck.get("state.rng.dropout"));
    for (std::size_t i = 0; i < st.store.size(); ++i) {
        st.adam.m[i] = ck.tensor("adam.m." + st.store.name(i)).template cast<T>();
        st.adam.v[i] = ck.tensor("adam.v." + st.store.name(i)).template cast<T>();
    }
    if (st.best_step > 0) {
        ParameterStore<T> best(st.store.config());
        for (std::size_t i = 0; i < best.size(); ++i) best.tensor(i) = ck.tensor("best." + best.name(i)).template cast<T>();
        st.best_store = std::move(best);
    }
    return st;
}

}  // namespace lcf

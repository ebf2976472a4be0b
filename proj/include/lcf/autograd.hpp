#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lcf/errors.hpp"
#include "lcf/tensor.hpp"

namespace lcf {

using NodeId = std::size_t;

template <typename T>
class Graph;

/// Handle to a node in a Graph. Cheap to copy; valid while the graph lives.
template <typename T>
struct Var {
    Graph<T>* graph = nullptr;
    NodeId id = 0;

    const Tensor<T>& value() const { return graph->value(id); }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
};

/// Work counters filled in while ops are recorded.
struct OpStats {
    std::uint64_t macs = 0;                // multiply-accumulates in matmul and depthwise conv
    std::uint64_t block_applications = 0;  // bumped by the encoder per Conformer block
};

/// Summed gradient per parameter slot.
template <typename T>
using Gradients = std::map<std::size_t, Tensor<T>>;

/// Append-only tape of op records. Nodes are stored in creation order, so
/// every node's inputs precede it and reverse iteration is a valid
/// topological order for backpropagation.
template <typename T>
class Graph {
   public:
    using BackwardFn = std::function<void(Graph&, NodeId)>;

    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        BackwardFn backward;
        bool requires_grad = false;
        std::optional<std::size_t> param_slot;
        const char* op = "leaf";
    };

    explicit Graph(bool track_grad = true) : track_grad_(track_grad) {}

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool tracking() const { return track_grad_; }

    Var<T> constant(Tensor<T> value) {
        check_finite(value, "constant");
        nodes_.push_back(Node{std::move(value), {}, {}, false, std::nullopt, "constant"});
        return {this, nodes_.size() - 1};
    }

    /// A trainable leaf. Several leaves may share a slot; their gradients are summed.
    Var<T> parameter(Tensor<T> value, std::size_t slot) {
        check_finite(value, "parameter");
        nodes_.push_back(Node{std::move(value), {}, {}, track_grad_, slot, "parameter"});
        return {this, nodes_.size() - 1};
    }

    Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, const char* op,
                  BackwardFn backward) {
        return record(std::move(value), std::vector<Var<T>>(inputs), op, std::move(backward));
    }

    Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, const char* op,
                  BackwardFn backward) {
        check_finite(value, op);
        bool needs = false;
        for (const auto& in : inputs) {
            if (in.graph != this) throw ContractError(std::string(op) + ": input from another graph");
            needs = needs || nodes_[in.id].requires_grad;
        }
        needs = needs && track_grad_;
        nodes_.push_back(
            Node{std::move(value), {}, needs ? std::move(backward) : BackwardFn{}, needs, std::nullopt, op});
        return {this, nodes_.size() - 1};
    }

    const Tensor<T>& value(NodeId id) const { return nodes_.at(id).value; }
    const Tensor<T>& grad(NodeId id) const { return nodes_.at(id).grad; }
    bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
    const Node& node(NodeId id) const { return nodes_.at(id); }
    std::size_t size() const { return nodes_.size(); }

    /// Gradient accumulator for an input; allocated as zeros on first use.
    Tensor<T>& grad_buffer(NodeId id) {
        auto& n = nodes_[id];
        if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape(), T(0));
        return n.grad;
    }

    OpStats& stats() { return stats_; }
    const OpStats& stats() const { return stats_; }

    /// Reverse sweep from a scalar loss. Returns the summed gradient for each
    /// parameter slot reachable from the loss; constants are skipped.
    Gradients<T> backward(Var<T> loss) {
        if (loss.graph != this) throw ContractError("backward: loss belongs to another graph");
        if (nodes_[loss.id].value.numel() != 1) {
            throw ContractError("backward: loss must be scalar, got shape " +
                                shape_str(nodes_[loss.id].value.shape()));
        }
        for (auto& n : nodes_) n.grad = Tensor<T>();
        grad_buffer(loss.id).fill(T(1));

        Gradients<T> out;
        for (NodeId id = loss.id + 1; id-- > 0;) {
            auto& n = nodes_[id];
            if (!n.requires_grad || n.grad.empty()) continue;
            if (n.backward) {
                n.backward(*this, id);
            } else if (n.param_slot) {
                auto it = out.find(*n.param_slot);
                if (it == out.end()) {
                    out.emplace(*n.param_slot, n.grad);
                } else {
                    it->second += n.grad;
                }
            }
        }
        return out;
    }

   private:
    static void check_finite(const Tensor<T>& t, const char* op) {
        if (!t.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
    }

    bool track_grad_;
    std::vector<Node> nodes_;
    OpStats stats_;
};

namespace kernels {

// C += A * B
template <typename T>
void gemm_nn(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    const T* A = a.data().data();
    const T* B = b.data().data();
    T* C = c.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = C + i * n;
        for (std::size_t t = 0; t < k; ++t) {
            const T av = A[i * k + t];
            const T* brow = B + t * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C += A * B^T
template <typename T>
void gemm_nt(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    const T* A = a.data().data();
    const T* B = b.data().data();
    T* C = c.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            T s = 0;
            for (std::size_t t = 0; t < k; ++t) s += A[i * k + t] * B[j * k + t];
            C[i * n + j] += s;
        }
    }
}

// C += A^T * B
template <typename T>
void gemm_tn(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c) {
    const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
    const T* A = a.data().data();
    const T* B = b.data().data();
    T* C = c.data().data();
    for (std::size_t t = 0; t < k; ++t) {
        const T* brow = B + t * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T av = A[t * m + i];
            T* crow = C + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace kernels

namespace detail {

template <typename T>
void require_same(const Var<T>& a, const Var<T>& b, const char* op) {
    a.value().require_same_shape(b.value(), op);
}

template <typename T>
void require_row_of(const Var<T>& row, std::size_t cols, const char* op) {
    const auto& v = row.value();
    if (v.rank() != 2 || v.rows() != 1 || v.cols() != cols) {
        throw DimensionError(std::string(op) + ": expected 1x" + std::to_string(cols) + " row, got " +
                             shape_str(v.shape()));
    }
}

template <typename T, typename Fwd, typename Deriv>
Var<T> unary(Var<T> x, const char* op, Fwd fwd, Deriv deriv) {
    auto& g = *x.graph;
    Tensor<T> y(x.value().shape());
    const auto& xv = x.value();
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = fwd(xv[i]);
    return g.record(std::move(y), {x}, op, [xi = x.id, deriv](Graph<T>& g, NodeId self) {
        const auto& xv = g.value(xi);
        const auto& yv = g.value(self);
        const auto& dy = g.grad(self);
        auto& dx = g.grad_buffer(xi);
        for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += dy[i] * deriv(xv[i], yv[i]);
    });
}

}  // namespace detail

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.cols() != bv.rows()) {
        throw DimensionError("matmul: inner dimensions disagree " + shape_str(av.shape()) + " * " +
                             shape_str(bv.shape()));
    }
    auto& g = *a.graph;
    Tensor<T> c = Tensor<T>::matrix(av.rows(), bv.cols());
    kernels::gemm_nn(av, bv, c);
    g.stats().macs += static_cast<std::uint64_t>(av.rows()) * av.cols() * bv.cols();
    return g.record(std::move(c), {a, b}, "matmul", [ai = a.id, bi = b.id](Graph<T>& g, NodeId self) {
        const auto& dc = g.grad(self);
        if (g.requires_grad(ai)) kernels::gemm_nt(dc, g.value(bi), g.grad_buffer(ai));
        if (g.requires_grad(bi)) kernels::gemm_tn(g.value(ai), dc, g.grad_buffer(bi));
    });
}

template <typename T>
Var<T> transpose(Var<T> x) {
    const auto& xv = x.value();
    Tensor<T> y = Tensor<T>::matrix(xv.cols(), xv.rows());
    for (std::size_t r = 0; r < xv.rows(); ++r)
        for (std::size_t c = 0; c < xv.cols(); ++c) y(c, r) = xv(r, c);
    return x.graph->record(std::move(y), {x}, "transpose", [xi = x.id](Graph<T>& g, NodeId self) {
        const auto& dy = g.grad(self);
        auto& dx = g.grad_buffer(xi);
        for (std::size_t r = 0; r < dx.rows(); ++r)
            for (std::size_t c = 0; c < dx.cols(); ++c) dx(r, c) += dy(c, r);
    });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    detail::require_same(a, b, "add");
    Tensor<T> y = a.value();
    y += b.value();
    return a.graph->record(std::move(y), {a, b}, "add", [ai = a.id, bi = b.id](Graph<T>& g, NodeId self) {
        const auto& dy = g.grad(self);
        if (g.requires_grad(ai)) g.grad_buffer(ai) += dy;
        if (g.requires_grad(bi)) g.grad_buffer(bi) += dy;
    });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
    detail::require_same(a, b, "sub");
    Tensor<T> y = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] -= bv[i];
    return a.graph->record(std::move(y), {a, b}, "sub", [ai = a.id, bi = b.id](Graph<T>& g, NodeId self) {
        const auto& dy = g.grad(self);
        if (g.requires_grad(ai)) g.grad_buffer(ai) += dy;
        if (g.requires_grad(bi)) {
            auto& db = g.grad_buffer(bi);
            for (std::size_t i = 0; i < db.numel(); ++i) db[i] -= dy[i];
        }
    });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    detail::require_same(a, b, "mul");
    Tensor<T> y = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= bv[i];
    return a.graph->record(std::move(y), {a, b}, "mul", [ai = a.id, bi = b.id](Graph<T>& g, NodeId self) {
        const auto& dy = g.grad(self);
        if (g.requires_grad(ai)) {
            auto& da = g.grad_buffer(ai);
            const auto& bv = g.value(bi);
            for (std::size_t i = 0; i < da.numel(); ++i) da[i] += dy[i] * bv[i];
        }
        if (g.requires_grad(bi)) {
            auto& db = g.grad_buffer(bi);
            const auto& av = g.value(ai);
            for (std::size_t i = 0; i < db.numel(); ++i) db[i] += dy[i] * av[i];
        }
    });
}

template <typename T>
Var<T> scale(Var<T> x, T s) {
    Tensor<T> y = x.value();
    y *= s;
    return x.graph->record(std::move(y), {x}, "scale", [xi = x.id, s](Graph<T>& g, NodeId self) {
        const auto& dy = g.grad(self);
        auto& dx = g.grad_buffer(xi);
        for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += s * dy[i];
    });
}

/// x (m x n) plus a 1 x n row broadcast over rows.
template <typename T>
Var<T> add_row(Var<T> x, Var<T> row) {
    const auto& xv = x.value();
    detail::require_row_of(row, xv.cols(), "add_row");
    Tensor<T> y = xv;
    const auto& rv = row.value();
    for (std::size_t r = 0; r < y.rows(); ++r)
        for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) += rv[c];
    return x.graph->record(std::move(y), {x, row}, "add_row",
                           [xi = x.id, ri = row.id](Graph<T>& g, NodeId self) {
                               const auto& dy = g.grad(self);
                               if (g.requires_grad(xi)) g.grad_buffer(xi) += dy;
                               if (g.requires_grad(ri)) {
                                   auto& dr = g.grad_buffer(ri);
                                   for (std::size_t r = 0; r < dy.rows(); ++r)
                                       for (std::size_t c = 0; c < dy.cols(); ++c) dr[c] += dy(r, c);
                               }
                           });
}

/// x * w + b for x (m x k), w (k x n), b (1 x n).
template <typename T>
Var<T> affine(Var<T> x, Var<T> w, Var<T> b) {
    return add_row(matmul(x, w), b);
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
    return detail::unary(
        x, "sigmoid", [](T v) { return T(1) / (T(1) + std::exp(-v)); },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> swish(Var<T> x) {
    return detail::unary(
        x, "swish", [](T v) { return v / (T(1) + std::exp(-v)); },
        [](T v, T) {
            const T s = T(1) / (T(1) + std::exp(-v));
            return s * (T(1) + v * (T(1) - s));
        });
}

/// Gated linear unit over columns: first half * sigmoid(second half).
template <typename T>
Var<T> glu(Var<T> x) {
    const auto& xv = x.value();
    if (xv.cols() % 2 != 0) throw DimensionError("glu: column count must be even");
    const std::size_t h = xv.cols() / 2;
    Tensor<T> y = Tensor<T>::matrix(xv.rows(), h);
    for (std::size_t r = 0; r < xv.rows(); ++r)
        for (std::size_t c = 0; c < h; ++c) y(r, c) = xv(r, c) / (T(1) + std::exp(-xv(r, c + h)));
    return x.graph->record(std::move(y), {x}, "glu", [xi = x.id, h](Graph<T>& g, NodeId self) {
        const auto& xv = g.value(xi);
        const auto& dy = g.grad(self);
        auto& dx = g.grad_buffer(xi);
        for (std::size_t r = 0; r < dy.rows(); ++r) {
            for (std::size_t c = 0; c < h; ++c) {
                const T a = xv(r, c);
                const T s = T(1) / (T(1) + std::exp(-xv(r, c + h)));
                dx(r, c) += dy(r, c) * s;
                dx(r, c + h) += dy(r, c) * a * s * (T(1) - s);
            }
        }
    });
}

/// Row-wise layer normalization with population variance.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
    const auto& xv = x.value();
    const std::size_t n = xv.rows(), d = xv.cols();
    if (d < 2) throw DimensionError("layer_norm: need at least 2 features, got " + std::to_string(d));
    detail::require_row_of(gamma, d, "layer_norm gamma");
    detail::require_row_of(beta, d, "layer_norm beta");
    const auto& gv = gamma.value();
    const auto& bv = beta.value();

    Tensor<T> y = Tensor<T>::matrix(n, d);
    auto xhat = std::make_shared<Tensor<T>>(Tensor<T>::matrix(n, d));
    auto rstd = std::make_shared<std::vector<T>>(n);
    for (std::size_t r = 0; r < n; ++r) {
        T mean = 0;
        for (std::size_t c = 0; c < d; ++c) mean += xv(r, c);
        mean /= T(d);
        T var = 0;
        for (std::size_t c = 0; c < d; ++c) var += (xv(r, c) - mean) * (xv(r, c) - mean);
        var /= T(d);
        const T rs = T(1) / std::sqrt(var + eps);
        (*rstd)[r] = rs;
        for (std::size_t c = 0; c < d; ++c) {
            const T h = (xv(r, c) - mean) * rs;
            (*xhat)(r, c) = h;
            y(r, c) = gv[c] * h + bv[c];
        }
    }
    return x.graph->record(
        std::move(y), {x, gamma, beta}, "layer_norm",
        [xi = x.id, gi = gamma.id, bi = beta.id, xhat, rstd](Graph<T>& g, NodeId self) {
            const auto& dy = g.grad(self);
            const auto& gv = g.value(gi);
            const std::size_t n = dy.rows(), d = dy.cols();
            if (g.requires_grad(gi)) {
                auto& dg = g.grad_buffer(gi);
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < d; ++c) dg[c] += dy(r, c) * (*xhat)(r, c);
            }
            if (g.requires_grad(bi)) {
                auto& db = g.grad_buffer(bi);
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < d; ++c) db[c] += dy(r, c);
            }
            if (g.requires_grad(xi)) {
                auto& dx = g.grad_buffer(xi);
                for (std::size_t r = 0; r < n; ++r) {
                    T mean_dh = 0, mean_dh_h = 0;
                    for (std::size_t c = 0; c < d; ++c) {
                        const T dh = dy(r, c) * gv[c];
                        mean_dh += dh;
                        mean_dh_h += dh * (*xhat)(r, c);
                    }
                    mean_dh /= T(d);
                    mean_dh_h /= T(d);
                    for (std::size_t c = 0; c < d; ++c) {
                        const T dh = dy(r, c) * gv[c];
                        dx(r, c) += (*rstd)[r] * (dh - mean_dh - (*xhat)(r, c) * mean_dh_h);
                    }
                }
            }
        });
}

/// Row-wise softmax, max-subtracted.
template <typename T>
Var<T> softmax_rows(Var<T> x) {
    const auto& xv = x.value();
    if (xv.numel() == 0) throw DimensionError("softmax: empty input");
    Tensor<T> y = Tensor<T>::matrix(xv.rows(), xv.cols());
    for (std::size_t r = 0; r < xv.rows(); ++r) {
        auto in = xv.row_span(r);
        auto out = y.row_span(r);
        const T mx = *std::max_element(in.begin(), in.end());
        T s = 0;
        for (std::size_t c = 0; c < in.size(); ++c) {
            out[c] = std::exp(in[c] - mx);
            s += out[c];
        }
        for (auto& v : out) v /= s;
    }
    return x.graph->record(std::move(y), {x}, "softmax", [xi = x.id](Graph<T>& g, NodeId self) {
        const auto& yv = g.value(self);
        const auto& dy = g.grad(self);
        auto& dx = g.grad_buffer(xi);
        for (std::size_t r = 0; r < yv.rows(); ++r) {
            T dot = 0;
            for (std::size_t c = 0; c < yv.cols(); ++c) dot += dy(r, c) * yv(r, c);
            for (std::size_t c = 0; c < yv.cols(); ++c) dx(r, c) += yv(r, c) * (dy(r, c) - dot);
        }
    });
}

/// Inverted dropout; the keep mask is drawn from `rng` at record time.
template <typename T, typename Rng>
Var<T> dropout(Var<T> x, T p, Rng& rng) {
    if (p <= T(0)) return x;
    if (p >= T(1)) throw ConfigError("dropout probability must be < 1");
    std::bernoulli_distribution keep(1.0 - static_cast<double>(p));
    const T s = T(1) / (T(1) - p);
    Tensor<T> mask(x.value().shape());
    for (std::size_t i = 0; i < mask.numel(); ++i) mask[i] = keep(rng) ? s : T(0);
    auto& g = *x.graph;
    return mul(x, g.constant(std::move(mask)));
}

/// Per-channel 1-D convolution (cross-correlation) with zero "same" padding.
/// x: T x d, kernel: k x d with k odd. Output row t sums kernel row j against
/// input row t + j - (k-1)/2.
template <typename T>
Var<T> depthwise_conv1d(Var<T> x, Var<T> kernel) {
    const auto& xv = x.value();
    const auto& kv = kernel.value();
    const std::size_t len = xv.rows(), d = xv.cols(), k = kv.rows();
    if (k % 2 == 0) throw ConfigError("depthwise_conv1d: kernel size must be odd, got " + std::to_string(k));
    if (kv.cols() != d) {
        throw DimensionError("depthwise_conv1d: kernel " + shape_str(kv.shape()) + " vs input " +
                             shape_str(xv.shape()));
    }
    const long pad = static_cast<long>(k / 2);
    Tensor<T> y = Tensor<T>::matrix(len, d);
    for (std::size_t t = 0; t < len; ++t) {
        for (std::size_t j = 0; j < k; ++j) {
            const long src = static_cast<long>(t) + static_cast<long>(j) - pad;
            if (src < 0 || src >= static_cast<long>(len)) continue;
            for (std::size_t c = 0; c < d; ++c) y(t, c) += kv(j, c) * xv(src, c);
        }
    }
    x.graph->stats().macs += static_cast<std::uint64_t>(len) * k * d;
    return x.graph->record(
        std::move(y), {x, kernel}, "depthwise_conv1d", [xi = x.id, ki = kernel.id, pad](Graph<T>& g, NodeId self) {
            const auto& xv = g.value(xi);
            const auto& kv = g.value(ki);
            const auto& dy = g.grad(self);
            const std::size_t len = xv.rows(), d = xv.cols(), k = kv.rows();
            const bool want_x = g.requires_grad(xi), want_k = g.requires_grad(ki);
            Tensor<T>* dx = want_x ? &g.grad_buffer(xi) : nullptr;
            Tensor<T>* dk = want_k ? &g.grad_buffer(ki) : nullptr;
            for (std::size_t t = 0; t < len; ++t) {
                for (std::size_t j = 0; j < k; ++j) {
                    const long src = static_cast<long>(t) + static_cast<long>(j) - pad;
                    if (src < 0 || src >= static_cast<long>(len)) continue;
                    for (std::size_t c = 0; c < d; ++c) {
                        if (dx) (*dx)(src, c) += kv(j, c) * dy(t, c);
                        if (dk) (*dk)(j, c) += xv(src, c) * dy(t, c);
                    }
                }
            }
        });
}

template <typename T>
Var<T> slice_cols(Var<T> x, std::size_t start, std::size_t len) {
    const auto& xv = x.value();
    if (len == 0 || start + len > xv.cols()) {
        throw DimensionError("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + len) +
                             ") out of " + std::to_string(xv.cols()) + " columns");
    }
    Tensor<T> y = Tensor<T>::matrix(xv.rows(), len);
    for (std::size_t r = 0; r < xv.rows(); ++r)
        for (std::size_t c = 0; c < len; ++c) y(r, c) = xv(r, start + c);
    return x.graph->record(std::move(y), {x}, "slice_cols", [xi = x.id, start](Graph<T>& g, NodeId self) {
        const auto& dy = g.grad(self);
        auto& dx = g.grad_buffer(xi);
        for (std::size_t r = 0; r < dy.rows(); ++r)
            for (std::size_t c = 0; c < dy.cols(); ++c) dx(r, start + c) += dy(r, c);
    });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const std::size_t rows = parts.front().rows();
    std::size_t cols = 0;
    for (const auto& p : parts) {
        if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ");
        cols += p.cols();
    }
    Tensor<T> y = Tensor<T>::matrix(rows, cols);
    std::vector<NodeId> ids;
    std::size_t off = 0;
    for (const auto& p : parts) {
        const auto& pv = p.value();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < pv.cols(); ++c) y(r, off + c) = pv(r, c);
        off += pv.cols();
        ids.push_back(p.id);
    }
    return parts.front().graph->record(std::move(y), parts, "concat_cols", [ids](Graph<T>& g, NodeId self) {
        const auto& dy = g.grad(self);
        std::size_t off = 0;
        for (NodeId id : ids) {
            const std::size_t w = g.value(id).cols();
            if (g.requires_grad(id)) {
                auto& dx = g.grad_buffer(id);
                for (std::size_t r = 0; r < dy.rows(); ++r)
                    for (std::size_t c = 0; c < w; ++c) dx(r, c) += dy(r, off + c);
            }
            off += w;
        }
    });
}

template <typename T>
Var<T> sum(Var<T> x) {
    T s = 0;
    for (T v : x.value().data()) s += v;
    return x.graph->record(Tensor<T>::scalar(s), {x}, "sum", [xi = x.id](Graph<T>& g, NodeId self) {
        const T dy = g.grad(self)[0];
        auto& dx = g.grad_buffer(xi);
        for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += dy;
    });
}

template <typename T>
Var<T> mean(Var<T> x) {
    return scale(sum(x), T(1) / T(x.value().numel()));
}

/// Sum of w (.) x for a constant weight tensor; handy for probing gradients.
template <typename T>
Var<T> weighted_sum(Var<T> x, const Tensor<T>& w) {
    x.value().require_same_shape(w, "weighted_sum");
    auto& g = *x.graph;
    return sum(mul(x, g.constant(w)));
}

/// Mean absolute error between x and a constant target over the selected rows
/// (all rows when `rows` is empty). The subgradient at zero is zero.
template <typename T>
Var<T> l1_mean(Var<T> x, const Tensor<T>& target, const std::vector<bool>& rows = {}) {
    const auto& xv = x.value();
    xv.require_same_shape(target, "l1_mean");
    if (!rows.empty() && rows.size() != xv.rows()) throw DimensionError("l1_mean: row selector length");
    std::size_t count = 0;
    T s = 0;
    for (std::size_t r = 0; r < xv.rows(); ++r) {
        if (!rows.empty() && !rows[r]) continue;
        ++count;
        for (std::size_t c = 0; c < xv.cols(); ++c) s += std::abs(xv(r, c) - target(r, c));
    }
    if (count == 0) throw ContractError("l1_mean: no rows selected");
    const T denom = T(count * xv.cols());
    auto& g = *x.graph;
    Var<T> tgt = g.constant(target);
    return g.record(Tensor<T>::scalar(s / denom), {x, tgt}, "l1_mean",
                    [xi = x.id, ti = tgt.id, rows, denom](Graph<T>& g, NodeId self) {
                        const T dy = g.grad(self)[0] / denom;
                        const auto& xv = g.value(xi);
                        const auto& tv = g.value(ti);
                        auto& dx = g.grad_buffer(xi);
                        for (std::size_t r = 0; r < xv.rows(); ++r) {
                            if (!rows.empty() && !rows[r]) continue;
                            for (std::size_t c = 0; c < xv.cols(); ++c) {
                                const T diff = xv(r, c) - tv(r, c);
                                dx(r, c) += diff > 0 ? dy : (diff < 0 ? -dy : T(0));
                            }
                        }
                    });
}

}  // namespace lcf

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "lcf/autograd.hpp"

namespace lcf {

/// Builds a scalar loss from parameter leaves, one per input tensor.
template <typename T>
using ScalarFn = std::function<Var<T>(Graph<T>&, const std::vector<Var<T>>&)>;

/// Compares reverse-mode gradients of `f` against central differences.
/// Returns max over every parameter entry of
///   |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
template <typename T>
T grad_check(const ScalarFn<T>& f, std::vector<Tensor<T>> params, T eps) {
    if (!(eps > T(0) && eps <= T(1e-2))) throw ContractError("grad_check: eps must lie in (0, 1e-2]");

    Gradients<T> analytic;
    {
        Graph<T> g;
        std::vector<Var<T>> vars;
        for (std::size_t i = 0; i < params.size(); ++i) vars.push_back(g.parameter(params[i], i));
        analytic = g.backward(f(g, vars));
    }

    auto evaluate = [&]() {
        Graph<T> g(false);
        std::vector<Var<T>> vars;
        for (std::size_t i = 0; i < params.size(); ++i) vars.push_back(g.parameter(params[i], i));
        const T v = f(g, vars).value().item();
        if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss while probing");
        return v;
    };

    T worst = 0;
    for (std::size_t p = 0; p < params.size(); ++p) {
        const auto it = analytic.find(p);
        for (std::size_t i = 0; i < params[p].numel(); ++i) {
            const T saved = params[p][i];
            params[p][i] = saved + eps;
            const T up = evaluate();
            params[p][i] = saved - eps;
            const T down = evaluate();
            params[p][i] = saved;
            const T numeric = (up - down) / (T(2) * eps);
            const T exact = it == analytic.end() ? T(0) : it->second[i];
            const T denom = std::max({std::abs(exact), std::abs(numeric), T(1e-12)});
            worst = std::max(worst, std::abs(exact - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace lcf

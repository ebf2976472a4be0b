#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lcf/autograd.hpp"
#include "lcf/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace lcf;
using oracle::random_matrix;

namespace {

template <typename T>
Tensor<T> run(std::function<Var<T>(Graph<T>&)> f) {
    Graph<T> g(false);
    return f(g).value();
}

}  // namespace

TEST(Tensor, RejectsZeroDimsAndMismatchedData) {
    EXPECT_THROW(Tensor<float>({0, 3}), DimensionError);
    EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
    Tensor<float> t({2, 3}, 1.5f);
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_EQ(t.rows(), 2u);
    EXPECT_EQ(t.cols(), 3u);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
    auto b = Tensor<double>::matrix({{1, 2, 3}, {4, 5, 6}});
    auto c = run<double>([&](Graph<double>& g) { return matmul(g.constant(Tensor<double>::matrix({{1, 0}, {0, 1}})), g.constant(b)); });
    EXPECT_EQ(c, b);
}

TEST(Matmul, HandExpansion) {
    auto c = run<double>([](Graph<double>& g) {
        return matmul(g.constant(Tensor<double>::matrix({{1, 2}, {3, 4}})), g.constant(Tensor<double>::matrix({{5}, {6}})));
    });
    EXPECT_EQ(c, Tensor<double>::matrix({{17}, {39}}));
}

TEST(Matmul, MatchesTripleLoopOracle) {
    std::mt19937_64 rng(3);
    for (int rep = 0; rep < 20; ++rep) {
        auto a = random_matrix<float>(5, 4, rng);
        auto b = random_matrix<float>(4, 3, rng);
        auto c = run<float>([&](Graph<float>& g) { return matmul(g.constant(a), g.constant(b)); });
        EXPECT_LE(max_abs_diff(c, oracle::triple_loop_matmul(a, b)), 1e-6f);
    }
}

TEST(Matmul, InnerDimensionMismatchThrows) {
    Graph<double> g;
    EXPECT_THROW(matmul(g.constant(Tensor<double>::matrix(2, 3)), g.constant(Tensor<double>::matrix(2, 3))), DimensionError);
}

TEST(Softmax, ConstantRowIsUniform) {
    auto s = run<double>([](Graph<double>& g) { return softmax_rows(g.constant(Tensor<double>::row({2.5, 2.5, 2.5}))); });
    for (double v : s.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-12);
}

TEST(Softmax, ClosedForm) {
    auto s = run<double>([](Graph<double>& g) { return softmax_rows(g.constant(Tensor<double>::row({0.0, std::log(2.0)}))); });
    EXPECT_NEAR(s[0], 1.0 / 3.0, 1e-12);
    EXPECT_NEAR(s[1], 2.0 / 3.0, 1e-12);
}

TEST(Softmax, ShiftInvariantAndNormalized) {
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 20; ++rep) {
        auto x = random_matrix<double>(4, 7, rng, -5, 5);
        auto shifted = x;
        for (auto& v : shifted.storage()) v += 100.0;
        auto a = run<double>([&](Graph<double>& g) { return softmax_rows(g.constant(x)); });
        auto b = run<double>([&](Graph<double>& g) { return softmax_rows(g.constant(shifted)); });
        EXPECT_LE(max_abs_diff(a, b), 1e-6);
        for (std::size_t r = 0; r < a.rows(); ++r) {
            double s = 0;
            for (double v : a.row_span(r)) {
                EXPECT_GT(v, 0.0);
                s += v;
            }
            EXPECT_NEAR(s, 1.0, 1e-6);
        }
    }
}

TEST(LayerNorm, ConstantInputGivesZeros) {
    auto y = run<double>([](Graph<double>& g) {
        return layer_norm(g.constant(Tensor<double>::row({4, 4, 4, 4})), g.constant(Tensor<double>::row({1, 1, 1, 1})),
                          g.constant(Tensor<double>::row({0, 0, 0, 0})), 1e-5);
    });
    for (double v : y.data()) EXPECT_LE(std::abs(v), std::sqrt(1e-5));
}

TEST(LayerNorm, TwoElementClosedForm) {
    auto y = run<double>([](Graph<double>& g) {
        return layer_norm(g.constant(Tensor<double>::row({1, 3})), g.constant(Tensor<double>::row({1, 1})),
                          g.constant(Tensor<double>::row({0, 0})), 1e-12);
    });
    EXPECT_NEAR(y[0], -1.0, 1e-9);
    EXPECT_NEAR(y[1], 1.0, 1e-9);
}

TEST(LayerNorm, SingleFeatureIsRejected) {
    Graph<double> g;
    auto one = g.constant(Tensor<double>::row({1}));
    EXPECT_THROW(layer_norm(g.constant(Tensor<double>::row({2})), one, one), DimensionError);
}

TEST(LayerNorm, SumGradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(11);
    ScalarFn<double> f = [](Graph<double>&, const std::vector<Var<double>>& v) { return sum(layer_norm(v[0], v[1], v[2])); };
    const double err = grad_check<double>(
        f, {random_matrix<double>(3, 6, rng, -2, 2), random_matrix<double>(1, 6, rng, 0.5, 1.5), random_matrix<double>(1, 6, rng)},
        1e-5);
    EXPECT_LE(err, 1e-4);
}

TEST(DepthwiseConv, DeltaKernelIsIdentity) {
    std::mt19937_64 rng(1);
    auto x = random_matrix<double>(6, 2, rng);
    auto k = Tensor<double>::matrix({{0, 0}, {1, 1}, {0, 0}});
    auto y = run<double>([&](Graph<double>& g) { return depthwise_conv1d(g.constant(x), g.constant(k)); });
    EXPECT_EQ(y, x);
}

TEST(DepthwiseConv, BoxKernelHandExpansion) {
    auto y = run<double>([](Graph<double>& g) {
        return depthwise_conv1d(g.constant(Tensor<double>::matrix({{1}, {2}, {3}})), g.constant(Tensor<double>::matrix({{1}, {1}, {1}})));
    });
    EXPECT_EQ(y, Tensor<double>::matrix({{3}, {6}, {5}}));
}

TEST(DepthwiseConv, MatchesSlidingWindowOracle) {
    std::mt19937_64 rng(9);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t t = 1 + rng() % 12, k = 1 + 2 * (rng() % 4);
        auto x = random_matrix<float>(t, 5, rng);
        auto w = random_matrix<float>(k, 5, rng);
        auto y = run<float>([&](Graph<float>& g) { return depthwise_conv1d(g.constant(x), g.constant(w)); });
        EXPECT_LE(max_abs_diff(y, oracle::sliding_window_conv(x, w)), 1e-6f);
    }
}

TEST(DepthwiseConv, EvenKernelIsConfigError) {
    Graph<double> g;
    EXPECT_THROW(depthwise_conv1d(g.constant(Tensor<double>::matrix(4, 2)), g.constant(Tensor<double>::matrix(2, 2))), ConfigError);
}

TEST(Backward, SumGivesOnes) {
    Graph<double> g;
    auto x = g.parameter(Tensor<double>::matrix({{1, -2}, {3, 4}}), 0);
    auto grads = g.backward(sum(x));
    for (double v : grads.at(0).data()) EXPECT_EQ(v, 1.0);
}

TEST(Backward, ZeroTimesAnythingGivesZeroGradients) {
    Graph<double> g;
    auto x = g.parameter(Tensor<double>::matrix({{1, -2}, {3, 4}}), 0);
    auto w = g.parameter(Tensor<double>::matrix({{0.5, 0.1}, {0.2, 0.3}}), 1);
    auto grads = g.backward(scale(sum(softmax_rows(matmul(x, w))), 0.0));
    for (const auto& [slot, gr] : grads)
        for (double v : gr.data()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, NonScalarLossIsContractError) {
    Graph<double> g;
    auto x = g.parameter(Tensor<double>::matrix(2, 2, 1.0), 0);
    EXPECT_THROW(g.backward(x), ContractError);
}

TEST(Backward, ConstantsAreSkipped) {
    Graph<double> g;
    auto x = g.parameter(Tensor<double>::matrix(2, 2, 1.0), 0);
    auto c = g.constant(Tensor<double>::matrix(2, 2, 3.0));
    auto grads = g.backward(sum(mul(x, c)));
    EXPECT_EQ(grads.size(), 1u);
    EXPECT_EQ(grads.at(0)[0], 3.0);
}

TEST(Backward, ReusedParameterAccumulates) {
    // Two leaves sharing slot 0 and one leaf used twice: both paths must sum.
    Graph<double> g;
    auto a = g.parameter(Tensor<double>::scalar(2.0), 0);
    auto b = g.parameter(Tensor<double>::scalar(2.0), 0);
    auto grads = g.backward(add(mul(a, a), scale(b, 3.0)));
    EXPECT_DOUBLE_EQ(grads.at(0).item(), 2 * 2.0 + 3.0);
}

TEST(Backward, ComposedChainMatchesFiniteDifferences) {
    std::mt19937_64 rng(21);
    auto w = random_matrix<double>(3, 5, rng);
    ScalarFn<double> f = [&](Graph<double>&, const std::vector<Var<double>>& v) {
        return weighted_sum(softmax_rows(layer_norm(matmul(v[0], v[1]), v[2], v[3])), w);
    };
    std::vector<Tensor<double>> p64{random_matrix<double>(3, 4, rng), random_matrix<double>(4, 5, rng),
                                    random_matrix<double>(1, 5, rng, 0.5, 1.5), random_matrix<double>(1, 5, rng)};
    EXPECT_LE(grad_check<double>(f, p64, 1e-5), 1e-7);

    // 32-bit: same function, coarser step.
    auto wf = w.cast<float>();
    ScalarFn<float> ff = [&](Graph<float>&, const std::vector<Var<float>>& v) {
        return weighted_sum(softmax_rows(layer_norm(matmul(v[0], v[1]), v[2], v[3])), wf);
    };
    std::vector<Tensor<float>> p32;
    for (const auto& p : p64) p32.push_back(p.cast<float>());
    // Single-precision central differences carry ~1e-4 relative noise on small
    // entries; the analytic side is compared against the 64-bit gradient instead.
    Graph<float> g32;
    std::vector<Var<float>> v32;
    for (std::size_t i = 0; i < p32.size(); ++i) v32.push_back(g32.parameter(p32[i], i));
    auto grads32 = g32.backward(ff(g32, v32));
    Graph<double> g64;
    std::vector<Var<double>> v64;
    for (std::size_t i = 0; i < p64.size(); ++i) v64.push_back(g64.parameter(p64[i], i));
    auto grads64 = g64.backward(f(g64, v64));
    for (std::size_t i = 0; i < p64.size(); ++i) {
        for (std::size_t j = 0; j < p64[i].numel(); ++j) {
            const double a = grads32.at(i)[j], b = grads64.at(i)[j];
            EXPECT_LE(std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3}), 1e-4);
        }
    }
}

TEST(Autograd, NonFiniteResultIsNumericError) {
    Graph<double> g;
    auto x = g.constant(Tensor<double>::row({1e308, 1e308}));
    EXPECT_THROW(scale(x, 10.0), NumericError);
}

TEST(GradCheck, LinearFunctionIsExact) {
    ScalarFn<double> f = [](Graph<double>&, const std::vector<Var<double>>& v) {
        return weighted_sum(v[0], Tensor<double>::row({0.3, -1.2, 2.5}));
    };
    EXPECT_LE(grad_check<double>(f, {Tensor<double>::row({1, 2, 3})}, 1e-4), 1e-10);
}

TEST(GradCheck, QuadraticAtThree) {
    ScalarFn<double> f = [](Graph<double>&, const std::vector<Var<double>>& v) { return mul(v[0], v[0]); };
    EXPECT_LE(grad_check<double>(f, {Tensor<double>::scalar(3.0)}, 1e-4), 1e-7);
}

TEST(GradCheck, EpsOutsideRangeIsContractError) {
    ScalarFn<double> f = [](Graph<double>&, const std::vector<Var<double>>& v) { return sum(v[0]); };
    EXPECT_THROW(grad_check<double>(f, {Tensor<double>::scalar(1.0)}, 0.0), ContractError);
    EXPECT_THROW(grad_check<double>(f, {Tensor<double>::scalar(1.0)}, 0.1), ContractError);
}

TEST(GradCheck, NonFiniteProbeIsNumericError) {
    // sqrt-like blow-up: 1/x evaluated at x = 0 +/- eps is finite, but log of a negative is not.
    ScalarFn<double> f = [](Graph<double>& g, const std::vector<Var<double>>& v) {
        Tensor<double> val = v[0].value();
        val[0] = std::log(val[0]);
        return g.record(val, {v[0]}, "log", [](Graph<double>&, NodeId) {});
    };
    EXPECT_THROW(grad_check<double>(f, {Tensor<double>::scalar(1e-6)}, 1e-3), NumericError);
}

class OpGradient : public ::testing::TestWithParam<std::string> {};

TEST_P(OpGradient, MatchesFiniteDifferencesOverSeeds) {
    for (const auto& [name, build] : oracle::gradient_cases()) {
        if (name != GetParam()) continue;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            auto c = build(seed);
            EXPECT_LE(grad_check<double>(c.fn, c.params, 1e-5), 1e-4) << name << " seed " << seed;
        }
        return;
    }
    FAIL() << "unknown case " << GetParam();
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::ValuesIn([] {
                             std::vector<std::string> names;
                             for (const auto& [n, _] : oracle::gradient_cases()) names.push_back(n);
                             return names;
                         }()));

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "swcl/gradcheck.hpp"
#include "swcl/net.hpp"
#include "swcl/ops.hpp"
#include "swcl/rng.hpp"

using namespace swcl;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, RngStream& rng, double lo = -1.0,
                     double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// --- conv2d -----------------------------------------------------------------

TEST(Conv2d, UniformOnesCase) {
    const Tensor input = Tensor::full({1, 3, 3}, 1.0);
    const Tensor kernel = Tensor::full({1, 1, 2, 2}, 1.0);
    const Tensor out = conv2d(input, kernel, 1, 0);
    ASSERT_EQ(out.shape(), (std::vector<std::size_t>{1, 2, 2}));
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_DOUBLE_EQ(out[i], 4.0);
}

TEST(Conv2d, ZeroKernelGivesZeroOutput) {
    RngStream rng(1);
    const Tensor input = random_tensor({3, 6, 5}, rng);
    const Tensor kernel = Tensor({2, 3, 3, 3});
    const Tensor out = conv2d(input, kernel, 1, 1);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], 0.0);
}

TEST(Conv2d, MatchesNestedLoopOracle) {
    RngStream rng(2);
    const Tensor input = random_tensor({2, 5, 5}, rng);
    const Tensor kernel = random_tensor({3, 2, 3, 3}, rng);
    const Tensor out = conv2d(input, kernel, 2, 1);
    const Tensor expect = oracles::conv2d_oracle(input, kernel, 2, 1);
    ASSERT_EQ(out.shape(), expect.shape());
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], expect[i], 1e-12);
}

TEST(Conv2d, RandomizedShapeSweepMatchesOracle) {
    RngStream rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t cin = 1 + rng.index(3), cout = 1 + rng.index(3);
        const std::size_t h = 3 + rng.index(6), w = 3 + rng.index(6);
        const std::size_t k = 1 + rng.index(3);
        const std::size_t stride = 1 + rng.index(2), pad = rng.index(2);
        if (k > h + 2 * pad || k > w + 2 * pad) continue;
        const Tensor input = random_tensor({cin, h, w}, rng);
        const Tensor kernel = random_tensor({cout, cin, k, k}, rng);
        const Tensor out = conv2d(input, kernel, stride, pad);
        const Tensor expect = oracles::conv2d_oracle(input, kernel, stride, pad);
        ASSERT_EQ(out.shape(), expect.shape());
        for (std::size_t i = 0; i < out.size(); ++i) ASSERT_NEAR(out[i], expect[i], 1e-12);
    }
}

TEST(Conv2d, RejectsShapeMismatch) {
    const Tensor input = Tensor({2, 4, 4});
    EXPECT_THROW(conv2d(input, Tensor({1, 3, 2, 2}), 1, 0), ValidationError);
    EXPECT_THROW(conv2d(input, Tensor({1, 2, 5, 5}), 1, 0), ValidationError);
    EXPECT_THROW(conv2d(input, Tensor({1, 2, 2, 2}), 0, 0), ValidationError);
}

TEST(Conv2d, OutputSizeFormula) {
    const Tensor input = Tensor({1, 7, 9});
    const Tensor kernel = Tensor({1, 1, 3, 3});
    const Tensor out = conv2d(input, kernel, 2, 1);
    EXPECT_EQ(out.extent(1), (7 + 2 - 3) / 2 + 1u);
    EXPECT_EQ(out.extent(2), (9 + 2 - 3) / 2 + 1u);
}

// --- linear / gap -------------------------------------------------------------

TEST(Linear, IdentityAndBiasCases) {
    Tensor w({3, 3});
    for (std::size_t i = 0; i < 3; ++i) w.at2(i, i) = 1.0;
    const Tensor x({3}, {1.0, -2.0, 3.0});
    const Tensor out = linear(x, w, Tensor({3}));
    for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(out[i], x[i]);

    const Tensor b({2}, {0.5, -0.5});
    const Tensor out2 = linear(x, Tensor({2, 3}), b);
    EXPECT_DOUBLE_EQ(out2[0], 0.5);
    EXPECT_DOUBLE_EQ(out2[1], -0.5);
}

TEST(Linear, MatchesDotProductOracle) {
    RngStream rng(4);
    const Tensor x = random_tensor({4}, rng);
    const Tensor w = random_tensor({3, 4}, rng);
    const Tensor b = random_tensor({3}, rng);
    const Tensor out = linear(x, w, b);
    const Tensor expect = oracles::linear_oracle(x, w, b);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], expect[i], 1e-12);
}

TEST(Linear, RejectsDimensionMismatch) {
    EXPECT_THROW(linear(Tensor({4}), Tensor({3, 5}), Tensor({3})), ValidationError);
    EXPECT_THROW(linear(Tensor({4}), Tensor({3, 4}), Tensor({2})), ValidationError);
}

TEST(Gap, ConstantAndArithmeticMean) {
    const Tensor constant = Tensor::full({2, 3, 3}, 0.7);
    const Tensor g = gap(constant);
    EXPECT_DOUBLE_EQ(g[0], 0.7);
    const Tensor channel({1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    EXPECT_DOUBLE_EQ(gap(channel)[0], 2.5);
}

TEST(Gap, MatchesSummationOracle) {
    RngStream rng(5);
    const Tensor x = random_tensor({4, 5, 3}, rng);
    const Tensor g = gap(x);
    const Tensor expect = oracles::gap_oracle(x);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], expect[i], 1e-12);
}

// --- softmax_pair / l2_normalize ------------------------------------------------

TEST(SoftmaxPair, SymmetryAndKnownValue) {
    const auto [p, q] = softmax_pair(3.7, 3.7);
    EXPECT_DOUBLE_EQ(p, 0.5);
    EXPECT_DOUBLE_EQ(q, 0.5);
    const auto [p10, q10] = softmax_pair(1.0, 0.0);
    EXPECT_NEAR(p10, 0.73106, 1e-5);  // e/(e+1)
    EXPECT_NEAR(q10, 0.26894, 1e-5);
}

TEST(SoftmaxPair, StableForExtremeInputs) {
    const auto [p, q] = softmax_pair(1000.0, -1000.0);
    EXPECT_TRUE(std::isfinite(p) && std::isfinite(q));
    EXPECT_NEAR(p + q, 1.0, 1e-12);
}

TEST(L2Normalize, UnitVectorUnchangedAndDegenerateRejected) {
    const Tensor unit({2}, {0.6, 0.8});
    const Tensor out = l2_normalize(unit);
    EXPECT_NEAR(out[0], 0.6, 1e-15);
    EXPECT_NEAR(out[1], 0.8, 1e-15);
    EXPECT_THROW(l2_normalize(Tensor({3})), ValidationError);
}

TEST(CrossEntropy2, MatchesManualComputation) {
    const Tensor logits({2}, {0.3, -1.2});
    Tensor grad({2});
    const double loss = cross_entropy2(logits, 1, &grad);
    const auto [p0, p1] = softmax_pair(0.3, -1.2);
    EXPECT_NEAR(loss, -std::log(p1), 1e-12);
    EXPECT_NEAR(grad[0], p0, 1e-12);
    EXPECT_NEAR(grad[1], p1 - 1.0, 1e-12);
}

// --- gradients ------------------------------------------------------------------

TEST(Gradients, EveryPrimitiveOpPassesFiniteDifferences) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        RngStream rng(seed, "op-gradcheck");
        {
            const Tensor input = random_tensor({2, 5, 4}, rng);
            const Tensor coeffs = random_tensor({2, 3, 2}, rng);
            NetworkParams p;
            p["k"] = random_tensor({2, 2, 3, 3}, rng, -0.5, 0.5);
            LossFn fn = [&](const NetworkParams& params) {
                LossWithGrad r;
                const Tensor out = conv2d(input, params.at("k"), 2, 1);
                for (std::size_t i = 0; i < out.size(); ++i) r.value += out[i] * coeffs[i];
                r.grads = zeros_like(params);
                conv2d_backward(input, params.at("k"), 2, 1, coeffs, nullptr,
                                &r.grads.at("k"));
                return r;
            };
            worst = std::max(worst, finite_diff_check(fn, p, 1e-6));
        }
        {
            const Tensor x = random_tensor({4}, rng);
            const Tensor coeffs = random_tensor({3}, rng);
            NetworkParams p;
            p["w"] = random_tensor({3, 4}, rng);
            p["b"] = random_tensor({3}, rng);
            LossFn fn = [&](const NetworkParams& params) {
                LossWithGrad r;
                const Tensor out = linear(x, params.at("w"), params.at("b"));
                for (std::size_t i = 0; i < out.size(); ++i) r.value += out[i] * coeffs[i];
                r.grads = zeros_like(params);
                linear_backward(x, params.at("w"), coeffs, nullptr, &r.grads.at("w"),
                                &r.grads.at("b"));
                return r;
            };
            worst = std::max(worst, finite_diff_check(fn, p, 1e-6));
        }
        {
            Tensor x = random_tensor({5}, rng);
            for (std::size_t i = 0; i < x.size(); ++i)
                if (std::fabs(x[i]) < 1e-3) x[i] = 0.2;
            const Tensor coeffs = random_tensor({5}, rng);
            worst = std::max(worst, finite_diff_check_tensor(
                [&](const Tensor& v, Tensor* grad) {
                    const Tensor out = relu(v);
                    double val = 0.0;
                    for (std::size_t i = 0; i < out.size(); ++i) val += out[i] * coeffs[i];
                    const Tensor gin = relu_backward(v, coeffs);
                    for (std::size_t i = 0; i < gin.size(); ++i) (*grad)[i] += gin[i];
                    return val;
                },
                x, 1e-6));
        }
        {
            const Tensor coeffs = random_tensor({6}, rng);
            worst = std::max(worst, finite_diff_check_tensor(
                [&](const Tensor& v, Tensor* grad) {
                    const Tensor out = l2_normalize(v);
                    double val = 0.0;
                    for (std::size_t i = 0; i < out.size(); ++i) val += out[i] * coeffs[i];
                    const Tensor gin = l2_normalize_backward(v, coeffs);
                    for (std::size_t i = 0; i < gin.size(); ++i) (*grad)[i] += gin[i];
                    return val;
                },
                random_tensor({6}, rng), 1e-6));
        }
        {
            // softmax_pair backward via a weighted sum of both outputs
            const double ca = rng.uniform(-1.0, 1.0), cb = rng.uniform(-1.0, 1.0);
            worst = std::max(worst, finite_diff_check_tensor(
                [&](const Tensor& v, Tensor* grad) {
                    const auto [p, q] = softmax_pair(v[0], v[1]);
                    const auto [da, db] = softmax_pair_backward(p, q, ca, cb);
                    (*grad)[0] += da;
                    (*grad)[1] += db;
                    return ca * p + cb * q;
                },
                random_tensor({2}, rng, -2.0, 2.0), 1e-6));
        }
    }
    EXPECT_LT(worst, 1e-5);
}

TEST(Gradients, QuadraticAndLinearLossSanity) {
    RngStream rng(11);
    NetworkParams p;
    p["x"] = random_tensor({6}, rng);
    LossFn quadratic = [](const NetworkParams& params) {
        LossWithGrad r;
        const Tensor& x = params.at("x");
        r.grads = zeros_like(params);
        for (std::size_t i = 0; i < x.size(); ++i) {
            r.value += 0.5 * x[i] * x[i];
            r.grads.at("x")[i] = x[i];
        }
        return r;
    };
    EXPECT_LT(finite_diff_check(quadratic, p, 1e-6), 1e-8);

    const Tensor coeffs = random_tensor({6}, rng);
    LossFn lin = [&](const NetworkParams& params) {
        LossWithGrad r;
        const Tensor& x = params.at("x");
        r.grads = zeros_like(params);
        for (std::size_t i = 0; i < x.size(); ++i) {
            r.value += coeffs[i] * x[i];
            r.grads.at("x")[i] = coeffs[i];
        }
        return r;
    };
    EXPECT_LT(finite_diff_check(lin, p, 1e-6), 1e-9);
}

TEST(Gradients, EpsilonRangeEnforced) {
    NetworkParams p;
    p["x"] = Tensor({1}, {1.0});
    LossFn fn = [](const NetworkParams& params) {
        LossWithGrad r;
        r.value = params.at("x")[0];
        r.grads = zeros_like(params);
        r.grads.at("x")[0] = 1.0;
        return r;
    };
    EXPECT_THROW(finite_diff_check(fn, p, 1e-2), ValidationError);
    EXPECT_THROW(finite_diff_check(fn, p, 1e-9), ValidationError);
}

TEST(Gradients, NonFiniteLossNamesTheParameter) {
    NetworkParams p;
    p["theta"] = Tensor({1}, {0.5});
    LossFn fn = [](const NetworkParams& params) {
        LossWithGrad r;
        const double x = params.at("theta")[0];
        r.value = x == 0.5 ? 1.0 : std::numeric_limits<double>::quiet_NaN();
        r.grads = zeros_like(params);
        return r;
    };
    try {
        finite_diff_check(fn, p, 1e-6);
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("theta"), std::string::npos);
    }
}

// --- trunk determinism ------------------------------------------------------------

TEST(Trunk, ForwardIsBitwiseDeterministic) {
    RngStream rng(12);
    TrunkConfig cfg;
    NetworkParams params;
    init_trunk_params(params, cfg, 99);
    const Tensor image = random_tensor({3, 32, 32}, rng, 0.0, 1.0);
    const Tensor a = trunk_forward(params, cfg, image, nullptr);
    const Tensor b = trunk_forward(params, cfg, image, nullptr);
    ASSERT_EQ(a.shape(), b.shape());
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a[i], b[i]);
}

TEST(Trunk, OutputGeometry) {
    TrunkConfig cfg;
    EXPECT_EQ(cfg.out_extent(64), 8u);  // 64 -> 32 -> 16 -> 8
    EXPECT_EQ(cfg.out_extent(32), 4u);
    EXPECT_EQ(cfg.out_channels(), 16u);
}

}  // namespace

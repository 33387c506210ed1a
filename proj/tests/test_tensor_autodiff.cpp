#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "sdaut/autodiff.hpp"
#include "sdaut/ops.hpp"
#include "support/gradcheck.hpp"

using namespace sdaut;
using sdaut::testing::gradcheck;
using sdaut::testing::random_tensor;
using sdaut::testing::weighted_sum_probe;

namespace {

Tensor probe_loss(const Tensor& out, std::uint64_t seed = 99) {
    return ops::sum(ops::mul(out, weighted_sum_probe(out.shape(), seed)));
}

}  // namespace

TEST(Tensor, RejectsMismatchedData) {
    EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
    EXPECT_THROW(Tensor(Shape{0, 2}), ShapeError);
}

TEST(Tensor, SerializationRoundTripsF32Payload) {
    Tensor t({2, 3}, {1.0, -2.5, 3.25, 0.0, 1e-3f, 7.0});
    std::stringstream ss;
    write_tensor(ss, t);
    const std::string bytes = ss.str();
    ASSERT_EQ(bytes.substr(0, 4), "DTNS");
    EXPECT_EQ(bytes.size(), 4u + 4u + 2u * 8u + 6u * 4u);
    auto back = read_tensor(ss);
    EXPECT_EQ(back.shape(), t.shape());
    EXPECT_TRUE(bitwise_equal(back, t));
}

TEST(Tensor, F32ModeRoundsEveryPrimitive) {
    PrecisionScope scope(Precision::f32);
    Tensor a({1}, {1.0});
    auto b = ops::scale(a, 1.0 / 3.0);
    EXPECT_EQ(b.item(), static_cast<double>(1.0f / 3.0f));
}

TEST(Tensor, NonFiniteIsAnError) {
    Tensor a({2}, {1.0, 1e308});
    EXPECT_THROW(ops::scale(a, 1e10), NumericError);
}

TEST(Conv2d, UnitKernelScalesInput) {
    auto out = ops::conv2d(Tensor::full({1, 1, 4, 4}, 1.0), Tensor::full({1, 1, 1, 1}, 2.0), Tensor{}, 1, 0);
    ASSERT_EQ(out.shape(), (Shape{1, 1, 4, 4}));
    for (double v : out.data()) EXPECT_EQ(v, 2.0);
}

TEST(Conv2d, StrideTwoShapeRule) {
    auto out = ops::conv2d(Tensor::full({1, 1, 4, 4}, 1.0), Tensor::full({1, 1, 2, 2}, 1.0), Tensor{}, 2, 0);
    EXPECT_EQ(out.shape(), (Shape{1, 1, 2, 2}));
    for (double v : out.data()) EXPECT_EQ(v, 4.0);
}

TEST(Conv2d, Errors) {
    Tensor x({1, 2, 4, 4});
    EXPECT_THROW(ops::conv2d(x, Tensor({1, 3, 3, 3}), Tensor{}, 1, 1), ShapeError);
    EXPECT_THROW(ops::conv2d(x, Tensor({1, 2, 3, 3}), Tensor{}, 0, 1), ShapeError);
    EXPECT_THROW(ops::conv2d(x, Tensor({1, 2, 7, 7}), Tensor{}, 1, 0), ShapeError);
}

TEST(Conv2d, MatchesDirectLoopWithPaddingAndGroups) {
    std::mt19937_64 rng(3);
    auto x = random_tensor({2, 4, 5, 6}, rng);
    auto k = random_tensor({4, 2, 3, 3}, rng);
    auto b = random_tensor({4}, rng);
    auto out = ops::conv2d(x, k, b, 2, 1, 2);
    ASSERT_EQ(out.shape(), (Shape{2, 4, 3, 3}));
    for (Index n = 0; n < 2; ++n)
        for (Index co = 0; co < 4; ++co)
            for (Index oy = 0; oy < 3; ++oy)
                for (Index ox = 0; ox < 3; ++ox) {
                    double acc = b[co];
                    const Index g = co / 2;
                    for (Index ci = 0; ci < 2; ++ci)
                        for (Index ky = 0; ky < 3; ++ky)
                            for (Index kx = 0; kx < 3; ++kx) {
                                const Index iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
                                if (iy < 0 || iy >= 5 || ix < 0 || ix >= 6) continue;
                                acc += k[((co * 2 + ci) * 3 + ky) * 3 + kx] * x[((n * 4 + g * 2 + ci) * 5 + iy) * 6 + ix];
                            }
                    EXPECT_NEAR(out[((n * 4 + co) * 3 + oy) * 3 + ox], acc, 1e-12);
                }
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(11);
    auto x = random_tensor({1, 2, 5, 5}, rng);
    auto k = random_tensor({3, 2, 3, 3}, rng);
    auto b = random_tensor({3}, rng);
    auto rep = gradcheck([&] { return probe_loss(ops::conv2d(x, k, b, 1, 1)); }, {{"x", x}, {"k", k}, {"b", b}});
    EXPECT_LE(rep.max_rel_err, 1e-4) << rep.worst;
    auto dw = random_tensor({2, 1, 5, 5}, rng);
    auto rep2 = gradcheck([&] { return probe_loss(ops::conv2d(x, dw, Tensor{}, 2, 2, 2)); }, {{"x", x}, {"dw", dw}});
    EXPECT_LE(rep2.max_rel_err, 1e-4) << rep2.worst;
}

TEST(Matmul, IdentityAndHandArithmetic) {
    Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    std::mt19937_64 rng(1);
    auto m = random_tensor({3, 3}, rng);
    EXPECT_TRUE(bitwise_equal(ops::matmul(eye, m), m));
    auto r = ops::matmul(Tensor({2, 2}, {1, 2, 3, 4}), Tensor({2, 1}, {1, 1}));
    EXPECT_EQ(r.shape(), (Shape{2, 1}));
    EXPECT_EQ(r[0], 3.0);
    EXPECT_EQ(r[1], 7.0);
}

TEST(Matmul, ExtentMismatchThrows) {
    EXPECT_THROW(ops::matmul(Tensor({2, 3}), Tensor({2, 3})), ShapeError);
    EXPECT_THROW(ops::matmul(Tensor({2, 2, 3}), Tensor({3, 3, 3})), ShapeError);
}

TEST(Matmul, BatchedGradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(5);
    auto a = random_tensor({2, 4, 5}, rng);
    auto b = random_tensor({2, 5, 3}, rng);
    auto rep = gradcheck([&] { return probe_loss(ops::matmul(a, b)); }, {{"a", a}, {"b", b}});
    EXPECT_LE(rep.max_rel_err, 1e-4) << rep.worst;
}

TEST(Linear, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(6);
    auto x = random_tensor({3, 2, 4}, rng);
    auto w = random_tensor({4, 5}, rng);
    auto b = random_tensor({5}, rng);
    auto rep = gradcheck([&] { return probe_loss(ops::linear(x, w, b)); }, {{"x", x}, {"w", w}, {"b", b}});
    EXPECT_LE(rep.max_rel_err, 1e-4) << rep.worst;
}

TEST(Softmax, ClosedFormsAndShiftInvariance) {
    auto u = ops::softmax(Tensor::full({1, 4}, 0.3), -1);
    for (double v : u.data()) EXPECT_NEAR(v, 0.25, 1e-15);
    auto s = ops::softmax(Tensor({2}, {0.0, std::log(3.0)}), 0);
    EXPECT_NEAR(s[0], 0.25, 1e-15);
    EXPECT_NEAR(s[1], 0.75, 1e-15);

    std::mt19937_64 rng(8);
    auto x = random_tensor({3, 6}, rng);
    auto shifted = ops::add_scalar(x, 0.0);
    // Adding a constant that is exactly representable after max-subtraction.
    auto y = ops::softmax(x, 1);
    auto y2 = ops::softmax(ops::add_scalar(x, 8.0), 1);
    EXPECT_LE(max_abs_diff(y, y2), 1e-15);
    EXPECT_TRUE(bitwise_equal(ops::softmax(shifted, 1), y));
}

TEST(Softmax, RowsSumToOneAlongAnyAxis) {
    std::mt19937_64 rng(9);
    auto x = random_tensor({3, 5, 4}, rng, -20, 20);
    for (Index axis : {0, 1, 2}) {
        auto y = ops::softmax(x, axis);
        const Shape& s = x.shape();
        Index outer = 1, inner = 1;
        for (Index d = 0; d < axis; ++d) outer *= s[d];
        for (Index d = axis + 1; d < 3; ++d) inner *= s[d];
        for (Index o = 0; o < outer; ++o)
            for (Index i = 0; i < inner; ++i) {
                double total = 0;
                for (Index j = 0; j < s[axis]; ++j) total += y[(o * s[axis] + j) * inner + i];
                EXPECT_NEAR(total, 1.0, 1e-12);
            }
    }
    auto rep = gradcheck([&] { return probe_loss(ops::softmax(ops::scale(x, 0.1), 1)); }, {{"x", x}});
    EXPECT_LE(rep.max_rel_err, 1e-4) << rep.worst;
}

TEST(LayerNorm, ConstantVectorNormalizesToZero) {
    auto y = ops::layer_norm(Tensor::full({2, 5}, 3.7), Tensor::full({5}, 1.0), Tensor::zeros({5}));
    for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, MomentsAndGradient) {
    std::mt19937_64 rng(10);
    auto x = random_tensor({6, 8}, rng, -3, 3);
    auto gamma = random_tensor({8}, rng, 0.5, 2.0);
    auto beta = Tensor::zeros({8});
    auto y = ops::layer_norm(x, Tensor::full({8}, 1.0), beta);
    for (Index r = 0; r < 6; ++r) {
        double mu = 0, var = 0;
        for (Index j = 0; j < 8; ++j) mu += y[r * 8 + j];
        mu /= 8;
        for (Index j = 0; j < 8; ++j) var += (y[r * 8 + j] - mu) * (y[r * 8 + j] - mu);
        EXPECT_LE(std::abs(mu), 1e-10);
        EXPECT_NEAR(var / 8, 1.0, 1e-4);  // eps = 1e-5 shrinks the variance slightly
    }
    auto b2 = random_tensor({8}, rng);
    auto rep = gradcheck([&] { return probe_loss(ops::layer_norm(x, gamma, b2)); }, {{"x", x}, {"gamma", gamma}, {"beta", b2}});
    EXPECT_LE(rep.max_rel_err, 1e-4) << rep.worst;
}

TEST(Gelu, ValuesAndGradient) {
    auto y = ops::gelu(Tensor({3}, {0.0, 10.0, -10.0}));
    EXPECT_EQ(y[0], 0.0);
    EXPECT_NEAR(y[1], 10.0, 1e-6);
    EXPECT_NEAR(y[2], 0.0, 1e-6);
    // Exact erf form, not the tanh approximation: gelu(1) = Phi(1).
    EXPECT_NEAR(ops::gelu(Tensor({1}, {1.0})).item(), 0.8413447460685429, 1e-15);
    std::mt19937_64 rng(12);
    auto x = random_tensor({10}, rng, -3, 3);
    auto rep = gradcheck([&] { return probe_loss(ops::gelu(x)); }, {{"x", x}});
    EXPECT_LE(rep.max_rel_err, 1e-4) << rep.worst;
}

TEST(BilinearSample, NodeAndMidpointValues) {
    // 1 channel, 2x2 map [[0,1],[2,3]]; with 2 cells per axis the centers sit at -0.5 and +0.5.
    Tensor feat({1, 2, 2}, {0, 1, 2, 3});
    auto at_nodes = ops::bilinear_sample_single(feat, Tensor({4, 2}, {-0.5, -0.5, -0.5, 0.5, 0.5, -0.5, 0.5, 0.5}));
    EXPECT_EQ(at_nodes[0], 0.0);
    EXPECT_EQ(at_nodes[1], 1.0);
    EXPECT_EQ(at_nodes[2], 2.0);
    EXPECT_EQ(at_nodes[3], 3.0);
    auto mid = ops::bilinear_sample_single(feat, Tensor({1, 2}, {-0.5, 0.0}));
    EXPECT_EQ(mid[0], 0.5);
    // Far outside clamps to the border cell.
    auto clamped = ops::bilinear_sample_single(feat, Tensor({1, 2}, {5.0, 5.0}));
    EXPECT_EQ(clamped[0], 3.0);
}

TEST(BilinearSample, GradientWrtFeaturesAndPoints) {
    std::mt19937_64 rng(13);
    auto feat = random_tensor({2, 3, 5, 6}, rng);
    auto pts = random_tensor({2, 7, 2}, rng, -0.95, 0.95);
    auto rep = gradcheck([&] { return probe_loss(ops::bilinear_sample(feat, pts)); }, {{"feat", feat}});
    EXPECT_LE(rep.max_rel_err, 1e-4) << rep.worst;
    auto rep_pts = gradcheck([&] { return probe_loss(ops::bilinear_sample(feat, pts)); }, {{"points", pts}});
    EXPECT_LE(rep_pts.max_rel_err, 1e-3) << rep_pts.worst;
}

TEST(PixelShuffle, LayoutAndInverse) {
    auto one = Tensor({1, 4, 1, 1}, {1, 2, 3, 4});
    EXPECT_TRUE(bitwise_equal(ops::pixel_shuffle(one, 1), one));
    auto s = ops::pixel_shuffle(one, 2);
    EXPECT_EQ(s.shape(), (Shape{1, 1, 2, 2}));
    EXPECT_EQ(std::vector<double>(s.data().begin(), s.data().end()), (std::vector<double>{1, 2, 3, 4}));
    std::mt19937_64 rng(14);
    auto x = random_tensor({2, 12, 3, 5}, rng);
    EXPECT_TRUE(bitwise_equal(ops::pixel_unshuffle(ops::pixel_shuffle(x, 2), 2), x));
    EXPECT_THROW(ops::pixel_shuffle(Tensor({1, 3, 2, 2}), 2), ShapeError);
}

TEST(Layout, PermuteRollConcatSliceGradients) {
    std::mt19937_64 rng(15);
    auto x = random_tensor({2, 3, 4}, rng);
    auto y = random_tensor({2, 2, 4}, rng);
    auto rep = gradcheck(
        [&] {
            auto p = ops::permute(x, {2, 0, 1});
            auto r = ops::roll(p, {{0, 1}, {2, -2}});
            auto c = ops::concat({ops::permute(r, {1, 2, 0}), y}, 1);
            return probe_loss(ops::slice(c, 1, 1, 3));
        },
        {{"x", x}, {"y", y}});
    EXPECT_LE(rep.max_rel_err, 1e-4) << rep.worst;
    EXPECT_TRUE(bitwise_equal(ops::roll(ops::roll(x, {{1, 2}, {2, 3}}), {{1, -2}, {2, -3}}), x));
}

TEST(Backward, ClosedForms) {
    Tensor x({2}, {1.0, 2.0});
    x.set_requires_grad(true);
    {
        Tape tape;
        tape.backward(ops::sum(x));
        EXPECT_EQ(x.grad()[0], 1.0);
        EXPECT_EQ(x.grad()[1], 1.0);
    }
    x.zero_grad();
    {
        Tape tape;
        tape.backward(ops::sum(ops::mul(x, x)));
        EXPECT_EQ(x.grad()[0], 2.0);
        EXPECT_EQ(x.grad()[1], 4.0);
    }
}

TEST(Backward, UnusedLeafGetsZerosAndSecondCallThrows) {
    Tensor x({2}, {1.0, 2.0});
    Tensor y({3}, {1.0, 2.0, 3.0});
    x.set_requires_grad(true);
    y.set_requires_grad(true);
    Tape tape;
    auto loss = ops::add(ops::sum(x), ops::scale(ops::sum(y), 0.0));
    tape.backward(loss);
    const Tensor gy = y.grad();
    EXPECT_EQ(gy.shape(), y.shape());
    for (double v : gy.data()) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(tape.backward(loss), std::logic_error);
    tape.reset();
    EXPECT_EQ(tape.size(), 0u);
}

TEST(Backward, RequiresScalarLoss) {
    Tensor x({2}, {1.0, 2.0});
    x.set_requires_grad(true);
    Tape tape;
    auto y = ops::scale(x, 2.0);
    EXPECT_THROW(tape.backward(y), ShapeError);
}

TEST(Backward, DeterministicGradients) {
    std::mt19937_64 rng(16);
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({4, 5}, rng);
    a.set_requires_grad(true);
    std::vector<double> first;
    for (int run = 0; run < 2; ++run) {
        a.zero_grad();
        Tape tape;
        tape.backward(ops::sum(ops::gelu(ops::matmul(a, b))));
        auto g = a.grad();
        if (run == 0) {
            first.assign(g.data().begin(), g.data().end());
        } else {
            EXPECT_EQ(first, std::vector<double>(g.data().begin(), g.data().end()));
        }
    }
}

TEST(Losses, CharbonnierAndL1Gradients) {
    std::mt19937_64 rng(17);
    auto a = random_tensor({4, 4}, rng);
    auto b = random_tensor({4, 4}, rng);
    EXPECT_NEAR(ops::charbonnier(a, a, 1e-3).item(), 1e-3, 1e-18);
    EXPECT_EQ(ops::charbonnier(Tensor({1}, {1.0}), Tensor({1}, {0.0}), 0.0).item(), 1.0);
    auto rep = gradcheck([&] { return ops::charbonnier(a, b, 1e-3); }, {{"a", a}, {"b", b}});
    EXPECT_LE(rep.max_rel_err, 1e-4) << rep.worst;
    auto rep2 = gradcheck([&] { return ops::l1(a, b); }, {{"a", a}, {"b", b}});
    EXPECT_LE(rep2.max_rel_err, 1e-4) << rep2.worst;
}

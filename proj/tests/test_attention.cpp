#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "sdaut/attention.hpp"
#include "sdaut/autodiff.hpp"
#include "sdaut/ops.hpp"
#include "support/gradcheck.hpp"
#include "support/window_attention_oracle.hpp"

using namespace sdaut;
namespace st = sdaut::testing;
using st::random_tensor;

namespace {

AttentionParams random_params(const AttentionConfig& cfg, const WindowGeometry& geo, std::uint64_t seed,
                              double offset_gain) {
    std::mt19937_64 rng(seed);
    auto p = AttentionParams::init(cfg, geo, rng);
    const Index c = cfg.channels;
    p.wq = random_tensor({c, c}, rng, -0.5, 0.5);
    p.wk = random_tensor({c, c}, rng, -0.5, 0.5);
    p.wv = random_tensor({c, c}, rng, -0.5, 0.5);
    p.wo = random_tensor({c, c}, rng, -0.5, 0.5);
    p.bq = random_tensor({c}, rng, -0.1, 0.1);
    p.bv = random_tensor({c}, rng, -0.1, 0.1);
    p.bo = random_tensor({c}, rng, -0.1, 0.1);
    if (cfg.offsets && offset_gain != 0.0) {
        p.offset_pw = random_tensor({2, c, 1, 1}, rng, -offset_gain, offset_gain);
        p.offset_pw_bias = random_tensor({2}, rng, -0.1, 0.1);
    }
    return p;
}

st::PlainAttentionWeights oracle_weights(const AttentionParams& p, const Tensor* table) {
    return {&p.wq, &p.bq, &p.wk, &p.wv, &p.bv, &p.wo, &p.bo, table};
}

}  // namespace

TEST(WindowLayout, PartitionReverseRoundTrip) {
    std::mt19937_64 rng(1);
    for (Index n : {8, 16, 64}) {
        auto x = random_tensor({n, n, 3}, rng);
        auto wins = window_partition(x, 8, 8);
        EXPECT_EQ(wins.dim(0), (n / 8) * (n / 8));
        EXPECT_TRUE(bitwise_equal(window_reverse(wins, n, n), x));
    }
    auto big = Tensor::zeros({256, 256, 1});
    EXPECT_EQ(window_partition(big, 8, 8).dim(0), 1024);
}

TEST(WindowLayout, SingleWindowAndContent) {
    std::mt19937_64 rng(2);
    auto x = random_tensor({8, 8, 2}, rng);
    auto wins = window_partition(x, 8, 8);
    EXPECT_EQ(wins.shape(), (Shape{1, 8, 8, 2}));
    for (Index i = 0; i < x.numel(); ++i) EXPECT_EQ(wins[i], x[i]);
    // Second window of a 4x8 map split 4x4 starts at column 4.
    auto y = random_tensor({4, 8, 1}, rng);
    auto w2 = window_partition(y, 4, 4);
    EXPECT_EQ(w2[16], y[4]);
    EXPECT_EQ(w2[16 + 5], y[1 * 8 + 5]);
}

TEST(WindowLayout, Errors) {
    EXPECT_THROW(window_partition(Tensor::zeros({10, 8, 1}), 4, 4), ShapeError);
    EXPECT_THROW(window_reverse(Tensor::zeros({3, 4, 4, 1}), 8, 8), ShapeError);
}

TEST(CyclicShift, IdentityAndInverse) {
    std::mt19937_64 rng(3);
    auto x = random_tensor({8, 12, 2}, rng);
    EXPECT_TRUE(bitwise_equal(cyclic_shift(x, 0, 0), x));
    EXPECT_TRUE(bitwise_equal(cyclic_shift(x, 8, 12), x));
    EXPECT_TRUE(bitwise_equal(cyclic_shift(cyclic_shift(x, 3, -5), -3, 5), x));
    auto s = cyclic_shift(x, 1, 0);
    EXPECT_EQ(s[(1 * 12 + 0) * 2], x[0]);
}

TEST(ReferencePoints, CellCentres) {
    auto p = reference_points(2, 1);
    ASSERT_EQ(p.shape(), (Shape{4, 2}));
    const double expect[] = {-0.5, -0.5, -0.5, 0.5, 0.5, -0.5, 0.5, 0.5};
    for (int i = 0; i < 8; ++i) EXPECT_EQ(p[i], expect[i]);
    auto one = reference_points(4, 4);
    ASSERT_EQ(one.shape(), (Shape{1, 2}));
    EXPECT_EQ(one[0], 0.0);
    EXPECT_EQ(one[1], 0.0);
    EXPECT_EQ(reference_points(8, 2).dim(0), 16);
}

TEST(ReferencePoints, PixelGridSamplesExactNodes) {
    // r = 1 reference points must hit grid nodes exactly.
    std::mt19937_64 rng(4);
    auto feat = random_tensor({3, 8, 8}, rng);
    auto pts = reference_points(8, 1);
    auto s = ops::bilinear_sample_single(feat, pts);
    for (Index c = 0; c < 3; ++c)
        for (Index i = 0; i < 64; ++i) EXPECT_EQ(s[c * 64 + i], feat[c * 64 + i]);
}

TEST(Offsets, ZeroInitGivesExactlyZero) {
    AttentionConfig cfg{8, 2, 4, 1, true, false, false};
    auto geo = resolve_window(cfg, 8, 8);
    std::mt19937_64 rng(5);
    auto params = AttentionParams::init(cfg, geo, rng);
    auto qwin = random_tensor({4, 8, 4, 4}, rng);
    auto off = offset_forward(params, qwin, 1, geo.offset_scale());
    EXPECT_EQ(off.shape(), (Shape{4, 16, 2}));
    for (double v : off.data()) EXPECT_EQ(v, 0.0);
}

TEST(Offsets, BoundedByScale) {
    AttentionConfig cfg{4, 2, 8, 2, true, false, false};
    auto geo = resolve_window(cfg, 8, 8);
    auto params = random_params(cfg, geo, 6, 50.0);
    std::mt19937_64 rng(7);
    auto qwin = random_tensor({1, 4, 8, 8}, rng, -10, 10);
    auto off = offset_forward(params, qwin, 2, geo.offset_scale());
    double mx = 0;
    for (double v : off.data()) mx = std::max(mx, std::abs(v));
    EXPECT_LE(mx, 4.0);
    EXPECT_GT(mx, 3.0);  // saturated, so the bound is actually exercised
}

TEST(Offsets, GradientReachesOffsetNet) {
    AttentionConfig cfg{4, 2, 4, 1, true, false, false};
    auto geo = resolve_window(cfg, 8, 8);
    auto params = random_params(cfg, geo, 8, 0.5);
    std::mt19937_64 rng(9);
    auto x = random_tensor({8, 8, 4}, rng);
    auto probe = st::weighted_sum_probe({8, 8, 4});
    auto loss = [&] { return ops::sum(ops::mul(sdmsa_forward(cfg, params, x), probe)); };
    auto report = st::gradcheck(
        loss, {{"offset_dw", params.offset_dw}, {"offset_pw", params.offset_pw}, {"offset_pw_bias", params.offset_pw_bias}},
        12);
    EXPECT_LE(report.max_rel_err, 1e-3) << report.worst;

    params.offset_dw.set_requires_grad(true);
    Tape tape;
    tape.backward(loss());
    double norm = 0;
    for (double g : params.offset_dw.grad().data()) norm += g * g;
    EXPECT_GT(norm, 0.0);
}

TEST(Sdmsa, ZeroOffsetMatchesPlainWindowAttention) {
    struct Case {
        Index h, w, c, heads, ws;
    };
    const Case cases[] = {{8, 8, 4, 2, 4}, {16, 16, 6, 3, 8}, {8, 16, 8, 2, 4}, {16, 8, 4, 1, 8}, {32, 32, 8, 4, 8}};
    std::uint64_t seed = 10;
    for (const auto& k : cases) {
        AttentionConfig cfg{k.c, k.heads, k.ws, 1, true, false, false};
        auto geo = resolve_window(cfg, k.h, k.w);
        auto params = random_params(cfg, geo, seed++, 0.0);
        params.bias_table = Tensor::zeros(params.bias_table.shape());
        std::mt19937_64 rng(seed++);
        auto x = random_tensor({k.h, k.w, k.c}, rng);
        auto ours = sdmsa_forward(cfg, params, x);
        auto oracle = st::plain_window_attention(x, k.heads, k.ws, 0, oracle_weights(params, nullptr));
        EXPECT_LE(max_abs_diff(ours, oracle), 1e-10) << k.h << "x" << k.w << " ws=" << k.ws;
    }
}

TEST(Sdmsa, ShiftedWithIntegerBiasMatchesOracle) {
    AttentionConfig cfg{6, 2, 4, 1, false, false, true};
    auto geo = resolve_window(cfg, 16, 16);
    EXPECT_EQ(geo.shift, 2);
    auto params = random_params(cfg, geo, 20, 0.0);
    params.bias_table = [] {
        std::mt19937_64 rng(21);
        return random_tensor({2, 7, 7}, rng);
    }();
    std::mt19937_64 rng(22);
    auto x = random_tensor({16, 16, 6}, rng);
    auto oracle = st::plain_window_attention(x, 2, 4, 2, oracle_weights(params, &params.bias_table));
    EXPECT_LE(max_abs_diff(sdmsa_forward(cfg, params, x), oracle), 1e-10);
}

TEST(Sdmsa, DenseEqualsSingleWindowBitwise) {
    AttentionConfig sparse{8, 2, 8, 1, true, false, false};
    AttentionConfig dense{8, 2, 8, 1, true, true, false};
    auto geo = resolve_window(sparse, 8, 8);
    auto params = random_params(sparse, geo, 30, 0.7);
    std::mt19937_64 rng(31);
    auto x = random_tensor({8, 8, 8}, rng);
    EXPECT_TRUE(bitwise_equal(sdmsa_forward(sparse, params, x), sdmsa_forward(dense, params, x)));
}

TEST(Sdmsa, QueryAndKeyCounts) {
    AttentionConfig cfg{12, 6, 8, 1, true, false, false};
    auto geo = resolve_window(cfg, 16, 16);
    EXPECT_EQ(geo.queries(), 64);
    EXPECT_EQ(geo.keys(), 64);
    auto params = random_params(cfg, geo, 40, 0.3);
    std::mt19937_64 rng(41);
    DeformCapture cap;
    auto y = sdmsa_forward(cfg, params, random_tensor({16, 16, 12}, rng), &cap);
    EXPECT_EQ(y.shape(), (Shape{16, 16, 12}));
    EXPECT_EQ(cap.attention.shape(), (Shape{4 * 6, 64, 64}));

    AttentionConfig coarse{12, 6, 8, 2, true, false, false};
    EXPECT_EQ(resolve_window(coarse, 16, 16).keys(), 16);
}

TEST(Sdmsa, AttentionRowsSumToOneAndCaptureIsConsistent) {
    AttentionConfig cfg{8, 2, 8, 2, true, false, true};
    auto geo = resolve_window(cfg, 16, 16);
    auto params = random_params(cfg, geo, 50, 2.0);
    std::mt19937_64 rng(51);
    DeformCapture cap;
    sdmsa_forward(cfg, params, random_tensor({16, 16, 8}, rng), &cap);
    const Index rows = cap.attention.dim(0) * cap.attention.dim(1), cols = cap.attention.dim(2);
    for (Index r = 0; r < rows; ++r) {
        double s = 0;
        for (Index c = 0; c < cols; ++c) s += cap.attention[r * cols + c];
        ASSERT_NEAR(s, 1.0, 1e-10);
    }
    const Index nw = cap.offsets.dim(0), np = cap.offsets.dim(1);
    double mx = 0;
    for (Index w = 0; w < nw; ++w)
        for (Index i = 0; i < np * 2; ++i) {
            EXPECT_EQ(cap.deformed[w * np * 2 + i], cap.reference[i] + cap.offsets[w * np * 2 + i]);
            mx = std::max(mx, std::abs(cap.offsets[w * np * 2 + i]));
        }
    EXPECT_GT(mx, 0.0);
    EXPECT_LE(mx, geo.offset_scale());
}

TEST(Sdmsa, ShapePreservationAcrossConfigs) {
    std::mt19937_64 rng(60);
    for (bool dense : {false, true})
        for (Index r : {1, 2})
            for (bool off : {false, true}) {
                AttentionConfig cfg{4, 2, 4, r, off, dense, !dense};
                auto geo = resolve_window(cfg, 8, 16);
                auto params = random_params(cfg, geo, 61, 0.5);
                auto x = random_tensor({8, 16, 4}, rng);
                EXPECT_EQ(sdmsa_forward(cfg, params, x).shape(), x.shape());
            }
}

TEST(Sdmsa, DivisibilityErrors) {
    AttentionConfig cfg{4, 2, 4, 1, true, false, false};
    EXPECT_THROW(resolve_window(cfg, 10, 8), ShapeError);
    AttentionConfig bad_heads{6, 4, 4, 1, true, false, false};
    EXPECT_THROW(bad_heads.validate(), std::invalid_argument);
    AttentionConfig bad_r{4, 2, 6, 4, true, false, false};
    EXPECT_THROW(bad_r.validate(), std::invalid_argument);
    // Windows larger than the map collapse to the map extent, unshifted.
    AttentionConfig big{4, 2, 8, 1, true, false, true};
    auto geo = resolve_window(big, 4, 4);
    EXPECT_EQ(geo.height, 4);
    EXPECT_EQ(geo.shift, 0);
}

TEST(Sdmsa, GradientCheckAllParams) {
    for (bool dense : {false, true}) {
        AttentionConfig cfg{4, 2, 4, 2, true, dense, !dense};
        auto geo = resolve_window(cfg, 8, 8);
        auto params = random_params(cfg, geo, 70, 0.8);
        std::mt19937_64 rng(71);
        params.bias_table = random_tensor(params.bias_table.shape(), rng, -0.5, 0.5);
        auto x = random_tensor({8, 8, 4}, rng);
        auto probe = st::weighted_sum_probe({8, 8, 4});
        auto loss = [&] { return ops::sum(ops::mul(sdmsa_forward(cfg, params, x), probe)); };
        ParamList named;
        params.collect("", named);
        named.emplace_back("x", x);
        auto report = st::gradcheck(loss, named, 24);
        EXPECT_LE(report.max_rel_err, 1e-3) << (dense ? "dense " : "sparse ") << report.worst;
    }
}

TEST(RelativeBias, ZeroTableAndNodeLookup) {
    std::mt19937_64 rng(80);
    auto q = reference_points_pixels(4, 4, 1);
    auto k = Tensor({1, 16, 2}, std::vector<double>(q.data().begin(), q.data().end()));
    auto zero = relative_bias(Tensor::zeros({2, 7, 7}), q, k);
    for (double v : zero.data()) EXPECT_EQ(v, 0.0);

    auto table = random_tensor({2, 7, 7}, rng);
    auto b = relative_bias(table, q, k);
    for (Index h = 0; h < 2; ++h)
        for (Index qi = 0; qi < 16; ++qi)
            for (Index ki = 0; ki < 16; ++ki) {
                const Index ty = ki / 4 - qi / 4 + 3, tx = ki % 4 - qi % 4 + 3;
                EXPECT_EQ(b[(h * 16 + qi) * 16 + ki], table[(h * 7 + ty) * 7 + tx]);
            }
}

TEST(RelativeBias, TranslationInvariance) {
    std::mt19937_64 rng(81);
    auto table = random_tensor({3, 15, 15}, rng);
    auto q = random_tensor({5, 2}, rng, 1.0, 4.0);
    auto k = random_tensor({2, 6, 2}, rng, 1.0, 4.0);
    auto shift = [](const Tensor& t, double dy, double dx) {
        std::vector<double> v(t.data().begin(), t.data().end());
        for (std::size_t i = 0; i < v.size(); i += 2) {
            v[i] += dy;
            v[i + 1] += dx;
        }
        return Tensor(t.shape(), std::move(v));
    };
    auto a = relative_bias(table, q, k);
    auto b = relative_bias(table, shift(q, 1.25, -0.5), shift(k, 1.25, -0.5));
    EXPECT_LE(max_abs_diff(a, b), 1e-12);
}

TEST(RelativeBias, GradientCheck) {
    std::mt19937_64 rng(82);
    auto table = random_tensor({2, 7, 7}, rng);
    auto q = random_tensor({5, 2}, rng, 0.1, 2.9);
    auto k = random_tensor({3, 4, 2}, rng, 0.1, 2.9);
    auto probe = st::weighted_sum_probe({6, 5, 4});
    auto report = st::gradcheck([&] { return ops::sum(ops::mul(relative_bias(table, q, k), probe)); },
                                     {{"table", table}, {"q", q}, {"k", k}});
    EXPECT_LE(report.max_rel_err, 1e-4) << report.worst;
}

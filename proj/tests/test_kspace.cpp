#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "sdaut/kspace.hpp"
#include "support/gradcheck.hpp"

using namespace sdaut;
using namespace sdaut::kspace;

namespace {

ComplexGrid random_grid(Index h, Index w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-1, 1);
    ComplexGrid g(h, w);
    for (auto& v : g.re) v = d(rng);
    for (auto& v : g.im) v = d(rng);
    return g;
}

// O(N^2) DFT with the same centering and scaling, used as an oracle.
ComplexGrid naive_centered_dft(const ComplexGrid& x) {
    const Index h = x.height, w = x.width;
    ComplexGrid out(h, w);
    const double norm = 1.0 / std::sqrt(static_cast<double>(h * w));
    for (Index u = 0; u < h; ++u)
        for (Index v = 0; v < w; ++v) {
            double re = 0, im = 0;
            for (Index r = 0; r < h; ++r)
                for (Index c = 0; c < w; ++c) {
                    // Centered indices: frequency (u - h/2), position (r - h/2).
                    const double ang = -2.0 * M_PI *
                                       (static_cast<double>((u - h / 2) * (r - h / 2)) / h +
                                        static_cast<double>((v - w / 2) * (c - w / 2)) / w);
                    const double xr = x.re[r * w + c], xi = x.im[r * w + c];
                    re += xr * std::cos(ang) - xi * std::sin(ang);
                    im += xr * std::sin(ang) + xi * std::cos(ang);
                }
            out.re[u * w + v] = re * norm;
            out.im[u * w + v] = im * norm;
        }
    return out;
}

double energy(const ComplexGrid& g) {
    double e = 0;
    for (std::size_t i = 0; i < g.re.size(); ++i) e += g.re[i] * g.re[i] + g.im[i] * g.im[i];
    return e;
}

}  // namespace

TEST(Fft, MatchesNaiveCenteredDft) {
    auto x = random_grid(8, 16, 1);
    auto fast = fft2d(x);
    auto slow = naive_centered_dft(x);
    for (std::size_t i = 0; i < fast.re.size(); ++i) {
        EXPECT_NEAR(fast.re[i], slow.re[i], 1e-12);
        EXPECT_NEAR(fast.im[i], slow.im[i], 1e-12);
    }
}

TEST(Fft, RoundTripAndParseval) {
    for (Index n : {4, 64, 256}) {
        auto x = random_grid(n, n, static_cast<std::uint64_t>(n));
        auto k = fft2d(x);
        auto back = ifft2d(k);
        double err = 0;
        for (std::size_t i = 0; i < x.re.size(); ++i) {
            err = std::max({err, std::abs(back.re[i] - x.re[i]), std::abs(back.im[i] - x.im[i])});
        }
        EXPECT_LE(err, 1e-10);
        EXPECT_LE(std::abs(energy(x) - energy(k)) / energy(x), 1e-10);
    }
}

TEST(Fft, ConstantImageIsCenteredDc) {
    ComplexGrid one(4, 4);
    std::fill(one.re.begin(), one.re.end(), 1.0);
    auto k = fft2d(one);
    for (Index r = 0; r < 4; ++r)
        for (Index c = 0; c < 4; ++c) {
            const double mag = std::hypot(k.re[r * 4 + c], k.im[r * 4 + c]);
            if (r == 2 && c == 2) {
                EXPECT_NEAR(mag, 4.0, 1e-14);
            } else {
                EXPECT_NEAR(mag, 0.0, 1e-14);
            }
        }
}

TEST(Fft, RejectsNonPowerOfTwo) { EXPECT_THROW(fft2d(ComplexGrid(6, 8)), ShapeError); }

TEST(Gaussian1dMask, ExactColumnCountAndColumnConstancy) {
    auto m = gaussian1d_mask(256, 256, 0.30, 0.08, 42);
    Index cols = 0;
    for (Index c = 0; c < 256; ++c) {
        const bool kept = m.at(0, c);
        cols += kept;
        for (Index r = 1; r < 256; ++r) ASSERT_EQ(m.at(r, c), kept);
    }
    EXPECT_EQ(cols, 77);
    // round(0.08 * 256) = 20 central columns always present.
    for (Index c = 128 - 10; c < 128 + 10; ++c) EXPECT_TRUE(m.at(0, c));
}

TEST(Gaussian1dMask, FullRatioAndErrors) {
    auto m = gaussian1d_mask(8, 16, 1.0, 0.5, 3);
    EXPECT_EQ(m.kept_count(), 8 * 16);
    EXPECT_THROW(gaussian1d_mask(8, 16, 0.0, 0.0, 1), std::invalid_argument);
    EXPECT_THROW(gaussian1d_mask(8, 16, 1.5, 0.1, 1), std::invalid_argument);
    EXPECT_THROW(gaussian1d_mask(8, 16, 0.3, 0.4, 1), std::invalid_argument);
}

TEST(Gaussian1dMask, SeedDeterminismAndDiversity) {
    EXPECT_EQ(gaussian1d_mask(64, 64, 0.3, 0.08, 5).kept, gaussian1d_mask(64, 64, 0.3, 0.08, 5).kept);
    std::set<std::vector<std::uint8_t>> distinct;
    for (std::uint64_t s = 0; s < 20; ++s) distinct.insert(gaussian1d_mask(64, 64, 0.3, 0.08, s).kept);
    EXPECT_EQ(distinct.size(), 20u);
}

TEST(RadialMask, SingleSpokeIsLineThroughCenter) {
    auto m = radial_mask(64, 64, 0.01, 0);
    // One horizontal spoke through row 32.
    for (Index r = 0; r < 64; ++r)
        for (Index c = 0; c < 64; ++c) EXPECT_EQ(m.at(r, c), r == 32 && c >= 1);
    EXPECT_GE(m.achieved_ratio(), 0.01);
}

TEST(RadialMask, AchievedRatioWithinBand) {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> ratio_dist(0.02, 0.5);
    const Index sizes[] = {32, 64, 128};
    for (int trial = 0; trial < 20; ++trial) {
        const double ratio = ratio_dist(rng);
        const Index n = sizes[trial % 3];
        auto m = radial_mask(n, n, ratio, static_cast<std::uint64_t>(trial));
        Index counted = 0;
        for (auto v : m.kept) counted += v;
        const double achieved = static_cast<double>(counted) / static_cast<double>(n * n);
        EXPECT_GE(achieved, ratio);
        EXPECT_LE(achieved, ratio + 2.0 / static_cast<double>(n));
    }
}

TEST(RadialMask, PointSymmetricForEvenSpokeCounts) {
    for (int spokes : {2, 4, 10}) {
        auto m = radial_mask_spokes(64, 64, spokes, 17.0);
        // Oracle: rasterize each half-spoke independently in both directions.
        std::vector<std::uint8_t> expect(64 * 64, 0);
        double angle = 17.0;
        for (int s = 0; s < spokes; ++s) {
            for (auto [r, c] : rasterize_half_spoke(64, 64, angle)) {
                expect[r * 64 + c] = 1;
                expect[(64 - r) * 64 + (64 - c)] = 1;
            }
            angle = std::fmod(angle + kGoldenAngleDegrees, 180.0);
        }
        EXPECT_EQ(m.kept, expect);
        for (Index r = 1; r < 64; ++r)
            for (Index c = 1; c < 64; ++c) EXPECT_EQ(m.at(r, c), m.at(64 - r, 64 - c));
    }
}

TEST(Undersample, FullMaskIsIdentityAndZeroStaysZero) {
    std::mt19937_64 rng(4);
    auto x = sdaut::testing::random_tensor({1, 32, 32}, rng, 0.0, 1.0);
    auto full = gaussian1d_mask(32, 32, 1.0, 0.5, 0);
    EXPECT_LE(max_abs_diff(undersample(x, full), x), 1e-8);
    auto zero = undersample(Tensor({1, 32, 32}), gaussian1d_mask(32, 32, 0.3, 0.08, 1));
    for (double v : zero.data()) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(undersample(Tensor({1, 16, 32}), full), ShapeError);
}

TEST(Undersample, MaskingNeverAddsEnergy) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(seed);
        auto x = sdaut::testing::random_tensor({1, 64, 64}, rng, 0.0, 1.0);
        auto xu = undersample(x, radial_mask(64, 64, 0.1, seed));
        double ex = 0, eu = 0;
        for (Index i = 0; i < x.numel(); ++i) {
            ex += x[i] * x[i];
            eu += xu[i] * xu[i];
        }
        EXPECT_LE(eu, ex + 1e-8);
    }
}

TEST(Mask, TensorRoundTrip) {
    auto m = radial_mask(32, 32, 0.2, 9);
    auto back = Mask::from_tensor(m.to_tensor());
    EXPECT_EQ(back.kept, m.kept);
}

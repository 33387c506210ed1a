#include "sdaut/kspace.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace sdaut::kspace {

namespace {

bool is_pow2(Index n) { return n > 0 && (n & (n - 1)) == 0; }

void require_pow2(Index h, Index w) {
    if (!is_pow2(h) || !is_pow2(w)) {
        throw ShapeError("fft2d requires power-of-two extents, got " + std::to_string(h) + "x" + std::to_string(w));
    }
}

// In-place iterative radix-2 transform over `n` elements spaced `stride` apart.
void fft1d(double* re, double* im, Index n, Index stride, bool inverse) {
    for (Index i = 1, j = 0; i < n; ++i) {
        Index bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) {
            std::swap(re[i * stride], re[j * stride]);
            std::swap(im[i * stride], im[j * stride]);
        }
    }
    const double sign = inverse ? 1.0 : -1.0;
    for (Index len = 2; len <= n; len <<= 1) {
        const double ang = sign * 2.0 * std::numbers::pi / static_cast<double>(len);
        const Index half = len / 2;
        for (Index k = 0; k < half; ++k) {
            const double wr = std::cos(ang * static_cast<double>(k));
            const double wi = std::sin(ang * static_cast<double>(k));
            for (Index s = 0; s < n; s += len) {
                const Index a = (s + k) * stride;
                const Index b = (s + k + half) * stride;
                const double tr = re[b] * wr - im[b] * wi;
                const double ti = re[b] * wi + im[b] * wr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
    }
}

// Swaps quadrants; for even extents fftshift and ifftshift coincide.
ComplexGrid shift_half(const ComplexGrid& g) {
    ComplexGrid out(g.height, g.width);
    const Index hh = g.height / 2, hw = g.width / 2;
    for (Index r = 0; r < g.height; ++r) {
        for (Index c = 0; c < g.width; ++c) {
            const Index dst = ((r + hh) % g.height) * g.width + (c + hw) % g.width;
            out.re[dst] = g.re[r * g.width + c];
            out.im[dst] = g.im[r * g.width + c];
        }
    }
    return out;
}

ComplexGrid transform(const ComplexGrid& in, bool inverse) {
    require_pow2(in.height, in.width);
    ComplexGrid g = in.height == 1 && in.width == 1 ? in : shift_half(in);
    for (Index r = 0; r < g.height; ++r) fft1d(&g.re[r * g.width], &g.im[r * g.width], g.width, 1, inverse);
    for (Index c = 0; c < g.width; ++c) fft1d(&g.re[c], &g.im[c], g.height, g.width, inverse);
    const double norm = 1.0 / std::sqrt(static_cast<double>(g.height * g.width));
    for (auto& v : g.re) v *= norm;
    for (auto& v : g.im) v *= norm;
    return in.height == 1 && in.width == 1 ? g : shift_half(g);
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

void check_ratio(double ratio) {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw std::invalid_argument("mask ratio must lie in (0, 1]");
}

}  // namespace

ComplexGrid ComplexGrid::from_real(const Tensor& image) {
    const Index h = image.dim(-2), w = image.dim(-1);
    if (image.numel() != h * w) throw ShapeError("expected a single-channel image");
    ComplexGrid g(h, w);
    std::copy(image.data().begin(), image.data().end(), g.re.begin());
    return g;
}

Tensor ComplexGrid::magnitude() const {
    std::vector<double> out(re.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::hypot(re[i], im[i]);
    return Tensor({1, height, width}, std::move(out));
}

Tensor ComplexGrid::real() const { return Tensor({1, height, width}, re); }

ComplexGrid fft2d(const ComplexGrid& img) { return transform(img, false); }
ComplexGrid ifft2d(const ComplexGrid& k) { return transform(k, true); }

Index Mask::kept_count() const { return std::count(kept.begin(), kept.end(), std::uint8_t{1}); }

double Mask::achieved_ratio() const { return static_cast<double>(kept_count()) / static_cast<double>(height * width); }

Tensor Mask::to_tensor() const {
    std::vector<double> v(kept.begin(), kept.end());
    return Tensor({height, width}, std::move(v));
}

Mask Mask::from_tensor(const Tensor& t) {
    Mask m;
    m.height = t.dim(-2);
    m.width = t.dim(-1);
    if (t.numel() != m.height * m.width) throw ShapeError("mask tensor must be [H,W]");
    m.kept.reserve(static_cast<std::size_t>(t.numel()));
    for (double v : t.data()) m.kept.push_back(v > 0.5 ? 1 : 0);
    m.target_ratio = m.achieved_ratio();
    return m;
}

Mask gaussian1d_mask(Index h, Index w, double ratio, double center_fraction, std::uint64_t seed) {
    check_ratio(ratio);
    if (center_fraction < 0.0 || center_fraction >= ratio) {
        throw std::invalid_argument("center_fraction must lie in [0, ratio)");
    }
    if (h <= 0 || w <= 0) throw ShapeError("mask extents must be positive");
    const auto keep = static_cast<Index>(std::lround(ratio * static_cast<double>(w)));
    const auto center = std::min<Index>(keep, static_cast<Index>(std::lround(center_fraction * static_cast<double>(w))));

    std::vector<std::uint8_t> cols(static_cast<std::size_t>(w), 0);
    const Index start = w / 2 - center / 2;
    for (Index c = start; c < start + center; ++c) cols[c] = 1;

    const double mu = static_cast<double>(w) / 2.0;
    const double sigma = static_cast<double>(w) / 6.0;
    std::vector<double> weight(static_cast<std::size_t>(w), 0.0);
    for (Index c = 0; c < w; ++c) {
        if (cols[c]) continue;
        const double z = (static_cast<double>(c) - mu) / sigma;
        weight[c] = std::exp(-0.5 * z * z);
    }
    std::mt19937_64 rng(seed);
    for (Index drawn = center; drawn < keep; ++drawn) {
        double total = 0.0;
        for (double v : weight) total += v;
        const double u = uniform01(rng) * total;
        double acc = 0.0;
        Index pick = -1;
        for (Index c = 0; c < w; ++c) {
            if (weight[c] <= 0.0) continue;
            pick = c;
            acc += weight[c];
            if (u < acc) break;
        }
        cols[pick] = 1;
        weight[pick] = 0.0;
    }

    Mask m;
    m.height = h;
    m.width = w;
    m.kind = MaskKind::gaussian1d;
    m.target_ratio = ratio;
    m.seed = seed;
    m.kept.resize(static_cast<std::size_t>(h * w));
    for (Index r = 0; r < h; ++r) {
        for (Index c = 0; c < w; ++c) m.kept[r * w + c] = cols[c];
    }
    return m;
}

Mask gaussian1d_mask(Index h, Index w, double ratio, std::uint64_t seed) {
    return gaussian1d_mask(h, w, ratio, std::min(kDefaultCenterFraction, ratio / 2.0), seed);
}

std::vector<std::pair<Index, Index>> rasterize_half_spoke(Index h, Index w, double angle_degrees) {
    const Index cy = h / 2, cx = w / 2;
    const double theta = angle_degrees * std::numbers::pi / 180.0;
    const auto reach = static_cast<double>(std::max(h, w));
    const Index ey = cy - static_cast<Index>(std::lround(reach * std::sin(theta)));
    const Index ex = cx + static_cast<Index>(std::lround(reach * std::cos(theta)));

    // Midpoint (Bresenham) walk from the center, stopping once the cell or its
    // point reflection leaves the grid.
    std::vector<std::pair<Index, Index>> cells;
    const Index dx = std::abs(ex - cx), dy = -std::abs(ey - cy);
    const Index sx = cx < ex ? 1 : -1, sy = cy < ey ? 1 : -1;
    Index err = dx + dy;
    Index y = cy, x = cx;
    auto inside = [&](Index r, Index c) { return r >= 0 && r < h && c >= 0 && c < w; };
    while (inside(y, x) && inside(2 * cy - y, 2 * cx - x)) {
        cells.emplace_back(y, x);
        if (y == ey && x == ex) break;
        const Index e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y += sy;
        }
    }
    return cells;
}

namespace {

Index add_spoke(Mask& m, double angle) {
    Index added = 0;
    const Index cy = m.height / 2, cx = m.width / 2;
    for (auto [r, c] : rasterize_half_spoke(m.height, m.width, angle)) {
        for (auto [rr, cc] : {std::pair{r, c}, std::pair{2 * cy - r, 2 * cx - c}}) {
            auto& cell = m.kept[static_cast<std::size_t>(rr * m.width + cc)];
            if (!cell) {
                cell = 1;
                ++added;
            }
        }
    }
    return added;
}

Mask empty_radial(Index h, Index w) {
    if (h <= 1 || w <= 1) throw ShapeError("radial mask extents must exceed 1");
    Mask m;
    m.height = h;
    m.width = w;
    m.kind = MaskKind::radial;
    m.kept.assign(static_cast<std::size_t>(h * w), 0);
    return m;
}

}  // namespace

Mask radial_mask(Index h, Index w, double ratio, std::uint64_t seed) {
    check_ratio(ratio);
    Mask m = empty_radial(h, w);
    m.target_ratio = ratio;
    m.seed = seed;
    const double target = ratio * static_cast<double>(h * w);
    double angle = std::fmod(static_cast<double>(seed % 1000003) * kGoldenAngleDegrees, 180.0);
    Index count = 0;
    // Row 0 and column 0 have no point reflection on an even grid, so a full
    // mask is only reachable when it is not required.
    const Index reachable = (h - 1) * (w - 1);
    for (int spoke = 0; static_cast<double>(count) < target; ++spoke) {
        if (count >= reachable || spoke > 100000) {
            throw std::invalid_argument("radial mask cannot reach ratio " + std::to_string(ratio));
        }
        count += add_spoke(m, angle);
        angle = std::fmod(angle + kGoldenAngleDegrees, 180.0);
    }
    return m;
}

Mask radial_mask_spokes(Index h, Index w, int spokes, double first_angle_degrees) {
    Mask m = empty_radial(h, w);
    double angle = first_angle_degrees;
    for (int s = 0; s < spokes; ++s) {
        add_spoke(m, angle);
        angle = std::fmod(angle + kGoldenAngleDegrees, 180.0);
    }
    m.target_ratio = m.achieved_ratio();
    return m;
}

Tensor undersample(const Tensor& x, const Mask& mask) {
    if (x.rank() != 3 || x.dim(0) != 1) throw ShapeError("undersample expects [1,H,W], got " + to_string(x.shape()));
    if (x.dim(1) != mask.height || x.dim(2) != mask.width) {
        throw ShapeError("undersample: image " + to_string(x.shape()) + " vs mask " + std::to_string(mask.height) + "x" +
                         std::to_string(mask.width));
    }
    auto k = fft2d(ComplexGrid::from_real(x));
    for (std::size_t i = 0; i < k.re.size(); ++i) {
        if (!mask.kept[i]) {
            k.re[i] = 0.0;
            k.im[i] = 0.0;
        }
    }
    return ifft2d(k).magnitude();
}

void save_mask(const std::filesystem::path& path, const Mask& mask) { save_tensor(path, mask.to_tensor()); }

Mask load_mask(const std::filesystem::path& path) { return Mask::from_tensor(load_tensor(path)); }

}  // namespace sdaut::kspace

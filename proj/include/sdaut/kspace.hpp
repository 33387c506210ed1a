#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sdaut/tensor.hpp"

namespace sdaut::kspace {

struct ComplexGrid {
    Index height = 0;
    Index width = 0;
    std::vector<double> re;
    std::vector<double> im;

    ComplexGrid() = default;
    ComplexGrid(Index h, Index w) : height(h), width(w), re(static_cast<std::size_t>(h * w)), im(re.size()) {}
    static ComplexGrid from_real(const Tensor& image);
    Tensor magnitude() const;
    Tensor real() const;
};

/// Centered unitary 2D DFT: DC sits at (H/2, W/2) and both directions scale
/// by 1/sqrt(HW). Extents must be powers of two.
ComplexGrid fft2d(const ComplexGrid& img);
ComplexGrid ifft2d(const ComplexGrid& k);

enum class MaskKind { gaussian1d, radial };

struct Mask {
    Index height = 0;
    Index width = 0;
    std::vector<std::uint8_t> kept;  // row-major, 1 = sampled
    MaskKind kind = MaskKind::gaussian1d;
    double target_ratio = 1.0;
    std::uint64_t seed = 0;

    Index kept_count() const;
    double achieved_ratio() const;
    bool at(Index r, Index c) const { return kept[static_cast<std::size_t>(r * width + c)] != 0; }
    Tensor to_tensor() const;
    static Mask from_tensor(const Tensor& t);
};

constexpr double kDefaultCenterFraction = 0.08;
constexpr double kGoldenAngleDegrees = 111.246;

/// Keeps exactly round(ratio*w) whole columns: the round(center_fraction*w)
/// central ones, plus columns drawn without replacement with probability
/// proportional to a Gaussian centered at w/2 with sigma w/6.
Mask gaussian1d_mask(Index h, Index w, double ratio, double center_fraction, std::uint64_t seed);
Mask gaussian1d_mask(Index h, Index w, double ratio, std::uint64_t seed);

/// Golden-angle spokes through the center, each a rasterized half-line plus
/// its point reflection. Spokes are added until the kept count first reaches
/// ratio*H*W. The seed only rotates the first spoke.
Mask radial_mask(Index h, Index w, double ratio, std::uint64_t seed);
/// Spoke-count form used by tests; `first_angle` in degrees.
Mask radial_mask_spokes(Index h, Index w, int spokes, double first_angle_degrees);

/// Cells of one half-spoke from the center (H/2, W/2) toward the border.
std::vector<std::pair<Index, Index>> rasterize_half_spoke(Index h, Index w, double angle_degrees);

/// Zero-filled magnitude image |ifft2d(mask * fft2d(x))| for x of shape [1,H,W].
Tensor undersample(const Tensor& x, const Mask& mask);

void save_mask(const std::filesystem::path& path, const Mask& mask);
Mask load_mask(const std::filesystem::path& path);

}  // namespace sdaut::kspace

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sdaut/tensor.hpp"

namespace sdaut {

struct Ellipse {
    double cy = 0, cx = 0;  // center in [-1, 1]
    double ay = 0, ax = 0;  // semi-axes
    double angle = 0;       // radians
    double value = 0;       // added inside
};

struct Phantom {
    Index extent = 0;
    std::vector<Ellipse> ellipses;  // skull, brain, then 6..12 features
    Tensor image;                   // [1, extent, extent], clamped to [0, 1]
};

/// Rasterizes the additive ellipse sum at pixel centers and clamps to [0, 1].
Tensor render_ellipses(const std::vector<Ellipse>& ellipses, Index extent);

std::vector<Phantom> phantom_gen(std::uint64_t seed, Index n, Index extent);

/// `phantom_NNNN.dtns` tensors plus `.pgm` previews.
void save_dataset(const std::filesystem::path& dir, const std::vector<Phantom>& phantoms);
/// Every `*.dtns` file in `dir`, in name order.
std::vector<Tensor> load_dataset(const std::filesystem::path& dir);

}  // namespace sdaut

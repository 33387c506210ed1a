#pragma once

#include <algorithm>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "sdaut/params.hpp"
#include "sdaut/tensor.hpp"

namespace sdaut {

/// Swin-style (windowed) or dense deformable multi-head self-attention.
/// Feature maps are channel-last, [H, W, C].
struct AttentionConfig {
    Index channels = 0;
    Index heads = 1;
    Index window = 8;  // requested; clamped to the map extent (see resolve)
    Index downsample = 1;
    bool offsets = true;
    bool dense = false;
    bool shifted = false;

    Index head_dim() const { return channels / heads; }
    void validate() const;
};

/// Window geometry for one feature-map extent.
struct WindowGeometry {
    Index height = 0;  // window extent
    Index width = 0;
    Index rows = 0;  // window grid
    Index cols = 0;
    Index shift = 0;  // cyclic shift applied before partition
    Index downsample = 1;

    Index count() const { return rows * cols; }
    Index queries() const { return height * width; }
    Index keys() const { return (height / downsample) * (width / downsample); }
    /// Largest offset magnitude per component, in pixels.
    double offset_scale() const { return static_cast<double>(std::min(height, width)) / 2.0; }
};

/// Dense maps use one window spanning the map. Windowed maps no larger than
/// the window use a single unshifted window.
WindowGeometry resolve_window(const AttentionConfig& cfg, Index h, Index w);

struct AttentionParams {
    Tensor wq, bq, wk, wv, bv, wo, bo;  // linear weights [C, C], biases [C]; keys carry no bias
    Tensor offset_dw, offset_dw_bias;       // depthwise [C, 1, 5, 5], [C]
    Tensor offset_pw, offset_pw_bias;       // pointwise [2, C, 1, 1], [2]
    Tensor bias_table;                      // [heads, 2*wh - 1, 2*ww - 1]

    static AttentionParams init(const AttentionConfig& cfg, const WindowGeometry& geo, std::mt19937_64& rng);
    void collect(const std::string& prefix, ParamList& out) const;
};

constexpr Index kOffsetKernel = 5;

/// Per-call record for explainability. Positions are in window pixel
/// coordinates, (row, col).
struct DeformCapture {
    WindowGeometry geometry;
    Tensor reference;  // [P, 2]
    Tensor offsets;    // [Nw, P, 2]
    Tensor deformed;   // [Nw, P, 2], reference + offsets before border clamp
    Tensor attention;  // [Nw * heads, Q, P]
};

// Layout helpers on [H, W, C].
/// [H, W, C] -> [Nw, wh, ww, C], windows in row-major order over the grid.
Tensor window_partition(const Tensor& x, Index wh, Index ww);
/// Inverse of window_partition.
Tensor window_reverse(const Tensor& windows, Index h, Index w);
/// Toroidal roll of the spatial axes: out[i, j] = x[i - dy, j - dx].
Tensor cyclic_shift(const Tensor& x, Index dy, Index dx);

/// Cell-centre grid in normalized window coordinates, [(wh/r) * (ww/r), 2].
Tensor reference_points(Index wh, Index ww, Index r);
inline Tensor reference_points(Index ws, Index r) { return reference_points(ws, ws, r); }
/// Same grid in window pixel coordinates: i*r + (r - 1)/2.
Tensor reference_points_pixels(Index wh, Index ww, Index r);

/// Offset network on query-projected windows [Nw, C, wh, ww]: depthwise 5x5
/// conv (stride r) -> GeLU -> 1x1 conv to 2 channels -> a * tanh.
/// Returns [Nw, P, 2] in pixels.
Tensor offset_forward(const AttentionParams& params, const Tensor& query_windows, Index r, double a);

/// Bilinearly interpolated relative-position bias. table [nh, 2wh-1, 2ww-1],
/// query_pos [Q, 2], key_pos [B, P, 2] in pixels. Displacement key - query is
/// read at table index (disp + w - 1), clamped to the table. -> [B * nh, Q, P].
Tensor relative_bias(const Tensor& table, const Tensor& query_pos, const Tensor& key_pos);

/// x [H, W, C] -> [H, W, C]. When `capture` is non-null it is filled in.
Tensor sdmsa_forward(const AttentionConfig& cfg, const AttentionParams& params, const Tensor& x,
                     DeformCapture* capture = nullptr);

}  // namespace sdaut

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sdaut/attention.hpp"
#include "sdaut/model.hpp"

namespace sdaut {

/// Writes `<stem>.reference.dtns`, `.offsets.dtns`, `.deformed.dtns`,
/// `.attention.dtns` and `.geometry` (key=value) into `dir`.
void save_capture(const std::filesystem::path& dir, const std::string& stem, const DeformCapture& c);
DeformCapture load_capture(const std::filesystem::path& dir, const std::string& stem);

/// Window-local pixel position (row, col) of window `win` back to the block's
/// feature map, undoing the cyclic shift.
std::pair<double, double> window_to_map(const WindowGeometry& g, Index win, double row, double col, Index map_h,
                                        Index map_w);

/// Offset magnitude |dp| of every key, painted over the r x r cell it stands
/// for on the block map, then nearest-upsampled to `out_h` x `out_w`.
Tensor deformation_field(const DeformCapture& c, Index map_h, Index map_w, Index out_h, Index out_w);

/// Copy of `image` [1,H,W] with every deformed key point set to 1.
Tensor deformed_point_overlay(const DeformCapture& c, const Tensor& image, Index map_h, Index map_w);

struct DeformationExport {
    int block = 0;
    std::vector<DeformCapture> layers;
    std::vector<Tensor> fields;  // [1, H, W] per layer
};

/// Runs the model on `x_u`, records block `block`, and writes per layer the
/// capture tensors, the field (.dtns and .pgm) and the overlay (.pgm), plus a
/// `captures.index` listing. `out_dir` may be empty to skip writing.
DeformationExport capture_deformation(const ModelConfig& cfg, const SdautParams& p, const Tensor& x_u, int block,
                                      const std::filesystem::path& out_dir);

struct HeatmapRequest {
    int block = 2;
    Index layer = 0;
    Index head = 0;
    Index row = 0;  // query on the block's feature map
    Index col = 0;

    void validate(const ModelConfig& cfg) const;
};

struct Heatmap {
    Tensor weights;  // [1, h, w] on the block map; sums to 1
    Tensor image;    // weights scaled to [0, 255]
};

/// Spreads the query's attention row over the map with bilinear weights at
/// each key's clamped deformed position.
Heatmap attention_heatmap(const ModelConfig& cfg, const DeformCapture& c, const HeatmapRequest& req);
Heatmap attention_heatmap(const ModelConfig& cfg, const SdautParams& p, const Tensor& x_u, const HeatmapRequest& req);

}  // namespace sdaut

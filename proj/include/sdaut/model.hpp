#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "sdaut/blocks.hpp"
#include "sdaut/io.hpp"
#include "sdaut/params.hpp"
#include "sdaut/tensor.hpp"

namespace sdaut {

constexpr int kBlockCount = 6;
extern const std::array<const char*, kBlockCount> kBlockNames;  // E1 E2 E3 D3 D2 D1

struct ModelConfig {
    Index patch_size = 1;
    std::string block_pattern = "KKDDKK";
    bool offsets_enabled = true;
    Index layers = 6;
    Index window = 8;
    Index downsample = 1;
    std::array<Index, kBlockCount> channels{90, 180, 360, 720, 360, 180};
    std::array<Index, kBlockCount> heads{6, 12, 24, 24, 24, 12};
    Index height = 256;
    Index width = 256;
    Index mlp_ratio = kMlpRatio;

    void validate() const;
    /// Spatial multiple both input extents must satisfy.
    Index required_multiple() const { return patch_size * 4 * window; }
    BlockConfig block(int i) const;
    /// Operating resolution of block i.
    std::pair<Index, Index> block_extent(int i) const;
    std::string name() const;  // e.g. KKDDKK-O-1

    KeyValueFile to_kv() const;
    static ModelConfig from_kv(const KeyValueFile& kv);
};

/// Named presets "KKDDKK-{O,NO}-{1,2,4}" and "KKKKKK-{O,NO}-{1,2,4}".
/// `from_kv` also accepts preset = tiny.
ModelConfig preset(const std::string& name);
std::vector<std::string> preset_names();
/// C=[8,16,32,64,32,16], heads [2,2,4,4,4,2], L=2, Ws=8 on 64x64.
ModelConfig tiny_config();

struct SdautParams {
    Tensor im_w, im_b;  // [C1, 1, s, s]
    std::array<BlockParams, kBlockCount> blocks;
    std::array<FuseParams, 2> fuse;  // before D2, before D1
    Tensor final_w, final_b;         // [C1, C1, 3, 3]
    Tensor om_w1, om_b1;             // [s*s*C1, C1, 1, 1]
    Tensor om_w2, om_b2;             // [1, C1, 3, 3], zero at init

    ParamList named() const;
};

SdautParams init_params(const ModelConfig& cfg, std::uint64_t seed);

/// [1, h, w] -> [C1, h/s, w/s] as channel-last [h/s, w/s, C1].
Tensor input_module(const SdautParams& p, const Tensor& x_u, Index s);
/// [H, W, C1] -> [1, H*s, W*s].
Tensor output_module(const SdautParams& p, const Tensor& f, Index s);

struct ForwardCapture {
    int block = -1;  // which block to record
    std::vector<DeformCapture> layers;
};

Tensor sdaut_forward(const ModelConfig& cfg, const SdautParams& p, const Tensor& x_u,
                     ForwardCapture* capture = nullptr);

/// Writes `<path>` (concatenated tensor records), `<path>.manifest` and
/// `<path>.config`.
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, const SdautParams& p);
struct Checkpoint {
    ModelConfig config;
    SdautParams params;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

int block_index(const std::string& name);

}  // namespace sdaut

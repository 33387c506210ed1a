#pragma once

#include <random>
#include <string>
#include <vector>

#include "sdaut/attention.hpp"
#include "sdaut/params.hpp"
#include "sdaut/tensor.hpp"

namespace sdaut {

// All block-level features are channel-last [H, W, C].

struct LayerNormParams {
    Tensor gamma, beta;

    static LayerNormParams init(Index channels);
    void collect(const std::string& prefix, ParamList& out) const;
};

struct MlpParams {
    Tensor w1, b1, w2, b2;  // [C, mC], [mC], [mC, C], [C]

    static MlpParams init(Index channels, Index ratio, std::mt19937_64& rng);
    void collect(const std::string& prefix, ParamList& out) const;
};

constexpr Index kMlpRatio = 2;

Tensor layer_norm(const LayerNormParams& p, const Tensor& x);
Tensor mlp_forward(const MlpParams& p, const Tensor& x);

/// One deformable transformer layer: pre-norm attention and pre-norm MLP,
/// each with a residual connection.
struct SdtlParams {
    LayerNormParams norm1;
    AttentionParams attn;
    LayerNormParams norm2;
    MlpParams mlp;

    void collect(const std::string& prefix, ParamList& out) const;
};

Tensor sdtl_forward(const AttentionConfig& cfg, const SdtlParams& p, const Tensor& x, DeformCapture* capture = nullptr);

/// 2x2 neighbourhood concat [x(0,0), x(1,0), x(0,1), x(1,1)] -> LN(4C) -> 4C->2C.
struct MergeParams {
    LayerNormParams norm;
    Tensor reduction;  // [4C, 2C]

    static MergeParams init(Index channels, std::mt19937_64& rng);
    void collect(const std::string& prefix, ParamList& out) const;
};
Tensor patch_merge(const MergeParams& p, const Tensor& x);

/// C->2C linear, depth-to-space by 2 -> [2H, 2W, C/2], LN(C/2).
struct ExpandParams {
    Tensor expansion;  // [C, 2C]
    LayerNormParams norm;

    static ExpandParams init(Index channels, std::mt19937_64& rng);
    void collect(const std::string& prefix, ParamList& out) const;
};
Tensor patch_expand(const ExpandParams& p, const Tensor& x);

/// Same-size 3x3 convolution on a channel-last map.
Tensor conv3x3_hwc(const Tensor& x, const Tensor& weight, const Tensor& bias);

enum class BlockKind { windowed, dense };
enum class Resample { down, up };

struct BlockConfig {
    BlockKind kind = BlockKind::windowed;
    Resample direction = Resample::down;
    Index layers = 6;
    Index channels = 0;  // operating width
    Index heads = 1;
    Index window = 8;
    Index downsample = 1;
    bool offsets = true;
    Index mlp_ratio = kMlpRatio;

    Index out_channels() const { return direction == Resample::down ? 2 * channels : channels / 2; }
    /// Windowed layers alternate unshifted / shifted; dense layers never shift.
    AttentionConfig layer_attention(Index layer) const;
    void validate() const;
};

struct BlockParams {
    std::vector<SdtlParams> layers;
    MergeParams merge;    // down blocks
    ExpandParams expand;  // up blocks
    Tensor conv_w, conv_b;

    /// `h`, `w` is the operating resolution (dense bias tables depend on it).
    static BlockParams init(const BlockConfig& cfg, Index h, Index w, std::mt19937_64& rng);
    void collect(const std::string& prefix, ParamList& out) const;
};

Tensor resample(const BlockConfig& cfg, const BlockParams& p, const Tensor& x);

/// L layers -> resample -> 3x3 conv, plus the resampled input as shortcut.
Tensor rsdtb_forward(const BlockConfig& cfg, const BlockParams& p, const Tensor& x,
                     std::vector<DeformCapture>* captures = nullptr);

struct FuseParams {
    Tensor w, b;  // [2C, C], [C]

    static FuseParams init(Index channels, std::mt19937_64& rng);
    void collect(const std::string& prefix, ParamList& out) const;
};

/// concat(decoder, encoder) along channels, then 2C -> C.
Tensor skip_fuse(const FuseParams& p, const Tensor& decoder, const Tensor& encoder);

}  // namespace sdaut

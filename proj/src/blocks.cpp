#include "sdaut/blocks.hpp"

#include <stdexcept>

#include "sdaut/ops.hpp"

namespace sdaut {

LayerNormParams LayerNormParams::init(Index channels) { return {init::ones({channels}), init::zeros({channels})}; }

void LayerNormParams::collect(const std::string& prefix, ParamList& out) const {
    out.emplace_back(prefix + "gamma", gamma);
    out.emplace_back(prefix + "beta", beta);
}

MlpParams MlpParams::init(Index channels, Index ratio, std::mt19937_64& rng) {
    const Index hidden = channels * ratio;
    MlpParams p;
    p.w1 = init::trunc_normal({channels, hidden}, 0.02, rng);
    p.b1 = init::zeros({hidden});
    p.w2 = init::trunc_normal({hidden, channels}, 0.02, rng);
    p.b2 = init::zeros({channels});
    return p;
}

void MlpParams::collect(const std::string& prefix, ParamList& out) const {
    out.emplace_back(prefix + "w1", w1);
    out.emplace_back(prefix + "b1", b1);
    out.emplace_back(prefix + "w2", w2);
    out.emplace_back(prefix + "b2", b2);
}

Tensor layer_norm(const LayerNormParams& p, const Tensor& x) { return ops::layer_norm(x, p.gamma, p.beta); }

Tensor mlp_forward(const MlpParams& p, const Tensor& x) {
    return ops::linear(ops::gelu(ops::linear(x, p.w1, p.b1)), p.w2, p.b2);
}

void SdtlParams::collect(const std::string& prefix, ParamList& out) const {
    norm1.collect(prefix + "norm1.", out);
    attn.collect(prefix + "attn.", out);
    norm2.collect(prefix + "norm2.", out);
    mlp.collect(prefix + "mlp.", out);
}

Tensor sdtl_forward(const AttentionConfig& cfg, const SdtlParams& p, const Tensor& x, DeformCapture* capture) {
    const Tensor mid = ops::add(x, sdmsa_forward(cfg, p.attn, layer_norm(p.norm1, x), capture));
    return ops::add(mid, mlp_forward(p.mlp, layer_norm(p.norm2, mid)));
}

MergeParams MergeParams::init(Index channels, std::mt19937_64& rng) {
    return {LayerNormParams::init(4 * channels), init::trunc_normal({4 * channels, 2 * channels}, 0.02, rng)};
}

void MergeParams::collect(const std::string& prefix, ParamList& out) const {
    norm.collect(prefix + "norm.", out);
    out.emplace_back(prefix + "reduction", reduction);
}

Tensor patch_merge(const MergeParams& p, const Tensor& x) {
    if (x.rank() != 3 || x.dim(0) % 2 != 0 || x.dim(1) % 2 != 0) {
        throw ShapeError("patch_merge: needs [H,W,C] with even H, W, got " + to_string(x.shape()));
    }
    const Index h = x.dim(0) / 2, w = x.dim(1) / 2, c = x.dim(2);
    // [h, di, w, dj, C] -> [h, w, dj, di, C]
    Tensor t = ops::permute(ops::reshape(x, {h, 2, w, 2, c}), {0, 2, 3, 1, 4});
    t = ops::reshape(t, {h, w, 4 * c});
    return ops::linear(layer_norm(p.norm, t), p.reduction, Tensor());
}

ExpandParams ExpandParams::init(Index channels, std::mt19937_64& rng) {
    return {init::trunc_normal({channels, 2 * channels}, 0.02, rng), LayerNormParams::init(channels / 2)};
}

void ExpandParams::collect(const std::string& prefix, ParamList& out) const {
    out.emplace_back(prefix + "expansion", expansion);
    norm.collect(prefix + "norm.", out);
}

Tensor patch_expand(const ExpandParams& p, const Tensor& x) {
    if (x.rank() != 3 || x.dim(2) % 2 != 0) {
        throw ShapeError("patch_expand: needs [H,W,C] with even C, got " + to_string(x.shape()));
    }
    const Index h = x.dim(0), w = x.dim(1), c = x.dim(2);
    Tensor t = ops::linear(x, p.expansion, Tensor());
    // [h, w, di, dj, C/2] -> [h, di, w, dj, C/2]
    t = ops::permute(ops::reshape(t, {h, w, 2, 2, c / 2}), {0, 2, 1, 3, 4});
    t = ops::reshape(t, {2 * h, 2 * w, c / 2});
    return layer_norm(p.norm, t);
}

Tensor conv3x3_hwc(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    const Index h = x.dim(0), w = x.dim(1), c = x.dim(2);
    Tensor t = ops::reshape(ops::permute(x, {2, 0, 1}), {1, c, h, w});
    t = ops::conv2d(t, weight, bias, 1, 1);
    const Index co = t.dim(1);
    return ops::permute(ops::reshape(t, {co, h, w}), {1, 2, 0});
}

AttentionConfig BlockConfig::layer_attention(Index layer) const {
    AttentionConfig a;
    a.channels = channels;
    a.heads = heads;
    a.window = window;
    a.downsample = downsample;
    a.offsets = offsets;
    a.dense = kind == BlockKind::dense;
    a.shifted = !a.dense && layer % 2 == 1;
    return a;
}

void BlockConfig::validate() const {
    if (layers < 1) throw std::invalid_argument("block: needs at least one layer");
    if (mlp_ratio < 1) throw std::invalid_argument("block: mlp ratio must be positive");
    if (direction == Resample::up && channels % 2 != 0) throw std::invalid_argument("block: up blocks need even C");
    layer_attention(0).validate();
}

BlockParams BlockParams::init(const BlockConfig& cfg, Index h, Index w, std::mt19937_64& rng) {
    cfg.validate();
    BlockParams p;
    for (Index l = 0; l < cfg.layers; ++l) {
        const auto acfg = cfg.layer_attention(l);
        SdtlParams s;
        s.norm1 = LayerNormParams::init(cfg.channels);
        s.attn = AttentionParams::init(acfg, resolve_window(acfg, h, w), rng);
        s.norm2 = LayerNormParams::init(cfg.channels);
        s.mlp = MlpParams::init(cfg.channels, cfg.mlp_ratio, rng);
        p.layers.push_back(std::move(s));
    }
    if (cfg.direction == Resample::down) {
        p.merge = MergeParams::init(cfg.channels, rng);
    } else {
        p.expand = ExpandParams::init(cfg.channels, rng);
    }
    const Index co = cfg.out_channels();
    p.conv_w = init::fan_in_uniform({co, co, 3, 3}, 9 * co, rng);
    p.conv_b = init::zeros({co});
    return p;
}

void BlockParams::collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t l = 0; l < layers.size(); ++l) layers[l].collect(prefix + "layer" + std::to_string(l) + ".", out);
    if (merge.reduction.defined()) merge.collect(prefix + "merge.", out);
    if (expand.expansion.defined()) expand.collect(prefix + "expand.", out);
    out.emplace_back(prefix + "conv_w", conv_w);
    out.emplace_back(prefix + "conv_b", conv_b);
}

Tensor resample(const BlockConfig& cfg, const BlockParams& p, const Tensor& x) {
    return cfg.direction == Resample::down ? patch_merge(p.merge, x) : patch_expand(p.expand, x);
}

Tensor rsdtb_forward(const BlockConfig& cfg, const BlockParams& p, const Tensor& x,
                     std::vector<DeformCapture>* captures) {
    if (x.rank() != 3 || x.dim(2) != cfg.channels) {
        throw ShapeError("rsdtb: expected [H,W," + std::to_string(cfg.channels) + "], got " + to_string(x.shape()));
    }
    if (captures) captures->assign(p.layers.size(), DeformCapture{});
    Tensor f = x;
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        f = sdtl_forward(cfg.layer_attention(static_cast<Index>(l)), p.layers[l], f,
                         captures ? &(*captures)[l] : nullptr);
    }
    const Tensor main = conv3x3_hwc(resample(cfg, p, f), p.conv_w, p.conv_b);
    return ops::add(main, resample(cfg, p, x));
}

FuseParams FuseParams::init(Index channels, std::mt19937_64& rng) {
    return {init::trunc_normal({2 * channels, channels}, 0.02, rng), init::zeros({channels})};
}

void FuseParams::collect(const std::string& prefix, ParamList& out) const {
    out.emplace_back(prefix + "w", w);
    out.emplace_back(prefix + "b", b);
}

Tensor skip_fuse(const FuseParams& p, const Tensor& decoder, const Tensor& encoder) {
    if (decoder.shape() != encoder.shape()) {
        throw ShapeError("skip_fuse: " + to_string(decoder.shape()) + " vs " + to_string(encoder.shape()));
    }
    return ops::linear(ops::concat({decoder, encoder}, 2), p.w, p.b);
}

}  // namespace sdaut

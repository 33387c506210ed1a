#include "sdaut/attention.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "sdaut/autodiff.hpp"
#include "sdaut/ops.hpp"

namespace sdaut {

using autodiff::grad_of;
using autodiff::make_result;

void AttentionConfig::validate() const {
    if (channels <= 0 || heads <= 0) throw std::invalid_argument("attention: channels and heads must be positive");
    if (channels % heads != 0) {
        throw std::invalid_argument("attention: channels " + std::to_string(channels) + " not divisible by heads " +
                                    std::to_string(heads));
    }
    if (window <= 0 || downsample <= 0) throw std::invalid_argument("attention: window and downsample must be positive");
    if (!dense && window % downsample != 0) throw std::invalid_argument("attention: window must be divisible by r");
    if (dense && shifted) throw std::invalid_argument("attention: dense attention cannot be shifted");
}

WindowGeometry resolve_window(const AttentionConfig& cfg, Index h, Index w) {
    cfg.validate();
    WindowGeometry g;
    g.downsample = cfg.downsample;
    if (cfg.dense) {
        g.height = h;
        g.width = w;
    } else {
        g.height = std::min(cfg.window, h);
        g.width = std::min(cfg.window, w);
        if (cfg.shifted && h > cfg.window && w > cfg.window) g.shift = cfg.window / 2;
    }
    if (h % g.height != 0 || w % g.width != 0) {
        throw ShapeError("attention: map " + std::to_string(h) + "x" + std::to_string(w) +
                         " is not a multiple of window " + std::to_string(g.height) + "x" + std::to_string(g.width));
    }
    if (g.height % g.downsample != 0 || g.width % g.downsample != 0) {
        throw ShapeError("attention: window " + std::to_string(g.height) + "x" + std::to_string(g.width) +
                         " is not a multiple of r=" + std::to_string(g.downsample));
    }
    g.rows = h / g.height;
    g.cols = w / g.width;
    return g;
}

AttentionParams AttentionParams::init(const AttentionConfig& cfg, const WindowGeometry& geo, std::mt19937_64& rng) {
    const Index c = cfg.channels;
    AttentionParams p;
    p.wq = init::trunc_normal({c, c}, 0.02, rng);
    p.wk = init::trunc_normal({c, c}, 0.02, rng);
    p.wv = init::trunc_normal({c, c}, 0.02, rng);
    p.wo = init::trunc_normal({c, c}, 0.02, rng);
    p.bq = init::zeros({c});
    p.bv = init::zeros({c});
    p.bo = init::zeros({c});
    if (cfg.offsets) {
        p.offset_dw = init::fan_in_uniform({c, 1, kOffsetKernel, kOffsetKernel}, kOffsetKernel * kOffsetKernel, rng);
        p.offset_dw_bias = init::zeros({c});
        p.offset_pw = init::zeros({2, c, 1, 1});
        p.offset_pw_bias = init::zeros({2});
    }
    p.bias_table = init::trunc_normal({cfg.heads, 2 * geo.height - 1, 2 * geo.width - 1}, 0.02, rng);
    return p;
}

void AttentionParams::collect(const std::string& prefix, ParamList& out) const {
    const std::pair<const char*, const Tensor*> named[] = {
        {"wq", &wq},
        {"bq", &bq},
        {"wk", &wk},
        {"wv", &wv},
        {"bv", &bv},
        {"wo", &wo},
        {"bo", &bo},
        {"offset_dw", &offset_dw},
        {"offset_dw_bias", &offset_dw_bias},
        {"offset_pw", &offset_pw},
        {"offset_pw_bias", &offset_pw_bias},
        {"bias_table", &bias_table},
    };
    for (const auto& [name, t] : named) {
        if (t->defined()) out.emplace_back(prefix + name, *t);
    }
}

Tensor window_partition(const Tensor& x, Index wh, Index ww) {
    if (x.rank() != 3) throw ShapeError("window_partition: expects [H,W,C], got " + to_string(x.shape()));
    const Index h = x.dim(0), w = x.dim(1), c = x.dim(2);
    if (wh <= 0 || ww <= 0 || h % wh != 0 || w % ww != 0) {
        throw ShapeError("window_partition: " + to_string(x.shape()) + " not divisible by window " +
                         std::to_string(wh) + "x" + std::to_string(ww));
    }
    const Index rows = h / wh, cols = w / ww;
    Tensor t = ops::reshape(x, {rows, wh, cols, ww, c});
    t = ops::permute(t, {0, 2, 1, 3, 4});
    return ops::reshape(t, {rows * cols, wh, ww, c});
}

Tensor window_reverse(const Tensor& windows, Index h, Index w) {
    if (windows.rank() != 4) throw ShapeError("window_reverse: expects [Nw,wh,ww,C]");
    const Index wh = windows.dim(1), ww = windows.dim(2), c = windows.dim(3);
    if (h % wh != 0 || w % ww != 0 || windows.dim(0) != (h / wh) * (w / ww)) {
        throw ShapeError("window_reverse: " + to_string(windows.shape()) + " does not tile " + std::to_string(h) + "x" +
                         std::to_string(w));
    }
    const Index rows = h / wh, cols = w / ww;
    Tensor t = ops::reshape(windows, {rows, cols, wh, ww, c});
    t = ops::permute(t, {0, 2, 1, 3, 4});
    return ops::reshape(t, {h, w, c});
}

Tensor cyclic_shift(const Tensor& x, Index dy, Index dx) { return ops::roll(x, {{0, dy}, {1, dx}}); }

Tensor reference_points_pixels(Index wh, Index ww, Index r) {
    if (r <= 0 || wh % r != 0 || ww % r != 0) throw ShapeError("reference_points: window must be divisible by r");
    const Index kh = wh / r, kw = ww / r;
    const double centre = static_cast<double>(r - 1) / 2.0;
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(kh * kw * 2));
    for (Index i = 0; i < kh; ++i) {
        for (Index j = 0; j < kw; ++j) {
            v.push_back(static_cast<double>(i * r) + centre);
            v.push_back(static_cast<double>(j * r) + centre);
        }
    }
    return Tensor({kh * kw, 2}, std::move(v));
}

Tensor reference_points(Index wh, Index ww, Index r) {
    Tensor px = reference_points_pixels(wh, ww, r);
    auto d = px.mutable_data();
    for (std::size_t i = 0; i < d.size(); i += 2) {
        d[i] = (2.0 * d[i] + 1.0) / static_cast<double>(wh) - 1.0;
        d[i + 1] = (2.0 * d[i + 1] + 1.0) / static_cast<double>(ww) - 1.0;
    }
    return px;
}

namespace {

// Per-axis affine map of (row, col) positions with optional clamping to
// [lo, hi] beforehand; the gradient is zero on clamped components.
Tensor map_positions(const Tensor& pos, double scale_y, double shift_y, double scale_x, double shift_x, double hi_y,
                     double hi_x, const char* op) {
    std::vector<double> out(pos.data().begin(), pos.data().end());
    std::vector<double> gain(out.size());
    for (std::size_t i = 0; i < out.size(); i += 2) {
        for (std::size_t k = 0; k < 2; ++k) {
            const double hi = k == 0 ? hi_y : hi_x;
            const double s = k == 0 ? scale_y : scale_x;
            double v = out[i + k];
            gain[i + k] = s;
            if (v < 0.0 || v > hi) {
                v = std::clamp(v, 0.0, hi);
                gain[i + k] = 0.0;
            }
            out[i + k] = v * s + (k == 0 ? shift_y : shift_x);
        }
    }
    auto pi = pos.impl();
    return make_result(pos.shape(), std::move(out), op, {pos}, [pi, gain = std::move(gain)](const TensorImpl& o) {
        auto& g = grad_of(pi);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * gain[i];
    });
}

Tensor clamp_to_window(const Tensor& pos, Index wh, Index ww) {
    return map_positions(pos, 1.0, 0.0, 1.0, 0.0, static_cast<double>(wh - 1), static_cast<double>(ww - 1),
                         "clamp_to_window");
}

Tensor pixels_to_normalized(const Tensor& pos, Index wh, Index ww) {
    const auto h = static_cast<double>(wh), w = static_cast<double>(ww);
    return map_positions(pos, 2.0 / h, 1.0 / h - 1.0, 2.0 / w, 1.0 / w - 1.0, h - 1.0, w - 1.0, "pixels_to_normalized");
}

Tensor tile(const Tensor& t, Index copies) {
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(t.numel() * copies));
    for (Index i = 0; i < copies; ++i) v.insert(v.end(), t.data().begin(), t.data().end());
    Shape s{copies};
    s.insert(s.end(), t.shape().begin(), t.shape().end());
    return Tensor(std::move(s), std::move(v));
}

struct TableTap {
    Index y0, x0, y1, x1;
    double wy, wx;
    bool free_y, free_x;  // false when the coordinate was clamped
};

TableTap table_tap(double fy, double fx, Index th, Index tw) {
    TableTap t{};
    const auto hy = static_cast<double>(th - 1), hx = static_cast<double>(tw - 1);
    t.free_y = fy >= 0.0 && fy <= hy;
    t.free_x = fx >= 0.0 && fx <= hx;
    fy = std::clamp(fy, 0.0, hy);
    fx = std::clamp(fx, 0.0, hx);
    t.y0 = static_cast<Index>(std::floor(fy));
    t.x0 = static_cast<Index>(std::floor(fx));
    t.y1 = std::min(t.y0 + 1, th - 1);
    t.x1 = std::min(t.x0 + 1, tw - 1);
    t.wy = fy - static_cast<double>(t.y0);
    t.wx = fx - static_cast<double>(t.x0);
    return t;
}

}  // namespace

Tensor relative_bias(const Tensor& table, const Tensor& query_pos, const Tensor& key_pos) {
    if (table.rank() != 3 || table.dim(1) % 2 == 0 || table.dim(2) % 2 == 0) {
        throw ShapeError("relative_bias: table must be [nh, 2wh-1, 2ww-1], got " + to_string(table.shape()));
    }
    if (query_pos.rank() != 2 || query_pos.dim(1) != 2 || key_pos.rank() != 3 || key_pos.dim(2) != 2) {
        throw ShapeError("relative_bias: positions must be [Q,2] and [B,P,2]");
    }
    const Index nh = table.dim(0), th = table.dim(1), tw = table.dim(2);
    const Index nq = query_pos.dim(0), nb = key_pos.dim(0), np = key_pos.dim(1);
    const double oy = static_cast<double>(th - 1) / 2.0, ox = static_cast<double>(tw - 1) / 2.0;
    const Index plane = th * tw;

    std::vector<double> out(static_cast<std::size_t>(nb * nh * nq * np));
    const double* tb = table.data().data();
    const double* qp = query_pos.data().data();
    const double* kp = key_pos.data().data();
    for (Index b = 0; b < nb; ++b) {
        for (Index q = 0; q < nq; ++q) {
            for (Index p = 0; p < np; ++p) {
                const auto t = table_tap(kp[(b * np + p) * 2] - qp[q * 2] + oy,
                                         kp[(b * np + p) * 2 + 1] - qp[q * 2 + 1] + ox, th, tw);
                for (Index h = 0; h < nh; ++h) {
                    const double* tab = tb + h * plane;
                    out[((b * nh + h) * nq + q) * np + p] =
                        (1 - t.wy) * ((1 - t.wx) * tab[t.y0 * tw + t.x0] + t.wx * tab[t.y0 * tw + t.x1]) +
                        t.wy * ((1 - t.wx) * tab[t.y1 * tw + t.x0] + t.wx * tab[t.y1 * tw + t.x1]);
                }
            }
        }
    }
    auto ti = table.impl(), qi = query_pos.impl(), ki = key_pos.impl();
    return make_result(
        {nb * nh, nq, np}, std::move(out), "relative_bias", {table, query_pos, key_pos}, [=](const TensorImpl& o) {
            double* gt = ti->requires_grad ? grad_of(ti).data() : nullptr;
            double* gq = qi->requires_grad ? grad_of(qi).data() : nullptr;
            double* gk = ki->requires_grad ? grad_of(ki).data() : nullptr;
            for (Index b = 0; b < nb; ++b) {
                for (Index q = 0; q < nq; ++q) {
                    for (Index p = 0; p < np; ++p) {
                        const auto t = table_tap(ki->data[(b * np + p) * 2] - qi->data[q * 2] + oy,
                                                 ki->data[(b * np + p) * 2 + 1] - qi->data[q * 2 + 1] + ox, th, tw);
                        double dy = 0.0, dx = 0.0;
                        for (Index h = 0; h < nh; ++h) {
                            const double go = o.grad[((b * nh + h) * nq + q) * np + p];
                            if (go == 0.0) continue;
                            const Index base = h * plane;
                            if (gt) {
                                gt[base + t.y0 * tw + t.x0] += go * (1 - t.wy) * (1 - t.wx);
                                gt[base + t.y0 * tw + t.x1] += go * (1 - t.wy) * t.wx;
                                gt[base + t.y1 * tw + t.x0] += go * t.wy * (1 - t.wx);
                                gt[base + t.y1 * tw + t.x1] += go * t.wy * t.wx;
                            }
                            const double* tab = ti->data.data() + base;
                            const double v00 = tab[t.y0 * tw + t.x0], v01 = tab[t.y0 * tw + t.x1];
                            const double v10 = tab[t.y1 * tw + t.x0], v11 = tab[t.y1 * tw + t.x1];
                            if (t.free_y) dy += go * ((1 - t.wx) * (v10 - v00) + t.wx * (v11 - v01));
                            if (t.free_x) dx += go * ((1 - t.wy) * (v01 - v00) + t.wy * (v11 - v10));
                        }
                        if (gk) {
                            gk[(b * np + p) * 2] += dy;
                            gk[(b * np + p) * 2 + 1] += dx;
                        }
                        if (gq) {
                            gq[q * 2] -= dy;
                            gq[q * 2 + 1] -= dx;
                        }
                    }
                }
            }
        });
}

Tensor offset_forward(const AttentionParams& params, const Tensor& query_windows, Index r, double a) {
    if (!params.offset_dw.defined()) throw std::logic_error("offset_forward: offset network not initialised");
    const Index nw = query_windows.dim(0), c = query_windows.dim(1);
    Tensor h = ops::conv2d(query_windows, params.offset_dw, params.offset_dw_bias, r, kOffsetKernel / 2, c);
    h = ops::gelu(h);
    h = ops::conv2d(h, params.offset_pw, params.offset_pw_bias, 1, 0);
    h = ops::scale(ops::tanh(h), a);
    const Index kh = h.dim(2), kw = h.dim(3);
    return ops::reshape(ops::permute(h, {0, 2, 3, 1}), {nw, kh * kw, 2});
}

Tensor sdmsa_forward(const AttentionConfig& cfg, const AttentionParams& params, const Tensor& x,
                     DeformCapture* capture) {
    if (x.rank() != 3 || x.dim(2) != cfg.channels) {
        throw ShapeError("sdmsa: expected [H,W," + std::to_string(cfg.channels) + "], got " + to_string(x.shape()));
    }
    const Index h = x.dim(0), w = x.dim(1), c = cfg.channels;
    const WindowGeometry geo = resolve_window(cfg, h, w);
    const Index nw = geo.count(), nq = geo.queries(), np = geo.keys(), nh = cfg.heads, d = cfg.head_dim();
    const Index wh = geo.height, ww = geo.width;
    if (params.bias_table.dim(1) != 2 * wh - 1 || params.bias_table.dim(2) != 2 * ww - 1) {
        throw ShapeError("sdmsa: bias table " + to_string(params.bias_table.shape()) + " does not match window " +
                         std::to_string(wh) + "x" + std::to_string(ww));
    }

    const Tensor shifted = geo.shift ? cyclic_shift(x, -geo.shift, -geo.shift) : x;
    const Tensor windows = window_partition(shifted, wh, ww);
    const Tensor tokens = ops::reshape(windows, {nw, nq, c});
    const Tensor q = ops::linear(tokens, params.wq, params.bq);

    const Tensor reference = reference_points_pixels(wh, ww, geo.downsample);
    Tensor offsets, deformed, key_pos, kv_source;
    if (!cfg.offsets && geo.downsample == 1) {
        key_pos = tile(reference, nw);
        kv_source = tokens;
    } else {
        deformed = tile(reference, nw);
        if (cfg.offsets) {
            const Tensor qmap = ops::permute(ops::reshape(q, {nw, wh, ww, c}), {0, 3, 1, 2});
            offsets = offset_forward(params, qmap, geo.downsample, geo.offset_scale());
            deformed = ops::add(deformed, offsets);
        }
        key_pos = clamp_to_window(deformed, wh, ww);
        const Tensor feat = ops::permute(windows, {0, 3, 1, 2});
        const Tensor sampled = ops::bilinear_sample(feat, pixels_to_normalized(key_pos, wh, ww));
        kv_source = ops::permute(sampled, {0, 2, 1});
    }
    const Tensor k = ops::linear(kv_source, params.wk, Tensor());
    const Tensor v = ops::linear(kv_source, params.wv, params.bv);

    auto split_heads = [&](const Tensor& t, Index n) {
        return ops::reshape(ops::permute(ops::reshape(t, {nw, n, nh, d}), {0, 2, 1, 3}), {nw * nh, n, d});
    };
    const Tensor qh = ops::scale(split_heads(q, nq), 1.0 / std::sqrt(static_cast<double>(d)));
    const Tensor kh = split_heads(k, np);
    const Tensor vh = split_heads(v, np);

    Tensor logits = ops::matmul(qh, ops::transpose(kh));
    logits = ops::add(logits, relative_bias(params.bias_table, reference_points_pixels(wh, ww, 1), key_pos));
    const Tensor attn = ops::softmax(logits, 2);
    const Tensor heads_out = ops::matmul(attn, vh);
    const Tensor merged =
        ops::reshape(ops::permute(ops::reshape(heads_out, {nw, nh, nq, d}), {0, 2, 1, 3}), {nw, wh, ww, c});
    const Tensor projected = ops::linear(merged, params.wo, params.bo);
    Tensor y = window_reverse(projected, h, w);
    if (geo.shift) y = cyclic_shift(y, geo.shift, geo.shift);

    if (capture) {
        capture->geometry = geo;
        capture->reference = reference;
        capture->offsets = offsets.defined() ? offsets.detach() : Tensor::zeros({nw, np, 2});
        capture->deformed = deformed.defined() ? deformed.detach() : tile(reference, nw);
        capture->attention = attn.detach();
    }
    return y;
}

}  // namespace sdaut

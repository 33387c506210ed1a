#include <algorithm>
#include <cmath>
#include <cstring>

#include "gemm.hpp"
#include "sdaut/autodiff.hpp"
#include "sdaut/ops.hpp"

namespace sdaut::ops {

using autodiff::grad_of;
using autodiff::make_result;
using detail::gemm;

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2) throw ShapeError("matmul needs rank >= 2 operands");
    const Index m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
    if (b.dim(-2) != k) {
        throw ShapeError("matmul: inner extents differ, " + to_string(a.shape()) + " x " + to_string(b.shape()));
    }
    const bool shared_b = b.rank() == 2 && a.rank() > 2;
    if (!shared_b) {
        if (a.rank() != b.rank() || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
            throw ShapeError("matmul: batch extents differ, " + to_string(a.shape()) + " x " + to_string(b.shape()));
        }
    }
    const Index batch = a.numel() / (m * k);
    Shape out_shape(a.shape().begin(), a.shape().end() - 2);
    out_shape.push_back(m);
    out_shape.push_back(n);
    std::vector<double> out(static_cast<std::size_t>(batch * m * n));
    for (Index bi = 0; bi < batch; ++bi) {
        gemm(false, false, m, n, k, a.data().data() + bi * m * k, b.data().data() + (shared_b ? 0 : bi * k * n),
             out.data() + bi * m * n, false);
    }
    auto ai = a.impl(), bimpl = b.impl();
    return make_result(out_shape, std::move(out), "matmul", {a, b}, [=](const TensorImpl& o) {
        for (Index bi = 0; bi < batch; ++bi) {
            const double* go = o.grad.data() + bi * m * n;
            const Index boff = shared_b ? 0 : bi * k * n;
            if (ai->requires_grad) gemm(false, true, m, k, n, go, bimpl->data.data() + boff, grad_of(ai).data() + bi * m * k, true);
            if (bimpl->requires_grad) gemm(true, false, k, n, m, ai->data.data() + bi * m * k, go, grad_of(bimpl).data() + boff, true);
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (weight.rank() != 2) throw ShapeError("linear: weight must be [K,N]");
    const Index k = weight.dim(0), n = weight.dim(1);
    if (x.dim(-1) != k) {
        throw ShapeError("linear: input features " + std::to_string(x.dim(-1)) + " != weight rows " + std::to_string(k));
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != n)) throw ShapeError("linear: bias must be [N]");
    const Index m = x.numel() / k;
    Shape out_shape = x.shape();
    out_shape.back() = n;
    std::vector<double> out(static_cast<std::size_t>(m * n));
    if (bias.defined()) {
        for (Index r = 0; r < m; ++r) std::memcpy(&out[r * n], bias.data().data(), sizeof(double) * n);
    }
    gemm(false, false, m, n, k, x.data().data(), weight.data().data(), out.data(), bias.defined());
    auto xi = x.impl(), wi = weight.impl();
    auto bi = bias.defined() ? bias.impl() : nullptr;
    return make_result(out_shape, std::move(out), "linear", {x, weight, bias}, [=](const TensorImpl& o) {
        const double* go = o.grad.data();
        if (xi->requires_grad) gemm(false, true, m, k, n, go, wi->data.data(), grad_of(xi).data(), true);
        if (wi->requires_grad) gemm(true, false, k, n, m, xi->data.data(), go, grad_of(wi).data(), true);
        if (bi && bi->requires_grad) {
            auto& gb = grad_of(bi);
            for (Index r = 0; r < m; ++r) {
                for (Index j = 0; j < n; ++j) gb[j] += go[r * n + j];
            }
        }
    });
}

Tensor softmax(const Tensor& x, Index axis) {
    const Index rank = x.rank();
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw ShapeError("softmax: axis out of range");
    Index outer = 1, inner = 1;
    for (Index d = 0; d < axis; ++d) outer *= x.shape()[d];
    for (Index d = axis + 1; d < rank; ++d) inner *= x.shape()[d];
    const Index n = x.shape()[axis];
    std::vector<double> out(static_cast<std::size_t>(x.numel()));
    const double* src = x.data().data();
    for (Index o = 0; o < outer; ++o) {
        for (Index i = 0; i < inner; ++i) {
            const Index base = o * n * inner + i;
            double mx = src[base];
            for (Index j = 1; j < n; ++j) mx = std::max(mx, src[base + j * inner]);
            double total = 0.0;
            for (Index j = 0; j < n; ++j) {
                const double e = std::exp(src[base + j * inner] - mx);
                out[base + j * inner] = e;
                total += e;
            }
            const double inv = 1.0 / total;
            for (Index j = 0; j < n; ++j) out[base + j * inner] *= inv;
        }
    }
    auto xi = x.impl();
    return make_result(x.shape(), std::move(out), "softmax", {x}, [=](const TensorImpl& o) {
        auto& g = grad_of(xi);
        for (Index oo = 0; oo < outer; ++oo) {
            for (Index i = 0; i < inner; ++i) {
                const Index base = oo * n * inner + i;
                double dot = 0.0;
                for (Index j = 0; j < n; ++j) dot += o.grad[base + j * inner] * o.data[base + j * inner];
                for (Index j = 0; j < n; ++j) {
                    const Index p = base + j * inner;
                    g[p] += o.data[p] * (o.grad[p] - dot);
                }
            }
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const Index c = x.dim(-1);
    if (gamma.numel() != c || beta.numel() != c) {
        throw ShapeError("layer_norm: affine extent " + std::to_string(gamma.numel()) + " != channels " +
                         std::to_string(c));
    }
    const Index rows = x.numel() / c;
    std::vector<double> out(static_cast<std::size_t>(x.numel()));
    std::vector<double> xhat(out.size());
    std::vector<double> rstd(static_cast<std::size_t>(rows));
    const double* src = x.data().data();
    const double* gm = gamma.data().data();
    const double* bt = beta.data().data();
    for (Index r = 0; r < rows; ++r) {
        const double* row = src + r * c;
        double mu = 0.0;
        for (Index j = 0; j < c; ++j) mu += row[j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (Index j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(c);
        const double rs = 1.0 / std::sqrt(var + eps);
        rstd[r] = rs;
        for (Index j = 0; j < c; ++j) {
            const double xh = (row[j] - mu) * rs;
            xhat[r * c + j] = xh;
            out[r * c + j] = xh * gm[j] + bt[j];
        }
    }
    auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
    return make_result(x.shape(), std::move(out), "layer_norm", {x, gamma, beta},
                       [=, xhat = std::move(xhat), rstd = std::move(rstd)](const TensorImpl& o) {
                           const double* go = o.grad.data();
                           if (gi->requires_grad || bi->requires_grad) {
                               auto* gg = gi->requires_grad ? &grad_of(gi) : nullptr;
                               auto* gb = bi->requires_grad ? &grad_of(bi) : nullptr;
                               for (Index r = 0; r < rows; ++r) {
                                   for (Index j = 0; j < c; ++j) {
                                       if (gg) (*gg)[j] += go[r * c + j] * xhat[r * c + j];
                                       if (gb) (*gb)[j] += go[r * c + j];
                                   }
                               }
                           }
                           if (!xi->requires_grad) return;
                           auto& gx = grad_of(xi);
                           const double inv_c = 1.0 / static_cast<double>(c);
                           for (Index r = 0; r < rows; ++r) {
                               double m1 = 0.0, m2 = 0.0;
                               for (Index j = 0; j < c; ++j) {
                                   const double dxh = go[r * c + j] * gi->data[j];
                                   m1 += dxh;
                                   m2 += dxh * xhat[r * c + j];
                               }
                               m1 *= inv_c;
                               m2 *= inv_c;
                               for (Index j = 0; j < c; ++j) {
                                   const double dxh = go[r * c + j] * gi->data[j];
                                   gx[r * c + j] += rstd[r] * (dxh - m1 - xhat[r * c + j] * m2);
                               }
                           }
                       });
}

namespace {

struct ConvGeometry {
    Index n, cin, h, w, cout, kh, kw, stride, pad, groups, ho, wo;
    Index cin_g() const { return cin / groups; }
    Index cout_g() const { return cout / groups; }
    Index col_rows() const { return cin_g() * kh * kw; }
    Index col_cols() const { return ho * wo; }
    bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

// Columns for one image and one group: rows (c, ky, kx), cols (oy, ox).
void im2col(const ConvGeometry& g, const double* img, double* cols) {
    for (Index c = 0; c < g.cin_g(); ++c) {
        const double* plane = img + c * g.h * g.w;
        for (Index ky = 0; ky < g.kh; ++ky) {
            for (Index kx = 0; kx < g.kw; ++kx) {
                double* row = cols + ((c * g.kh + ky) * g.kw + kx) * g.col_cols();
                for (Index oy = 0; oy < g.ho; ++oy) {
                    const Index iy = oy * g.stride - g.pad + ky;
                    double* dst = row + oy * g.wo;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(dst, dst + g.wo, 0.0);
                        continue;
                    }
                    for (Index ox = 0; ox < g.wo; ++ox) {
                        const Index ix = ox * g.stride - g.pad + kx;
                        dst[ox] = (ix < 0 || ix >= g.w) ? 0.0 : plane[iy * g.w + ix];
                    }
                }
            }
        }
    }
}

void col2im_add(const ConvGeometry& g, const double* cols, double* img) {
    for (Index c = 0; c < g.cin_g(); ++c) {
        double* plane = img + c * g.h * g.w;
        for (Index ky = 0; ky < g.kh; ++ky) {
            for (Index kx = 0; kx < g.kw; ++kx) {
                const double* row = cols + ((c * g.kh + ky) * g.kw + kx) * g.col_cols();
                for (Index oy = 0; oy < g.ho; ++oy) {
                    const Index iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.h) continue;
                    for (Index ox = 0; ox < g.wo; ++ox) {
                        const Index ix = ox * g.stride - g.pad + kx;
                        if (ix >= 0 && ix < g.w) plane[iy * g.w + ix] += row[oy * g.wo + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, Index stride, Index padding,
              Index groups) {
    if (stride <= 0) throw ShapeError("conv2d: stride must be positive");
    if (padding < 0) throw ShapeError("conv2d: negative padding");
    if (input.rank() != 4) throw ShapeError("conv2d: input must be [N,Cin,H,W], got " + to_string(input.shape()));
    if (kernel.rank() != 4) throw ShapeError("conv2d: kernel must be [Cout,Cin/groups,k,k]");
    ConvGeometry g{};
    g.n = input.dim(0);
    g.cin = input.dim(1);
    g.h = input.dim(2);
    g.w = input.dim(3);
    g.cout = kernel.dim(0);
    g.kh = kernel.dim(2);
    g.kw = kernel.dim(3);
    g.stride = stride;
    g.pad = padding;
    g.groups = groups;
    if (groups <= 0 || g.cin % groups != 0 || g.cout % groups != 0) throw ShapeError("conv2d: invalid group count");
    if (kernel.dim(1) != g.cin / groups) {
        throw ShapeError("conv2d: kernel expects " + std::to_string(kernel.dim(1) * groups) + " input channels, got " +
                         std::to_string(g.cin));
    }
    if (bias.defined() && bias.numel() != g.cout) throw ShapeError("conv2d: bias extent mismatch");
    const Index hnum = g.h + 2 * padding - g.kh;
    const Index wnum = g.w + 2 * padding - g.kw;
    if (hnum < 0 || wnum < 0) throw ShapeError("conv2d: kernel larger than padded input");
    g.ho = hnum / stride + 1;
    g.wo = wnum / stride + 1;

    const Index in_img = g.cin * g.h * g.w;
    const Index out_img = g.cout * g.ho * g.wo;
    const Index w_group = g.cout_g() * g.col_rows();
    std::vector<double> out(static_cast<std::size_t>(g.n * out_img));
    std::vector<double> cols(g.pointwise() ? 0 : static_cast<std::size_t>(g.col_rows() * g.col_cols()));
    const double* kd = kernel.data().data();
    for (Index n = 0; n < g.n; ++n) {
        for (Index grp = 0; grp < groups; ++grp) {
            const double* img = input.data().data() + n * in_img + grp * g.cin_g() * g.h * g.w;
            const double* col_ptr = img;
            if (!g.pointwise()) {
                im2col(g, img, cols.data());
                col_ptr = cols.data();
            }
            double* dst = out.data() + n * out_img + grp * g.cout_g() * g.col_cols();
            gemm(false, false, g.cout_g(), g.col_cols(), g.col_rows(), kd + grp * w_group, col_ptr, dst, false);
        }
        if (bias.defined()) {
            for (Index co = 0; co < g.cout; ++co) {
                double* dst = out.data() + n * out_img + co * g.col_cols();
                const double b = bias[co];
                for (Index p = 0; p < g.col_cols(); ++p) dst[p] += b;
            }
        }
    }
    auto ii = input.impl(), ki = kernel.impl();
    auto bi = bias.defined() ? bias.impl() : nullptr;
    return make_result({g.n, g.cout, g.ho, g.wo}, std::move(out), "conv2d", {input, kernel, bias},
                       [=](const TensorImpl& o) {
                           std::vector<double> cols(g.pointwise() ? 0 : static_cast<std::size_t>(g.col_rows() * g.col_cols()));
                           std::vector<double> dcols(cols.size());
                           double* gk = ki->requires_grad ? grad_of(ki).data() : nullptr;
                           double* gi = ii->requires_grad ? grad_of(ii).data() : nullptr;
                           for (Index n = 0; n < g.n; ++n) {
                               for (Index grp = 0; grp < g.groups; ++grp) {
                                   const double* img = ii->data.data() + n * in_img + grp * g.cin_g() * g.h * g.w;
                                   const double* go = o.grad.data() + n * out_img + grp * g.cout_g() * g.col_cols();
                                   if (gk) {
                                       const double* col_ptr = img;
                                       if (!g.pointwise()) {
                                           im2col(g, img, cols.data());
                                           col_ptr = cols.data();
                                       }
                                       gemm(false, true, g.cout_g(), g.col_rows(), g.col_cols(), go, col_ptr,
                                            gk + grp * w_group, true);
                                   }
                                   if (gi) {
                                       double* gimg = gi + n * in_img + grp * g.cin_g() * g.h * g.w;
                                       if (g.pointwise()) {
                                           gemm(true, false, g.col_rows(), g.col_cols(), g.cout_g(), ki->data.data() + grp * w_group,
                                                go, gimg, true);
                                       } else {
                                           gemm(true, false, g.col_rows(), g.col_cols(), g.cout_g(), ki->data.data() + grp * w_group,
                                                go, dcols.data(), false);
                                           col2im_add(g, dcols.data(), gimg);
                                       }
                                   }
                               }
                           }
                           if (bi && bi->requires_grad) {
                               auto& gb = grad_of(bi);
                               for (Index n = 0; n < g.n; ++n) {
                                   for (Index co = 0; co < g.cout; ++co) {
                                       const double* go = o.grad.data() + n * out_img + co * g.col_cols();
                                       double s = 0.0;
                                       for (Index p = 0; p < g.col_cols(); ++p) s += go[p];
                                       gb[co] += s;
                                   }
                               }
                           }
                       });
}

namespace {

struct BilinearTap {
    Index y0, y1, x0, x1;
    double wy, wx;
    double dpy, dpx;  // d(pixel coordinate)/d(normalized coordinate), zero when clamped
};

BilinearTap make_tap(double ny, double nx, Index h, Index w) {
    BilinearTap t{};
    double py = ((ny + 1.0) * static_cast<double>(h) - 1.0) * 0.5;
    double px = ((nx + 1.0) * static_cast<double>(w) - 1.0) * 0.5;
    t.dpy = 0.5 * static_cast<double>(h);
    t.dpx = 0.5 * static_cast<double>(w);
    const auto hmax = static_cast<double>(h - 1);
    const auto wmax = static_cast<double>(w - 1);
    if (py < 0.0 || py > hmax) {
        py = std::clamp(py, 0.0, hmax);
        t.dpy = 0.0;
    }
    if (px < 0.0 || px > wmax) {
        px = std::clamp(px, 0.0, wmax);
        t.dpx = 0.0;
    }
    t.y0 = static_cast<Index>(std::floor(py));
    t.x0 = static_cast<Index>(std::floor(px));
    t.y1 = std::min(t.y0 + 1, h - 1);
    t.x1 = std::min(t.x0 + 1, w - 1);
    t.wy = py - static_cast<double>(t.y0);
    t.wx = px - static_cast<double>(t.x0);
    return t;
}

}  // namespace

Tensor bilinear_sample(const Tensor& feat, const Tensor& points) {
    if (feat.rank() != 4) throw ShapeError("bilinear_sample: feat must be [B,C,H,W]");
    if (points.rank() != 3 || points.dim(2) != 2 || points.dim(0) != feat.dim(0)) {
        throw ShapeError("bilinear_sample: points must be [B,P,2] matching feat batch");
    }
    const Index b = feat.dim(0), c = feat.dim(1), h = feat.dim(2), w = feat.dim(3), p = points.dim(1);
    std::vector<double> out(static_cast<std::size_t>(b * c * p));
    const double* fd = feat.data().data();
    const double* pd = points.data().data();
    for (Index bi = 0; bi < b; ++bi) {
        for (Index pi = 0; pi < p; ++pi) {
            const auto t = make_tap(pd[(bi * p + pi) * 2], pd[(bi * p + pi) * 2 + 1], h, w);
            const double w00 = (1 - t.wy) * (1 - t.wx), w01 = (1 - t.wy) * t.wx, w10 = t.wy * (1 - t.wx), w11 = t.wy * t.wx;
            for (Index ci = 0; ci < c; ++ci) {
                const double* plane = fd + (bi * c + ci) * h * w;
                out[(bi * c + ci) * p + pi] = w00 * plane[t.y0 * w + t.x0] + w01 * plane[t.y0 * w + t.x1] +
                                              w10 * plane[t.y1 * w + t.x0] + w11 * plane[t.y1 * w + t.x1];
            }
        }
    }
    auto fi = feat.impl(), pti = points.impl();
    return make_result({b, c, p}, std::move(out), "bilinear_sample", {feat, points}, [=](const TensorImpl& o) {
        double* gf = fi->requires_grad ? grad_of(fi).data() : nullptr;
        double* gp = pti->requires_grad ? grad_of(pti).data() : nullptr;
        for (Index bi = 0; bi < b; ++bi) {
            for (Index pi = 0; pi < p; ++pi) {
                const auto t = make_tap(pti->data[(bi * p + pi) * 2], pti->data[(bi * p + pi) * 2 + 1], h, w);
                const double w00 = (1 - t.wy) * (1 - t.wx), w01 = (1 - t.wy) * t.wx, w10 = t.wy * (1 - t.wx),
                             w11 = t.wy * t.wx;
                double dy = 0.0, dx = 0.0;
                for (Index ci = 0; ci < c; ++ci) {
                    const double go = o.grad[(bi * c + ci) * p + pi];
                    if (go == 0.0) continue;
                    const Index base = (bi * c + ci) * h * w;
                    if (gf) {
                        gf[base + t.y0 * w + t.x0] += go * w00;
                        gf[base + t.y0 * w + t.x1] += go * w01;
                        gf[base + t.y1 * w + t.x0] += go * w10;
                        gf[base + t.y1 * w + t.x1] += go * w11;
                    }
                    if (gp) {
                        const double* plane = fi->data.data() + base;
                        const double v00 = plane[t.y0 * w + t.x0], v01 = plane[t.y0 * w + t.x1];
                        const double v10 = plane[t.y1 * w + t.x0], v11 = plane[t.y1 * w + t.x1];
                        dy += go * ((1 - t.wx) * (v10 - v00) + t.wx * (v11 - v01));
                        dx += go * ((1 - t.wy) * (v01 - v00) + t.wy * (v11 - v10));
                    }
                }
                if (gp) {
                    gp[(bi * p + pi) * 2] += dy * t.dpy;
                    gp[(bi * p + pi) * 2 + 1] += dx * t.dpx;
                }
            }
        }
    });
}

Tensor bilinear_sample_single(const Tensor& feat, const Tensor& points) {
    if (feat.rank() != 3 || points.rank() != 2) throw ShapeError("bilinear_sample_single: expects [C,H,W] and [P,2]");
    auto out = bilinear_sample(reshape(feat, {1, feat.dim(0), feat.dim(1), feat.dim(2)}),
                               reshape(points, {1, points.dim(0), points.dim(1)}));
    return reshape(out, {feat.dim(0), points.dim(0)});
}

}  // namespace sdaut::ops

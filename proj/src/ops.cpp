#include "sdaut/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "sdaut/autodiff.hpp"

namespace sdaut::ops {

using autodiff::grad_of;
using autodiff::make_result;

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
}

Index normalize_axis(Index axis, Index rank, const char* op) {
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw ShapeError(std::string(op) + ": axis out of range");
    return axis;
}

std::vector<Index> strides_of(const Shape& shape) {
    std::vector<Index> s(shape.size(), 1);
    for (Index i = static_cast<Index>(shape.size()) - 2; i >= 0; --i) s[i] = s[i + 1] * shape[i + 1];
    return s;
}

// Walks `out_shape` in row-major order; `src_strides` gives, per output axis,
// the stride into the source buffer. `fn(out_index, src_offset)`.
template <typename Fn>
void for_each_strided(const Shape& out_shape, const std::vector<Index>& src_strides, Fn&& fn) {
    const auto rank = static_cast<Index>(out_shape.size());
    const Index inner = out_shape.back();
    const Index inner_stride = src_strides.back();
    std::vector<Index> counter(static_cast<std::size_t>(rank), 0);
    Index base = 0;
    Index out_i = 0;
    const Index total = numel(out_shape);
    while (out_i < total) {
        Index off = base;
        for (Index j = 0; j < inner; ++j, off += inner_stride) fn(out_i++, off);
        for (Index ax = rank - 2; ax >= 0; --ax) {
            if (++counter[ax] < out_shape[ax]) {
                base += src_strides[ax];
                break;
            }
            base -= src_strides[ax] * (out_shape[ax] - 1);
            counter[ax] = 0;
        }
    }
}

template <typename F, typename D>
Tensor unary(const Tensor& a, const char* op, F&& f, D&& dfdx) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (double& v : out) v = f(v);
    auto ai = a.impl();
    return make_result(a.shape(), std::move(out), op, {a}, [ai, dfdx](const TensorImpl& o) {
        auto& g = grad_of(ai);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * dfdx(ai->data[i], o.data[i]);
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.data().begin(), a.data().end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i];
    auto ai = a.impl(), bi = b.impl();
    return make_result(a.shape(), std::move(out), "add", {a, b}, [ai, bi](const TensorImpl& o) {
        for (const auto& t : {ai, bi}) {
            if (!t->requires_grad) continue;
            auto& g = grad_of(t);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.data().begin(), a.data().end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.data()[i];
    auto ai = a.impl(), bi = b.impl();
    return make_result(a.shape(), std::move(out), "sub", {a, b}, [ai, bi](const TensorImpl& o) {
        if (ai->requires_grad) {
            auto& g = grad_of(ai);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
        }
        if (bi->requires_grad) {
            auto& g = grad_of(bi);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.data().begin(), a.data().end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.data()[i];
    auto ai = a.impl(), bi = b.impl();
    return make_result(a.shape(), std::move(out), "mul", {a, b}, [ai, bi](const TensorImpl& o) {
        if (ai->requires_grad) {
            auto& g = grad_of(ai);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * bi->data[i];
        }
        if (bi->requires_grad) {
            auto& g = grad_of(bi);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * ai->data[i];
        }
    });
}

Tensor scale(const Tensor& a, double factor) {
    return unary(
        a, "scale", [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
    return unary(
        a, "add_scalar", [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor tanh(const Tensor& a) {
    return unary(
        a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
    return unary(
        a, "relu", [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    return unary(
        a, "gelu", [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
        [](double x, double) { return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    return unary(
        a, "clamp", [lo, hi](double x) { return std::clamp(x, lo, hi); },
        [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    auto ai = a.impl();
    return make_result({1}, {s}, "sum", {a}, [ai](const TensorImpl& o) {
        auto& g = grad_of(ai);
        for (double& v : g) v += o.grad[0];
    });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.numel()) {
        throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
    }
    std::vector<double> out(a.data().begin(), a.data().end());
    auto ai = a.impl();
    return make_result(std::move(shape), std::move(out), "reshape", {a}, [ai](const TensorImpl& o) {
        auto& g = grad_of(ai);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    });
}

Tensor permute(const Tensor& a, const std::vector<Index>& axes) {
    const Index rank = a.rank();
    if (static_cast<Index>(axes.size()) != rank) throw ShapeError("permute: axis count mismatch");
    std::vector<Index> seen(static_cast<std::size_t>(rank), 0);
    for (Index ax : axes) {
        if (ax < 0 || ax >= rank || seen[ax]++) throw ShapeError("permute: axes are not a permutation");
    }
    const auto in_strides = strides_of(a.shape());
    Shape out_shape(static_cast<std::size_t>(rank));
    std::vector<Index> src_strides(static_cast<std::size_t>(rank));
    for (Index i = 0; i < rank; ++i) {
        out_shape[i] = a.shape()[axes[i]];
        src_strides[i] = in_strides[axes[i]];
    }
    std::vector<double> out(static_cast<std::size_t>(a.numel()));
    const double* src = a.data().data();
    for_each_strided(out_shape, src_strides, [&](Index oi, Index si) { out[oi] = src[si]; });
    auto ai = a.impl();
    return make_result(out_shape, std::move(out), "permute", {a}, [ai, out_shape, src_strides](const TensorImpl& o) {
        auto& g = grad_of(ai);
        for_each_strided(out_shape, src_strides, [&](Index oi, Index si) { g[si] += o.grad[oi]; });
    });
}

Tensor transpose(const Tensor& a) {
    if (a.rank() < 2) throw ShapeError("transpose needs rank >= 2");
    std::vector<Index> axes(static_cast<std::size_t>(a.rank()));
    std::iota(axes.begin(), axes.end(), 0);
    std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
    return permute(a, axes);
}

Tensor concat(const std::vector<Tensor>& parts, Index axis) {
    if (parts.empty()) throw ShapeError("concat of nothing");
    const Index rank = parts.front().rank();
    axis = normalize_axis(axis, rank, "concat");
    Shape out_shape = parts.front().shape();
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        if (p.rank() != rank) throw ShapeError("concat: rank mismatch");
        for (Index d = 0; d < rank; ++d) {
            if (d != axis && p.shape()[d] != parts.front().shape()[d]) {
                throw ShapeError("concat: extent mismatch on axis " + std::to_string(d));
            }
        }
        out_shape[axis] += p.shape()[axis];
    }
    Index outer = 1, inner = 1;
    for (Index d = 0; d < axis; ++d) outer *= out_shape[d];
    for (Index d = axis + 1; d < rank; ++d) inner *= out_shape[d];
    const Index out_row = out_shape[axis] * inner;
    std::vector<double> out(static_cast<std::size_t>(numel(out_shape)));
    std::vector<Index> offsets;
    Index off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const Index row = p.shape()[axis] * inner;
        for (Index o = 0; o < outer; ++o) {
            std::memcpy(&out[o * out_row + off], &p.data()[o * row], sizeof(double) * row);
        }
        off += row;
    }
    std::vector<std::shared_ptr<TensorImpl>> impls;
    for (const auto& p : parts) impls.push_back(p.impl());
    return make_result(out_shape, std::move(out), "concat", parts,
                       [impls, offsets, outer, inner, out_row, axis](const TensorImpl& o) {
                           for (std::size_t k = 0; k < impls.size(); ++k) {
                               if (!impls[k]->requires_grad) continue;
                               auto& g = grad_of(impls[k]);
                               const Index row = impls[k]->shape[axis] * inner;
                               for (Index r = 0; r < outer; ++r) {
                                   for (Index j = 0; j < row; ++j) g[r * row + j] += o.grad[r * out_row + offsets[k] + j];
                               }
                           }
                       });
}

Tensor slice(const Tensor& a, Index axis, Index start, Index length) {
    axis = normalize_axis(axis, a.rank(), "slice");
    if (start < 0 || length <= 0 || start + length > a.shape()[axis]) throw ShapeError("slice: range out of bounds");
    Shape out_shape = a.shape();
    out_shape[axis] = length;
    Index outer = 1, inner = 1;
    for (Index d = 0; d < axis; ++d) outer *= out_shape[d];
    for (Index d = axis + 1; d < a.rank(); ++d) inner *= out_shape[d];
    const Index in_row = a.shape()[axis] * inner;
    const Index out_row = length * inner;
    std::vector<double> out(static_cast<std::size_t>(numel(out_shape)));
    for (Index o = 0; o < outer; ++o) {
        std::memcpy(&out[o * out_row], &a.data()[o * in_row + start * inner], sizeof(double) * out_row);
    }
    auto ai = a.impl();
    return make_result(out_shape, std::move(out), "slice", {a}, [=](const TensorImpl& o) {
        auto& g = grad_of(ai);
        for (Index r = 0; r < outer; ++r) {
            for (Index j = 0; j < out_row; ++j) g[r * in_row + start * inner + j] += o.grad[r * out_row + j];
        }
    });
}

namespace {

// Single-axis roll of a raw buffer: dst[.., i, ..] = src[.., (i - shift) mod n, ..].
void roll_axis(const double* src, double* dst, const Shape& shape, Index axis, Index shift, bool accumulate) {
    Index outer = 1, inner = 1;
    for (Index d = 0; d < axis; ++d) outer *= shape[d];
    for (Index d = axis + 1; d < static_cast<Index>(shape.size()); ++d) inner *= shape[d];
    const Index n = shape[axis];
    shift = ((shift % n) + n) % n;
    for (Index o = 0; o < outer; ++o) {
        for (Index i = 0; i < n; ++i) {
            const Index from = (i - shift + n) % n;
            const double* s = src + (o * n + from) * inner;
            double* d = dst + (o * n + i) * inner;
            if (accumulate) {
                for (Index j = 0; j < inner; ++j) d[j] += s[j];
            } else {
                std::memcpy(d, s, sizeof(double) * inner);
            }
        }
    }
}

std::vector<double> roll_buffer(std::vector<double> buf, const Shape& shape,
                                const std::vector<std::pair<Index, Index>>& axis_shifts, int sign) {
    std::vector<double> tmp(buf.size());
    for (const auto& [axis, shift] : axis_shifts) {
        roll_axis(buf.data(), tmp.data(), shape, axis, sign * shift, false);
        buf.swap(tmp);
    }
    return buf;
}

}  // namespace

Tensor roll(const Tensor& a, const std::vector<std::pair<Index, Index>>& axis_shifts) {
    std::vector<std::pair<Index, Index>> norm;
    for (auto [axis, shift] : axis_shifts) norm.emplace_back(normalize_axis(axis, a.rank(), "roll"), shift);
    auto out = roll_buffer(std::vector<double>(a.data().begin(), a.data().end()), a.shape(), norm, 1);
    auto ai = a.impl();
    return make_result(a.shape(), std::move(out), "roll", {a}, [ai, norm](const TensorImpl& o) {
        auto back = roll_buffer(o.grad, o.shape, norm, -1);
        auto& g = grad_of(ai);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += back[i];
    });
}

Tensor pixel_shuffle(const Tensor& x, Index s) {
    if (x.rank() != 4) throw ShapeError("pixel_shuffle expects [N,C,H,W]");
    if (s <= 0 || x.dim(1) % (s * s) != 0) {
        throw ShapeError("pixel_shuffle: channels " + std::to_string(x.dim(1)) + " not divisible by s^2=" +
                         std::to_string(s * s));
    }
    const Index n = x.dim(0), c = x.dim(1) / (s * s), h = x.dim(2), w = x.dim(3);
    auto t = reshape(x, {n, c, s, s, h, w});
    t = permute(t, {0, 1, 4, 2, 5, 3});
    return reshape(t, {n, c, h * s, w * s});
}

Tensor pixel_unshuffle(const Tensor& x, Index s) {
    if (x.rank() != 4) throw ShapeError("pixel_unshuffle expects [N,C,H,W]");
    if (s <= 0 || x.dim(2) % s != 0 || x.dim(3) % s != 0) throw ShapeError("pixel_unshuffle: extent not divisible");
    const Index n = x.dim(0), c = x.dim(1), h = x.dim(2) / s, w = x.dim(3) / s;
    auto t = reshape(x, {n, c, h, s, w, s});
    t = permute(t, {0, 1, 3, 5, 2, 4});
    return reshape(t, {n, c * s * s, h, w});
}

Tensor charbonnier(const Tensor& a, const Tensor& b, double eps) {
    require_same_shape(a, b, "charbonnier");
    const double eps2 = eps * eps;
    const auto n = static_cast<double>(a.numel());
    double total = 0.0;
    for (Index i = 0; i < a.numel(); ++i) {
        const double d = a[i] - b[i];
        total += std::sqrt(d * d + eps2);
    }
    auto ai = a.impl(), bi = b.impl();
    return make_result({1}, {total / n}, "charbonnier", {a, b}, [ai, bi, eps2, n](const TensorImpl& o) {
        const double go = o.grad[0] / n;
        std::vector<double>* ga = ai->requires_grad ? &grad_of(ai) : nullptr;
        std::vector<double>* gb = bi->requires_grad ? &grad_of(bi) : nullptr;
        for (std::size_t i = 0; i < ai->data.size(); ++i) {
            const double d = ai->data[i] - bi->data[i];
            const double r = std::sqrt(d * d + eps2);
            const double dv = r > 0.0 ? go * d / r : 0.0;
            if (ga) (*ga)[i] += dv;
            if (gb) (*gb)[i] -= dv;
        }
    });
}

Tensor l1(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "l1");
    const auto n = static_cast<double>(a.numel());
    double total = 0.0;
    for (Index i = 0; i < a.numel(); ++i) total += std::abs(a[i] - b[i]);
    auto ai = a.impl(), bi = b.impl();
    return make_result({1}, {total / n}, "l1", {a, b}, [ai, bi, n](const TensorImpl& o) {
        const double go = o.grad[0] / n;
        std::vector<double>* ga = ai->requires_grad ? &grad_of(ai) : nullptr;
        std::vector<double>* gb = bi->requires_grad ? &grad_of(bi) : nullptr;
        for (std::size_t i = 0; i < ai->data.size(); ++i) {
            const double d = ai->data[i] - bi->data[i];
            const double sgn = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
            if (ga) (*ga)[i] += go * sgn;
            if (gb) (*gb)[i] -= go * sgn;
        }
    });
}

}  // namespace sdaut::ops

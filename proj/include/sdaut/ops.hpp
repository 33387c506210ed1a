#pragma once

#include <utility>
#include <vector>

#include "sdaut/tensor.hpp"

/// Differentiable primitives. Each returns a new tensor and, when a tape is
/// recording and an input requires grad, registers its backward rule.
namespace sdaut::ops {

// Elementwise. Operands must have identical shapes (no broadcasting).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
/// Exact GeLU, x * Phi(x) with Phi the standard normal CDF.
Tensor gelu(const Tensor& a);
/// Clamps to [lo, hi]; the gradient is zero where the clamp is active.
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Layout.
Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<Index>& axes);
/// Swaps the last two axes.
Tensor transpose(const Tensor& a);
Tensor concat(const std::vector<Tensor>& parts, Index axis);
Tensor slice(const Tensor& a, Index axis, Index start, Index length);
/// Toroidal roll: out[i] = a[(i - shift) mod n] along each listed axis.
Tensor roll(const Tensor& a, const std::vector<std::pair<Index, Index>>& axis_shifts);
/// Depth-to-space: [N, C*s*s, H, W] -> [N, C, H*s, W*s],
/// out[n, c, h*s+i, w*s+j] = in[n, c*s*s + i*s + j, h, w].
Tensor pixel_shuffle(const Tensor& x, Index s);
Tensor pixel_unshuffle(const Tensor& x, Index s);

// Linear algebra.
/// Batched product over identical leading extents: [..., M, K] x [..., K, N].
Tensor matmul(const Tensor& a, const Tensor& b);
/// x[..., K] * weight[K, N] (+ bias[N]). `bias` may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Normalization and activation along an axis.
Tensor softmax(const Tensor& x, Index axis);
/// Normalizes over the last axis, then applies gamma/beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Cross-correlation. input [N, Cin, H, W], kernel [Cout, Cin/groups, kh, kw],
/// bias [Cout] or undefined. Output extent floor((H + 2p - kh)/stride) + 1.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, Index stride, Index padding,
              Index groups = 1);

/// Bilinear sampling with normalized coordinates in [-1, 1]: -1 is the outer
/// edge of the first cell, so cell i has its center at (2i + 1)/n - 1.
/// Coordinates outside the map are clamped to the border cells.
/// feat [B, C, H, W], points [B, P, 2] given as (y, x) -> [B, C, P].
Tensor bilinear_sample(const Tensor& feat, const Tensor& points);
/// Unbatched form: feat [C, H, W], points [P, 2] -> [C, P].
Tensor bilinear_sample_single(const Tensor& feat, const Tensor& points);

// Losses reduced to a scalar.
/// mean(sqrt((a - b)^2 + eps^2))
Tensor charbonnier(const Tensor& a, const Tensor& b, double eps);
/// mean(|a - b|)
Tensor l1(const Tensor& a, const Tensor& b);

}  // namespace sdaut::ops

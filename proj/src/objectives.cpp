#include "sdaut/objectives.hpp"

#include <cmath>
#include <random>

#include "sdaut/autodiff.hpp"
#include "sdaut/kspace.hpp"
#include "sdaut/ops.hpp"
#include "sdaut/params.hpp"

namespace sdaut {

namespace {

void require_image(const Tensor& x, const char* what) {
    if (x.rank() != 3 || x.dim(0) != 1) throw ShapeError(std::string(what) + " expects [1,H,W], got " + to_string(x.shape()));
}

void require_match(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
}

}  // namespace

Tensor fft2_stacked(const Tensor& x) {
    require_image(x, "fft2_stacked");
    const Index h = x.dim(1), w = x.dim(2);
    const auto k = kspace::fft2d(kspace::ComplexGrid::from_real(x));
    std::vector<double> out(static_cast<std::size_t>(2 * h * w));
    std::copy(k.re.begin(), k.re.end(), out.begin());
    std::copy(k.im.begin(), k.im.end(), out.begin() + h * w);
    auto xi = x.impl();
    return autodiff::make_result({2, h, w}, std::move(out), "fft2", {x}, [xi, h, w](const TensorImpl& o) {
        // The transform is unitary, so the adjoint is its inverse.
        kspace::ComplexGrid g(h, w);
        std::copy(o.grad.begin(), o.grad.begin() + h * w, g.re.begin());
        std::copy(o.grad.begin() + h * w, o.grad.end(), g.im.begin());
        const auto back = kspace::ifft2d(g);
        auto& gx = autodiff::grad_of(xi);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += back.re[i];
    });
}

Tensor pixel_loss(const Tensor& pred, const Tensor& target, double eps) { return ops::charbonnier(pred, target, eps); }

Tensor freq_loss(const Tensor& pred, const Tensor& target, double eps) {
    require_match(pred, target, "freq_loss");
    return ops::charbonnier(fft2_stacked(pred), fft2_stacked(target), eps);
}

ConvPyramid::ConvPyramid(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const Index widths[] = {1, 8, 16, 32};
    for (int i = 0; i < 3; ++i) {
        kernels_.push_back(init::fan_in_uniform({widths[i + 1], widths[i], 3, 3}, 9 * widths[i], rng));
        biases_.push_back(init::zeros({widths[i + 1]}));
    }
}

std::vector<Tensor> ConvPyramid::features(const Tensor& image) const {
    require_image(image, "ConvPyramid");
    std::vector<Tensor> out;
    Tensor f = ops::reshape(image, {1, 1, image.dim(1), image.dim(2)});
    for (std::size_t i = 0; i < kernels_.size(); ++i) {
        f = ops::relu(ops::conv2d(f, kernels_[i], biases_[i], i == 0 ? 1 : 2, 1));
        out.push_back(f);
    }
    return out;
}

Tensor perceptual_loss(const FeatureExtractor& extractor, const Tensor& pred, const Tensor& target) {
    require_match(pred, target, "perceptual_loss");
    std::vector<Tensor> ref;
    {
        NoGradScope no_grad;
        ref = extractor.features(target);
    }
    const auto got = extractor.features(pred);
    Tensor total;
    for (std::size_t i = 0; i < got.size(); ++i) {
        auto term = ops::l1(got[i], ref[i]);
        total = total.defined() ? ops::add(total, term) : term;
    }
    return ops::scale(total, 1.0 / static_cast<double>(got.size()));
}

Tensor total_loss(const LossWeights& w, const FeatureExtractor& extractor, const Tensor& pred, const Tensor& target) {
    Tensor total = ops::scale(pixel_loss(pred, target), w.alpha);
    if (w.beta != 0.0) total = ops::add(total, ops::scale(freq_loss(pred, target), w.beta));
    if (w.gamma != 0.0) total = ops::add(total, ops::scale(perceptual_loss(extractor, pred, target), w.gamma));
    return total;
}

double psnr(const Tensor& pred, const Tensor& target, double peak) {
    require_match(pred, target, "psnr");
    double se = 0.0;
    for (Index i = 0; i < pred.numel(); ++i) {
        const double d = pred[i] - target[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(pred.numel());
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

double ssim(const Tensor& pred, const Tensor& target) {
    require_match(pred, target, "ssim");
    constexpr int kWin = 11;
    constexpr double kSigma = 1.5, c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const Index h = pred.dim(-2), w = pred.dim(-1);
    if (h < kWin || w < kWin) throw ShapeError("ssim needs at least 11x11");
    double g[kWin], norm = 0.0;
    for (int i = 0; i < kWin; ++i) {
        const double d = i - kWin / 2;
        g[i] = std::exp(-d * d / (2 * kSigma * kSigma));
        norm += g[i];
    }
    for (double& v : g) v /= norm;
    const auto a = pred.data(), b = target.data();
    double total = 0.0;
    for (Index r = 0; r + kWin <= h; ++r) {
        for (Index c = 0; c + kWin <= w; ++c) {
            double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
            for (int i = 0; i < kWin; ++i) {
                for (int j = 0; j < kWin; ++j) {
                    const double k = g[i] * g[j];
                    const double x = a[(r + i) * w + c + j], y = b[(r + i) * w + c + j];
                    ma += k * x;
                    mb += k * y;
                    saa += k * x * x;
                    sbb += k * y * y;
                    sab += k * x * y;
                }
            }
            const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
            total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    return total / static_cast<double>((h - kWin + 1) * (w - kWin + 1));
}

}  // namespace sdaut

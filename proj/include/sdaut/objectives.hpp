#pragma once

#include <cstdint>
#include <vector>

#include "sdaut/tensor.hpp"

namespace sdaut {

constexpr double kCharbonnierEps = 1e-3;

struct LossWeights {
    double alpha = 15.0;    // pixel
    double beta = 0.1;      // frequency
    double gamma = 0.0025;  // perceptual
};

/// Differentiable centered unitary 2D DFT of a real [1,H,W] image, returned as
/// stacked [2,H,W] (real, imaginary).
Tensor fft2_stacked(const Tensor& x);

Tensor pixel_loss(const Tensor& pred, const Tensor& target, double eps = kCharbonnierEps);
/// Charbonnier over the stacked real/imaginary spectra.
Tensor freq_loss(const Tensor& pred, const Tensor& target, double eps = kCharbonnierEps);

/// Frozen feature pyramid for the perceptual term: three 3x3 conv + ReLU
/// stages (1->8 stride 1, 8->16 stride 2, 16->32 stride 2) drawn from a fixed
/// seed. Any extractor returning a list of feature maps can stand in.
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual std::vector<Tensor> features(const Tensor& image) const = 0;
};

class ConvPyramid final : public FeatureExtractor {
public:
    explicit ConvPyramid(std::uint64_t seed = 0x5eed);
    std::vector<Tensor> features(const Tensor& image) const override;

private:
    std::vector<Tensor> kernels_;
    std::vector<Tensor> biases_;
};

/// Mean over stages of the L1 feature distance. Target features carry no grad.
Tensor perceptual_loss(const FeatureExtractor& extractor, const Tensor& pred, const Tensor& target);

Tensor total_loss(const LossWeights& w, const FeatureExtractor& extractor, const Tensor& pred, const Tensor& target);

constexpr double kPsnrCap = 100.0;

double psnr(const Tensor& pred, const Tensor& target, double peak = 1.0);
/// Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), K1 0.01, K2 0.03,
/// data range 1, averaged over positions where the window fits.
double ssim(const Tensor& pred, const Tensor& target);

}  // namespace sdaut

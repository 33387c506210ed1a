#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdaut/io.hpp"
#include "sdaut/kspace.hpp"
#include "sdaut/model.hpp"
#include "sdaut/objectives.hpp"

namespace sdaut {

struct TrainConfig {
    Index steps = 2000;
    Index batch = 1;
    double lr0 = 2e-4;
    double decay_factor = 0.5;
    Index decay_interval = 10000;
    Index decay_start = 50000;
    std::uint64_t seed = 0;
    LossWeights weights;
    double clip_norm = 1.0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::string mask_kind = "gaussian1d";
    double mask_ratio = 0.3;
    std::uint64_t mask_seed = 0;
    Index log_every = 10;
    ModelConfig model = tiny_config();

    /// Model keys and trainer keys share one file. Without a `preset` key the
    /// model starts from the tiny config.
    KeyValueFile to_kv() const;
    static TrainConfig from_kv(const KeyValueFile& kv);
};

/// lr0 before decay_start, then halved at decay_start and every
/// decay_interval after it.
double lr_schedule(const TrainConfig& cfg, Index step);

kspace::Mask make_mask(const std::string& kind, double ratio, Index size, std::uint64_t seed);

struct Sample {
    Tensor x_u;  // zero-filled input
    Tensor x;    // ground truth
};

std::vector<Sample> make_samples(const std::vector<Tensor>& images, const kspace::Mask& mask);

class NonFiniteLoss : public std::runtime_error {
public:
    NonFiniteLoss(Index step, Index batch_index, double loss);
    Index step;
    Index batch_index;
};

struct AdamState {
    std::vector<std::vector<double>> m, v;
    Index t = 0;
};

struct TrainState {
    ModelConfig model;
    SdautParams params;
    AdamState adam;
    Index step = 0;
    std::mt19937_64 rng;
    std::vector<std::size_t> order;  // current epoch permutation
    std::size_t cursor = 0;
};

TrainState init_train_state(const TrainConfig& cfg);

struct StepResult {
    double loss = 0.0;
    double grad_norm = 0.0;  // before clipping
    double lr = 0.0;
};

/// One Adam step on the mean total loss of `batch`. `batch_index` is echoed in
/// the diagnostic when the loss is not finite.
StepResult train_step(TrainState& state, const TrainConfig& cfg, const std::vector<Sample>& batch,
                      const FeatureExtractor& extractor, Index batch_index);

/// Plain-text progress line `step, lr, loss, wallclock-ms`.
using ProgressFn = std::function<void(Index step, double lr, double loss, double ms)>;

/// Runs cfg.steps steps over `data`, drawing batches from a seeded permutation
/// that is redrawn every epoch. Calls `progress` every cfg.log_every steps and
/// on the last one.
TrainState train(const TrainConfig& cfg, const std::vector<Sample>& data, const ProgressFn& progress = {},
                 const std::function<void(const StepResult&)>& on_step = {});

struct EvalRow {
    double psnr_zf = 0, ssim_zf = 0, psnr = 0, ssim = 0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    EvalRow mean;
    std::string text() const;
    KeyValueFile to_kv() const;
};

Tensor reconstruct(const ModelConfig& cfg, const SdautParams& params, const Tensor& x_u);
EvalReport evaluate(const ModelConfig& cfg, const SdautParams& params, const std::vector<Sample>& data);

}  // namespace sdaut

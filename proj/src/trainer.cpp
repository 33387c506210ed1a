#include "sdaut/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "sdaut/autodiff.hpp"
#include "sdaut/ops.hpp"

namespace sdaut {

namespace {

const std::set<std::string> kModelKeys = {"preset", "patch_size", "block_pattern", "offsets_enabled",
                                          "layers", "window",     "downsample",    "channels",
                                          "heads",  "height",     "width",         "mlp_ratio"};
const std::set<std::string> kTrainKeys = {"steps",      "batch",      "lr0",          "decay_factor", "decay_interval",
                                          "decay_start", "seed",      "alpha",        "beta",         "gamma",
                                          "clip_norm",  "adam_beta1", "adam_beta2",   "adam_eps",     "mask_kind",
                                          "mask_ratio", "mask_seed",  "log_every"};

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

KeyValueFile TrainConfig::to_kv() const {
    KeyValueFile kv = model.to_kv();
    kv.set("steps", std::to_string(steps));
    kv.set("batch", std::to_string(batch));
    kv.set("lr0", num(lr0));
    kv.set("decay_factor", num(decay_factor));
    kv.set("decay_interval", std::to_string(decay_interval));
    kv.set("decay_start", std::to_string(decay_start));
    kv.set("seed", std::to_string(seed));
    kv.set("alpha", num(weights.alpha));
    kv.set("beta", num(weights.beta));
    kv.set("gamma", num(weights.gamma));
    kv.set("clip_norm", num(clip_norm));
    kv.set("adam_beta1", num(adam_beta1));
    kv.set("adam_beta2", num(adam_beta2));
    kv.set("adam_eps", num(adam_eps));
    kv.set("mask_kind", mask_kind);
    kv.set("mask_ratio", num(mask_ratio));
    kv.set("mask_seed", std::to_string(mask_seed));
    kv.set("log_every", std::to_string(log_every));
    return kv;
}

TrainConfig TrainConfig::from_kv(const KeyValueFile& kv) {
    for (const auto& [key, _] : kv.entries()) {
        if (!kModelKeys.count(key) && !kTrainKeys.count(key)) throw std::invalid_argument("unknown config key '" + key + "'");
    }
    TrainConfig c;
    KeyValueFile model_kv = kv;
    if (!kv.contains("preset")) model_kv.set("preset", "tiny");
    c.model = ModelConfig::from_kv(model_kv);
    auto integer = [&](const char* key, auto& field) {
        if (kv.contains(key)) field = static_cast<std::remove_reference_t<decltype(field)>>(std::stoll(kv.get(key)));
    };
    auto real = [&](const char* key, double& field) {
        if (kv.contains(key)) field = std::stod(kv.get(key));
    };
    integer("steps", c.steps);
    integer("batch", c.batch);
    real("lr0", c.lr0);
    real("decay_factor", c.decay_factor);
    integer("decay_interval", c.decay_interval);
    integer("decay_start", c.decay_start);
    integer("seed", c.seed);
    real("alpha", c.weights.alpha);
    real("beta", c.weights.beta);
    real("gamma", c.weights.gamma);
    real("clip_norm", c.clip_norm);
    real("adam_beta1", c.adam_beta1);
    real("adam_beta2", c.adam_beta2);
    real("adam_eps", c.adam_eps);
    c.mask_kind = kv.get_or("mask_kind", c.mask_kind);
    real("mask_ratio", c.mask_ratio);
    integer("mask_seed", c.mask_seed);
    integer("log_every", c.log_every);
    if (c.steps < 0 || c.batch < 1 || c.lr0 <= 0 || c.decay_interval < 1 || c.log_every < 1) {
        throw std::invalid_argument("train config: steps >= 0, batch >= 1, lr0 > 0, decay_interval >= 1 required");
    }
    return c;
}

double lr_schedule(const TrainConfig& cfg, Index step) {
    if (step < cfg.decay_start) return cfg.lr0;
    const Index decays = 1 + (step - cfg.decay_start) / cfg.decay_interval;
    return cfg.lr0 * std::pow(cfg.decay_factor, static_cast<double>(decays));
}

kspace::Mask make_mask(const std::string& kind, double ratio, Index size, std::uint64_t seed) {
    if (kind == "gaussian1d") return kspace::gaussian1d_mask(size, size, ratio, seed);
    if (kind == "radial") return kspace::radial_mask(size, size, ratio, seed);
    throw std::invalid_argument("unknown mask kind '" + kind + "' (gaussian1d|radial)");
}

std::vector<Sample> make_samples(const std::vector<Tensor>& images, const kspace::Mask& mask) {
    std::vector<Sample> out;
    out.reserve(images.size());
    // Rounded to float so the f32 engine sees the exact values stored on disk.
    for (const auto& x : images) {
        Tensor zf = kspace::undersample(x, mask), gt = x.clone();
        for (auto& v : zf.mutable_data()) v = static_cast<double>(static_cast<float>(v));
        for (auto& v : gt.mutable_data()) v = static_cast<double>(static_cast<float>(v));
        out.push_back({zf, gt});
    }
    return out;
}

NonFiniteLoss::NonFiniteLoss(Index step_, Index batch_index_, double loss)
    : std::runtime_error("non-finite loss " + std::to_string(loss) + " at step " + std::to_string(step_) +
                         ", batch " + std::to_string(batch_index_)),
      step(step_),
      batch_index(batch_index_) {}

TrainState init_train_state(const TrainConfig& cfg) {
    PrecisionScope f32(Precision::f32);
    TrainState s;
    s.model = cfg.model;
    s.params = init_params(cfg.model, cfg.seed);
    s.rng.seed(cfg.seed ^ 0x5DA07ull);
    const auto named = s.params.named();
    for (const auto& [_, t] : named) {
        s.adam.m.emplace_back(static_cast<std::size_t>(t.numel()), 0.0);
        s.adam.v.emplace_back(static_cast<std::size_t>(t.numel()), 0.0);
    }
    return s;
}

StepResult train_step(TrainState& state, const TrainConfig& cfg, const std::vector<Sample>& batch,
                      const FeatureExtractor& extractor, Index batch_index) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    PrecisionScope f32(Precision::f32);
    const ParamList named = state.params.named();
    for (const auto& [_, t] : named) {
        Tensor h = t;
        h.set_requires_grad(true);
        h.zero_grad();
    }
    StepResult r;
    r.lr = lr_schedule(cfg, state.step);
    {
        Tape tape;
        Tensor loss;
        try {
            for (const auto& s : batch) {
                Tensor term = total_loss(cfg.weights, extractor, sdaut_forward(state.model, state.params, s.x_u), s.x);
                loss = loss.defined() ? ops::add(loss, term) : term;
            }
            loss = ops::scale(loss, 1.0 / static_cast<double>(batch.size()));
            r.loss = loss.item();
        } catch (const NumericError&) {
            r.loss = std::numeric_limits<double>::quiet_NaN();
        }
        if (!std::isfinite(r.loss)) throw NonFiniteLoss(state.step, batch_index, r.loss);
        tape.backward(loss);
    }
    std::vector<Tensor> grads;
    double sq = 0.0;
    for (const auto& [_, t] : named) {
        grads.push_back(t.grad());
        for (double g : grads.back().data()) sq += g * g;
    }
    r.grad_norm = std::sqrt(sq);
    if (!std::isfinite(r.grad_norm)) throw NonFiniteLoss(state.step, batch_index, r.grad_norm);
    const double clip = (cfg.clip_norm > 0 && r.grad_norm > cfg.clip_norm) ? cfg.clip_norm / r.grad_norm : 1.0;

    auto& adam = state.adam;
    ++adam.t;
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(adam.t));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(adam.t));
    for (std::size_t i = 0; i < named.size(); ++i) {
        Tensor p = named[i].second;
        auto data = p.mutable_data();
        const auto g = grads[i].data();
        auto& m = adam.m[i];
        auto& v = adam.v[i];
        for (std::size_t k = 0; k < data.size(); ++k) {
            const double gk = g[k] * clip;
            m[k] = cfg.adam_beta1 * m[k] + (1.0 - cfg.adam_beta1) * gk;
            v[k] = cfg.adam_beta2 * v[k] + (1.0 - cfg.adam_beta2) * gk * gk;
            const double step = r.lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg.adam_eps);
            data[k] = static_cast<double>(static_cast<float>(data[k] - step));
        }
        p.set_requires_grad(false);
    }
    ++state.step;
    return r;
}

TrainState train(const TrainConfig& cfg, const std::vector<Sample>& data, const ProgressFn& progress,
                 const std::function<void(const StepResult&)>& on_step) {
    if (data.empty()) throw std::invalid_argument("train: empty dataset");
    TrainState state = init_train_state(cfg);
    ConvPyramid extractor;
    const auto start = std::chrono::steady_clock::now();
    for (Index k = 0; k < cfg.steps; ++k) {
        std::vector<Sample> batch;
        Index first = -1;
        for (Index b = 0; b < cfg.batch; ++b) {
            if (state.cursor == state.order.size()) {
                state.order.resize(data.size());
                std::iota(state.order.begin(), state.order.end(), std::size_t{0});
                std::shuffle(state.order.begin(), state.order.end(), state.rng);
                state.cursor = 0;
            }
            const std::size_t idx = state.order[state.cursor++];
            if (first < 0) first = static_cast<Index>(idx);
            batch.push_back(data[idx]);
        }
        const StepResult r = train_step(state, cfg, batch, extractor, first);
        if (on_step) on_step(r);
        if (progress && (state.step % cfg.log_every == 0 || k + 1 == cfg.steps)) {
            const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
            progress(state.step, r.lr, r.loss, ms);
        }
    }
    return state;
}

Tensor reconstruct(const ModelConfig& cfg, const SdautParams& params, const Tensor& x_u) {
    NoGradScope no_grad;
    PrecisionScope f32(Precision::f32);
    return sdaut_forward(cfg, params, x_u);
}

EvalReport evaluate(const ModelConfig& cfg, const SdautParams& params, const std::vector<Sample>& data) {
    EvalReport rep;
    for (const auto& s : data) {
        const Tensor y = reconstruct(cfg, params, s.x_u);
        EvalRow row{psnr(s.x_u, s.x), ssim(s.x_u, s.x), psnr(y, s.x), ssim(y, s.x)};
        rep.rows.push_back(row);
        rep.mean.psnr_zf += row.psnr_zf;
        rep.mean.ssim_zf += row.ssim_zf;
        rep.mean.psnr += row.psnr;
        rep.mean.ssim += row.ssim;
    }
    if (!rep.rows.empty()) {
        const double n = static_cast<double>(rep.rows.size());
        rep.mean.psnr_zf /= n;
        rep.mean.ssim_zf /= n;
        rep.mean.psnr /= n;
        rep.mean.ssim /= n;
    }
    return rep;
}

std::string EvalReport::text() const {
    std::ostringstream os;
    char line[128];
    std::snprintf(line, sizeof line, "%-8s %10s %10s %10s %10s\n", "image", "ZF PSNR", "ZF SSIM", "PSNR", "SSIM");
    os << line;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        std::snprintf(line, sizeof line, "%-8zu %10.4f %10.6f %10.4f %10.6f\n", i, r.psnr_zf, r.ssim_zf, r.psnr, r.ssim);
        os << line;
    }
    std::snprintf(line, sizeof line, "%-8s %10.4f %10.6f %10.4f %10.6f\n", "mean", mean.psnr_zf, mean.ssim_zf, mean.psnr,
                  mean.ssim);
    os << line;
    return os.str();
}

KeyValueFile EvalReport::to_kv() const {
    KeyValueFile kv;
    kv.set("count", std::to_string(rows.size()));
    kv.set("mean_psnr_zf", num(mean.psnr_zf));
    kv.set("mean_ssim_zf", num(mean.ssim_zf));
    kv.set("mean_psnr", num(mean.psnr));
    kv.set("mean_ssim", num(mean.ssim));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::string p = "image." + std::to_string(i) + ".";
        kv.set(p + "psnr_zf", num(rows[i].psnr_zf));
        kv.set(p + "ssim_zf", num(rows[i].ssim_zf));
        kv.set(p + "psnr", num(rows[i].psnr));
        kv.set(p + "ssim", num(rows[i].ssim));
    }
    return kv;
}

}  // namespace sdaut

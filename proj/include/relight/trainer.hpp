#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "relight/bundle.hpp"
#include "relight/sampler.hpp"

namespace relight {

struct TrainConfig {
    double lr = 1e-4;
    double lr_decay = 0.5;
    int64_t lr_decay_interval = 100000;
    int64_t iterations = 600000;
    int64_t batch_size = 8;
    int64_t patch_size = 256;
    double lambda_unet = 1.0;
    double lambda_rnet = 1.0;
    double lambda_anet = 0.1;
    double lambda_ja = 1.0;
    double lambda_je = 1.0;
    int64_t hist_bins = 64;
    uint64_t seed = 0;
    int64_t log_interval = 50;
    int64_t checkpoint_interval = 1000;
    int64_t dnet_iterations = 2000;
    double dnet_lr = 1e-3;
    int64_t sample_steps = 8;

    void validate() const {
        if (lambda_unet < 0 || lambda_rnet < 0 || lambda_anet < 0)
            throw ParamError("loss weights must be >= 0");
        if (patch_size % 16) throw ParamError("patch size must be divisible by 16");
        if (batch_size < 1) throw ParamError("batch size must be >= 1");
    }
};

inline double lr_at(int64_t iteration, const TrainConfig& cfg) {
    if (iteration < 0) throw ParamError("lr_at wants iteration >= 0");
    double k = std::floor(static_cast<double>(iteration) / static_cast<double>(cfg.lr_decay_interval));
    return cfg.lr * std::pow(cfg.lr_decay, k);
}

template <typename T>
class Adam {
public:
    Adam() = default;
    explicit Adam(nn::ParamList<T> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (auto& p : params_) {
            m_.emplace_back(p.var->value.shape());
            v_.emplace_back(p.var->value.shape());
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.var->zero_grad();
    }

    void step(double lr) {
        ++steps_;
        double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
        double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i].var;
            if (!p->grad.numel()) continue;
            Tensor<T>& m = m_[i];
            Tensor<T>& v = v_[i];
            for (int64_t j = 0; j < p->value.numel(); ++j) {
                double g = p->grad[j];
                double mj = beta1_ * static_cast<double>(m[j]) + (1.0 - beta1_) * g;
                double vj = beta2_ * static_cast<double>(v[j]) + (1.0 - beta2_) * g * g;
                m[j] = static_cast<T>(mj);
                v[j] = static_cast<T>(vj);
                p->value[j] -= static_cast<T>(lr * (mj / c1) / (std::sqrt(vj / c2) + eps_));
            }
        }
    }

    const nn::ParamList<T>& params() const { return params_; }
    std::vector<Tensor<T>>& moment1() { return m_; }
    std::vector<Tensor<T>>& moment2() { return v_; }
    int64_t& step_count() { return steps_; }

private:
    nn::ParamList<T> params_;
    std::vector<Tensor<T>> m_, v_;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    int64_t steps_ = 0;
};

template <typename T>
struct SampleLosses {
    Var<T> total;
    Var<T> unet, rnet, anet;
};

// Builds the full per-sample objective graph for a fixed (t, eps) draw:
//   L = lambda_unet |eps - eps_hat|^2 + lambda_rnet |x0 - x0_refined|^2
//     + lambda_anet (adjustment + exposure)
// The adjusted condition is detached before the UNet/RNet consume it, so the
// adjustment loss is the only path into ANet and nothing flows back into it.
template <typename T>
SampleLosses<T> training_losses(const Tensor<T>& y, const Tensor<T>& x0, int64_t t,
                                const Tensor<T>& eps, ModelBundle<T>& bundle,
                                const TrainConfig& cfg) {
    const NoiseSchedule& sched = bundle.schedule;
    Tensor<T> x_t = forward_diffuse(x0, t, eps, sched);

    DecompositionPair<T> dec, targets;
    {
        ag::NoGradGuard ng;
        dec = bundle.dnet.decompose(y, x_t);
        targets = bundle.dnet.decompose(x0, x0);
    }

    auto cond = bundle.anet.adjust({ag::constant(dec.reflectance->value),
                                    ag::constant(dec.illumination->value)},
                                   t, sched);
    AdjustTargets<T> at{ag::constant(targets.reflectance->value),
                        ag::constant(targets.illumination->value)};
    auto l_anet = loss_anet(cond, at, static_cast<T>(cfg.lambda_ja), static_cast<T>(cfg.lambda_je),
                            cfg.hist_bins);

    auto cond_det = cond.detached();
    auto seg = bundle.backbone.extract(y);

    auto y_var = ag::constant(y);
    auto x_t_var = ag::constant(x_t);
    auto eps_hat = bundle.unet.forward(x_t_var, y_var, &cond_det, &seg, sched.gamma(t));
    auto l_unet = ag::mse_loss(eps_hat, ag::constant(eps));

    // x0_hat as a graph expression so the refinement loss reaches the UNet
    double g = sched.gamma(t);
    auto x0_hat = ag::mul_scalar(
        ag::sub(x_t_var, ag::mul_scalar(eps_hat, static_cast<T>(std::sqrt(1.0 - g)))),
        static_cast<T>(1.0 / std::sqrt(g)));
    auto x0_ref = bundle.rnet.refine(x0_hat, cond_det);
    auto l_rnet = loss_rnet(x0_ref, ag::constant(x0));

    auto total = ag::add(ag::add(ag::mul_scalar(l_unet, static_cast<T>(cfg.lambda_unet)),
                                 ag::mul_scalar(l_rnet, static_cast<T>(cfg.lambda_rnet))),
                         ag::mul_scalar(l_anet, static_cast<T>(cfg.lambda_anet)));
    return {total, l_unet, l_rnet, l_anet};
}

struct LossReport {
    double l_unet = 0, l_rnet = 0, l_anet = 0, l_all = 0;
};

// One optimizer step over a batch of (y, x0) patches. Samples are processed
// sequentially with gradients accumulated, which keeps the attention maps'
// memory bounded; t is uniform on [1,T] and eps standard normal per sample.
template <typename T>
LossReport train_step(const std::vector<std::pair<Tensor<T>, Tensor<T>>>& batch,
                      ModelBundle<T>& bundle, const TrainConfig& cfg, Rng& rng,
                      Adam<T>& adam, double lr) {
    adam.zero_grad();
    LossReport rep;
    T inv_batch = T(1) / static_cast<T>(batch.size());
    for (const auto& [y, x0] : batch) {
        int64_t t = 1 + rng.index(bundle.schedule.T);
        Tensor<T> eps(x0.shape());
        for (int64_t i = 0; i < eps.numel(); ++i) eps[i] = static_cast<T>(rng.normal());
        auto losses = training_losses(y, x0, t, eps, bundle, cfg);
        ag::backward(losses.total, inv_batch);
        rep.l_unet += ag::scalar_of(losses.unet) / static_cast<double>(batch.size());
        rep.l_rnet += ag::scalar_of(losses.rnet) / static_cast<double>(batch.size());
        rep.l_anet += ag::scalar_of(losses.anet) / static_cast<double>(batch.size());
    }
    rep.l_all = cfg.lambda_unet * rep.l_unet + cfg.lambda_rnet * rep.l_rnet + cfg.lambda_anet * rep.l_anet;
    if (!std::isfinite(rep.l_all))
        throw NumericError("training loss diverged: unet=" + std::to_string(rep.l_unet) +
                           " rnet=" + std::to_string(rep.l_rnet) + " anet=" + std::to_string(rep.l_anet));
    adam.step(lr);
    return rep;
}

// DNet pre-training step on (low, high) pairs; the x_t slot is fed with the
// image itself so the decomposition tolerates clean inputs.
template <typename T>
double dnet_pretrain_step(const std::vector<std::pair<Tensor<T>, Tensor<T>>>& batch,
                          DNet<T>& dnet, Adam<T>& adam, double lr) {
    adam.zero_grad();
    double total = 0;
    T inv_batch = T(1) / static_cast<T>(batch.size());
    for (const auto& [low, high] : batch) {
        auto low_v = ag::constant(low);
        auto high_v = ag::constant(high);
        auto dec_low = dnet.forward(low_v, low_v);
        auto dec_high = dnet.forward(high_v, high_v);
        auto rep = dnet_pretrain_loss(low_v, high_v, dec_low, dec_high);
        ag::backward(rep.total, inv_batch);
        total += ag::scalar_of(rep.total) / static_cast<double>(batch.size());
    }
    if (!std::isfinite(total)) throw NumericError("dnet pre-training loss diverged");
    adam.step(lr);
    return total;
}

} // namespace relight

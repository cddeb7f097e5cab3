#pragma once

#include <functional>
#include <string>
#include <utility>

#include "relight/bundle.hpp"

namespace relight {

struct SamplerConfig {
    int64_t steps = 8;
    uint64_t seed = 0;
    // Ablation toggles; all on reproduces the full method, all off leaves a
    // plain conditional DDIM sampler.
    bool use_retinex_cond = true;
    bool use_semantic_cond = true;
    bool use_frcm = true;
    bool use_ircm = true;
    bool use_anet = true;
};

// Test/diagnostic hook: when set, replaces the UNet's noise prediction.
template <typename T>
using NoiseOracle = std::function<Tensor<T>(const Tensor<T>& x_t, int64_t t)>;

namespace detail {

template <typename T>
void check_stage(const Tensor<T>& v, const char* stage, int64_t t) {
    if (!v.all_finite())
        throw NumericError(std::string(stage) + " produced non-finite values at step " + std::to_string(t));
}

} // namespace detail

// One reverse update t -> t_prev: decompose, adjust, denoise under the joint
// conditions, recover and refine the clean estimate, then the deterministic
// jump. Returns (x_{t_prev}, refined x0 estimate).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> reverse_step(const Tensor<T>& x_t, const Tensor<T>& y,
                                             int64_t t, int64_t t_prev,
                                             const ModelBundle<T>& bundle,
                                             const SamplerConfig& cfg,
                                             const SemanticPrior<T>* seg,
                                             const NoiseOracle<T>& oracle = nullptr) {
    ag::NoGradGuard ng;
    if (t_prev >= t) throw ParamError("reverse_step needs t_prev < t");
    const bool need_cond = cfg.use_retinex_cond || cfg.use_frcm || cfg.use_ircm;

    RetinexCondition<T> cond;
    if (need_cond) {
        auto dec = bundle.dnet.decompose(y, x_t);
        detail::check_stage(dec.reflectance->value, "dnet", t);
        if (cfg.use_anet) {
            cond = bundle.anet.adjust(dec, t, bundle.schedule);
            detail::check_stage(cond.reflectance->value, "anet", t);
        } else {
            // Raw decomposition stands in for the adjusted maps; the feature
            // taps are zeroed at the shapes ANet would produce.
            cond.reflectance = dec.reflectance;
            cond.illumination = dec.illumination;
            int64_t h = y.shape()[1], w = y.shape()[2];
            int64_t d = bundle.config.anet.depth;
            for (int64_t i = 0; i < d; ++i) {
                int64_t stride = int64_t(1) << (d - 1 - i);
                int64_t c = bundle.config.anet.base_channels << (d - 1 - i);
                cond.features.push_back(ag::constant(Tensor<T>({c, h / stride, w / stride})));
            }
        }
    }

    Tensor<T> eps_hat =
        oracle ? oracle(x_t, t)
               : bundle.unet.predict_noise(x_t, y,
                                           cfg.use_retinex_cond ? &cond : nullptr,
                                           cfg.use_semantic_cond ? seg : nullptr,
                                           t, bundle.schedule);
    detail::check_stage(eps_hat, "unet", t);

    Tensor<T> x0_hat = approx_x0(x_t, eps_hat, t, bundle.schedule);
    detail::check_stage(x0_hat, "approx_x0", t);

    Tensor<T> x0_refined = bundle.rnet.refine_image(x0_hat, cond, cfg.use_frcm, cfg.use_ircm);
    detail::check_stage(x0_refined, "rnet", t);

    Tensor<T> x_prev = t_prev == 0 ? x0_refined : ddim_step(x_t, x0_refined, t, t_prev, bundle.schedule);
    detail::check_stage(x_prev, "ddim", t);
    return {x_prev, x0_refined};
}

// Full reverse trajectory from seeded noise. The semantic prior depends only
// on y, so it is extracted once and reused by every step.
template <typename T>
Tensor<T> enhance(const Tensor<T>& y, const ModelBundle<T>& bundle, const SamplerConfig& cfg,
                  const NoiseOracle<T>& oracle = nullptr) {
    const auto& s = y.shape();
    if (s.size() != 3 || s[0] != 3) throw ShapeError("enhance wants a (3,H,W) image");
    if (s[1] % 16 || s[2] % 16)
        throw ShapeError("enhance: image " + std::to_string(s[1]) + "x" + std::to_string(s[2]) +
                         " not divisible by 16; pad to " + std::to_string((s[1] + 15) / 16 * 16) +
                         "x" + std::to_string((s[2] + 15) / 16 * 16));
    if (cfg.steps < 1 || cfg.steps > bundle.schedule.T)
        throw ParamError("sampler steps outside [1,T]");

    SemanticPrior<T> seg;
    if (cfg.use_semantic_cond) seg = bundle.backbone.extract(y);

    Rng rng(cfg.seed);
    Tensor<T> x(s);
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<T>(rng.normal());

    auto ts = sampling_timesteps(bundle.schedule.T, cfg.steps);
    Tensor<T> x0_refined;
    for (size_t i = 0; i < ts.size(); ++i) {
        int64_t t = ts[i];
        int64_t t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
        auto [x_next, x0r] = reverse_step(x, y, t, t_prev, bundle, cfg,
                                          cfg.use_semantic_cond ? &seg : nullptr, oracle);
        x = std::move(x_next);
        x0_refined = std::move(x0r);
    }
    return x0_refined;
}

} // namespace relight

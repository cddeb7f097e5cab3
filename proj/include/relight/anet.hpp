#pragma once

#include <string>
#include <vector>

#include "relight/diffusion.hpp"
#include "relight/dnet.hpp"
#include "relight/losses.hpp"
#include "relight/nn.hpp"

namespace relight {

struct ANetConfig {
    int64_t base_channels = 16;
    int64_t depth = 3;
    int64_t time_dim = 64;
};

// Adjusted Retinex condition: refined reflectance/illumination plus the
// multi-scale decoder features, deepest first (strides 4, 2, 1 at depth 3).
template <typename T>
struct RetinexCondition {
    Var<T> reflectance;
    Var<T> illumination;
    std::vector<Var<T>> features;

    // Downstream consumers (UNet, RNet) receive the condition cut off from
    // the adjustment graph; ANet trains from its own loss alone.
    RetinexCondition detached() const {
        RetinexCondition out;
        out.reflectance = ag::detach(reflectance);
        out.illumination = ag::detach(illumination);
        for (const auto& f : features) out.features.push_back(ag::detach(f));
        return out;
    }
};

// Targets for the adjustment losses: the frozen DNet's decomposition of the
// ground-truth image.
template <typename T>
struct AdjustTargets {
    Var<T> reflectance;
    Var<T> illumination;
};

// ANet: refines (R_t, L_t) into (R', L') with noise-level awareness and
// exposes its decoder features for the refinement stage.
template <typename T>
class ANet {
public:
    ANet(const ANetConfig& cfg, Rng& rng) : cfg_(cfg) {
        int64_t d = cfg.depth;
        in_conv_ = nn::Conv2d<T>(rng, 4, ch(0), 3);
        time_lin1_ = nn::Linear<T>(rng, cfg.time_dim, cfg.time_dim);
        time_lin2_ = nn::Linear<T>(rng, cfg.time_dim, cfg.time_dim);
        for (int64_t i = 0; i < d; ++i) {
            enc_.emplace_back(rng, ch(i), ch(i), cfg.time_dim);
            if (i + 1 < d) down_.emplace_back(rng, ch(i), ch(i + 1), 3, 2);
        }
        mid_ = nn::ResBlock<T>(rng, ch(d - 1), ch(d - 1), cfg.time_dim);
        for (int64_t i = d - 2; i >= 0; --i) {
            up_.emplace_back(rng, ch(i + 1), ch(i), 3);
            dec_.emplace_back(rng, 2 * ch(i), ch(i), cfg.time_dim);
        }
        head_r_ = nn::Conv2d<T>(rng, ch(0), 3, 3);
        head_l_ = nn::Conv2d<T>(rng, ch(0), 1, 3);
    }

    RetinexCondition<T> forward(const DecompositionPair<T>& c_t, double gamma_t) const {
        auto temb0 = ag::constant(nn::sinusoidal_embedding<T>(gamma_t, cfg_.time_dim));
        auto temb = time_lin2_.forward(ag::silu(time_lin1_.forward(temb0)));
        auto h = in_conv_.forward(ag::concat_ch(c_t.reflectance, c_t.illumination));
        std::vector<Var<T>> skips;
        for (size_t i = 0; i < enc_.size(); ++i) {
            h = enc_[i].forward(h, temb);
            skips.push_back(h);
            if (i < down_.size()) h = down_[i].forward(h);
        }
        h = mid_.forward(h, temb);
        RetinexCondition<T> out;
        out.features.push_back(h);
        for (size_t j = 0; j < up_.size(); ++j) {
            h = ag::upsample_nearest(h, 2);
            h = up_[j].forward(h);
            h = ag::concat_ch(h, skips[skips.size() - 2 - j]);
            h = dec_[j].forward(h, temb);
            out.features.push_back(h);
        }
        out.reflectance = ag::sigmoid(head_r_.forward(h));
        out.illumination = ag::sigmoid(head_l_.forward(h));
        return out;
    }

    // Step-indexed entry point; the time embedding encodes gamma_t.
    RetinexCondition<T> adjust(const DecompositionPair<T>& c_t, int64_t t, const NoiseSchedule& sched) const {
        return forward(c_t, sched.gamma(t));
    }

    void collect(ParamList<T>& out, const std::string& prefix = "anet") {
        in_conv_.collect(prefix + ".in", out);
        time_lin1_.collect(prefix + ".time1", out);
        time_lin2_.collect(prefix + ".time2", out);
        for (size_t i = 0; i < enc_.size(); ++i) enc_[i].collect(prefix + ".enc" + std::to_string(i), out);
        for (size_t i = 0; i < down_.size(); ++i) down_[i].collect(prefix + ".down" + std::to_string(i), out);
        mid_.collect(prefix + ".mid", out);
        for (size_t i = 0; i < up_.size(); ++i) up_[i].collect(prefix + ".up" + std::to_string(i), out);
        for (size_t i = 0; i < dec_.size(); ++i) dec_[i].collect(prefix + ".dec" + std::to_string(i), out);
        head_r_.collect(prefix + ".head_r", out);
        head_l_.collect(prefix + ".head_l", out);
    }

    const ANetConfig& config() const { return cfg_; }

private:
    int64_t ch(int64_t level) const { return cfg_.base_channels << level; }

    ANetConfig cfg_;
    nn::Conv2d<T> in_conv_, head_r_, head_l_;
    nn::Linear<T> time_lin1_, time_lin2_;
    std::vector<nn::ResBlock<T>> enc_, dec_;
    std::vector<nn::Conv2d<T>> down_, up_;
    nn::ResBlock<T> mid_;
};

// Joint adjustment loss: L1 plus structural dissimilarity against the
// ground-truth reflectance.
template <typename T>
Var<T> loss_ja(const Var<T>& r_prime, const Var<T>& r_gt) {
    return ag::add(ag::l1_loss(r_prime, r_gt), losses::ssim_loss(r_prime, r_gt));
}

// Joint exposure loss: L1 plus soft-histogram distance on illumination.
template <typename T>
Var<T> loss_je(const Var<T>& l_prime, const Var<T>& l_gt, int64_t bins = 64) {
    if (bins < 2) throw ParamError("loss_je wants bins >= 2");
    return ag::add(ag::l1_loss(l_prime, l_gt), losses::soft_hist_l1(l_prime, l_gt, bins));
}

template <typename T>
Var<T> loss_anet(const RetinexCondition<T>& cond, const AdjustTargets<T>& targets,
                 T lambda_ja, T lambda_je, int64_t bins = 64) {
    if (lambda_ja < T(0) || lambda_je < T(0)) throw ParamError("loss weights must be >= 0");
    return ag::add(ag::mul_scalar(loss_ja(cond.reflectance, targets.reflectance), lambda_ja),
                   ag::mul_scalar(loss_je(cond.illumination, targets.illumination, bins), lambda_je));
}

} // namespace relight

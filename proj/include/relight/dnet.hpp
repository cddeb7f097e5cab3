#pragma once

#include <utility>
#include <vector>

#include "relight/losses.hpp"
#include "relight/nn.hpp"

namespace relight {

using ag::Var;
using nn::ParamList;

struct DNetConfig {
    int64_t base_channels = 16;
    int64_t depth = 3;
    void validate() const {
        if (depth < 1) throw ParamError("DNet depth must be >= 1");
        if (base_channels < 4) throw ParamError("DNet base_channels must be >= 4");
    }
};

template <typename T>
struct DecompositionPair {
    Var<T> reflectance; // (3,H,W), sigmoid-bounded
    Var<T> illumination; // (1,H,W), sigmoid-bounded
};

// Lightweight UNet-style decomposition network: (y, x_t) -> (R, L). It is
// pre-trained on paired images and frozen before the diffusion model trains.
template <typename T>
class DNet {
public:
    DNet(const DNetConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        int64_t d = cfg.depth;
        in_conv_ = nn::Conv2d<T>(rng, 6, ch(0), 3);
        for (int64_t i = 0; i < d; ++i) {
            enc_.emplace_back(rng, ch(i), ch(i));
            if (i + 1 < d) down_.emplace_back(rng, ch(i), ch(i + 1), 3, 2);
        }
        mid_ = nn::ResBlock<T>(rng, ch(d - 1), ch(d - 1));
        for (int64_t i = d - 2; i >= 0; --i) {
            up_.emplace_back(rng, ch(i + 1), ch(i), 3);
            dec_.emplace_back(rng, 2 * ch(i), ch(i));
        }
        head_r_ = nn::Conv2d<T>(rng, ch(0), 3, 3);
        head_l_ = nn::Conv2d<T>(rng, ch(0), 1, 3);
    }

    // x_t is clamped to [0,1] before concatenation with y.
    DecompositionPair<T> forward(const Var<T>& y, const Var<T>& x_t) const {
        const auto& sy = y->value.shape();
        const auto& sx = x_t->value.shape();
        if (sy != sx)
            throw ShapeError("decompose: y " + y->value.shape_str() + " vs x_t " + x_t->value.shape_str());
        auto h = in_conv_.forward(ag::concat_ch(y, ag::clamp(x_t, T(0), T(1))));
        std::vector<Var<T>> skips;
        for (size_t i = 0; i < enc_.size(); ++i) {
            h = enc_[i].forward(h);
            skips.push_back(h);
            if (i < down_.size()) h = down_[i].forward(h);
        }
        h = mid_.forward(h);
        for (size_t j = 0; j < up_.size(); ++j) {
            h = ag::upsample_nearest(h, 2);
            h = up_[j].forward(h);
            h = ag::concat_ch(h, skips[skips.size() - 2 - j]);
            h = dec_[j].forward(h);
        }
        return {ag::sigmoid(head_r_.forward(h)), ag::sigmoid(head_l_.forward(h))};
    }

    DecompositionPair<T> decompose(const Tensor<T>& y, const Tensor<T>& x_t) const {
        return forward(ag::constant(y), ag::constant(x_t));
    }

    void collect(ParamList<T>& out, const std::string& prefix = "dnet") {
        in_conv_.collect(prefix + ".in", out);
        for (size_t i = 0; i < enc_.size(); ++i) enc_[i].collect(prefix + ".enc" + std::to_string(i), out);
        for (size_t i = 0; i < down_.size(); ++i) down_[i].collect(prefix + ".down" + std::to_string(i), out);
        mid_.collect(prefix + ".mid", out);
        for (size_t i = 0; i < up_.size(); ++i) up_[i].collect(prefix + ".up" + std::to_string(i), out);
        for (size_t i = 0; i < dec_.size(); ++i) dec_[i].collect(prefix + ".dec" + std::to_string(i), out);
        head_r_.collect(prefix + ".head_r", out);
        head_l_.collect(prefix + ".head_l", out);
    }

    void set_trainable(bool on) {
        ParamList<T> ps;
        collect(ps);
        for (auto& p : ps) {
            p.var->requires_grad = on;
            if (on) p.var->ensure_grad();
        }
    }

    const DNetConfig& config() const { return cfg_; }

private:
    int64_t ch(int64_t level) const { return cfg_.base_channels << level; }

    DNetConfig cfg_;
    nn::Conv2d<T> in_conv_, head_r_, head_l_;
    std::vector<nn::ResBlock<T>> enc_, dec_;
    std::vector<nn::Conv2d<T>> down_, up_;
    nn::ResBlock<T> mid_;
};

template <typename T>
struct DNetLossReport {
    Var<T> total;
    T reconstruction;
    T constant_reflectance;
    T smoothness;
};

// RetinexNet-style pre-training objective: paired reconstruction (with weak
// cross terms), constant reflectance across the pair, and edge-aware smooth
// illumination.
template <typename T>
DNetLossReport<T> dnet_pretrain_loss(const Var<T>& low, const Var<T>& high,
                                     const DecompositionPair<T>& dec_low,
                                     const DecompositionPair<T>& dec_high,
                                     T w_rec = T(1), T w_cr = T(0.01), T w_sm = T(0.1)) {
    auto recon = [](const Var<T>& r, const Var<T>& l) { return ag::mul_bcast1(r, l); };
    auto l_rec = ag::l1_loss(recon(dec_low.reflectance, dec_low.illumination), low);
    l_rec = ag::add(l_rec, ag::l1_loss(recon(dec_high.reflectance, dec_high.illumination), high));
    auto cross = ag::add(ag::l1_loss(recon(dec_high.reflectance, dec_low.illumination), low),
                         ag::l1_loss(recon(dec_low.reflectance, dec_high.illumination), high));
    l_rec = ag::add(l_rec, ag::mul_scalar(cross, T(0.001)));

    auto l_cr = ag::l1_loss(dec_low.reflectance, dec_high.reflectance);

    auto l_sm = ag::add(losses::edge_aware_smoothness(dec_low.illumination, dec_low.reflectance),
                        losses::edge_aware_smoothness(dec_high.illumination, dec_high.reflectance));

    auto total = ag::add(ag::add(ag::mul_scalar(l_rec, w_rec), ag::mul_scalar(l_cr, w_cr)),
                         ag::mul_scalar(l_sm, w_sm));
    return {total, ag::scalar_of(l_rec), ag::scalar_of(l_cr), ag::scalar_of(l_sm)};
}

} // namespace relight

#pragma once

#include <array>
#include <string>
#include <vector>

#include "relight/anet.hpp"
#include "relight/nn.hpp"

namespace relight {

struct RNetConfig {
    int64_t feat_channels = 16;
    std::array<int64_t, 3> cond_channels = {64, 32, 16}; // ANet feature widths, deepest first
};

// Conditional affine transform a -> (1 + g(b)) (.) conv(a) + s(b): the scale
// and shift maps come from a two-layer head over the conditioning input. With
// the head zeroed the transform reduces to conv(a).
template <typename T>
struct CondAffine {
    nn::Conv2d<T> conv_a, head1, head2;
    int64_t out_channels = 0;

    CondAffine() = default;
    CondAffine(Rng& rng, int64_t ca, int64_t cb, int64_t cout, int64_t hidden)
        : conv_a(rng, ca, cout, 3),
          head1(rng, cb, hidden, 3),
          head2(rng, hidden, 2 * cout, 1, 1, /*zero=*/true),
          out_channels(cout) {}

    Var<T> forward(const Var<T>& a, const Var<T>& b) const {
        auto h = conv_a.forward(a);
        auto gb = head2.forward(ag::silu(head1.forward(b)));
        auto scale = ag::add_scalar(ag::slice_ch(gb, 0, out_channels), T(1));
        auto shift = ag::slice_ch(gb, out_channels, 2 * out_channels);
        return ag::add(ag::mul(scale, h), shift);
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        conv_a.collect(prefix + ".conv", out);
        head1.collect(prefix + ".head1", out);
        head2.collect(prefix + ".head2", out);
    }
};

// RNet: refines the per-step clean estimate with the Retinex condition at
// feature level (affine modulation from the ANet features) and image level
// (residual Retinex transform chain), then clamps into [0,1].
template <typename T>
class RNet {
public:
    explicit RNet(const RNetConfig& cfg, Rng& rng) : cfg_(cfg) {
        int64_t c = cfg.feat_channels;
        feat_in_ = nn::Conv2d<T>(rng, 3, c, 3);
        frcm_proj_ = nn::Conv2d<T>(rng, c, c, 3);
        int64_t cond_total = cfg.cond_channels[0] + cfg.cond_channels[1] + cfg.cond_channels[2];
        frcm_head1_ = nn::Conv2d<T>(rng, cond_total, 2 * c, 1);
        frcm_head2_ = nn::Conv2d<T>(rng, 2 * c, 2 * c, 1, 1, /*zero=*/true);
        t_illum_ = CondAffine<T>(rng, 1, 3, c, c);
        t_refl_ = CondAffine<T>(rng, 3, c, c, c);
        t_image_ = CondAffine<T>(rng, 3, c, 3, c);
        out_proj_ = nn::Conv2d<T>(rng, c, 3, 3, 1, /*zero=*/true);
    }

    // Feature-level module: unify the multi-scale ANet features, derive
    // (F_gamma, F_beta), and modulate the projected estimate feature.
    Var<T> frcm(const Var<T>& f_x0, const std::vector<Var<T>>& cond_features) const {
        if (cond_features.size() != 3) throw ShapeError("frcm wants 3 condition scales");
        int64_t H = f_x0->value.shape()[1], W = f_x0->value.shape()[2];
        Var<T> unified;
        for (size_t i = 0; i < cond_features.size(); ++i) {
            auto f = cond_features[i];
            int64_t fh = f->value.shape()[1];
            if (fh != H) f = ag::upsample_nearest(f, H / fh);
            if (f->value.shape()[1] != H || f->value.shape()[2] != W)
                throw ShapeError("frcm condition scale " + std::to_string(i) + " does not unify");
            unified = i == 0 ? f : ag::concat_ch(unified, f);
        }
        auto gb = frcm_head2_.forward(ag::silu(frcm_head1_.forward(unified)));
        int64_t c = cfg_.feat_channels;
        auto f_gamma = ag::add_scalar(ag::slice_ch(gb, 0, c), T(1));
        auto f_beta = ag::slice_ch(gb, c, 2 * c);
        return ag::add(ag::mul(f_gamma, frcm_proj_.forward(f_x0)), f_beta);
    }

    // Image-level module: delta = T(R' | T(L' | x0)); out = T(x0 | delta) + W(F).
    Var<T> ircm(const Var<T>& x0_hat, const Var<T>& reflectance, const Var<T>& illumination,
                const Var<T>& f_refined) const {
        auto xc = ag::clamp(x0_hat, T(-1), T(2));
        auto inner = t_illum_.forward(illumination, xc);
        auto delta = t_refl_.forward(reflectance, inner);
        auto image = t_image_.forward(xc, delta);
        return ag::clamp(ag::add(image, out_proj_.forward(f_refined)), T(0), T(1));
    }

    // Full refinement. Bypassed modules degrade gracefully: no FRCM feeds the
    // raw estimate feature to IRCM; no IRCM keeps the feature path as a plain
    // residual on the image; both off reduces to clamp(x0_hat).
    Var<T> refine(const Var<T>& x0_hat, const RetinexCondition<T>& cond,
                  bool use_frcm = true, bool use_ircm = true) const {
        if (!use_frcm && !use_ircm) return ag::clamp(x0_hat, T(0), T(1));
        auto xc = ag::clamp(x0_hat, T(-1), T(2));
        auto f_x0 = feat_in_.forward(xc);
        auto f_ref = use_frcm ? frcm(f_x0, cond.features) : f_x0;
        if (use_ircm) return ircm(x0_hat, cond.reflectance, cond.illumination, f_ref);
        return ag::clamp(ag::add(xc, out_proj_.forward(f_ref)), T(0), T(1));
    }

    Tensor<T> refine_image(const Tensor<T>& x0_hat, const RetinexCondition<T>& cond,
                           bool use_frcm = true, bool use_ircm = true) const {
        ag::NoGradGuard ng;
        return refine(ag::constant(x0_hat), cond, use_frcm, use_ircm)->value;
    }

    void collect(ParamList<T>& out, const std::string& prefix = "rnet") {
        feat_in_.collect(prefix + ".feat", out);
        frcm_proj_.collect(prefix + ".frcm_proj", out);
        frcm_head1_.collect(prefix + ".frcm_head1", out);
        frcm_head2_.collect(prefix + ".frcm_head2", out);
        t_illum_.collect(prefix + ".t_illum", out);
        t_refl_.collect(prefix + ".t_refl", out);
        t_image_.collect(prefix + ".t_image", out);
        out_proj_.collect(prefix + ".out_proj", out);
    }

    const RNetConfig& config() const { return cfg_; }

    // Exposed for weight-surgery tests (identity/zero forcing).
    nn::Conv2d<T>& frcm_projection() { return frcm_proj_; }
    nn::Conv2d<T>& frcm_head_first() { return frcm_head1_; }
    nn::Conv2d<T>& frcm_head_last() { return frcm_head2_; }
    CondAffine<T>& illum_transform() { return t_illum_; }
    CondAffine<T>& refl_transform() { return t_refl_; }
    CondAffine<T>& image_transform() { return t_image_; }
    nn::Conv2d<T>& output_projection() { return out_proj_; }

private:
    RNetConfig cfg_;
    nn::Conv2d<T> feat_in_, frcm_proj_, frcm_head1_, frcm_head2_, out_proj_;
    CondAffine<T> t_illum_, t_refl_, t_image_;
};

// Mean squared error against the clean target.
template <typename T>
Var<T> loss_rnet(const Var<T>& x0_refined, const Var<T>& x0) {
    return ag::mse_loss(x0_refined, x0);
}

} // namespace relight

#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "relight/anet.hpp"
#include "relight/diffusion.hpp"
#include "relight/nn.hpp"
#include "relight/semantic.hpp"

namespace relight {

// Scaled dot-product attention over CHW feature maps: queries from the stage
// feature, keys/values from (possibly different) sources. The output
// projection is zero-initialized so every attention layer starts as an exact
// identity around its residual connection.
template <typename T>
struct AttentionCore {
    nn::Conv2d<T> proj_q, proj_k, proj_v, proj_out;
    int64_t dim = 0, heads = 1; // dim 0 marks an absent layer

    AttentionCore() = default;
    AttentionCore(Rng& rng, int64_t c_q, int64_t c_k, int64_t c_v, int64_t c_out,
                  int64_t dim_, int64_t heads_)
        : proj_q(rng, c_q, dim_, 1), proj_k(rng, c_k, dim_, 1), proj_v(rng, c_v, dim_, 1),
          proj_out(rng, dim_, c_out, 1, 1, /*zero=*/true), dim(dim_), heads(heads_) {
        if (dim % heads) throw ParamError("attention dim not divisible by head count");
    }

    Var<T> branch(const Var<T>& feat, const Var<T>& k_src, const Var<T>& v_src) const {
        if (k_src->value.shape()[1] != v_src->value.shape()[1] ||
            k_src->value.shape()[2] != v_src->value.shape()[2])
            throw ShapeError("attention key/value spatial mismatch");
        auto q = proj_q.forward(feat);
        auto k = proj_k.forward(k_src);
        auto v = proj_v.forward(v_src);
        int64_t H = feat->value.shape()[1], W = feat->value.shape()[2];
        int64_t hd = dim / heads;
        T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
        Var<T> merged;
        for (int64_t h = 0; h < heads; ++h) {
            auto qh = ag::chw_to_tokens(ag::slice_ch(q, h * hd, (h + 1) * hd));
            auto kh = ag::chw_to_tokens(ag::slice_ch(k, h * hd, (h + 1) * hd));
            auto vh = ag::chw_to_tokens(ag::slice_ch(v, h * hd, (h + 1) * hd));
            auto probs = ag::softmax_rows(ag::matmul(qh, kh, false, true, scale));
            auto oh = ag::tokens_to_chw(ag::matmul(probs, vh), H, W);
            merged = h == 0 ? oh : ag::concat_ch(merged, oh);
        }
        return proj_out.forward(merged);
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        proj_q.collect(prefix + ".q", out);
        proj_k.collect(prefix + ".k", out);
        proj_v.collect(prefix + ".v", out);
        proj_out.collect(prefix + ".out", out);
    }
};

// Self-attention against the adjusted reflectance and illumination embeddings.
// R_em keeps the stage resolution; L_em is downsampled once more since the
// lighting field is smooth.
template <typename T>
struct RetinexAttentionLayer {
    int64_t stride = 1;
    nn::Conv2d<T> embed_r, embed_l;
    AttentionCore<T> attn_r, attn_l;

    RetinexAttentionLayer() = default;
    RetinexAttentionLayer(Rng& rng, int64_t channels, int64_t stride_, int64_t dim, int64_t heads)
        : stride(stride_),
          embed_r(rng, 3, dim, 1),
          embed_l(rng, 1, dim, 3, 2),
          attn_r(rng, channels, dim, dim, channels, dim, heads),
          attn_l(rng, channels, dim, dim, channels, dim, heads) {}

    Var<T> forward(const Var<T>& feat, const Var<T>& reflectance, const Var<T>& illumination) const {
        auto r_s = stride > 1 ? ag::avg_pool(reflectance, stride) : reflectance;
        auto l_s = stride > 1 ? ag::avg_pool(illumination, stride) : illumination;
        auto r_em = embed_r.forward(r_s);
        auto l_em = embed_l.forward(l_s);
        auto h = ag::add(feat, attn_r.branch(feat, r_em, r_em));
        return ag::add(h, attn_l.branch(h, l_em, l_em));
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        embed_r.collect(prefix + ".embed_r", out);
        embed_l.collect(prefix + ".embed_l", out);
        attn_r.collect(prefix + ".attn_r", out);
        attn_l.collect(prefix + ".attn_l", out);
    }
};

// Adaptive blend of a structure-preserving self-attention branch (semantic
// features fused into the values) and a cross-attention branch keyed on the
// semantic features. The blend weights are learnable scalars.
template <typename T>
struct SemanticAttentionLayer {
    Var<T> lambda_sa, lambda_ca;
    AttentionCore<T> attn_sa, attn_ca;

    SemanticAttentionLayer() = default;
    SemanticAttentionLayer(Rng& rng, int64_t channels, int64_t sem_channels, int64_t dim, int64_t heads)
        : lambda_sa(nn::make_param(Tensor<T>::scalar(T(1)))),
          lambda_ca(nn::make_param(Tensor<T>::scalar(T(0)))),
          attn_sa(rng, channels, channels, channels + sem_channels, channels, dim, heads),
          attn_ca(rng, channels, sem_channels, sem_channels, channels, dim, heads) {}

    Var<T> forward(const Var<T>& feat, const Var<T>& sem) const {
        if (feat->value.shape()[1] != sem->value.shape()[1] ||
            feat->value.shape()[2] != sem->value.shape()[2])
            throw ShapeError("semantic attention stride mismatch: feature " +
                             feat->value.shape_str() + " vs prior " + sem->value.shape_str());
        auto sa = attn_sa.branch(feat, feat, ag::concat_ch(feat, sem));
        auto ca = attn_ca.branch(feat, sem, sem);
        return ag::add(feat, ag::add(ag::mul_scalar_var(sa, lambda_sa),
                                     ag::mul_scalar_var(ca, lambda_ca)));
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".lambda_sa", lambda_sa});
        out.push_back({prefix + ".lambda_ca", lambda_ca});
        attn_sa.collect(prefix + ".sa", out);
        attn_ca.collect(prefix + ".ca", out);
    }
};

struct UNetConfig {
    int64_t base_channels = 16;
    std::vector<int64_t> channel_mult = {1, 1, 2, 2, 4}; // level i sits at stride 2^i
    int64_t time_dim = 64;
    int64_t retinex_dim = 8;
    int64_t semantic_dim = 16;
    int64_t attn_heads = 1;
    std::vector<int64_t> retinex_levels = {0, 1};      // encoder placements
    std::vector<int64_t> semantic_levels = {2, 3, 4};  // decoder placements
    std::array<int64_t, 3> semantic_channels = {64, 32, 16};
    bool with_retinex_attention = true;  // structural: whether the layers exist
    bool with_semantic_attention = true;

    void validate() const {
        if (channel_mult.empty()) throw ParamError("UNet needs at least one level");
        for (int64_t lvl : semantic_levels) {
            int64_t stride = int64_t(1) << lvl;
            if (stride != 4 && stride != 8 && stride != 16)
                throw ParamError("semantic attention level must sit at stride 4, 8 or 16");
            if (lvl >= static_cast<int64_t>(channel_mult.size()))
                throw ParamError("semantic attention level outside the UNet");
        }
        for (int64_t lvl : retinex_levels)
            if (lvl >= static_cast<int64_t>(channel_mult.size()))
                throw ParamError("retinex attention level outside the UNet");
    }
};

// The denoiser: a time-conditioned UNet over concat(x_t, y) with Retinex
// attention in early encoder stages and semantic attention in the decoder.
template <typename T>
class UNet {
public:
    UNet(const UNetConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        int64_t levels = static_cast<int64_t>(cfg.channel_mult.size());
        in_conv_ = nn::Conv2d<T>(rng, 6, ch(0), 3);
        time_lin1_ = nn::Linear<T>(rng, cfg.time_dim, cfg.time_dim);
        time_lin2_ = nn::Linear<T>(rng, cfg.time_dim, cfg.time_dim);
        retinex_attn_.resize(static_cast<size_t>(levels));
        semantic_attn_.resize(static_cast<size_t>(levels));
        for (int64_t i = 0; i < levels; ++i) {
            enc_.emplace_back(rng, ch(i), ch(i), cfg.time_dim);
            if (i + 1 < levels) down_.emplace_back(rng, ch(i), ch(i + 1), 3, 2);
            if (cfg.with_retinex_attention && is_in(cfg.retinex_levels, i))
                retinex_attn_[static_cast<size_t>(i)] =
                    RetinexAttentionLayer<T>(rng, ch(i), int64_t(1) << i, cfg.retinex_dim, cfg.attn_heads);
        }
        mid1_ = nn::ResBlock<T>(rng, ch(levels - 1), ch(levels - 1), cfg.time_dim);
        mid2_ = nn::ResBlock<T>(rng, ch(levels - 1), ch(levels - 1), cfg.time_dim);
        for (int64_t i = levels - 1; i >= 0; --i) {
            dec_.emplace_back(rng, 2 * ch(i), ch(i), cfg.time_dim);
            if (cfg.with_semantic_attention && is_in(cfg.semantic_levels, i))
                semantic_attn_[static_cast<size_t>(i)] = SemanticAttentionLayer<T>(
                    rng, ch(i), semantic_channels_for(int64_t(1) << i), cfg.semantic_dim, cfg.attn_heads);
            if (i > 0) up_.emplace_back(rng, ch(i), ch(i - 1), 3);
        }
        gn_out_ = nn::GroupNorm<T>(ch(0));
        out_conv_ = nn::Conv2d<T>(rng, ch(0), 3, 3, 1, /*zero=*/true);
    }

    // cond/seg may be null; gamma_t drives the time embedding.
    Var<T> forward(const Var<T>& x_t, const Var<T>& y,
                   const RetinexCondition<T>* cond, const SemanticPrior<T>* seg,
                   double gamma_t) const {
        check_same_shape(x_t->value, y->value, "predict_noise");
        auto temb0 = ag::constant(nn::sinusoidal_embedding<T>(gamma_t, cfg_.time_dim));
        auto temb = time_lin2_.forward(ag::silu(time_lin1_.forward(temb0)));
        int64_t levels = static_cast<int64_t>(cfg_.channel_mult.size());
        auto h = in_conv_.forward(ag::concat_ch(x_t, y));
        std::vector<Var<T>> skips;
        for (int64_t i = 0; i < levels; ++i) {
            h = enc_[static_cast<size_t>(i)].forward(h, temb);
            if (cond && retinex_attn_[static_cast<size_t>(i)].attn_r.dim)
                h = retinex_attn_[static_cast<size_t>(i)].forward(h, cond->reflectance, cond->illumination);
            skips.push_back(h);
            if (i + 1 < levels) h = down_[static_cast<size_t>(i)].forward(h);
        }
        h = mid1_.forward(h, temb);
        h = mid2_.forward(h, temb);
        for (int64_t i = levels - 1; i >= 0; --i) {
            h = ag::concat_ch(h, skips[static_cast<size_t>(i)]);
            h = dec_[static_cast<size_t>(levels - 1 - i)].forward(h, temb);
            if (seg && semantic_attn_[static_cast<size_t>(i)].attn_sa.dim)
                h = semantic_attn_[static_cast<size_t>(i)].forward(h, prior_for(*seg, int64_t(1) << i));
            if (i > 0) {
                h = ag::upsample_nearest(h, 2);
                h = up_[static_cast<size_t>(levels - 1 - i)].forward(h);
            }
        }
        return out_conv_.forward(ag::silu(gn_out_.forward(h)));
    }

    // Inference entry point: no graph, finiteness surfaced with the step.
    Tensor<T> predict_noise(const Tensor<T>& x_t, const Tensor<T>& y,
                            const RetinexCondition<T>* cond, const SemanticPrior<T>* seg,
                            int64_t t, const NoiseSchedule& sched) const {
        ag::NoGradGuard ng;
        auto out = forward(ag::constant(x_t), ag::constant(y), cond, seg, sched.gamma(t));
        if (!out->value.all_finite())
            throw NumericError("non-finite noise prediction at step " + std::to_string(t));
        return out->value;
    }

    void collect(ParamList<T>& out, const std::string& prefix = "unet") {
        in_conv_.collect(prefix + ".in", out);
        time_lin1_.collect(prefix + ".time1", out);
        time_lin2_.collect(prefix + ".time2", out);
        for (size_t i = 0; i < enc_.size(); ++i) enc_[i].collect(prefix + ".enc" + std::to_string(i), out);
        for (size_t i = 0; i < down_.size(); ++i) down_[i].collect(prefix + ".down" + std::to_string(i), out);
        for (size_t i = 0; i < retinex_attn_.size(); ++i)
            if (retinex_attn_[i].attn_r.dim && cfg_.with_retinex_attention)
                retinex_attn_[i].collect(prefix + ".rattn" + std::to_string(i), out);
        mid1_.collect(prefix + ".mid1", out);
        mid2_.collect(prefix + ".mid2", out);
        for (size_t i = 0; i < dec_.size(); ++i) dec_[i].collect(prefix + ".dec" + std::to_string(i), out);
        for (size_t i = 0; i < semantic_attn_.size(); ++i)
            if (semantic_attn_[i].attn_sa.dim && cfg_.with_semantic_attention)
                semantic_attn_[i].collect(prefix + ".sattn" + std::to_string(i), out);
        for (size_t i = 0; i < up_.size(); ++i) up_[i].collect(prefix + ".up" + std::to_string(i), out);
        gn_out_.collect(prefix + ".gn_out", out);
        out_conv_.collect(prefix + ".out", out);
    }

    const UNetConfig& config() const { return cfg_; }

private:
    static bool is_in(const std::vector<int64_t>& v, int64_t x) {
        return std::find(v.begin(), v.end(), x) != v.end();
    }
    int64_t ch(int64_t level) const {
        return cfg_.base_channels * cfg_.channel_mult[static_cast<size_t>(level)];
    }
    int64_t semantic_channels_for(int64_t stride) const {
        return stride == 16 ? cfg_.semantic_channels[0]
             : stride == 8  ? cfg_.semantic_channels[1]
                            : cfg_.semantic_channels[2];
    }
    static const Var<T>& prior_for(const SemanticPrior<T>& seg, int64_t stride) {
        return stride == 16 ? seg.f0 : stride == 8 ? seg.f1 : seg.f2;
    }

    UNetConfig cfg_;
    nn::Conv2d<T> in_conv_, out_conv_;
    nn::Linear<T> time_lin1_, time_lin2_;
    nn::GroupNorm<T> gn_out_;
    std::vector<nn::ResBlock<T>> enc_, dec_;
    std::vector<nn::Conv2d<T>> down_, up_;
    std::vector<RetinexAttentionLayer<T>> retinex_attn_;
    std::vector<SemanticAttentionLayer<T>> semantic_attn_;
    nn::ResBlock<T> mid1_, mid2_;
};

} // namespace relight

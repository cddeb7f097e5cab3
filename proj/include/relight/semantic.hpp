#pragma once

#include <array>
#include <string>
#include <vector>

#include "relight/nn.hpp"

namespace relight {

struct BackboneSpec {
    std::string name = "conv3";
    std::array<int64_t, 3> channel_counts = {64, 32, 16}; // C0 (H/16), C1 (H/8), C2 (H/4)
    bool frozen = true;
};

// Multi-scale semantic features from the frozen backbone; class logits are
// never produced. F_s^b has spatial size (H/2^(4-b), W/2^(4-b)).
template <typename T>
struct SemanticPrior {
    Var<T> f0; // (C0, H/16, W/16)
    Var<T> f1; // (C1, H/8, W/8)
    Var<T> f2; // (C2, H/4, W/4)
};

// Desk-scale stand-in for an off-the-shelf segmentation encoder: a small
// strided conv pyramid with a fixed random initialization that is persisted in
// the checkpoint. The interface only assumes three strided stages, so a real
// pretrained encoder can be dropped in behind it.
template <typename T>
class SegBackbone {
public:
    SegBackbone(const BackboneSpec& spec, Rng& rng) : spec_(spec) {
        int64_t c2 = spec.channel_counts[2], c1 = spec.channel_counts[1], c0 = spec.channel_counts[0];
        stem1_ = nn::Conv2d<T>(rng, 3, 8, 3, 2);
        stem2_ = nn::Conv2d<T>(rng, 8, c2, 3, 2);
        stage1_ = nn::Conv2d<T>(rng, c2, c1, 3, 2);
        stage0_ = nn::Conv2d<T>(rng, c1, c0, 3, 2);
        freeze();
    }

    SemanticPrior<T> extract(const Tensor<T>& y) const {
        const auto& s = y.shape();
        if (s.size() != 3 || s[0] != 3) throw ShapeError("extract wants a (3,H,W) image");
        if (s[1] % 16 || s[2] % 16)
            throw ShapeError("extract: image " + std::to_string(s[1]) + "x" + std::to_string(s[2]) +
                             " not divisible by 16; pad to " +
                             std::to_string((s[1] + 15) / 16 * 16) + "x" +
                             std::to_string((s[2] + 15) / 16 * 16));
        ag::NoGradGuard ng;
        auto h = ag::silu(stem1_.forward(ag::constant(y)));
        auto f2 = ag::silu(stem2_.forward(h));
        auto f1 = ag::silu(stage1_.forward(f2));
        auto f0 = ag::silu(stage0_.forward(f1));
        return {f0, f1, f2};
    }

    void collect(ParamList<T>& out, const std::string& prefix = "seg_backbone") {
        stem1_.collect(prefix + ".stem1", out);
        stem2_.collect(prefix + ".stem2", out);
        stage1_.collect(prefix + ".stage1", out);
        stage0_.collect(prefix + ".stage0", out);
    }

    const BackboneSpec& spec() const { return spec_; }

private:
    void freeze() {
        ParamList<T> ps;
        collect(ps);
        for (auto& p : ps) p.var->requires_grad = false;
    }

    BackboneSpec spec_;
    nn::Conv2d<T> stem1_, stem2_, stage1_, stage0_;
};

} // namespace relight

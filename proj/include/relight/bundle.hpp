#pragma once

#include <cstdint>
#include <memory>

#include "relight/anet.hpp"
#include "relight/diffusion.hpp"
#include "relight/dnet.hpp"
#include "relight/rnet.hpp"
#include "relight/semantic.hpp"
#include "relight/unet.hpp"

namespace relight {

struct ModelConfig {
    DNetConfig dnet;
    ANetConfig anet;
    UNetConfig unet;
    RNetConfig rnet;
    BackboneSpec backbone;
    int64_t schedule_steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 2e-2;
    uint64_t init_seed = 17;
};

// The trainable networks plus the frozen pieces they depend on. Construction
// order is fixed so a seed fully determines every weight.
template <typename T>
struct ModelBundle {
    ModelConfig config;
    NoiseSchedule schedule;
    DNet<T> dnet;
    ANet<T> anet;
    UNet<T> unet;
    RNet<T> rnet;
    SegBackbone<T> backbone;

    explicit ModelBundle(const ModelConfig& cfg)
        : ModelBundle(cfg, [&] {
              Rng rng(cfg.init_seed);
              return rng;
          }()) {}

    ModelBundle(const ModelConfig& cfg, Rng init_rng)
        : config(cfg),
          schedule(make_schedule(cfg.schedule_steps, cfg.beta_start, cfg.beta_end)),
          dnet(cfg.dnet, init_rng),
          anet(cfg.anet, init_rng),
          unet(cfg.unet, init_rng),
          rnet(cfg.rnet, init_rng),
          backbone(cfg.backbone, init_rng) {}

    // Main-stage optimizer scope: ANet, UNet, RNet. DNet and the backbone stay
    // frozen.
    nn::ParamList<T> trainable_params() {
        nn::ParamList<T> out;
        anet.collect(out);
        unet.collect(out);
        rnet.collect(out);
        return out;
    }

    nn::ParamList<T> all_params() {
        nn::ParamList<T> out;
        dnet.collect(out);
        anet.collect(out);
        unet.collect(out);
        rnet.collect(out);
        backbone.collect(out);
        return out;
    }

    void freeze_dnet() { dnet.set_trainable(false); }
};

// Desk-scale defaults small enough to train on a CPU while keeping every
// architectural element in place.
inline ModelConfig desk_model_config() {
    return ModelConfig{};
}

} // namespace relight

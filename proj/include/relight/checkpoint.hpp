#pragma once

#include <memory>
#include <string>

#include "relight/bundle.hpp"
#include "relight/config.hpp"
#include "relight/trainer.hpp"

namespace relight {

inline constexpr uint32_t kCheckpointVersion = 1;

// Everything needed to resume a run: model parameters (entries dnet, anet,
// unet, rnet, seg_backbone), the config snapshot, iteration counter, RNG
// state and optimizer moments. A missing entry fails loudly by name.
struct LoadedCheckpoint {
    Config config;
    int64_t iteration = 0;
    std::string rng_state;
    std::unique_ptr<ModelBundle<float>> bundle;
    bool has_optimizer = false;
    int64_t adam_steps = 0;
    std::vector<Tensor<float>> adam_m, adam_v;
};

// Serialization is byte-deterministic (fixed section and parameter order);
// the file is written to a temp path and atomically renamed into place.
void save_checkpoint(const std::string& path, ModelBundle<float>& bundle, const Config& config,
                     int64_t iteration, const std::string& rng_state,
                     Adam<float>* adam = nullptr);

LoadedCheckpoint load_checkpoint(const std::string& path);

// Restores optimizer moments captured by load_checkpoint into a fresh Adam
// built over the same parameter order.
void restore_adam(Adam<float>& adam, const LoadedCheckpoint& ck);

} // namespace relight

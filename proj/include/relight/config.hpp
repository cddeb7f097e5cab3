#pragma once

#include <string>

#include "relight/bundle.hpp"
#include "relight/sampler.hpp"
#include "relight/trainer.hpp"

namespace relight {

// Full runtime configuration: training hyperparameters, sampler settings and
// model layout. Serialized as a flat `key = value` text file whose keys
// mirror the struct fields; '#' starts a comment.
struct Config {
    TrainConfig train;
    SamplerConfig sampler;
    ModelConfig model;
};

Config default_config();

// Defaults overridden by the file's entries. Unknown keys are an error.
Config read_config(const std::string& path);

Config parse_config_text(const std::string& text);

// Deterministic rendering (fixed key order, round-trip exact floats); also
// used as the checkpoint's embedded config snapshot.
std::string config_to_text(const Config& cfg);

} // namespace relight

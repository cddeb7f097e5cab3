#pragma once

#include <vector>

#include "relight/tensor.hpp"

namespace relight::retinex {

// Classical Retinex building blocks on plain float tensors. Images are CHW in
// [0,1]: reflectance (3,H,W), illumination (1,H,W). These back the DNet
// pre-training targets and serve as oracles/diagnostics; nothing here is
// learned or differentiated.

// I = R (.) L, broadcasting the single illumination channel.
Tensor<float> reconstruct(const Tensor<float>& reflectance, const Tensor<float>& illumination);

// Channel-mean luminance blurred with a normalized Gaussian surround
// (radius = ceil(3 sigma), reflect padding). Output (1,H,W).
Tensor<float> gaussian_surround(const Tensor<float>& image, float sigma);

// Multi-scale Retinex: mean over scales of log(I) - log(G(I)), with inputs
// floored at eps_log before the logs. Output (3,H,W), unbounded.
Tensor<float> msr_reflectance(const Tensor<float>& image, const std::vector<float>& sigmas);

// exp() then per-channel percentile stretch (1st..99th) into [0,1]; a flat
// channel maps to 0.5.
Tensor<float> linear_stretch(const Tensor<float>& log_reflectance);

// {15, 80, 250} scaled from a 512px reference down to the working resolution.
std::vector<float> default_msr_sigmas(int64_t height, int64_t width);

constexpr float kLogFloor = 1e-4f;

} // namespace relight::retinex

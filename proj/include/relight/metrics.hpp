#pragma once

#include <cstdint>

#include "relight/tensor.hpp"

namespace relight::metrics {

// Evaluation-side quality metrics on CHW float images in [0,1]. The training
// losses keep their own differentiable counterparts; these are the reference
// implementations the CLI reports.

// 10 log10(1/MSE), capped at 100 dB when the images are identical.
double psnr(const Tensor<float>& a, const Tensor<float>& b);

// Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5), per channel.
double ssim(const Tensor<float>& a, const Tensor<float>& b);

// L1 distance between sum-normalized hard histograms of two single-channel
// images; lies in [0,2].
double hist_l1(const Tensor<float>& a, const Tensor<float>& b, int64_t bins);

// Channel-mean luminance (1,H,W), shared by hist-based evaluation.
Tensor<float> luminance(const Tensor<float>& image);

} // namespace relight::metrics

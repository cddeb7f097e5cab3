#pragma once

#include <string>

#include "relight/tensor.hpp"

namespace relight::io {

// 8-bit PNG in, float CHW [0,1] out (always 3 channels; gray is replicated).
Tensor<float> read_png(const std::string& path);

// Writes (3,H,W) as RGB or (1,H,W) as grayscale; values clamped then scaled
// by 255 and rounded.
void write_png(const std::string& path, const Tensor<float>& image);

} // namespace relight::io

#include "relight/retinex.hpp"

#include <algorithm>
#include <cmath>

#include "relight/errors.hpp"

namespace relight::retinex {

namespace {

// symmetric reflection: -1 -> 0, n -> n-1
int64_t reflect(int64_t i, int64_t n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - i - 1;
    }
    return i;
}

std::vector<double> gaussian_kernel(float sigma) {
    int64_t radius = static_cast<int64_t>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int64_t i = -radius; i <= radius; ++i) {
        double v = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
        k[static_cast<size_t>(i + radius)] = v;
        sum += v;
    }
    for (double& v : k) v /= sum;
    return k;
}

} // namespace

Tensor<float> reconstruct(const Tensor<float>& reflectance, const Tensor<float>& illumination) {
    const auto& sr = reflectance.shape();
    const auto& sl = illumination.shape();
    if (sr.size() != 3 || sl.size() != 3 || sl[0] != 1 || sr[1] != sl[1] || sr[2] != sl[2])
        throw ShapeError("reconstruct: reflectance " + reflectance.shape_str() +
                         " vs illumination " + illumination.shape_str());
    Tensor<float> out(sr);
    int64_t hw = sr[1] * sr[2];
    for (int64_t c = 0; c < sr[0]; ++c)
        for (int64_t p = 0; p < hw; ++p)
            out[c * hw + p] = reflectance[c * hw + p] * illumination[p];
    return out;
}

Tensor<float> gaussian_surround(const Tensor<float>& image, float sigma) {
    if (!(sigma > 0.f)) throw ParamError("gaussian_surround needs sigma > 0");
    const auto& s = image.shape();
    if (s.size() != 3) throw ShapeError("gaussian_surround wants (C,H,W)");
    int64_t C = s[0], H = s[1], W = s[2];

    // luminance = channel mean
    Tensor<float> lum({1, H, W});
    for (int64_t p = 0; p < H * W; ++p) {
        double acc = 0;
        for (int64_t c = 0; c < C; ++c) acc += image[c * H * W + p];
        lum[p] = static_cast<float>(acc / static_cast<double>(C));
    }

    // separable pass; the product of the normalized 1-D kernels equals the
    // normalized 2-D kernel on the square support
    auto k = gaussian_kernel(sigma);
    int64_t radius = static_cast<int64_t>(k.size() / 2);
    Tensor<float> tmp({1, H, W});
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            double acc = 0;
            for (int64_t d = -radius; d <= radius; ++d)
                acc += k[static_cast<size_t>(d + radius)] * lum[y * W + reflect(x + d, W)];
            tmp[y * W + x] = static_cast<float>(acc);
        }
    Tensor<float> out({1, H, W});
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            double acc = 0;
            for (int64_t d = -radius; d <= radius; ++d)
                acc += k[static_cast<size_t>(d + radius)] * tmp[reflect(y + d, H) * W + x];
            out[y * W + x] = static_cast<float>(acc);
        }
    return out;
}

Tensor<float> msr_reflectance(const Tensor<float>& image, const std::vector<float>& sigmas) {
    if (sigmas.empty()) throw ParamError("msr_reflectance needs at least one scale");
    const auto& s = image.shape();
    if (s.size() != 3) throw ShapeError("msr_reflectance wants (C,H,W)");
    int64_t C = s[0], HW = s[1] * s[2];
    Tensor<float> out(s);
    for (float sigma : sigmas) {
        Tensor<float> surround = gaussian_surround(image, sigma);
        for (int64_t c = 0; c < C; ++c)
            for (int64_t p = 0; p < HW; ++p) {
                float li = std::log(std::max(image[c * HW + p], kLogFloor));
                float lg = std::log(std::max(surround[p], kLogFloor));
                out[c * HW + p] += li - lg;
            }
    }
    float inv = 1.0f / static_cast<float>(sigmas.size());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= inv;
    return out;
}

Tensor<float> linear_stretch(const Tensor<float>& log_reflectance) {
    const auto& s = log_reflectance.shape();
    if (s.size() != 3) throw ShapeError("linear_stretch wants (C,H,W)");
    int64_t C = s[0], HW = s[1] * s[2];
    Tensor<float> out(s);
    std::vector<float> chan(static_cast<size_t>(HW));
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t p = 0; p < HW; ++p) chan[static_cast<size_t>(p)] = std::exp(log_reflectance[c * HW + p]);
        std::vector<float> sorted = chan;
        std::sort(sorted.begin(), sorted.end());
        auto percentile = [&](double q) {
            double pos = q * static_cast<double>(HW - 1);
            int64_t lo = static_cast<int64_t>(pos);
            int64_t hi = std::min(lo + 1, HW - 1);
            double f = pos - static_cast<double>(lo);
            return (1.0 - f) * sorted[static_cast<size_t>(lo)] + f * sorted[static_cast<size_t>(hi)];
        };
        double p1 = percentile(0.01), p99 = percentile(0.99);
        if (p99 <= p1) {
            for (int64_t p = 0; p < HW; ++p) out[c * HW + p] = 0.5f;
            continue;
        }
        double inv = 1.0 / (p99 - p1);
        for (int64_t p = 0; p < HW; ++p)
            out[c * HW + p] = std::clamp(static_cast<float>((chan[static_cast<size_t>(p)] - p1) * inv), 0.0f, 1.0f);
    }
    return out;
}

std::vector<float> default_msr_sigmas(int64_t height, int64_t width) {
    double scale = static_cast<double>(std::min(height, width)) / 512.0;
    std::vector<float> out;
    for (double base : {15.0, 80.0, 250.0})
        out.push_back(static_cast<float>(std::max(0.5, base * scale)));
    return out;
}

} // namespace relight::retinex

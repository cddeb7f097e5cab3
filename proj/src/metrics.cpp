#include "relight/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "relight/errors.hpp"

namespace relight::metrics {

namespace {
constexpr int64_t kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::vector<double> ssim_window() {
    std::vector<double> w(kWindow * kWindow);
    double sum = 0;
    int64_t r = kWindow / 2;
    for (int64_t y = 0; y < kWindow; ++y)
        for (int64_t x = 0; x < kWindow; ++x) {
            double d = static_cast<double>((y - r) * (y - r) + (x - r) * (x - r));
            w[static_cast<size_t>(y * kWindow + x)] = std::exp(-d / (2.0 * kSigma * kSigma));
            sum += w[static_cast<size_t>(y * kWindow + x)];
        }
    for (double& v : w) v /= sum;
    return w;
}
} // namespace

double psnr(const Tensor<float>& a, const Tensor<float>& b) {
    check_same_shape(a, b, "psnr");
    double mse = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse == 0.0) return 100.0;
    return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Tensor<float>& a, const Tensor<float>& b) {
    check_same_shape(a, b, "ssim");
    const auto& s = a.shape();
    if (s.size() != 3) throw ShapeError("ssim wants (C,H,W)");
    int64_t C = s[0], H = s[1], W = s[2];
    if (H < kWindow || W < kWindow)
        throw ParamError("ssim: image smaller than the 11x11 window");
    static const std::vector<double> w = ssim_window();
    double total = 0;
    int64_t count = 0;
    for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y + kWindow <= H; ++y)
            for (int64_t x = 0; x + kWindow <= W; ++x) {
                double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
                for (int64_t dy = 0; dy < kWindow; ++dy)
                    for (int64_t dx = 0; dx < kWindow; ++dx) {
                        double wv = w[static_cast<size_t>(dy * kWindow + dx)];
                        double va = a.at(c, y + dy, x + dx);
                        double vb = b.at(c, y + dy, x + dx);
                        mx += wv * va;
                        my += wv * vb;
                        sxx += wv * va * va;
                        syy += wv * vb * vb;
                        sxy += wv * va * vb;
                    }
                double vx = sxx - mx * mx;
                double vy = syy - my * my;
                double cov = sxy - mx * my;
                double num = (2.0 * mx * my + kC1) * (2.0 * cov + kC2);
                double den = (mx * mx + my * my + kC1) * (vx + vy + kC2);
                total += num / den;
                ++count;
            }
    return total / static_cast<double>(count);
}

double hist_l1(const Tensor<float>& a, const Tensor<float>& b, int64_t bins) {
    if (bins < 2) throw ParamError("hist_l1 wants bins >= 2");
    check_same_shape(a, b, "hist_l1");
    std::vector<double> ha(static_cast<size_t>(bins), 0), hb(static_cast<size_t>(bins), 0);
    auto bin_of = [bins](float v) {
        int64_t k = static_cast<int64_t>(static_cast<double>(v) * static_cast<double>(bins));
        return std::clamp<int64_t>(k, 0, bins - 1);
    };
    for (int64_t i = 0; i < a.numel(); ++i) {
        ha[static_cast<size_t>(bin_of(a[i]))] += 1;
        hb[static_cast<size_t>(bin_of(b[i]))] += 1;
    }
    double n = static_cast<double>(a.numel());
    double d = 0;
    for (int64_t k = 0; k < bins; ++k)
        d += std::abs(ha[static_cast<size_t>(k)] / n - hb[static_cast<size_t>(k)] / n);
    return d;
}

Tensor<float> luminance(const Tensor<float>& image) {
    const auto& s = image.shape();
    if (s.size() != 3) throw ShapeError("luminance wants (C,H,W)");
    int64_t C = s[0], HW = s[1] * s[2];
    Tensor<float> out({1, s[1], s[2]});
    for (int64_t p = 0; p < HW; ++p) {
        double acc = 0;
        for (int64_t c = 0; c < C; ++c) acc += image[c * HW + p];
        out[p] = static_cast<float>(acc / static_cast<double>(C));
    }
    return out;
}

} // namespace relight::metrics

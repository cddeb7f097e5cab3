#pragma once

#include <cmath>

#include "relight/autograd.hpp"

namespace relight::losses {

using ag::Var;

// Gaussian window shared with the evaluation SSIM (11x11, sigma 1.5).
template <typename T>
Tensor<T> ssim_window() {
    const int64_t win = 11;
    const double sigma = 1.5;
    Tensor<T> w({win, win});
    double sum = 0;
    int64_t r = win / 2;
    for (int64_t y = 0; y < win; ++y)
        for (int64_t x = 0; x < win; ++x) {
            double d = static_cast<double>((y - r) * (y - r) + (x - r) * (x - r));
            double v = std::exp(-d / (2.0 * sigma * sigma));
            w[y * win + x] = static_cast<T>(v);
            sum += v;
        }
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(w[i] / sum);
    return w;
}

// Differentiable mean SSIM over valid windows; same definition as the
// evaluation metric so the two routes can be cross-checked.
template <typename T>
Var<T> ssim_mean(const Var<T>& a, const Var<T>& b) {
    static const Tensor<T> win = ssim_window<T>();
    const T c1 = T(1e-4), c2 = T(9e-4);
    auto mu_a = ag::fixed_window_filter(a, win);
    auto mu_b = ag::fixed_window_filter(b, win);
    auto s_aa = ag::fixed_window_filter(ag::mul(a, a), win);
    auto s_bb = ag::fixed_window_filter(ag::mul(b, b), win);
    auto s_ab = ag::fixed_window_filter(ag::mul(a, b), win);
    auto mu_ab = ag::mul(mu_a, mu_b);
    auto var_a = ag::sub(s_aa, ag::mul(mu_a, mu_a));
    auto var_b = ag::sub(s_bb, ag::mul(mu_b, mu_b));
    auto cov = ag::sub(s_ab, mu_ab);
    auto num = ag::mul(ag::add_scalar(ag::mul_scalar(mu_ab, T(2)), c1),
                       ag::add_scalar(ag::mul_scalar(cov, T(2)), c2));
    auto den = ag::mul(ag::add_scalar(ag::add(ag::mul(mu_a, mu_a), ag::mul(mu_b, mu_b)), c1),
                       ag::add_scalar(ag::add(var_a, var_b), c2));
    return ag::mean_all(ag::div(num, den));
}

// 1 - SSIM, the structural dissimilarity term.
template <typename T>
Var<T> ssim_loss(const Var<T>& a, const Var<T>& b) {
    return ag::add_scalar(ag::mul_scalar(ssim_mean(a, b), T(-1)), T(1));
}

// L1 between normalized soft histograms; differentiable exposure distance.
template <typename T>
Var<T> soft_hist_l1(const Var<T>& a, const Var<T>& b, int64_t bins) {
    auto ha = ag::soft_histogram(a, bins);
    auto hb = ag::soft_histogram(b, bins);
    return ag::sum_all(ag::abs_op(ag::sub(ha, hb)));
}

// Total variation of illumination, down-weighted where the reflectance
// (grayscale) itself has edges: mean(|dL| * exp(-10 |d gray(R)|)).
template <typename T>
Var<T> edge_aware_smoothness(const Var<T>& illumination, const Var<T>& reflectance) {
    auto gray = ag::channel_mean(reflectance);
    auto wx = ag::exp_op(ag::mul_scalar(ag::abs_op(ag::grad_x(gray)), T(-10)));
    auto wy = ag::exp_op(ag::mul_scalar(ag::abs_op(ag::grad_y(gray)), T(-10)));
    auto tx = ag::mean_all(ag::mul(ag::abs_op(ag::grad_x(illumination)), wx));
    auto ty = ag::mean_all(ag::mul(ag::abs_op(ag::grad_y(illumination)), wy));
    return ag::add(tx, ty);
}

} // namespace relight::losses

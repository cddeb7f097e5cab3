#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "relight/errors.hpp"
#include "relight/tensor.hpp"

namespace relight {

// Variance schedule for the diffusion process. Steps are 1-based: alpha(t),
// gamma(t) for t in [1,T]; gamma(0) == 1 by convention so a final jump to
// step 0 reproduces the clean estimate exactly. Values are kept in double so
// the cumulative products stay tight over a thousand steps.
struct NoiseSchedule {
    int64_t T = 0;
    std::vector<double> alphas; // alpha_t = 1 - beta_t
    std::vector<double> gammas; // running product of alphas
    std::vector<double> sigmas; // posterior std-dev, sigma_1 = 0

    double alpha(int64_t t) const {
        check_step(t);
        return alphas[static_cast<size_t>(t - 1)];
    }
    double gamma(int64_t t) const {
        if (t == 0) return 1.0;
        check_step(t);
        return gammas[static_cast<size_t>(t - 1)];
    }
    double sigma(int64_t t) const {
        check_step(t);
        return sigmas[static_cast<size_t>(t - 1)];
    }
    void check_step(int64_t t) const {
        if (t < 1 || t > T) throw ParamError("step index " + std::to_string(t) + " outside [1," + std::to_string(T) + "]");
    }
};

inline NoiseSchedule make_schedule(int64_t T, double beta_start, double beta_end) {
    if (T < 1) throw ParamError("schedule needs T >= 1");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw ParamError("schedule needs 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.alphas.resize(static_cast<size_t>(T));
    s.gammas.resize(static_cast<size_t>(T));
    s.sigmas.resize(static_cast<size_t>(T));
    double g = 1.0;
    for (int64_t t = 0; t < T; ++t) {
        double beta = T == 1 ? beta_start
                             : beta_start + (beta_end - beta_start) * static_cast<double>(t) / static_cast<double>(T - 1);
        double g_prev = g;
        s.alphas[static_cast<size_t>(t)] = 1.0 - beta;
        g *= s.alphas[static_cast<size_t>(t)];
        s.gammas[static_cast<size_t>(t)] = g;
        s.sigmas[static_cast<size_t>(t)] = t == 0 ? 0.0 : std::sqrt((1.0 - g_prev) / (1.0 - g) * beta);
    }
    return s;
}

// Uniformly spaced descending timestep subsequence for accelerated sampling,
// e.g. T=1000, n=8 -> {1000, 875, ..., 125}; the caller pairs each with its
// successor and finally with step 0.
inline std::vector<int64_t> sampling_timesteps(int64_t T, int64_t n) {
    if (n < 1 || n > T) throw ParamError("sampling steps must lie in [1,T]");
    std::vector<int64_t> ts(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i)
        ts[static_cast<size_t>(i)] = (n - i) * T / n;
    return ts;
}

// x_t = sqrt(gamma_t) x0 + sqrt(1-gamma_t) eps
template <typename T>
Tensor<T> forward_diffuse(const Tensor<T>& x0, int64_t t, const Tensor<T>& eps, const NoiseSchedule& s) {
    check_same_shape(x0, eps, "forward_diffuse");
    double g = s.gamma(t);
    T a = static_cast<T>(std::sqrt(g));
    T b = static_cast<T>(std::sqrt(1.0 - g));
    Tensor<T> out(x0.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

// Inverts forward_diffuse given a noise estimate. No clamping here; range
// enforcement is the refinement stage's job.
template <typename T>
Tensor<T> approx_x0(const Tensor<T>& x_t, const Tensor<T>& eps_hat, int64_t t, const NoiseSchedule& s) {
    check_same_shape(x_t, eps_hat, "approx_x0");
    double g = s.gamma(t);
    T b = static_cast<T>(std::sqrt(1.0 - g));
    T inv_a = static_cast<T>(1.0 / std::sqrt(g));
    Tensor<T> out(x_t.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = (x_t[i] - b * eps_hat[i]) * inv_a;
    return out;
}

// Posterior mean of p(x_{t-1} | x_t) under the epsilon parameterization.
template <typename T>
Tensor<T> posterior_mean(const Tensor<T>& x_t, const Tensor<T>& eps_hat, int64_t t, const NoiseSchedule& s) {
    check_same_shape(x_t, eps_hat, "posterior_mean");
    double a = s.alpha(t);
    double g = s.gamma(t);
    T inv_sqrt_a = static_cast<T>(1.0 / std::sqrt(a));
    T coef = static_cast<T>((1.0 - a) / std::sqrt(1.0 - g));
    Tensor<T> out(x_t.shape());
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = inv_sqrt_a * (x_t[i] - coef * eps_hat[i]);
    return out;
}

// Deterministic update: reproject the clean estimate to step t_prev along the
// noise direction implied by (x_t, x0_hat). t_prev = 0 returns x0_hat.
template <typename T>
Tensor<T> ddim_step(const Tensor<T>& x_t, const Tensor<T>& x0_hat, int64_t t, int64_t t_prev, const NoiseSchedule& s) {
    check_same_shape(x_t, x0_hat, "ddim_step");
    if (t_prev >= t) throw ParamError("ddim_step needs t_prev < t");
    if (t_prev < 0) throw ParamError("ddim_step needs t_prev >= 0");
    double g_t = s.gamma(t);
    double g_p = s.gamma(t_prev);
    T sq_gt = static_cast<T>(std::sqrt(g_t));
    T inv_b = static_cast<T>(1.0 / std::sqrt(1.0 - g_t));
    T sq_gp = static_cast<T>(std::sqrt(g_p));
    T b_p = static_cast<T>(std::sqrt(1.0 - g_p));
    Tensor<T> out(x_t.shape());
    for (int64_t i = 0; i < out.numel(); ++i) {
        T eps_implied = (x_t[i] - sq_gt * x0_hat[i]) * inv_b;
        out[i] = sq_gp * x0_hat[i] + b_p * eps_implied;
    }
    return out;
}

} // namespace relight

#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include <doctest.h>

#include "relight/autograd.hpp"
#include "relight/rng.hpp"

namespace testsup {

using relight::Rng;
using relight::Tensor;
namespace ag = relight::ag;

template <typename T>
Tensor<T> rand_tensor(Rng& rng, std::vector<int64_t> shape, double lo = 0.0, double hi = 1.0) {
    Tensor<T> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i)
        t[i] = static_cast<T>(lo + (hi - lo) * rng.uniform());
    return t;
}

// Central-difference audit of a scalar-valued graph builder. Analytic
// gradients must match the numeric ones within a relative tolerance.
inline void fd_check(const std::function<ag::Var<double>(const std::vector<ag::Var<double>>&)>& build,
                     std::vector<Tensor<double>> inputs, double tol = 1e-5, double h = 1e-5) {
    std::vector<ag::Var<double>> leafs;
    for (auto& t : inputs) leafs.push_back(ag::leaf(t, true));
    auto loss = build(leafs);
    REQUIRE(loss->value.numel() == 1);
    ag::backward(loss);

    auto eval_at = [&](size_t which, int64_t coord, double delta) {
        std::vector<ag::Var<double>> probe;
        for (size_t i = 0; i < inputs.size(); ++i) {
            Tensor<double> t = inputs[i];
            if (i == which) t[coord] += delta;
            probe.push_back(ag::constant(t));
        }
        return ag::scalar_of(build(probe));
    };

    for (size_t i = 0; i < inputs.size(); ++i) {
        for (int64_t j = 0; j < inputs[i].numel(); ++j) {
            double numeric = (eval_at(i, j, h) - eval_at(i, j, -h)) / (2 * h);
            double analytic = leafs[i]->grad[j];
            double scale = std::max({1.0, std::abs(numeric), std::abs(analytic)});
            INFO("input ", i, " coord ", j, " analytic ", analytic, " numeric ", numeric);
            CHECK(std::abs(analytic - numeric) <= tol * scale);
        }
    }
}

// Smooth synthetic normal-light image: a few soft blobs on a mid-gray base.
inline Tensor<float> toy_clean_image(Rng& rng, int64_t h, int64_t w) {
    Tensor<float> img({3, h, w});
    const int blobs = 4;
    std::vector<double> cy(blobs), cx(blobs), rad(blobs), amp(blobs * 3);
    for (int b = 0; b < blobs; ++b) {
        cy[b] = rng.uniform() * h;
        cx[b] = rng.uniform() * w;
        rad[b] = (0.15 + 0.35 * rng.uniform()) * static_cast<double>(std::min(h, w));
        for (int c = 0; c < 3; ++c) amp[b * 3 + c] = 0.8 * rng.uniform() - 0.25;
    }
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                double v = 0.55;
                for (int b = 0; b < blobs; ++b) {
                    double d2 = (y - cy[b]) * (y - cy[b]) + (x - cx[b]) * (x - cx[b]);
                    v += amp[b * 3 + c] * std::exp(-d2 / (2 * rad[b] * rad[b]));
                }
                img.at(c, y, x) = static_cast<float>(std::clamp(v, 0.1, 0.95));
            }
    return img;
}

// Low-light counterpart: smooth dim illumination field plus mild sensor noise.
inline Tensor<float> toy_degrade(Rng& rng, const Tensor<float>& clean) {
    int64_t h = clean.shape()[1], w = clean.shape()[2];
    double gy = rng.uniform(), gx = rng.uniform();
    Tensor<float> low(clean.shape());
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            double ramp = 0.5 * (static_cast<double>(y) / h * gy + static_cast<double>(x) / w * gx);
            double ell = 0.18 + 0.22 * ramp;
            for (int64_t c = 0; c < 3; ++c) {
                double v = clean.at(c, y, x) * ell + 0.01 * rng.normal();
                low.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    return low;
}

inline std::vector<std::pair<Tensor<float>, Tensor<float>>> toy_pairs(uint64_t seed, int n,
                                                                      int64_t h, int64_t w) {
    Rng rng(seed);
    std::vector<std::pair<Tensor<float>, Tensor<float>>> out;
    for (int i = 0; i < n; ++i) {
        auto clean = toy_clean_image(rng, h, w);
        auto low = toy_degrade(rng, clean);
        out.emplace_back(std::move(low), std::move(clean));
    }
    return out;
}

} // namespace testsup

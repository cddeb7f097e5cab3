#include <cmath>
#include <doctest.h>

#include "relight/diffusion.hpp"
#include "support.hpp"

using namespace relight;
using testsup::rand_tensor;

TEST_CASE("make_schedule: single step") {
    auto s = make_schedule(1, 0.5, 0.5);
    CHECK(s.alpha(1) == doctest::Approx(0.5));
    CHECK(s.gamma(1) == doctest::Approx(0.5));
}

TEST_CASE("make_schedule: two steps, hand-evaluated cumulative product") {
    auto s = make_schedule(2, 0.1, 0.2);
    CHECK(s.gamma(1) == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(s.gamma(2) == doctest::Approx(0.9 * 0.8).epsilon(1e-12));
}

TEST_CASE("make_schedule: invariants over representative sizes") {
    for (int64_t T : {1L, 2L, 8L, 100L, 1000L}) {
        auto s = make_schedule(T, 1e-4, 2e-2);
        REQUIRE(static_cast<int64_t>(s.gammas.size()) == T);
        CHECK(std::abs(s.gamma(1) - s.alpha(1)) < 1e-12);
        for (int64_t t = 2; t <= T; ++t) {
            CHECK(std::abs(s.gamma(t) - s.gamma(t - 1) * s.alpha(t)) < 1e-12);
            CHECK(s.gamma(t) < s.gamma(t - 1)); // strictly decreasing
        }
        for (int64_t t = 1; t <= T; ++t) {
            CHECK(s.gamma(t) > 0.0);
            CHECK(s.gamma(t) < 1.0);
            CHECK(s.sigma(t) >= 0.0);
        }
    }
}

TEST_CASE("make_schedule: parameter validation") {
    CHECK_THROWS_AS(make_schedule(0, 0.1, 0.2), ParamError);
    CHECK_THROWS_AS(make_schedule(10, 0.0, 0.2), ParamError);
    CHECK_THROWS_AS(make_schedule(10, 0.3, 0.2), ParamError);
    CHECK_THROWS_AS(make_schedule(10, 0.3, 1.0), ParamError);
}

TEST_CASE("forward_diffuse: zero noise and scalar formula evaluation") {
    auto s = make_schedule(4, 0.1, 0.4);
    Rng rng(1);
    auto x0 = rand_tensor<float>(rng, {3, 4, 4});
    Tensor<float> zeros(x0.shape());

    auto noised = forward_diffuse(x0, 2, zeros, s);
    float root = static_cast<float>(std::sqrt(s.gamma(2)));
    for (int64_t i = 0; i < x0.numel(); ++i)
        CHECK(noised[i] == doctest::Approx(root * x0[i]));

    // scalar case evaluated independently: gamma = 0.25, x0 = 1, eps = 1
    NoiseSchedule manual;
    manual.T = 1;
    manual.alphas = {0.25};
    manual.gammas = {0.25};
    manual.sigmas = {0.0};
    Tensor<float> one({1}, 1.0f);
    auto out = forward_diffuse(one, 1, one, manual);
    double expect = std::sqrt(0.25) * 1.0 + std::sqrt(0.75) * 1.0;
    CHECK(out[0] == doctest::Approx(expect).epsilon(1e-6)); // ~1.366025
}

TEST_CASE("forward_diffuse: gamma = 1 limit returns x0 exactly") {
    NoiseSchedule s;
    s.T = 1;
    s.alphas = {1.0};
    s.gammas = {1.0};
    s.sigmas = {0.0};
    Rng rng(2);
    auto x0 = rand_tensor<float>(rng, {2, 3, 3});
    auto eps = rand_tensor<float>(rng, {2, 3, 3}, -1, 1);
    auto noised = forward_diffuse(x0, 1, eps, s);
    for (int64_t i = 0; i < x0.numel(); ++i) CHECK(noised[i] == x0[i]);
}

TEST_CASE("forward_diffuse: shape mismatch") {
    auto s = make_schedule(2, 0.1, 0.2);
    Tensor<float> a({3, 4, 4});
    Tensor<float> b({3, 4, 5});
    CHECK_THROWS_AS((void)forward_diffuse(a, 1, b, s), ShapeError);
}

TEST_CASE("approx_x0 inverts forward_diffuse to single precision") {
    auto s = make_schedule(50, 1e-4, 2e-2);
    Rng rng(3);
    for (int64_t t : {1L, 7L, 25L, 50L}) {
        auto x0 = rand_tensor<float>(rng, {3, 8, 8});
        auto eps = rand_tensor<float>(rng, {3, 8, 8}, -2, 2);
        auto x_t = forward_diffuse(x0, t, eps, s);
        auto rec = approx_x0(x_t, eps, t, s);
        for (int64_t i = 0; i < x0.numel(); ++i)
            CHECK(std::abs(rec[i] - x0[i]) < 1e-5f);
    }
}

TEST_CASE("approx_x0: scalar inverse of the forward example") {
    NoiseSchedule manual;
    manual.T = 1;
    manual.alphas = {0.25};
    manual.gammas = {0.25};
    manual.sigmas = {0.0};
    Tensor<float> x_t({1}, static_cast<float>(0.5 + std::sqrt(0.75)));
    Tensor<float> eps({1}, 1.0f);
    auto x0 = approx_x0(x_t, eps, 1, manual);
    CHECK(x0[0] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("posterior_mean: limits and scalar formula evaluation") {
    // eps_hat = 0 -> x_t / sqrt(alpha_t)
    auto s = make_schedule(3, 0.1, 0.3);
    Rng rng(4);
    auto x_t = rand_tensor<float>(rng, {1, 4, 4});
    Tensor<float> zeros(x_t.shape());
    auto mean = posterior_mean(x_t, zeros, 2, s);
    for (int64_t i = 0; i < x_t.numel(); ++i)
        CHECK(mean[i] == doctest::Approx(x_t[i] / std::sqrt(s.alpha(2))));

    // alpha -> 1 leaves x_t unchanged
    NoiseSchedule unit;
    unit.T = 1;
    unit.alphas = {1.0};
    unit.gammas = {0.5};
    unit.sigmas = {0.0};
    auto eps = rand_tensor<float>(rng, {1, 4, 4}, -1, 1);
    auto same = posterior_mean(x_t, eps, 1, unit);
    for (int64_t i = 0; i < x_t.numel(); ++i) CHECK(same[i] == doctest::Approx(x_t[i]));

    // scalar: x_t=1, eps=0.5, alpha=0.9, gamma=0.72, independent double evaluation
    NoiseSchedule manual;
    manual.T = 1;
    manual.alphas = {0.9};
    manual.gammas = {0.72};
    manual.sigmas = {0.0};
    Tensor<float> one({1}, 1.0f);
    Tensor<float> half({1}, 0.5f);
    double expect = (1.0 / std::sqrt(0.9)) * (1.0 - (1.0 - 0.9) / std::sqrt(1.0 - 0.72) * 0.5);
    auto out = posterior_mean(one, half, 1, manual);
    CHECK(out[0] == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("ddim_step: jump to zero returns the clean estimate exactly") {
    auto s = make_schedule(100, 1e-4, 2e-2);
    Rng rng(5);
    auto x0 = rand_tensor<float>(rng, {3, 4, 4});
    auto eps = rand_tensor<float>(rng, {3, 4, 4}, -1, 1);
    auto x_t = forward_diffuse(x0, 60, eps, s);
    auto out = ddim_step(x_t, x0, 60, 0, s);
    for (int64_t i = 0; i < x0.numel(); ++i) CHECK(out[i] == x0[i]);
}

TEST_CASE("ddim_step: zero implied noise collapses to the scaled estimate") {
    auto s = make_schedule(100, 1e-4, 2e-2);
    Rng rng(6);
    auto x0 = rand_tensor<float>(rng, {3, 4, 4});
    Tensor<float> zeros(x0.shape());
    auto x_t = forward_diffuse(x0, 80, zeros, s); // = sqrt(gamma_80) x0
    auto out = ddim_step(x_t, x0, 80, 20, s);
    float root = static_cast<float>(std::sqrt(s.gamma(20)));
    for (int64_t i = 0; i < x0.numel(); ++i)
        CHECK(out[i] == doctest::Approx(root * x0[i]).epsilon(1e-5));
}

TEST_CASE("ddim_step: agrees with an independent scalar implementation") {
    auto s = make_schedule(200, 1e-4, 2e-2);
    Rng rng(7);
    for (int rep = 0; rep < 50; ++rep) {
        int64_t t = 2 + rng.index(199);
        int64_t t_prev = rng.index(t); // in [0, t)
        double xt = rng.normal();
        double x0 = rng.uniform();
        Tensor<float> xt_t({1}, static_cast<float>(xt));
        Tensor<float> x0_t({1}, static_cast<float>(x0));
        auto out = ddim_step(xt_t, x0_t, t, t_prev, s);

        // second implementation, plain scalar doubles
        double gt = s.gamma(t), gp = t_prev == 0 ? 1.0 : s.gamma(t_prev);
        double eps = (xt - std::sqrt(gt) * x0) / std::sqrt(1.0 - gt);
        double expect = std::sqrt(gp) * x0 + std::sqrt(1.0 - gp) * eps;
        CHECK(out[0] == doctest::Approx(expect).epsilon(1e-5));
    }
}

TEST_CASE("ddim_step: ordering error") {
    auto s = make_schedule(10, 1e-4, 2e-2);
    Tensor<float> x({1}, 0.5f);
    CHECK_THROWS_AS((void)ddim_step(x, x, 3, 3, s), ParamError);
    CHECK_THROWS_AS((void)ddim_step(x, x, 3, 5, s), ParamError);
}

TEST_CASE("full oracle trajectory recovers x0 from any start") {
    auto s = make_schedule(1000, 1e-4, 2e-2);
    Rng rng(8);
    auto x0 = rand_tensor<float>(rng, {3, 8, 8});
    auto eps = rand_tensor<float>(rng, {3, 8, 8}, -2, 2);
    auto ts = sampling_timesteps(1000, 8);
    REQUIRE(ts.front() == 1000);
    REQUIRE(ts.back() == 125);
    for (size_t start = 0; start < ts.size(); ++start) {
        auto x = forward_diffuse(x0, ts[start], eps, s);
        for (size_t i = start; i < ts.size(); ++i) {
            int64_t t = ts[i];
            int64_t t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
            auto x0_hat = approx_x0(x, eps, t, s);
            x = ddim_step(x, x0_hat, t, t_prev, s);
        }
        for (int64_t i = 0; i < x0.numel(); ++i)
            CHECK(std::abs(x[i] - x0[i]) < 1e-4f);
    }
}

TEST_CASE("sampling_timesteps validates its range") {
    CHECK_THROWS_AS(sampling_timesteps(10, 0), ParamError);
    CHECK_THROWS_AS(sampling_timesteps(10, 11), ParamError);
    auto ts = sampling_timesteps(10, 10);
    CHECK(ts.front() == 10);
    CHECK(ts.back() == 1);
}

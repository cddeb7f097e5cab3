#include <doctest.h>

#include "relight/autograd.hpp"
#include "relight/nn.hpp"
#include "support.hpp"

using namespace relight;
using testsup::fd_check;
using testsup::rand_tensor;
using VarD = ag::Var<double>;

TEST_CASE("elementwise ops match central differences") {
    Rng rng(1);
    auto a = rand_tensor<double>(rng, {2, 3, 4}, 0.15, 0.85);
    auto b = rand_tensor<double>(rng, {2, 3, 4}, 0.15, 0.85);

    fd_check([](const std::vector<VarD>& v) { return ag::mean_all(ag::mul(ag::add(v[0], v[1]), ag::sub(v[0], v[1]))); }, {a, b});
    fd_check([](const std::vector<VarD>& v) { return ag::sum_all(ag::sigmoid(v[0])); }, {a});
    fd_check([](const std::vector<VarD>& v) { return ag::mean_all(ag::silu(v[0])); }, {a});
    fd_check([](const std::vector<VarD>& v) { return ag::mean_all(ag::exp_op(ag::mul_scalar(v[0], -2.0))); }, {a});
    fd_check([](const std::vector<VarD>& v) { return ag::mean_all(ag::log_floored(v[0], 1e-4)); }, {a});
    fd_check([](const std::vector<VarD>& v) { return ag::mean_all(ag::square(v[0])); }, {a});
    fd_check([](const std::vector<VarD>& v) { return ag::mean_all(ag::div(v[0], ag::add_scalar(v[1], 1.0))); }, {a, b});
    fd_check([](const std::vector<VarD>& v) { return ag::mean_all(ag::abs_op(ag::sub(v[0], v[1]))); }, {a, b});
}

TEST_CASE("clamp passes gradient only strictly inside the range") {
    Rng rng(2);
    auto x = rand_tensor<double>(rng, {8}, -1.0, 2.0);
    auto leaf = ag::leaf(x, true);
    auto y = ag::sum_all(ag::clamp(leaf, 0.0, 1.0));
    ag::backward(y);
    for (int64_t i = 0; i < x.numel(); ++i) {
        double expect = (x[i] > 0.0 && x[i] < 1.0) ? 1.0 : 0.0;
        CHECK(leaf->grad[i] == doctest::Approx(expect));
    }
}

TEST_CASE("shape ops are gradient-exact") {
    Rng rng(3);
    auto a = rand_tensor<double>(rng, {2, 4, 4}, 0.1, 0.9);
    auto b = rand_tensor<double>(rng, {3, 4, 4}, 0.1, 0.9);
    auto w = rand_tensor<double>(rng, {5, 4, 4}, -1.0, 1.0);

    fd_check([&](const std::vector<VarD>& v) {
        return ag::mean_all(ag::mul(ag::concat_ch(v[0], v[1]), ag::constant(w)));
    }, {a, b});
    fd_check([](const std::vector<VarD>& v) { return ag::mean_all(ag::slice_ch(v[0], 1, 3)); }, {b});
    fd_check([](const std::vector<VarD>& v) {
        return ag::mean_all(ag::tokens_to_chw(ag::chw_to_tokens(v[0]), 4, 4));
    }, {a});
    fd_check([](const std::vector<VarD>& v) { return ag::mean_all(ag::upsample_nearest(v[0], 2)); }, {a});
    fd_check([](const std::vector<VarD>& v) { return ag::mean_all(ag::avg_pool(v[0], 2)); }, {a});
    fd_check([](const std::vector<VarD>& v) { return ag::mean_all(ag::channel_mean(v[0])); }, {b});
    fd_check([](const std::vector<VarD>& v) { return ag::mean_all(ag::grad_x(v[0])); }, {a});
    fd_check([](const std::vector<VarD>& v) { return ag::mean_all(ag::grad_y(v[0])); }, {a});
}

TEST_CASE("broadcast ops are gradient-exact") {
    Rng rng(4);
    auto x = rand_tensor<double>(rng, {3, 4, 4}, 0.1, 0.9);
    auto l = rand_tensor<double>(rng, {1, 4, 4}, 0.1, 0.9);
    auto bias = rand_tensor<double>(rng, {3}, -0.5, 0.5);
    auto s = rand_tensor<double>(rng, {1}, 0.3, 1.7);

    fd_check([](const std::vector<VarD>& v) { return ag::mean_all(ag::mul_bcast1(v[0], v[1])); }, {x, l});
    fd_check([](const std::vector<VarD>& v) { return ag::mean_all(ag::bias_add_ch(v[0], v[1])); }, {x, bias});
    fd_check([](const std::vector<VarD>& v) { return ag::mean_all(ag::mul_scalar_var(v[0], v[1])); }, {x, s});
}

TEST_CASE("matmul in every transpose mode") {
    Rng rng(5);
    auto a = rand_tensor<double>(rng, {3, 4}, -1.0, 1.0);
    auto b = rand_tensor<double>(rng, {4, 2}, -1.0, 1.0);
    auto bt = rand_tensor<double>(rng, {2, 4}, -1.0, 1.0);
    auto at = rand_tensor<double>(rng, {4, 3}, -1.0, 1.0);

    fd_check([](const std::vector<VarD>& v) { return ag::mean_all(ag::matmul(v[0], v[1])); }, {a, b});
    fd_check([](const std::vector<VarD>& v) { return ag::mean_all(ag::matmul(v[0], v[1], false, true)); }, {a, bt});
    fd_check([](const std::vector<VarD>& v) { return ag::mean_all(ag::matmul(v[0], v[1], true, false)); }, {at, b});
    fd_check([](const std::vector<VarD>& v) { return ag::mean_all(ag::matmul(v[0], v[1], true, true)); }, {at, bt});
}

TEST_CASE("softmax rows") {
    Rng rng(6);
    auto a = rand_tensor<double>(rng, {3, 5}, -2.0, 2.0);
    auto w = rand_tensor<double>(rng, {3, 5}, -1.0, 1.0);
    fd_check([&](const std::vector<VarD>& v) {
        return ag::mean_all(ag::mul(ag::softmax_rows(v[0]), ag::constant(w)));
    }, {a});
}

TEST_CASE("conv2d gradients: stride 1 and stride 2, weight, bias and input") {
    Rng rng(7);
    auto x = rand_tensor<double>(rng, {2, 6, 6}, -1.0, 1.0);
    auto w = rand_tensor<double>(rng, {3, 2, 3, 3}, -0.5, 0.5);
    auto b = rand_tensor<double>(rng, {3}, -0.2, 0.2);

    fd_check([](const std::vector<VarD>& v) {
        return ag::mean_all(ag::conv2d(v[0], v[1], v[2], 1));
    }, {x, w, b}, 1e-5, 1e-6);
    fd_check([](const std::vector<VarD>& v) {
        return ag::mean_all(ag::conv2d(v[0], v[1], v[2], 2));
    }, {x, w, b}, 1e-5, 1e-6);

    auto w1 = rand_tensor<double>(rng, {4, 2, 1, 1}, -0.5, 0.5);
    auto b1 = rand_tensor<double>(rng, {4}, -0.2, 0.2);
    fd_check([](const std::vector<VarD>& v) {
        return ag::mean_all(ag::conv2d(v[0], v[1], v[2], 1));
    }, {x, w1, b1}, 1e-5, 1e-6);
}

TEST_CASE("conv2d shape contract") {
    Rng rng(8);
    auto x = ag::constant(rand_tensor<double>(rng, {2, 6, 6}));
    auto w = ag::constant(rand_tensor<double>(rng, {3, 5, 3, 3}));
    auto b = ag::constant(Tensor<double>({3}));
    CHECK_THROWS_AS((void)ag::conv2d(x, w, b, 1), ShapeError);
}

TEST_CASE("group_norm matches finite differences") {
    Rng rng(9);
    auto x = rand_tensor<double>(rng, {4, 3, 3}, -1.0, 1.0);
    auto g = rand_tensor<double>(rng, {4}, 0.5, 1.5);
    auto bb = rand_tensor<double>(rng, {4}, -0.3, 0.3);
    auto w = rand_tensor<double>(rng, {4, 3, 3}, -1.0, 1.0);
    fd_check([&](const std::vector<VarD>& v) {
        return ag::mean_all(ag::mul(ag::group_norm(v[0], v[1], v[2], 2), ag::constant(w)));
    }, {x, g, bb}, 2e-5, 1e-6);
}

TEST_CASE("fixed_window_filter matches finite differences") {
    Rng rng(10);
    auto x = rand_tensor<double>(rng, {2, 5, 5}, 0.0, 1.0);
    Tensor<double> k({3, 3});
    for (int64_t i = 0; i < 9; ++i) k[i] = 1.0 / 9.0;
    fd_check([&](const std::vector<VarD>& v) {
        return ag::mean_all(ag::fixed_window_filter(v[0], k));
    }, {x});
}

TEST_CASE("detach stops gradient flow exactly") {
    Rng rng(11);
    auto x = rand_tensor<double>(rng, {4}, 0.1, 0.9);
    auto leaf = ag::leaf(x, true);
    auto y = ag::sum_all(ag::mul(ag::detach(leaf), leaf));
    ag::backward(y);
    for (int64_t i = 0; i < 4; ++i) CHECK(leaf->grad[i] == doctest::Approx(x[i]));
}

TEST_CASE("no-grad mode builds value-only nodes") {
    Rng rng(12);
    auto x = ag::leaf(rand_tensor<double>(rng, {4}), true);
    ag::NoGradGuard ng;
    auto y = ag::sum_all(ag::square(x));
    CHECK_FALSE(y->requires_grad);
    CHECK(y->parents.empty());
}

TEST_CASE("backward accumulates across calls") {
    auto x = ag::leaf(Tensor<double>({2}, 3.0), true);
    auto y1 = ag::sum_all(ag::square(x));
    ag::backward(y1);
    auto y2 = ag::sum_all(ag::square(x));
    ag::backward(y2);
    CHECK(x->grad[0] == doctest::Approx(12.0));
}

TEST_CASE("multi-parent graphs route gradients through both paths") {
    Rng rng(13);
    auto a = rand_tensor<double>(rng, {3, 3}, 0.2, 0.8);
    fd_check([](const std::vector<VarD>& v) {
        auto s = ag::sigmoid(v[0]);
        return ag::mean_all(ag::add(ag::mul(s, s), ag::mul_scalar(v[0], 0.5)));
    }, {a});
}

#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "relight/autograd.hpp"
#include "relight/rng.hpp"

namespace relight::nn {

using ag::Var;

template <typename T>
struct NamedParam {
    std::string name;
    Var<T> var;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

template <typename T>
Var<T> make_param(Tensor<T> t) {
    return ag::leaf(std::move(t), true);
}

// All initializers draw doubles from the shared Rng so float and double
// instantiations of a network see the same underlying values.
template <typename T>
Tensor<T> normal_init(Rng& rng, std::vector<int64_t> shape, double std_dev) {
    Tensor<T> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal() * std_dev);
    return t;
}

template <typename T>
Tensor<T> kaiming_conv(Rng& rng, int64_t cout, int64_t cin, int64_t kh, int64_t kw) {
    double std_dev = std::sqrt(2.0 / static_cast<double>(cin * kh * kw));
    return normal_init<T>(rng, {cout, cin, kh, kw}, std_dev);
}

template <typename T>
struct Conv2d {
    Var<T> weight, bias;
    int64_t stride = 1;
    int64_t pad = -1;

    Conv2d() = default;
    Conv2d(Rng& rng, int64_t cin, int64_t cout, int64_t k, int64_t stride_ = 1, bool zero = false)
        : stride(stride_) {
        weight = make_param(zero ? Tensor<T>({cout, cin, k, k})
                                 : kaiming_conv<T>(rng, cout, cin, k, k));
        bias = make_param(Tensor<T>({cout}));
    }

    Var<T> forward(const Var<T>& x) const { return ag::conv2d(x, weight, bias, stride, pad); }

    void collect(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".weight", weight});
        out.push_back({prefix + ".bias", bias});
    }
};

template <typename T>
struct Linear {
    Var<T> weight, bias; // weight (out,in)

    Linear() = default;
    Linear(Rng& rng, int64_t in, int64_t out, bool zero = false) {
        double std_dev = std::sqrt(2.0 / static_cast<double>(in));
        weight = make_param(zero ? Tensor<T>({out, in}) : normal_init<T>(rng, {out, in}, std_dev));
        bias = make_param(Tensor<T>({out}));
    }

    // x: (1,in) -> (1,out)
    Var<T> forward(const Var<T>& x) const {
        auto y = ag::matmul(x, weight, false, true);
        auto b2 = ag::reshape(bias, {1, bias->value.numel()});
        return ag::add(y, b2);
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".weight", weight});
        out.push_back({prefix + ".bias", bias});
    }
};

template <typename T>
struct GroupNorm {
    Var<T> gamma, beta;
    int64_t groups = 8;

    GroupNorm() = default;
    GroupNorm(int64_t channels, int64_t groups_ = 8) : groups(std::min(groups_, channels)) {
        while (channels % groups) --groups; // keep divisibility for odd widths
        gamma = make_param(Tensor<T>({channels}, T(1)));
        beta = make_param(Tensor<T>({channels}));
    }

    Var<T> forward(const Var<T>& x) const { return ag::group_norm(x, gamma, beta, groups); }

    void collect(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
    }
};

// Sinusoidal embedding of a scalar in [0,1]; frequencies span 1..1e4 cycles
// so nearby noise levels stay distinguishable across the whole schedule.
template <typename T>
Tensor<T> sinusoidal_embedding(double level, int64_t dim) {
    int64_t half = dim / 2;
    Tensor<T> out({1, dim});
    for (int64_t k = 0; k < half; ++k) {
        double freq = std::exp(std::log(1e4) * static_cast<double>(k) / static_cast<double>(half - 1));
        out[k] = static_cast<T>(std::sin(level * freq));
        out[half + k] = static_cast<T>(std::cos(level * freq));
    }
    return out;
}

// GroupNorm -> SiLU -> conv, time-shift, GroupNorm -> SiLU -> conv, residual.
template <typename T>
struct ResBlock {
    GroupNorm<T> gn1, gn2;
    Conv2d<T> conv1, conv2, skip;
    Linear<T> time_proj;
    bool has_skip = false;
    bool has_time = false;

    ResBlock() = default;
    ResBlock(Rng& rng, int64_t cin, int64_t cout, int64_t time_dim = 0)
        : gn1(cin), gn2(cout),
          conv1(rng, cin, cout, 3), conv2(rng, cout, cout, 3) {
        has_time = time_dim > 0;
        if (has_time) time_proj = Linear<T>(rng, time_dim, cout);
        has_skip = cin != cout;
        if (has_skip) skip = Conv2d<T>(rng, cin, cout, 1);
    }

    Var<T> forward(const Var<T>& x, const Var<T>& temb = nullptr) const {
        auto h = conv1.forward(ag::silu(gn1.forward(x)));
        if (has_time && temb) {
            auto shift = time_proj.forward(ag::silu(temb));
            h = ag::bias_add_ch(h, ag::reshape(shift, {shift->value.numel()}));
        }
        h = conv2.forward(ag::silu(gn2.forward(h)));
        return ag::add(h, has_skip ? skip.forward(x) : x);
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        gn1.collect(prefix + ".gn1", out);
        conv1.collect(prefix + ".conv1", out);
        if (has_time) time_proj.collect(prefix + ".time", out);
        gn2.collect(prefix + ".gn2", out);
        conv2.collect(prefix + ".conv2", out);
        if (has_skip) skip.collect(prefix + ".skip", out);
    }
};

template <typename T>
std::map<std::string, Tensor<T>> params_to_map(const ParamList<T>& ps) {
    std::map<std::string, Tensor<T>> m;
    for (const auto& p : ps) m[p.name] = p.var->value;
    return m;
}

// Copies values for names present in src; silently skips the rest, so nets
// with and without optional layers can share their common weights.
template <typename T>
int copy_matching_params(ParamList<T>& dst, const std::map<std::string, Tensor<T>>& src) {
    int copied = 0;
    for (auto& p : dst) {
        auto it = src.find(p.name);
        if (it == src.end()) continue;
        check_same_shape(p.var->value, it->second, "copy_matching_params");
        p.var->value = it->second;
        ++copied;
    }
    return copied;
}

template <typename T>
void zero_grads(ParamList<T>& ps) {
    for (auto& p : ps) p.var->zero_grad();
}

} // namespace relight::nn

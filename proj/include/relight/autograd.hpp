#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "relight/errors.hpp"
#include "relight/tensor.hpp"

// Reverse-mode autodiff over Tensor<T>. The graph is built dynamically: each
// op returns a Node holding its value, the parent links, and a closure that
// routes the node's gradient into the parents. Nodes are plain values when
// gradients are globally disabled or no parent requires them, so frozen
// forward passes retain nothing.
namespace relight::ag {

// Training allocates the same large transient buffers (attention maps,
// gradients) every step; with glibc defaults those cycle through mmap/munmap
// and the run drowns in page faults. Keep them on the heap for reuse.
inline const bool g_allocator_tuned = [] {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    return true;
}();

inline thread_local bool g_grad_enabled = true;

struct NoGradGuard {
    NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
    ~NoGradGuard() { g_grad_enabled = prev_; }
    bool prev_;
};

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backward_fn;

    void ensure_grad() {
        if (grad.numel() != value.numel()) grad = Tensor<T>(value.shape());
    }
    // For backward closures that overwrite the whole gradient: allocates an
    // uninitialized buffer and reports whether existing content must be
    // accumulated into instead.
    bool ensure_grad_accum() {
        if (grad.numel() == value.numel()) return true;
        grad = Tensor<T>::uninit(value.shape());
        return false;
    }
    void zero_grad() {
        if (grad.numel()) grad.fill(T(0));
    }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    if (requires_grad) n->ensure_grad();
    return n;
}

template <typename T>
Var<T> constant(Tensor<T> value) {
    return leaf(std::move(value), false);
}

template <typename T>
Var<T> detach(const Var<T>& v) {
    return constant(v->value);
}

template <typename T, typename F>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents, F&& fn) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    bool need = false;
    if (g_grad_enabled)
        for (const auto& p : parents)
            if (p->requires_grad) { need = true; break; }
    if (need) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::forward<F>(fn);
    }
    return n;
}

// Accumulates seed into root's grad, then runs closures in reverse topological
// order. root is usually a scalar loss; grads add up across repeated calls.
template <typename T>
void backward(const Var<T>& root, T seed = T(1)) {
    if (!root->requires_grad) return;
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node<T>* p = node->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    for (int64_t i = 0; i < root->grad.numel(); ++i) root->grad[i] += seed;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn && n->grad.numel()) n->backward_fn(*n);
    }
}

template <typename T>
T scalar_of(const Var<T>& v) {
    if (v->value.numel() != 1) throw ShapeError("scalar_of on non-scalar");
    return v->value[0];
}

namespace detail {

template <typename T>
using VecMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using CVecMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

template <typename T>
void accum(const Var<T>& p, const Tensor<T>& g) {
    if (p->ensure_grad_accum())
        VecMap<T>(p->grad.data(), g.numel()) += CVecMap<T>(g.data(), g.numel());
    else
        VecMap<T>(p->grad.data(), g.numel()) = CVecMap<T>(g.data(), g.numel());
}

// dst (+)= expr depending on whether the parent already holds gradient
template <typename T, typename Expr>
void axpy(const Var<T>& p, const Expr& expr) {
    if (p->ensure_grad_accum())
        VecMap<T>(p->grad.data(), p->grad.numel()) += expr;
    else
        VecMap<T>(p->grad.data(), p->grad.numel()) = expr;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a->value, b->value, "add");
    Tensor<T> out = Tensor<T>::uninit(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] + b->value[i];
    return make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
        if (a->requires_grad) detail::accum(a, self.grad);
        if (b->requires_grad) detail::accum(b, self.grad);
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a->value, b->value, "sub");
    Tensor<T> out = Tensor<T>::uninit(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] - b->value[i];
    return make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
        if (a->requires_grad) detail::accum(a, self.grad);
        if (b->requires_grad)
            detail::axpy(b, -detail::CVecMap<T>(self.grad.data(), self.grad.numel()));
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a->value, b->value, "mul");
    Tensor<T> out = Tensor<T>::uninit(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * b->value[i];
    return make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
        int64_t n = self.grad.numel();
        detail::CVecMap<T> dy(self.grad.data(), n);
        if (a->requires_grad)
            detail::axpy(a, dy * detail::CVecMap<T>(b->value.data(), n));
        if (b->requires_grad)
            detail::axpy(b, dy * detail::CVecMap<T>(a->value.data(), n));
    });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T c) {
    Tensor<T> out = Tensor<T>::uninit(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] + c;
    return make_op<T>(std::move(out), {a}, [a](Node<T>& self) {
        if (a->requires_grad) detail::accum(a, self.grad);
    });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& a, T c) {
    Tensor<T> out = Tensor<T>::uninit(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * c;
    return make_op<T>(std::move(out), {a}, [a, c](Node<T>& self) {
        if (a->requires_grad)
            detail::axpy(a, detail::CVecMap<T>(self.grad.data(), self.grad.numel()) * c);
    });
}

// x * s where s is a learnable scalar (numel 1)
template <typename T>
Var<T> mul_scalar_var(const Var<T>& x, const Var<T>& s) {
    if (s->value.numel() != 1) throw ShapeError("mul_scalar_var: scalar operand");
    T sv = s->value[0];
    Tensor<T> out = Tensor<T>::uninit(x->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = x->value[i] * sv;
    return make_op<T>(std::move(out), {x, s}, [x, s, sv](Node<T>& self) {
        if (x->requires_grad)
            detail::axpy(x, detail::CVecMap<T>(self.grad.data(), self.grad.numel()) * sv);
        if (s->requires_grad) {
            s->ensure_grad();
            double acc = 0;
            for (int64_t i = 0; i < self.grad.numel(); ++i)
                acc += static_cast<double>(self.grad[i]) * static_cast<double>(x->value[i]);
            s->grad[0] += static_cast<T>(acc);
        }
    });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
    Tensor<T> out = Tensor<T>::uninit(a->value.shape());
    int64_t n = out.numel();
    detail::VecMap<T>(out.data(), n) =
        T(1) / (T(1) + (-detail::CVecMap<T>(a->value.data(), n)).exp());
    return make_op<T>(std::move(out), {a}, [a](Node<T>& self) {
        if (!a->requires_grad) return;
        int64_t n = self.grad.numel();
        detail::CVecMap<T> y(self.value.data(), n), dy(self.grad.data(), n);
        detail::axpy(a, dy * y * (T(1) - y));
    });
}

template <typename T>
Var<T> silu(const Var<T>& a) {
    Tensor<T> out = Tensor<T>::uninit(a->value.shape());
    int64_t n = out.numel();
    detail::CVecMap<T> x(a->value.data(), n);
    detail::VecMap<T>(out.data(), n) = x / (T(1) + (-x).exp());
    return make_op<T>(std::move(out), {a}, [a](Node<T>& self) {
        if (!a->requires_grad) return;
        int64_t n = self.grad.numel();
        detail::CVecMap<T> x(a->value.data(), n), dy(self.grad.data(), n);
        auto s = T(1) / (T(1) + (-x).exp());
        detail::axpy(a, dy * (s + x * s * (T(1) - s)));
    });
}

template <typename T>
Var<T> exp_op(const Var<T>& a) {
    Tensor<T> out = Tensor<T>::uninit(a->value.shape());
    int64_t n = out.numel();
    detail::VecMap<T>(out.data(), n) = detail::CVecMap<T>(a->value.data(), n).exp();
    return make_op<T>(std::move(out), {a}, [a](Node<T>& self) {
        if (!a->requires_grad) return;
        int64_t n = self.grad.numel();
        detail::axpy(a, detail::CVecMap<T>(self.grad.data(), n) * detail::CVecMap<T>(self.value.data(), n));
    });
}

// log(max(x, floor))
template <typename T>
Var<T> log_floored(const Var<T>& a, T floor) {
    Tensor<T> out = Tensor<T>::uninit(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::log(std::max(a->value[i], floor));
    return make_op<T>(std::move(out), {a}, [a, floor](Node<T>& self) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int64_t i = 0; i < self.grad.numel(); ++i) {
            T x = a->value[i];
            if (x > floor) a->grad[i] += self.grad[i] / x;
        }
    });
}

template <typename T>
Var<T> abs_op(const Var<T>& a) {
    Tensor<T> out = Tensor<T>::uninit(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::abs(a->value[i]);
    return make_op<T>(std::move(out), {a}, [a](Node<T>& self) {
        if (!a->requires_grad) return;
        int64_t n = self.grad.numel();
        detail::axpy(a, detail::CVecMap<T>(self.grad.data(), n) *
                            detail::CVecMap<T>(a->value.data(), n).sign());
    });
}

template <typename T>
Var<T> square(const Var<T>& a) {
    Tensor<T> out = Tensor<T>::uninit(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * a->value[i];
    return make_op<T>(std::move(out), {a}, [a](Node<T>& self) {
        if (!a->requires_grad) return;
        int64_t n = self.grad.numel();
        detail::axpy(a, detail::CVecMap<T>(self.grad.data(), n) * T(2) * detail::CVecMap<T>(a->value.data(), n));
    });
}

// Subgradient is pass-through strictly inside (lo, hi), zero outside.
template <typename T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
    Tensor<T> out = Tensor<T>::uninit(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::clamp(a->value[i], lo, hi);
    return make_op<T>(std::move(out), {a}, [a, lo, hi](Node<T>& self) {
        if (!a->requires_grad) return;
        int64_t n = self.grad.numel();
        detail::CVecMap<T> x(a->value.data(), n), dy(self.grad.data(), n);
        detail::axpy(a, (x > lo && x < hi).select(dy, T(0)));
    });
}

// ---------------------------------------------------------------------------
// Shape / broadcast
// ---------------------------------------------------------------------------

template <typename T>
Var<T> reshape(const Var<T>& a, std::vector<int64_t> shape) {
    Tensor<T> out = a->value.reshaped(std::move(shape));
    return make_op<T>(std::move(out), {a}, [a](Node<T>& self) {
        if (a->requires_grad) detail::accum(a, self.grad);
    });
}

template <typename T>
Var<T> concat_ch(const Var<T>& a, const Var<T>& b) {
    const auto& sa = a->value.shape();
    const auto& sb = b->value.shape();
    if (sa.size() != 3 || sb.size() != 3 || sa[1] != sb[1] || sa[2] != sb[2])
        throw ShapeError("concat_ch: " + a->value.shape_str() + " vs " + b->value.shape_str());
    Tensor<T> out = Tensor<T>::uninit({sa[0] + sb[0], sa[1], sa[2]});
    std::copy(a->value.data(), a->value.data() + a->value.numel(), out.data());
    std::copy(b->value.data(), b->value.data() + b->value.numel(), out.data() + a->value.numel());
    int64_t na = a->value.numel();
    return make_op<T>(std::move(out), {a, b}, [a, b, na](Node<T>& self) {
        if (a->requires_grad)
            detail::axpy(a, detail::CVecMap<T>(self.grad.data(), na));
        if (b->requires_grad)
            detail::axpy(b, detail::CVecMap<T>(self.grad.data() + na, b->value.numel()));
    });
}

template <typename T>
Var<T> slice_ch(const Var<T>& a, int64_t c0, int64_t c1) {
    const auto& s = a->value.shape();
    if (s.size() != 3 || c0 < 0 || c1 > s[0] || c0 >= c1)
        throw ShapeError("slice_ch out of range");
    int64_t hw = s[1] * s[2];
    Tensor<T> out = Tensor<T>::uninit({c1 - c0, s[1], s[2]});
    std::copy(a->value.data() + c0 * hw, a->value.data() + c1 * hw, out.data());
    return make_op<T>(std::move(out), {a}, [a, c0, hw](Node<T>& self) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int64_t i = 0; i < self.grad.numel(); ++i)
            a->grad[c0 * hw + i] += self.grad[i];
    });
}

// (C,H,W) -> 2-D (H*W, C) token matrix for attention
template <typename T>
Var<T> chw_to_tokens(const Var<T>& a) {
    const auto& s = a->value.shape();
    if (s.size() != 3) throw ShapeError("chw_to_tokens wants rank-3");
    int64_t C = s[0], HW = s[1] * s[2];
    Tensor<T> out = Tensor<T>::uninit({HW, C});
    const T* src = a->value.data();
    for (int64_t c = 0; c < C; ++c)
        for (int64_t p = 0; p < HW; ++p) out[p * C + c] = src[c * HW + p];
    return make_op<T>(std::move(out), {a}, [a, C, HW](Node<T>& self) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int64_t c = 0; c < C; ++c)
            for (int64_t p = 0; p < HW; ++p) a->grad[c * HW + p] += self.grad[p * C + c];
    });
}

template <typename T>
Var<T> tokens_to_chw(const Var<T>& a, int64_t H, int64_t W) {
    const auto& s = a->value.shape();
    if (s.size() != 2 || s[0] != H * W) throw ShapeError("tokens_to_chw size mismatch");
    int64_t C = s[1], HW = H * W;
    Tensor<T> out = Tensor<T>::uninit({C, H, W});
    for (int64_t p = 0; p < HW; ++p)
        for (int64_t c = 0; c < C; ++c) out[c * HW + p] = a->value[p * C + c];
    return make_op<T>(std::move(out), {a}, [a, C, HW](Node<T>& self) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int64_t p = 0; p < HW; ++p)
            for (int64_t c = 0; c < C; ++c) a->grad[p * C + c] += self.grad[c * HW + p];
    });
}

template <typename T>
Var<T> upsample_nearest(const Var<T>& a, int64_t factor) {
    const auto& s = a->value.shape();
    if (s.size() != 3) throw ShapeError("upsample_nearest wants rank-3");
    int64_t C = s[0], H = s[1], W = s[2];
    Tensor<T> out = Tensor<T>::uninit({C, H * factor, W * factor});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < H * factor; ++y)
            for (int64_t x = 0; x < W * factor; ++x)
                out.at(c, y, x) = a->value.at(c, y / factor, x / factor);
    return make_op<T>(std::move(out), {a}, [a, C, H, W, factor](Node<T>& self) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int64_t c = 0; c < C; ++c)
            for (int64_t y = 0; y < H * factor; ++y)
                for (int64_t x = 0; x < W * factor; ++x)
                    a->grad[(c * H + y / factor) * W + x / factor] += self.grad[(c * H * factor + y) * W * factor + x];
    });
}

template <typename T>
Var<T> avg_pool(const Var<T>& a, int64_t factor) {
    const auto& s = a->value.shape();
    if (s.size() != 3 || s[1] % factor || s[2] % factor)
        throw ShapeError("avg_pool: size not divisible by factor");
    int64_t C = s[0], H = s[1], W = s[2], Ho = H / factor, Wo = W / factor;
    Tensor<T> out = Tensor<T>::uninit({C, Ho, Wo});
    T inv = T(1) / static_cast<T>(factor * factor);
    for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < Ho; ++y)
            for (int64_t x = 0; x < Wo; ++x) {
                double acc = 0;
                for (int64_t dy = 0; dy < factor; ++dy)
                    for (int64_t dx = 0; dx < factor; ++dx)
                        acc += a->value.at(c, y * factor + dy, x * factor + dx);
                out.at(c, y, x) = static_cast<T>(acc) * inv;
            }
    return make_op<T>(std::move(out), {a}, [a, C, H, W, Ho, Wo, factor, inv](Node<T>& self) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int64_t c = 0; c < C; ++c)
            for (int64_t y = 0; y < Ho; ++y)
                for (int64_t x = 0; x < Wo; ++x) {
                    T g = self.grad[(c * Ho + y) * Wo + x] * inv;
                    for (int64_t dy = 0; dy < factor; ++dy)
                        for (int64_t dx = 0; dx < factor; ++dx)
                            a->grad[(c * H + y * factor + dy) * W + x * factor + dx] += g;
                }
    });
}

// ---------------------------------------------------------------------------
// Reductions and norms
// ---------------------------------------------------------------------------

template <typename T>
Var<T> mean_all(const Var<T>& a) {
    T m = detail::CVecMap<T>(a->value.data(), a->value.numel()).sum() / static_cast<T>(a->value.numel());
    T inv = T(1) / static_cast<T>(a->value.numel());
    return make_op<T>(Tensor<T>::scalar(m), {a}, [a, inv](Node<T>& self) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        detail::VecMap<T>(a->grad.data(), a->grad.numel()) += self.grad[0] * inv;
    });
}

template <typename T>
Var<T> sum_all(const Var<T>& a) {
    T m = detail::CVecMap<T>(a->value.data(), a->value.numel()).sum();
    return make_op<T>(Tensor<T>::scalar(m), {a}, [a](Node<T>& self) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        detail::VecMap<T>(a->grad.data(), a->grad.numel()) += self.grad[0];
    });
}

// Per-channel bias over (C,H,W); b has shape (C)
template <typename T>
Var<T> bias_add_ch(const Var<T>& x, const Var<T>& b) {
    const auto& s = x->value.shape();
    if (s.size() != 3 || b->value.numel() != s[0]) throw ShapeError("bias_add_ch");
    int64_t C = s[0], HW = s[1] * s[2];
    Tensor<T> out = Tensor<T>::uninit(s);
    for (int64_t c = 0; c < C; ++c) {
        T bc = b->value[c];
        for (int64_t p = 0; p < HW; ++p) out[c * HW + p] = x->value[c * HW + p] + bc;
    }
    return make_op<T>(std::move(out), {x, b}, [x, b, C, HW](Node<T>& self) {
        if (x->requires_grad) detail::accum(x, self.grad);
        if (b->requires_grad) {
            b->ensure_grad();
            for (int64_t c = 0; c < C; ++c) {
                double acc = 0;
                for (int64_t p = 0; p < HW; ++p) acc += self.grad[c * HW + p];
                b->grad[c] += static_cast<T>(acc);
            }
        }
    });
}

// (C,H,W) * (1,H,W) broadcast multiply (reflectance x illumination)
template <typename T>
Var<T> mul_bcast1(const Var<T>& a, const Var<T>& b) {
    const auto& sa = a->value.shape();
    const auto& sb = b->value.shape();
    if (sa.size() != 3 || sb.size() != 3 || sb[0] != 1 || sa[1] != sb[1] || sa[2] != sb[2])
        throw ShapeError("mul_bcast1: " + a->value.shape_str() + " vs " + b->value.shape_str());
    int64_t C = sa[0], HW = sa[1] * sa[2];
    Tensor<T> out = Tensor<T>::uninit(sa);
    for (int64_t c = 0; c < C; ++c)
        for (int64_t p = 0; p < HW; ++p)
            out[c * HW + p] = a->value[c * HW + p] * b->value[p];
    return make_op<T>(std::move(out), {a, b}, [a, b, C, HW](Node<T>& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (int64_t c = 0; c < C; ++c)
                for (int64_t p = 0; p < HW; ++p)
                    a->grad[c * HW + p] += self.grad[c * HW + p] * b->value[p];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (int64_t p = 0; p < HW; ++p) {
                double acc = 0;
                for (int64_t c = 0; c < C; ++c)
                    acc += static_cast<double>(self.grad[c * HW + p]) * static_cast<double>(a->value[c * HW + p]);
                b->grad[p] += static_cast<T>(acc);
            }
        }
    });
}

// Forward differences along width / height; output loses one column / row.
template <typename T>
Var<T> grad_x(const Var<T>& a) {
    const auto& s = a->value.shape();
    if (s.size() != 3 || s[2] < 2) throw ShapeError("grad_x wants width >= 2");
    int64_t C = s[0], H = s[1], W = s[2];
    Tensor<T> out = Tensor<T>::uninit({C, H, W - 1});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W - 1; ++x)
                out.at(c, y, x) = a->value.at(c, y, x + 1) - a->value.at(c, y, x);
    return make_op<T>(std::move(out), {a}, [a, C, H, W](Node<T>& self) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int64_t c = 0; c < C; ++c)
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < W - 1; ++x) {
                    T g = self.grad[(c * H + y) * (W - 1) + x];
                    a->grad[(c * H + y) * W + x + 1] += g;
                    a->grad[(c * H + y) * W + x] -= g;
                }
    });
}

template <typename T>
Var<T> grad_y(const Var<T>& a) {
    const auto& s = a->value.shape();
    if (s.size() != 3 || s[1] < 2) throw ShapeError("grad_y wants height >= 2");
    int64_t C = s[0], H = s[1], W = s[2];
    Tensor<T> out = Tensor<T>::uninit({C, H - 1, W});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < H - 1; ++y)
            for (int64_t x = 0; x < W; ++x)
                out.at(c, y, x) = a->value.at(c, y + 1, x) - a->value.at(c, y, x);
    return make_op<T>(std::move(out), {a}, [a, C, H, W](Node<T>& self) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int64_t c = 0; c < C; ++c)
            for (int64_t y = 0; y < H - 1; ++y)
                for (int64_t x = 0; x < W; ++x) {
                    T g = self.grad[(c * (H - 1) + y) * W + x];
                    a->grad[(c * H + y + 1) * W + x] += g;
                    a->grad[(c * H + y) * W + x] -= g;
                }
    });
}

// Mean over channels: (C,H,W) -> (1,H,W)
template <typename T>
Var<T> channel_mean(const Var<T>& a) {
    const auto& s = a->value.shape();
    if (s.size() != 3) throw ShapeError("channel_mean wants rank-3");
    int64_t C = s[0], HW = s[1] * s[2];
    Tensor<T> out = Tensor<T>::uninit({1, s[1], s[2]});
    T inv = T(1) / static_cast<T>(C);
    for (int64_t p = 0; p < HW; ++p) {
        double acc = 0;
        for (int64_t c = 0; c < C; ++c) acc += a->value[c * HW + p];
        out[p] = static_cast<T>(acc) * inv;
    }
    return make_op<T>(std::move(out), {a}, [a, C, HW, inv](Node<T>& self) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int64_t p = 0; p < HW; ++p) {
            T g = self.grad[p] * inv;
            for (int64_t c = 0; c < C; ++c) a->grad[c * HW + p] += g;
        }
    });
}

// ---------------------------------------------------------------------------
// Matrix ops (Eigen-backed)
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
using ColMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>>;
template <typename T>
using CColMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>>;

// Z(m,n) = scale * op(A) * op(B) over row-major buffers, evaluated through
// col-major views (Z^T = op(B)^T op(A)^T), which hits Eigen's fast kernels.
// A is (ra,ca) before the optional transpose, likewise B.
template <typename T>
void gemm(T* z, int64_t m, int64_t n, bool accumulate, T scale,
          const T* a, int64_t ra, int64_t ca, bool ta,
          const T* b, int64_t rb, int64_t cb, bool tb) {
    ColMap<T> Zc(z, n, m);
    CColMap<T> Ac(a, ca, ra); // col-major view of row-major A = A^T
    CColMap<T> Bc(b, cb, rb);
    auto apply = [&](const auto& lhs, const auto& rhs) {
        if (accumulate) Zc.noalias() += scale * (lhs * rhs);
        else if (scale == T(1)) Zc.noalias() = lhs * rhs;
        else Zc.noalias() = scale * (lhs * rhs);
    };
    // op(B)^T is Bc when tb is false, Bc^T otherwise; same for A
    if (!tb && !ta) apply(Bc, Ac);
    else if (tb && !ta) apply(Bc.transpose(), Ac);
    else if (!tb && ta) apply(Bc, Ac.transpose());
    else apply(Bc.transpose(), Ac.transpose());
}

} // namespace detail

// Y = scale * op_a(A) * op_b(B) with transposes applied as views; the scale
// keeps attention logits free of an extra full-size intermediate.
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool ta = false, bool tb = false, T scale = T(1)) {
    const auto& sa = a->value.shape();
    const auto& sb = b->value.shape();
    if (sa.size() != 2 || sb.size() != 2) throw ShapeError("matmul wants rank-2");
    int64_t m = ta ? sa[1] : sa[0];
    int64_t k = ta ? sa[0] : sa[1];
    int64_t k2 = tb ? sb[1] : sb[0];
    int64_t n = tb ? sb[0] : sb[1];
    if (k != k2) throw ShapeError("matmul inner dims " + a->value.shape_str() + " vs " + b->value.shape_str());
    Tensor<T> out = Tensor<T>::uninit({m, n});
    detail::gemm(out.data(), m, n, false, scale,
                 a->value.data(), sa[0], sa[1], ta,
                 b->value.data(), sb[0], sb[1], tb);
    return make_op<T>(std::move(out), {a, b}, [a, b, ta, tb, m, n, scale](Node<T>& self) {
        const auto& sa = a->value.shape();
        const auto& sb = b->value.shape();
        const T* A = a->value.data();
        const T* B = b->value.data();
        const T* dY = self.grad.data();
        if (a->requires_grad) {
            bool acc = a->ensure_grad_accum();
            // dA = dY B^T (with transposes folded per mode)
            if (!ta) detail::gemm(a->grad.data(), sa[0], sa[1], acc, scale,
                                  dY, m, n, false, B, sb[0], sb[1], !tb);
            else detail::gemm(a->grad.data(), sa[0], sa[1], acc, scale,
                              B, sb[0], sb[1], tb, dY, m, n, true);
        }
        if (b->requires_grad) {
            bool acc = b->ensure_grad_accum();
            if (!tb) detail::gemm(b->grad.data(), sb[0], sb[1], acc, scale,
                                  A, sa[0], sa[1], !ta, dY, m, n, false);
            else detail::gemm(b->grad.data(), sb[0], sb[1], acc, scale,
                              dY, m, n, true, A, sa[0], sa[1], ta);
        }
    });
}

template <typename T>
Var<T> softmax_rows(const Var<T>& a) {
    const auto& s = a->value.shape();
    if (s.size() != 2) throw ShapeError("softmax_rows wants rank-2");
    int64_t R = s[0], C = s[1];
    Tensor<T> out = Tensor<T>::uninit(s);
    for (int64_t r = 0; r < R; ++r) {
        detail::CVecMap<T> row(a->value.data() + r * C, C);
        detail::VecMap<T> orow(out.data() + r * C, C);
        orow = (row - row.maxCoeff()).exp();
        orow /= orow.sum();
    }
    return make_op<T>(std::move(out), {a}, [a, R, C](Node<T>& self) {
        if (!a->requires_grad) return;
        bool acc = a->ensure_grad_accum();
        for (int64_t r = 0; r < R; ++r) {
            detail::CVecMap<T> p(self.value.data() + r * C, C);
            detail::CVecMap<T> dp(self.grad.data() + r * C, C);
            detail::VecMap<T> da(a->grad.data() + r * C, C);
            T dot = (dp * p).sum();
            if (acc) da += p * (dp - dot);
            else da = p * (dp - dot);
        }
    });
}

// ---------------------------------------------------------------------------
// Convolution & normalization
// ---------------------------------------------------------------------------

namespace detail {

// col: (Cin*kh*kw) x (Ho*Wo), zero padding
template <typename T>
void im2col(const Tensor<T>& x, int64_t kh, int64_t kw, int64_t stride, int64_t pad,
            int64_t Ho, int64_t Wo, std::vector<T>& col) {
    int64_t C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
    col.assign(static_cast<size_t>(C * kh * kw * Ho * Wo), T(0));
    int64_t ow = Ho * Wo;
    for (int64_t c = 0; c < C; ++c)
        for (int64_t dy = 0; dy < kh; ++dy)
            for (int64_t dx = 0; dx < kw; ++dx) {
                T* dst = col.data() + ((c * kh + dy) * kw + dx) * ow;
                for (int64_t y = 0; y < Ho; ++y) {
                    int64_t sy = y * stride + dy - pad;
                    if (sy < 0 || sy >= H) continue;
                    const T* src = x.data() + (c * H + sy) * W;
                    for (int64_t x2 = 0; x2 < Wo; ++x2) {
                        int64_t sx = x2 * stride + dx - pad;
                        if (sx >= 0 && sx < W) dst[y * Wo + x2] = src[sx];
                    }
                }
            }
}

template <typename T>
void col2im_accum(const T* col, int64_t kh, int64_t kw, int64_t stride, int64_t pad,
                  int64_t Ho, int64_t Wo, Tensor<T>& dx) {
    int64_t C = dx.shape()[0], H = dx.shape()[1], W = dx.shape()[2];
    int64_t ow = Ho * Wo;
    for (int64_t c = 0; c < C; ++c)
        for (int64_t dy = 0; dy < kh; ++dy)
            for (int64_t dx2 = 0; dx2 < kw; ++dx2) {
                const T* src = col + ((c * kh + dy) * kw + dx2) * ow;
                for (int64_t y = 0; y < Ho; ++y) {
                    int64_t sy = y * stride + dy - pad;
                    if (sy < 0 || sy >= H) continue;
                    T* dst = dx.data() + (c * H + sy) * W;
                    for (int64_t x2 = 0; x2 < Wo; ++x2) {
                        int64_t sx = x2 * stride + dx2 - pad;
                        if (sx >= 0 && sx < W) dst[sx] += src[y * Wo + x2];
                    }
                }
            }
}

} // namespace detail

// x: (Cin,H,W), w: (Cout,Cin,kh,kw), b: (Cout) or empty var for no bias
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int64_t stride = 1, int64_t pad = -1) {
    const auto& sx = x->value.shape();
    const auto& sw = w->value.shape();
    if (sx.size() != 3 || sw.size() != 4) throw ShapeError("conv2d ranks");
    if (sx[0] != sw[1]) throw ShapeError("conv2d channels: input " + x->value.shape_str() + " weight " + w->value.shape_str());
    int64_t Cout = sw[0], Cin = sw[1], kh = sw[2], kw = sw[3];
    if (pad < 0) pad = kh / 2; // same-size default for odd kernels at stride 1
    int64_t Ho = (sx[1] + 2 * pad - kh) / stride + 1;
    int64_t Wo = (sx[2] + 2 * pad - kw) / stride + 1;
    if (Ho <= 0 || Wo <= 0) throw ShapeError("conv2d output collapses");

    std::vector<T> col;
    detail::im2col(x->value, kh, kw, stride, pad, Ho, Wo, col);
    Tensor<T> out = Tensor<T>::uninit({Cout, Ho, Wo});
    detail::gemm(out.data(), Cout, Ho * Wo, false, T(1),
                 w->value.data(), Cout, Cin * kh * kw, false,
                 col.data(), Cin * kh * kw, Ho * Wo, false);
    if (b->value.numel()) {
        if (b->value.numel() != Cout) throw ShapeError("conv2d bias size");
        for (int64_t c = 0; c < Cout; ++c) {
            T bc = b->value[c];
            T* dst = out.data() + c * Ho * Wo;
            for (int64_t p = 0; p < Ho * Wo; ++p) dst[p] += bc;
        }
    }
    // im2col is recomputed in backward rather than stored; inputs dominate
    // memory otherwise.
    return make_op<T>(std::move(out), {x, w, b},
                      [x, w, b, stride, pad, Cout, Cin, kh, kw, Ho, Wo](Node<T>& self) {
        const T* dY = self.grad.data();
        if (w->requires_grad || x->requires_grad) {
            std::vector<T> col;
            detail::im2col(x->value, kh, kw, stride, pad, Ho, Wo, col);
            if (w->requires_grad) {
                bool acc = w->ensure_grad_accum();
                detail::gemm(w->grad.data(), Cout, Cin * kh * kw, acc, T(1),
                             dY, Cout, Ho * Wo, false,
                             col.data(), Cin * kh * kw, Ho * Wo, true);
            }
            if (x->requires_grad) {
                x->ensure_grad();
                std::vector<T, relight::detail::NoInitAlloc<T>> dcol(
                    static_cast<size_t>(Cin * kh * kw * Ho * Wo));
                detail::gemm(dcol.data(), Cin * kh * kw, Ho * Wo, false, T(1),
                             w->value.data(), Cout, Cin * kh * kw, true,
                             dY, Cout, Ho * Wo, false);
                detail::col2im_accum(dcol.data(), kh, kw, stride, pad, Ho, Wo, x->grad);
            }
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (int64_t c = 0; c < Cout; ++c)
                b->grad[c] += detail::CVecMap<T>(self.grad.data() + c * Ho * Wo, Ho * Wo).sum();
        }
    });
}

// GroupNorm over (C,H,W). gamma/beta shape (C).
template <typename T>
Var<T> group_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  int64_t groups, T eps = T(1e-5)) {
    const auto& s = x->value.shape();
    if (s.size() != 3 || s[0] % groups) throw ShapeError("group_norm channels not divisible");
    int64_t C = s[0], HW = s[1] * s[2], cg = C / groups, gn = cg * HW;
    Tensor<T> out = Tensor<T>::uninit(s);
    std::vector<T> mu(static_cast<size_t>(groups)), inv(static_cast<size_t>(groups));
    for (int64_t g = 0; g < groups; ++g) {
        detail::CVecMap<T> src(x->value.data() + g * gn, gn);
        T m = src.sum() / static_cast<T>(gn);
        T v = (src - m).square().sum() / static_cast<T>(gn);
        mu[static_cast<size_t>(g)] = m;
        inv[static_cast<size_t>(g)] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(v) + static_cast<double>(eps)));
    }
    for (int64_t c = 0; c < C; ++c) {
        int64_t g = c / cg;
        detail::CVecMap<T> src(x->value.data() + c * HW, HW);
        detail::VecMap<T> dst(out.data() + c * HW, HW);
        dst = (src - mu[static_cast<size_t>(g)]) * inv[static_cast<size_t>(g)] * gamma->value[c] + beta->value[c];
    }
    return make_op<T>(std::move(out), {x, gamma, beta},
                      [x, gamma, beta, groups, C, HW, cg, gn, mu, inv](Node<T>& self) {
        if (gamma->requires_grad) gamma->ensure_grad();
        if (beta->requires_grad) beta->ensure_grad();
        bool acc_x = x->requires_grad ? x->ensure_grad_accum() : false;
        for (int64_t g = 0; g < groups; ++g) {
            T mu_g = mu[static_cast<size_t>(g)], inv_g = inv[static_cast<size_t>(g)];
            T sum_dy_xhat = 0, sum_dy = 0;
            for (int64_t c = g * cg; c < (g + 1) * cg; ++c) {
                detail::CVecMap<T> xv(x->value.data() + c * HW, HW);
                detail::CVecMap<T> dy(self.grad.data() + c * HW, HW);
                T gm = gamma->value[c];
                T dbt = dy.sum();
                T dgm = (dy * (xv - mu_g)).sum() * inv_g;
                sum_dy_xhat += dgm * gm;
                sum_dy += dbt * gm;
                if (gamma->requires_grad) gamma->grad[c] += dgm;
                if (beta->requires_grad) beta->grad[c] += dbt;
            }
            if (!x->requires_grad) continue;
            T m_dy = sum_dy / static_cast<T>(gn);
            T m_dyxh = sum_dy_xhat / static_cast<T>(gn);
            for (int64_t c = g * cg; c < (g + 1) * cg; ++c) {
                detail::CVecMap<T> xv(x->value.data() + c * HW, HW);
                detail::CVecMap<T> dy(self.grad.data() + c * HW, HW);
                detail::VecMap<T> dx(x->grad.data() + c * HW, HW);
                if (acc_x) dx += inv_g * (dy * gamma->value[c] - m_dy - (xv - mu_g) * inv_g * m_dyxh);
                else dx = inv_g * (dy * gamma->value[c] - m_dy - (xv - mu_g) * inv_g * m_dyxh);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Loss building blocks
// ---------------------------------------------------------------------------

// Normalized soft histogram over [0,1] with hat (triangular) kernels centered
// at k/(bins-1); hats partition unity so the bins sum to 1 for in-range input.
template <typename T>
Var<T> soft_histogram(const Var<T>& x, int64_t bins) {
    if (bins < 2) throw ParamError("soft_histogram wants bins >= 2");
    int64_t N = x->value.numel();
    T delta = T(1) / static_cast<T>(bins - 1);
    Tensor<T> out({bins});
    std::vector<double> acc(static_cast<size_t>(bins), 0.0);
    for (int64_t i = 0; i < N; ++i) {
        T v = std::clamp(x->value[i], T(0), T(1));
        T pos = v / delta;
        int64_t k0 = static_cast<int64_t>(pos);
        if (k0 >= bins - 1) k0 = bins - 2;
        T f = pos - static_cast<T>(k0);
        acc[static_cast<size_t>(k0)] += 1 - static_cast<double>(f);
        acc[static_cast<size_t>(k0 + 1)] += static_cast<double>(f);
    }
    for (int64_t k = 0; k < bins; ++k) out[k] = static_cast<T>(acc[static_cast<size_t>(k)] / static_cast<double>(N));
    return make_op<T>(std::move(out), {x}, [x, bins, delta, N](Node<T>& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        T invn = T(1) / static_cast<T>(N);
        for (int64_t i = 0; i < N; ++i) {
            T v = x->value[i];
            if (v <= T(0) || v >= T(1)) continue; // clamped region: zero slope
            T pos = v / delta;
            int64_t k0 = static_cast<int64_t>(pos);
            if (k0 >= bins - 1) k0 = bins - 2;
            // d h_{k0}/dv = -1/delta, d h_{k0+1}/dv = +1/delta
            x->grad[i] += (self.grad[k0 + 1] - self.grad[k0]) * invn / delta;
        }
    });
}

// Valid-mode correlation with a fixed (non-learned) 2-D window, applied per
// channel. Used by the differentiable SSIM term.
template <typename T>
Var<T> fixed_window_filter(const Var<T>& x, const Tensor<T>& kernel) {
    const auto& s = x->value.shape();
    const auto& ks = kernel.shape();
    if (s.size() != 3 || ks.size() != 2) throw ShapeError("fixed_window_filter ranks");
    int64_t C = s[0], H = s[1], W = s[2], kh = ks[0], kw = ks[1];
    if (H < kh || W < kw) throw ParamError("fixed_window_filter: image smaller than window");
    int64_t Ho = H - kh + 1, Wo = W - kw + 1;
    Tensor<T> out = Tensor<T>::uninit({C, Ho, Wo});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < Ho; ++y)
            for (int64_t x2 = 0; x2 < Wo; ++x2) {
                double acc = 0;
                for (int64_t dy = 0; dy < kh; ++dy)
                    for (int64_t dx = 0; dx < kw; ++dx)
                        acc += static_cast<double>(kernel[dy * kw + dx]) *
                               static_cast<double>(x->value.at(c, y + dy, x2 + dx));
                out.at(c, y, x2) = static_cast<T>(acc);
            }
    return make_op<T>(std::move(out), {x}, [x, kernel, C, H, W, kh, kw, Ho, Wo](Node<T>& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int64_t c = 0; c < C; ++c)
            for (int64_t y = 0; y < Ho; ++y)
                for (int64_t x2 = 0; x2 < Wo; ++x2) {
                    T g = self.grad[(c * Ho + y) * Wo + x2];
                    for (int64_t dy = 0; dy < kh; ++dy)
                        for (int64_t dx = 0; dx < kw; ++dx)
                            x->grad[(c * H + y + dy) * W + x2 + dx] += g * kernel[dy * kw + dx];
                }
    });
}

// Elementwise division a / b
template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a->value, b->value, "div");
    Tensor<T> out = Tensor<T>::uninit(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] / b->value[i];
    return make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
        int64_t n = self.grad.numel();
        detail::CVecMap<T> dy(self.grad.data(), n), bv(b->value.data(), n);
        if (a->requires_grad) detail::axpy(a, dy / bv);
        if (b->requires_grad)
            detail::axpy(b, -dy * detail::CVecMap<T>(self.value.data(), n) / bv);
    });
}

// mean(|a-b|) and mean((a-b)^2) as fused ops
template <typename T>
Var<T> l1_loss(const Var<T>& a, const Var<T>& b) {
    return mean_all(abs_op(sub(a, b)));
}

template <typename T>
Var<T> mse_loss(const Var<T>& a, const Var<T>& b) {
    return mean_all(square(sub(a, b)));
}

} // namespace relight::ag

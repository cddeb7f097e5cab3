#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "relight/errors.hpp"

namespace relight {

namespace detail {

// std::vector that default-initializes elements, so freshly sized buffers are
// not zero-filled; op outputs that overwrite every element use this.
template <typename T>
struct NoInitAlloc : std::allocator<T> {
    template <typename U>
    struct rebind {
        using other = NoInitAlloc<U>;
    };
    template <typename U, typename... Args>
    void construct(U* p, Args&&... args) {
        if constexpr (sizeof...(Args) == 0)
            ::new (static_cast<void*>(p)) U;
        else
            ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
};

} // namespace detail

// Dense row-major tensor with value semantics. Images are stored CHW:
// reflectance/images {3,H,W}, illumination {1,H,W}, features {C,H,W}.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
        data_.resize(static_cast<size_t>(count(shape_)));
        fill(T(0));
    }

    // Contents are indeterminate; caller promises to write every element.
    static Tensor uninit(std::vector<int64_t> shape) {
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_.resize(static_cast<size_t>(count(t.shape_)));
        return t;
    }

    Tensor(std::vector<int64_t> shape, T value) : shape_(std::move(shape)) {
        data_.resize(static_cast<size_t>(count(shape_)));
        fill(value);
    }

    Tensor(std::vector<int64_t> shape, std::vector<T> data) : shape_(std::move(shape)) {
        if (static_cast<int64_t>(data.size()) != count(shape_))
            throw ShapeError("tensor data size does not match shape " + shape_str());
        data_.assign(data.begin(), data.end());
    }

    static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // 3-D (C,H,W) accessors
    T& at(int64_t c, int64_t h, int64_t w) {
        return data_[static_cast<size_t>((c * shape_[1] + h) * shape_[2] + w)];
    }
    const T& at(int64_t c, int64_t h, int64_t w) const {
        return data_[static_cast<size_t>((c * shape_[1] + h) * shape_[2] + w)];
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (const T& v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(";
        for (size_t i = 0; i < shape_.size(); ++i)
            os << shape_[i] << (i + 1 < shape_.size() ? "," : "");
        os << ")";
        return os.str();
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (int64_t i = 0; i < numel(); ++i)
            out[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
        return out;
    }

    Tensor reshaped(std::vector<int64_t> shape) const {
        if (count(shape) != numel())
            throw ShapeError("reshape " + shape_str() + " to incompatible size");
        Tensor out = *this;
        out.shape_ = std::move(shape);
        return out;
    }

private:
    static int64_t count(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) {
            if (d <= 0) throw ShapeError("non-positive tensor dimension");
            n *= d;
        }
        return s.empty() ? 0 : n;
    }

    std::vector<int64_t> shape_;
    std::vector<T, detail::NoInitAlloc<T>> data_;
};

template <typename T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* where) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(where) + ": " + a.shape_str() + " vs " + b.shape_str());
}

} // namespace relight

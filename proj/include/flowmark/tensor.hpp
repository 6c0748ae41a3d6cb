#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "flowmark/common.hpp"

namespace flowmark {

// Dense row-major tensor. Shapes in this codebase are small and explicit:
// {C,H,W} for images and feature maps, {O,C,kh,kw} for conv weights,
// {H,W,2} for flow fields, {N} for vectors, {1} for scalars.
template <class T>
struct TensorT {
    std::vector<int> shape;
    std::vector<T> data;

    TensorT() = default;
    explicit TensorT(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) {
        data.assign(numel_of(shape), fill);
    }

    static std::size_t numel_of(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            require(d > 0, "tensor dimension must be positive");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::size_t numel() const { return data.size(); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }
    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    // {C,H,W} accessor
    T& at3(int c, int y, int x) {
        return data[(static_cast<std::size_t>(c) * dim(1) + y) * dim(2) + x];
    }
    const T& at3(int c, int y, int x) const {
        return data[(static_cast<std::size_t>(c) * dim(1) + y) * dim(2) + x];
    }
    // {O,C,kh,kw} accessor
    T& at4(int o, int c, int y, int x) {
        return data[((static_cast<std::size_t>(o) * dim(1) + c) * dim(2) + y) * dim(3) + x];
    }
    const T& at4(int o, int c, int y, int x) const {
        return data[((static_cast<std::size_t>(o) * dim(1) + c) * dim(2) + y) * dim(3) + x];
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    static TensorT zeros_like(const TensorT& o) { return TensorT(o.shape); }

    template <class U>
    TensorT<U> cast() const {
        TensorT<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

template <class T>
bool all_finite(const TensorT<T>& t) {
    for (T v : t.data)
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
}

template <class T>
double max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
    require(a.same_shape(b), "max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

template <class T>
double mean_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
    require(a.same_shape(b), "mean_abs_diff: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        s += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
    return s / static_cast<double>(a.numel());
}

}  // namespace flowmark

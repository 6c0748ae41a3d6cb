#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "flowmark/common.hpp"
#include "flowmark/tensor.hpp"

namespace flowmark {

// Reverse-mode autodiff over TensorT. Graphs are built per forward pass and
// released when the root goes out of scope; parameters are long-lived leaf
// nodes reused across steps. backward() zeroes every gradient it touches
// before accumulating, so stale gradients from earlier passes cannot leak in.
//
// Determinism contract: every op accumulates in a fixed index order, and the
// only parallel loops are over disjoint output slices, so results are
// bit-identical across runs and thread counts.

template <class T>
struct ADNode {
    TensorT<T> val;
    TensorT<T> grad;
    bool needs_grad = false;
    std::vector<std::shared_ptr<ADNode>> parents;
    std::function<void(ADNode&)> backprop;
};

template <class T>
class Var {
  public:
    Var() = default;
    explicit Var(std::shared_ptr<ADNode<T>> n) : node_(std::move(n)) {}

    static Var constant(TensorT<T> v) {
        auto n = std::make_shared<ADNode<T>>();
        n->val = std::move(v);
        n->needs_grad = false;
        return Var(std::move(n));
    }

    static Var leaf(TensorT<T> v, bool needs_grad) {
        auto n = std::make_shared<ADNode<T>>();
        n->val = std::move(v);
        n->needs_grad = needs_grad;
        return Var(std::move(n));
    }

    bool valid() const { return node_ != nullptr; }
    const TensorT<T>& val() const { return node_->val; }
    TensorT<T>& mutable_val() { return node_->val; }
    const TensorT<T>& grad() const { return node_->grad; }
    bool needs_grad() const { return node_->needs_grad; }
    ADNode<T>* node() const { return node_.get(); }
    std::shared_ptr<ADNode<T>> handle() const { return node_; }

    Var detach() const { return constant(node_->val); }

  private:
    std::shared_ptr<ADNode<T>> node_;
};

namespace ad_detail {

template <class T>
void ensure_grad(ADNode<T>& n) {
    if (n.grad.data.empty()) n.grad = TensorT<T>(n.val.shape);
}

template <class T>
std::shared_ptr<ADNode<T>> make_op(TensorT<T> val, std::vector<std::shared_ptr<ADNode<T>>> parents,
                                   std::function<void(ADNode<T>&)> backprop) {
    auto n = std::make_shared<ADNode<T>>();
    n->val = std::move(val);
    n->parents = std::move(parents);
    for (auto& p : n->parents)
        if (p->needs_grad) {
            n->needs_grad = true;
            break;
        }
    if (n->needs_grad) n->backprop = std::move(backprop);
    return n;
}

}  // namespace ad_detail

// Runs reverse-mode accumulation from a scalar root. Not safe to call
// concurrently on overlapping graphs.
template <class T>
void backward(const Var<T>& root) {
    require(root.valid() && root.val().numel() == 1, "backward: root must be a scalar");
    if (!root.needs_grad()) return;

    // Iterative post-order topological sort.
    std::vector<ADNode<T>*> order;
    std::unordered_set<ADNode<T>*> seen;
    std::vector<std::pair<ADNode<T>*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            ADNode<T>* p = n->parents[idx].get();
            ++idx;
            if (p->needs_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    for (ADNode<T>* n : order) {
        n->grad = TensorT<T>(n->val.shape);
    }
    root.node()->grad[0] = T(1);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        ADNode<T>* n = *it;
        if (n->backprop) n->backprop(*n);
    }
}

// ---- elementwise ----

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require(a.val().same_shape(b.val()), "add: shape mismatch");
    TensorT<T> out = a.val();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.val()[i];
    auto pa = a.handle(), pb = b.handle();
    return Var<T>(ad_detail::make_op<T>(std::move(out), {pa, pb}, [pa, pb](ADNode<T>& n) {
        if (pa->needs_grad) {
            ad_detail::ensure_grad(*pa);
            for (std::size_t i = 0; i < n.grad.numel(); ++i) pa->grad[i] += n.grad[i];
        }
        if (pb->needs_grad) {
            ad_detail::ensure_grad(*pb);
            for (std::size_t i = 0; i < n.grad.numel(); ++i) pb->grad[i] += n.grad[i];
        }
    }));
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require(a.val().same_shape(b.val()), "sub: shape mismatch");
    TensorT<T> out = a.val();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.val()[i];
    auto pa = a.handle(), pb = b.handle();
    return Var<T>(ad_detail::make_op<T>(std::move(out), {pa, pb}, [pa, pb](ADNode<T>& n) {
        if (pa->needs_grad) {
            ad_detail::ensure_grad(*pa);
            for (std::size_t i = 0; i < n.grad.numel(); ++i) pa->grad[i] += n.grad[i];
        }
        if (pb->needs_grad) {
            ad_detail::ensure_grad(*pb);
            for (std::size_t i = 0; i < n.grad.numel(); ++i) pb->grad[i] -= n.grad[i];
        }
    }));
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require(a.val().same_shape(b.val()), "mul: shape mismatch");
    TensorT<T> out = a.val();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.val()[i];
    auto pa = a.handle(), pb = b.handle();
    return Var<T>(ad_detail::make_op<T>(std::move(out), {pa, pb}, [pa, pb](ADNode<T>& n) {
        if (pa->needs_grad) {
            ad_detail::ensure_grad(*pa);
            for (std::size_t i = 0; i < n.grad.numel(); ++i) pa->grad[i] += n.grad[i] * pb->val[i];
        }
        if (pb->needs_grad) {
            ad_detail::ensure_grad(*pb);
            for (std::size_t i = 0; i < n.grad.numel(); ++i) pb->grad[i] += n.grad[i] * pa->val[i];
        }
    }));
}

template <class T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
    require(a.val().same_shape(b.val()), "div: shape mismatch");
    TensorT<T> out = a.val();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] /= b.val()[i];
    auto pa = a.handle(), pb = b.handle();
    return Var<T>(ad_detail::make_op<T>(std::move(out), {pa, pb}, [pa, pb](ADNode<T>& n) {
        if (pa->needs_grad) {
            ad_detail::ensure_grad(*pa);
            for (std::size_t i = 0; i < n.grad.numel(); ++i) pa->grad[i] += n.grad[i] / pb->val[i];
        }
        if (pb->needs_grad) {
            ad_detail::ensure_grad(*pb);
            for (std::size_t i = 0; i < n.grad.numel(); ++i)
                pb->grad[i] -= n.grad[i] * pa->val[i] / (pb->val[i] * pb->val[i]);
        }
    }));
}

template <class T>
Var<T> mul_scalar(const Var<T>& a, T s) {
    TensorT<T> out = a.val();
    for (auto& v : out.data) v *= s;
    auto pa = a.handle();
    return Var<T>(ad_detail::make_op<T>(std::move(out), {pa}, [pa, s](ADNode<T>& n) {
        ad_detail::ensure_grad(*pa);
        for (std::size_t i = 0; i < n.grad.numel(); ++i) pa->grad[i] += n.grad[i] * s;
    }));
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T s) {
    TensorT<T> out = a.val();
    for (auto& v : out.data) v += s;
    auto pa = a.handle();
    return Var<T>(ad_detail::make_op<T>(std::move(out), {pa}, [pa](ADNode<T>& n) {
        ad_detail::ensure_grad(*pa);
        for (std::size_t i = 0; i < n.grad.numel(); ++i) pa->grad[i] += n.grad[i];
    }));
}

// s - x
template <class T>
Var<T> rsub_scalar(const Var<T>& a, T s) {
    TensorT<T> out = a.val();
    for (auto& v : out.data) v = s - v;
    auto pa = a.handle();
    return Var<T>(ad_detail::make_op<T>(std::move(out), {pa}, [pa](ADNode<T>& n) {
        ad_detail::ensure_grad(*pa);
        for (std::size_t i = 0; i < n.grad.numel(); ++i) pa->grad[i] -= n.grad[i];
    }));
}

template <class T>
Var<T> neg(const Var<T>& a) {
    return mul_scalar(a, T(-1));
}

// Multiply by a constant tensor; the map may be same-shape or {1,H,W}
// broadcast over the channels of a {C,H,W} input.
template <class T>
Var<T> mul_const(const Var<T>& a, const TensorT<T>& map) {
    bool bcast = !a.val().same_shape(map);
    if (bcast) {
        require(a.val().ndim() == 3 && map.ndim() == 3 && map.dim(0) == 1 &&
                    map.dim(1) == a.val().dim(1) && map.dim(2) == a.val().dim(2),
                "mul_const: map must match input or be 1 x H x W");
    }
    std::size_t plane = bcast ? map.numel() : 0;
    TensorT<T> out = a.val();
    if (bcast) {
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= map[i % plane];
    } else {
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= map[i];
    }
    auto pa = a.handle();
    return Var<T>(ad_detail::make_op<T>(std::move(out), {pa}, [pa, map, bcast, plane](ADNode<T>& n) {
        ad_detail::ensure_grad(*pa);
        if (bcast) {
            for (std::size_t i = 0; i < n.grad.numel(); ++i) pa->grad[i] += n.grad[i] * map[i % plane];
        } else {
            for (std::size_t i = 0; i < n.grad.numel(); ++i) pa->grad[i] += n.grad[i] * map[i];
        }
    }));
}

template <class T>
Var<T> add_const(const Var<T>& a, const TensorT<T>& t) {
    require(a.val().same_shape(t), "add_const: shape mismatch");
    TensorT<T> out = a.val();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += t[i];
    auto pa = a.handle();
    return Var<T>(ad_detail::make_op<T>(std::move(out), {pa}, [pa](ADNode<T>& n) {
        ad_detail::ensure_grad(*pa);
        for (std::size_t i = 0; i < n.grad.numel(); ++i) pa->grad[i] += n.grad[i];
    }));
}

// ---- nonlinearities ----

template <class T>
Var<T> relu(const Var<T>& a) {
    TensorT<T> out = a.val();
    for (auto& v : out.data) v = v > T(0) ? v : T(0);
    auto pa = a.handle();
    return Var<T>(ad_detail::make_op<T>(std::move(out), {pa}, [pa](ADNode<T>& n) {
        ad_detail::ensure_grad(*pa);
        for (std::size_t i = 0; i < n.grad.numel(); ++i)
            if (pa->val[i] > T(0)) pa->grad[i] += n.grad[i];
    }));
}

template <class T>
Var<T> leaky_relu(const Var<T>& a, T slope = T(0.2)) {
    TensorT<T> out = a.val();
    for (auto& v : out.data) v = v > T(0) ? v : slope * v;
    auto pa = a.handle();
    return Var<T>(ad_detail::make_op<T>(std::move(out), {pa}, [pa, slope](ADNode<T>& n) {
        ad_detail::ensure_grad(*pa);
        for (std::size_t i = 0; i < n.grad.numel(); ++i)
            pa->grad[i] += n.grad[i] * (pa->val[i] > T(0) ? T(1) : slope);
    }));
}

template <class T>
Var<T> tanh_op(const Var<T>& a) {
    TensorT<T> out = a.val();
    for (auto& v : out.data) v = std::tanh(v);
    auto pa = a.handle();
    TensorT<T> cached = out;
    return Var<T>(ad_detail::make_op<T>(std::move(out), {pa}, [pa, cached](ADNode<T>& n) {
        ad_detail::ensure_grad(*pa);
        for (std::size_t i = 0; i < n.grad.numel(); ++i)
            pa->grad[i] += n.grad[i] * (T(1) - cached[i] * cached[i]);
    }));
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
    TensorT<T> out = a.val();
    for (auto& v : out.data) {
        if (v >= T(0)) {
            T e = std::exp(-v);
            v = T(1) / (T(1) + e);
        } else {
            T e = std::exp(v);
            v = e / (T(1) + e);
        }
    }
    auto pa = a.handle();
    TensorT<T> cached = out;
    return Var<T>(ad_detail::make_op<T>(std::move(out), {pa}, [pa, cached](ADNode<T>& n) {
        ad_detail::ensure_grad(*pa);
        for (std::size_t i = 0; i < n.grad.numel(); ++i)
            pa->grad[i] += n.grad[i] * cached[i] * (T(1) - cached[i]);
    }));
}

template <class T>
Var<T> log_op(const Var<T>& a) {
    TensorT<T> out = a.val();
    for (auto& v : out.data) v = std::log(v);
    auto pa = a.handle();
    return Var<T>(ad_detail::make_op<T>(std::move(out), {pa}, [pa](ADNode<T>& n) {
        ad_detail::ensure_grad(*pa);
        for (std::size_t i = 0; i < n.grad.numel(); ++i) pa->grad[i] += n.grad[i] / pa->val[i];
    }));
}

template <class T>
Var<T> sqrt_op(const Var<T>& a) {
    TensorT<T> out = a.val();
    for (auto& v : out.data) v = std::sqrt(v);
    auto pa = a.handle();
    TensorT<T> cached = out;
    return Var<T>(ad_detail::make_op<T>(std::move(out), {pa}, [pa, cached](ADNode<T>& n) {
        ad_detail::ensure_grad(*pa);
        for (std::size_t i = 0; i < n.grad.numel(); ++i)
            pa->grad[i] += n.grad[i] / (T(2) * cached[i]);
    }));
}

// Subgradient is zero at and beyond the bounds.
template <class T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
    TensorT<T> out = a.val();
    for (auto& v : out.data) v = std::min(hi, std::max(lo, v));
    auto pa = a.handle();
    return Var<T>(ad_detail::make_op<T>(std::move(out), {pa}, [pa, lo, hi](ADNode<T>& n) {
        ad_detail::ensure_grad(*pa);
        for (std::size_t i = 0; i < n.grad.numel(); ++i)
            if (pa->val[i] > lo && pa->val[i] < hi) pa->grad[i] += n.grad[i];
    }));
}

// ---- reductions ----

template <class T>
Var<T> sum_all(const Var<T>& a) {
    T s = T(0);
    for (auto v : a.val().data) s += v;
    TensorT<T> out({1});
    out[0] = s;
    auto pa = a.handle();
    return Var<T>(ad_detail::make_op<T>(std::move(out), {pa}, [pa](ADNode<T>& n) {
        ad_detail::ensure_grad(*pa);
        T g = n.grad[0];
        for (std::size_t i = 0; i < pa->grad.numel(); ++i) pa->grad[i] += g;
    }));
}

template <class T>
Var<T> mean_all(const Var<T>& a) {
    return mul_scalar(sum_all(a), T(1) / static_cast<T>(a.val().numel()));
}

template <class T>
Var<T> dot(const Var<T>& a, const Var<T>& b) {
    return sum_all(mul(a, b));
}

// mean((a-b)^2), mean over all elements
template <class T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
    Var<T> d = sub(a, b);
    return mean_all(mul(d, d));
}

template <class T>
T scalar_value(const Var<T>& v) {
    require(v.val().numel() == 1, "scalar_value: not a scalar");
    return v.val()[0];
}

// ---- shape ops ----

template <class T>
Var<T> reshape(const Var<T>& a, std::vector<int> shape) {
    require(TensorT<T>::numel_of(shape) == a.val().numel(), "reshape: element count mismatch");
    TensorT<T> out;
    out.shape = std::move(shape);
    out.data = a.val().data;
    auto pa = a.handle();
    return Var<T>(ad_detail::make_op<T>(std::move(out), {pa}, [pa](ADNode<T>& n) {
        ad_detail::ensure_grad(*pa);
        for (std::size_t i = 0; i < n.grad.numel(); ++i) pa->grad[i] += n.grad[i];
    }));
}

template <class T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
    require(a.val().ndim() == 3 && b.val().ndim() == 3 && a.val().dim(1) == b.val().dim(1) &&
                a.val().dim(2) == b.val().dim(2),
            "concat_channels: spatial shape mismatch");
    int ca = a.val().dim(0), cb = b.val().dim(0);
    TensorT<T> out({ca + cb, a.val().dim(1), a.val().dim(2)});
    std::copy(a.val().data.begin(), a.val().data.end(), out.data.begin());
    std::copy(b.val().data.begin(), b.val().data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(a.val().numel()));
    auto pa = a.handle(), pb = b.handle();
    std::size_t na = a.val().numel();
    return Var<T>(ad_detail::make_op<T>(std::move(out), {pa, pb}, [pa, pb, na](ADNode<T>& n) {
        if (pa->needs_grad) {
            ad_detail::ensure_grad(*pa);
            for (std::size_t i = 0; i < na; ++i) pa->grad[i] += n.grad[i];
        }
        if (pb->needs_grad) {
            ad_detail::ensure_grad(*pb);
            for (std::size_t i = na; i < n.grad.numel(); ++i) pb->grad[i - na] += n.grad[i];
        }
    }));
}

template <class T>
Var<T> slice_channels(const Var<T>& a, int c0, int count) {
    require(a.val().ndim() == 3 && c0 >= 0 && c0 + count <= a.val().dim(0),
            "slice_channels: out of range");
    int h = a.val().dim(1), w = a.val().dim(2);
    std::size_t plane = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    TensorT<T> out({count, h, w});
    std::copy(a.val().data.begin() + static_cast<std::ptrdiff_t>(c0 * plane),
              a.val().data.begin() + static_cast<std::ptrdiff_t>((c0 + count) * plane),
              out.data.begin());
    auto pa = a.handle();
    return Var<T>(ad_detail::make_op<T>(std::move(out), {pa}, [pa, c0, plane](ADNode<T>& n) {
        ad_detail::ensure_grad(*pa);
        std::size_t base = static_cast<std::size_t>(c0) * plane;
        for (std::size_t i = 0; i < n.grad.numel(); ++i) pa->grad[base + i] += n.grad[i];
    }));
}

}  // namespace flowmark

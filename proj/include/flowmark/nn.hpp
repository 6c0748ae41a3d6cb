#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "flowmark/autodiff_spatial.hpp"
#include "flowmark/rng.hpp"

namespace flowmark {

// Named long-lived leaf nodes; the registry keeps checkpoint order stable
// (insertion order) and gives the optimizer a flat parameter list.
template <class T>
struct ParamStore {
    struct Entry {
        std::string name;
        Var<T> var;
    };
    std::vector<Entry> entries;

    Var<T> make(const std::string& name, std::vector<int> shape, RngStream rng, double stddev,
                bool trainable = true) {
        TensorT<T> t(shape);
        if (stddev > 0)
            for (auto& v : t.data) v = static_cast<T>(rng.gauss() * stddev);
        Var<T> var = Var<T>::leaf(std::move(t), trainable);
        entries.push_back({name, var});
        return var;
    }

    Var<T> find(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return e.var;
        throw Error("ParamStore: no parameter named " + name);
    }
};

inline double kaiming_std(int fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); }

// 3x3 (or kxk) conv layer; weights are He-initialized from the given stream,
// or zero-initialized for residual heads that must start as the identity.
template <class T>
struct Conv {
    Var<T> w, b;
    int stride = 1, pad = 1, dil = 1;

    Conv() = default;
    Conv(ParamStore<T>& ps, const std::string& name, int cin, int cout, int k, int stride_,
         RngStream rng, bool zero_init = false, bool trainable = true, int dil_ = 1)
        : stride(stride_), pad(dil_ * (k - 1) / 2), dil(dil_) {
        double stddev = zero_init ? 0.0 : kaiming_std(cin * k * k);
        w = ps.make(name + ".w", {cout, cin, k, k}, rng.fork("w"), stddev, trainable);
        b = ps.make(name + ".b", {cout}, rng.fork("b"), 0.0, trainable);
    }

    Var<T> operator()(const Var<T>& x) const { return conv2d(x, w, b, stride, pad, dil); }
};

template <class T>
struct Dense {
    Var<T> w, b;

    Dense() = default;
    Dense(ParamStore<T>& ps, const std::string& name, int nin, int nout, RngStream rng,
          double stddev, bool trainable = true) {
        w = ps.make(name + ".w", {nout, nin}, rng.fork("w"), stddev, trainable);
        b = ps.make(name + ".b", {nout}, rng.fork("b"), 0.0, trainable);
    }

    Var<T> operator()(const Var<T>& x) const { return linear(x, w, b); }
};

// Adam with bias correction. Moment buffers are keyed by parameter name so
// optimizer state can round-trip through checkpoints.
template <class T>
class Adam {
  public:
    Adam() = default;
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void attach(const ParamStore<T>& ps) {
        for (const auto& e : ps.entries)
            if (e.var.needs_grad())
                slots_.push_back({e.name, e.var, TensorT<T>(e.var.val().shape),
                                  TensorT<T>(e.var.val().shape)});
    }

    void step() {
        ++t_;
        double bc1 = 1.0 - std::pow(beta1_, t_);
        double bc2 = 1.0 - std::pow(beta2_, t_);
        for (auto& s : slots_) {
            if (s.var.grad().data.empty()) continue;  // not part of the last graph
            const TensorT<T>& g = s.var.grad();
            TensorT<T>& v = s.var.mutable_val();
            for (std::size_t i = 0; i < v.numel(); ++i) {
                double gi = static_cast<double>(g[i]);
                double m = beta1_ * static_cast<double>(s.m[i]) + (1.0 - beta1_) * gi;
                double vv = beta2_ * static_cast<double>(s.v[i]) + (1.0 - beta2_) * gi * gi;
                s.m[i] = static_cast<T>(m);
                s.v[i] = static_cast<T>(vv);
                v[i] -= static_cast<T>(lr_ * (m / bc1) / (std::sqrt(vv / bc2) + eps_));
            }
        }
    }

    long step_count() const { return t_; }
    void set_step_count(long t) { t_ = t; }

    // name -> (m, v) for checkpointing
    std::map<std::string, std::pair<TensorT<T>*, TensorT<T>*>> state() {
        std::map<std::string, std::pair<TensorT<T>*, TensorT<T>*>> out;
        for (auto& s : slots_) out[s.name] = {&s.m, &s.v};
        return out;
    }

  private:
    struct Slot {
        std::string name;
        Var<T> var;
        TensorT<T> m, v;
    };
    double lr_ = 1e-4, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    long t_ = 0;
    std::vector<Slot> slots_;
};

}  // namespace flowmark

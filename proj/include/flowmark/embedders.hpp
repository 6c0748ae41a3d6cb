#pragma once

#include <memory>
#include <string>

#include "flowmark/nn.hpp"

namespace flowmark {

// Frozen seeded surrogates for the pretrained feature stacks. Each is a
// deterministic function of its seed, never updated during training, and
// differentiable with respect to its input, so every loss term that consumes
// one exercises the same gradient paths a pretrained stack would.
//
// Like the pretrained stacks they stand in for, the default instances are
// the same across every run: they use fixed stack seeds, not the run seed.
// In particular the semantic embedder regularized by the training loss and
// the one the synthetic video proxy conditions on are the same function.
inline constexpr std::uint64_t kSemanticStackSeed = 0x5EEDC11FULL;
inline constexpr std::uint64_t kLatentStackSeed = 0x5EEDAE01ULL;
inline constexpr std::uint64_t kPerceptualStackSeed = 0x5EEDFEA7ULL;

// Maps an image to a unit-norm embedding vector.
template <class T>
struct SemanticEmbedder {
    virtual ~SemanticEmbedder() = default;
    virtual Var<T> embed(const Var<T>& img) const = 0;
    virtual std::string name() const = 0;
    virtual int dim() const = 0;
};

template <class T>
class RandomConvEmbedder final : public SemanticEmbedder<T> {
  public:
    RandomConvEmbedder(std::uint64_t seed, int out_dim, int width, std::string name)
        : dim_(out_dim), name_(std::move(name)) {
        RngStream rng(seed, "semantic_embedder");
        c1_ = Conv<T>(params_, "emb.c1", 3, width, 3, 2, rng.fork("c1"), false, false);
        c2_ = Conv<T>(params_, "emb.c2", width, 2 * width, 3, 2, rng.fork("c2"), false, false);
        fc_ = Dense<T>(params_, "emb.fc", 2 * width, out_dim, rng.fork("fc"),
                       1.0 / std::sqrt(2.0 * width), false);
    }

    Var<T> embed(const Var<T>& img) const override {
        Var<T> h = leaky_relu(c1_(img));
        h = leaky_relu(c2_(h));
        Var<T> pooled = global_avg_pool(h);
        return l2_normalize(fc_(pooled));
    }

    std::string name() const override { return name_; }
    int dim() const override { return dim_; }

  private:
    int dim_;
    std::string name_;
    ParamStore<T> params_;
    Conv<T> c1_, c2_;
    Dense<T> fc_;
};

// Default and alternative embedder configurations ("semantic.default" and a
// wider, differently seeded "semantic.wide" variant).
template <class T>
std::shared_ptr<SemanticEmbedder<T>> make_semantic_embedder(const std::string& name,
                                                            std::uint64_t seed) {
    if (name == "semantic.default")
        return std::make_shared<RandomConvEmbedder<T>>(seed ^ 0x5EEDED01ULL, 32, 8, name);
    if (name == "semantic.wide")
        return std::make_shared<RandomConvEmbedder<T>>(seed ^ 0x5EEDED02ULL, 64, 12, name);
    throw ConfigError("unknown semantic embedder: " + name);
}

// Frozen strided-conv stand-in for a latent-space encoder.
template <class T>
class LatentMapper {
  public:
    explicit LatentMapper(std::uint64_t seed) {
        RngStream rng(seed, "latent_mapper");
        c1_ = Conv<T>(params_, "lat.c1", 3, 8, 3, 2, rng.fork("c1"), false, false);
        c2_ = Conv<T>(params_, "lat.c2", 8, 16, 3, 2, rng.fork("c2"), false, false);
    }

    Var<T> encode(const Var<T>& img) const { return c2_(leaky_relu(c1_(img))); }

  private:
    ParamStore<T> params_;
    Conv<T> c1_, c2_;
};

// Multi-scale frozen-random-feature distance: symmetric, zero iff the
// feature maps agree, differentiable in both arguments.
template <class T>
class PerceptualMetric {
  public:
    explicit PerceptualMetric(std::uint64_t seed, int scales = 3) : scales_(scales) {
        RngStream rng(seed, "perceptual_metric");
        for (int s = 0; s < scales_; ++s)
            convs_.emplace_back(params_, "perc.s" + std::to_string(s), 3, 12, 3, 1,
                                rng.fork("s" + std::to_string(s)), false, false);
    }

    Var<T> distance(const Var<T>& a, const Var<T>& b) const {
        Var<T> xa = a, xb = b;
        Var<T> total;
        for (int s = 0; s < scales_; ++s) {
            Var<T> fa = tanh_op(convs_[static_cast<std::size_t>(s)](xa));
            Var<T> fb = tanh_op(convs_[static_cast<std::size_t>(s)](xb));
            Var<T> d = mse(fa, fb);
            total = total.valid() ? add(total, d) : d;
            if (s + 1 < scales_ && xa.val().dim(1) % 2 == 0 && xa.val().dim(2) % 2 == 0) {
                xa = avg_pool2(xa);
                xb = avg_pool2(xb);
            }
        }
        return mul_scalar(total, T(1) / static_cast<T>(scales_));
    }

  private:
    int scales_;
    ParamStore<T> params_;
    std::vector<Conv<T>> convs_;
};

}  // namespace flowmark

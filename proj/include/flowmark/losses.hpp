#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "flowmark/decoder.hpp"
#include "flowmark/embedders.hpp"
#include "flowmark/message.hpp"

namespace flowmark {

inline constexpr double kProbEps = 1e-6;  // probability clamp before any log

struct LossWeights {
    double lambda_latent = 1e-3;
    double lambda_perceptual = 0.18;
    double lambda_semantic = 1e-3;
    double lambda_decoder = 1.3;
    double lambda_adversarial = 0.004;

    void validate() const {
        require(lambda_latent >= 0 && lambda_perceptual >= 0 && lambda_semantic >= 0 &&
                    lambda_decoder >= 0 && lambda_adversarial >= 0,
                "LossWeights: weights must be nonnegative");
    }

    nlohmann::ordered_json to_json() const {
        return {{"lambda_latent", lambda_latent},
                {"lambda_perceptual", lambda_perceptual},
                {"lambda_semantic", lambda_semantic},
                {"lambda_decoder", lambda_decoder},
                {"lambda_adversarial", lambda_adversarial}};
    }

    static LossWeights from_json(const nlohmann::ordered_json& j) {
        LossWeights w;
        w.lambda_latent = j.at("lambda_latent").get<double>();
        w.lambda_perceptual = j.at("lambda_perceptual").get<double>();
        w.lambda_semantic = j.at("lambda_semantic").get<double>();
        w.lambda_decoder = j.at("lambda_decoder").get<double>();
        w.lambda_adversarial = j.at("lambda_adversarial").get<double>();
        w.validate();
        return w;
    }
};

// PatchGAN-style adversary: a short strided conv stack emitting a spatial
// map of real/fake logits, one per receptive-field patch.
template <class T>
class PatchAdversary {
  public:
    PatchAdversary() = default;
    explicit PatchAdversary(RngStream rng, int base_channels = 16) {
        c1_ = Conv<T>(params_, "adv.c1", 3, base_channels, 3, 2, rng.fork("c1"));
        c2_ = Conv<T>(params_, "adv.c2", base_channels, 2 * base_channels, 3, 2, rng.fork("c2"));
        c3_ = Conv<T>(params_, "adv.c3", 2 * base_channels, 1, 3, 1, rng.fork("c3"));
    }

    // H' x W' logit map (spatial size input/4)
    Var<T> logits(const Var<T>& img) const {
        Var<T> h = leaky_relu(c1_(img));
        h = leaky_relu(c2_(h));
        return c3_(h);
    }

    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

  private:
    ParamStore<T> params_;
    Conv<T> c1_, c2_, c3_;
};

// 1 - cos(emb(I_w), emb(I)); in [0,2], zero when the embeddings agree.
template <class T>
Var<T> semantic_loss(const Var<T>& watermarked, const Var<T>& original,
                     const SemanticEmbedder<T>& embedder) {
    require(watermarked.val().same_shape(original.val()), "semantic_loss: shape mismatch");
    Var<T> ea = embedder.embed(watermarked);
    Var<T> eb = embedder.embed(original);
    Var<T> na = sqrt_op(sum_all(mul(ea, ea)));
    Var<T> nb = sqrt_op(sum_all(mul(eb, eb)));
    Var<T> cosine = div(dot(ea, eb), mul(na, nb));
    // rounding can push the cosine a few ulp past 1; keep the loss in [0,2]
    return rsub_scalar(clamp(cosine, T(-1), T(1)), T(1));
}

// Mean squared difference between decoder logits of adjacent warped frames:
// (1/(M-1)) * sum_l ||o_l - o_{l-1}||^2.
template <class T>
Var<T> temporal_consistency_loss(const std::vector<Var<T>>& frame_logits) {
    require(frame_logits.size() >= 2,
            "temporal_consistency_loss: needs at least 2 frames (undefined average)");
    Var<T> total;
    for (std::size_t l = 1; l < frame_logits.size(); ++l) {
        Var<T> d = sub(frame_logits[l], frame_logits[l - 1]);
        Var<T> term = sum_all(mul(d, d));
        total = total.valid() ? add(total, term) : term;
    }
    return mul_scalar(total, T(1) / static_cast<T>(frame_logits.size() - 1));
}

template <class T>
Var<T> temporal_consistency_loss(const std::vector<Var<T>>& warped_frames,
                                 const Decoder<T>& decoder) {
    require(warped_frames.size() >= 2,
            "temporal_consistency_loss: needs at least 2 frames (undefined average)");
    std::vector<Var<T>> logits;
    logits.reserve(warped_frames.size());
    for (const auto& f : warped_frames) logits.push_back(decoder.decode_logits(f));
    return temporal_consistency_loss(logits);
}

// Binary cross entropy over per-bit probabilities; probabilities are clamped
// to [eps, 1-eps] before the logs so no logit can produce NaN/Inf.
template <class T>
Var<T> binary_cross_entropy(const Var<T>& probs, const std::vector<std::uint8_t>& target) {
    require(probs.val().numel() == target.size(), "binary_cross_entropy: length mismatch");
    const int n = static_cast<int>(target.size());
    TensorT<T> y({n}), ny({n});
    for (int i = 0; i < n; ++i) {
        require(target[static_cast<std::size_t>(i)] <= 1, "binary_cross_entropy: targets must be 0/1");
        y[static_cast<std::size_t>(i)] = static_cast<T>(target[static_cast<std::size_t>(i)]);
        ny[static_cast<std::size_t>(i)] = static_cast<T>(1 - target[static_cast<std::size_t>(i)]);
    }
    Var<T> p = clamp(probs, static_cast<T>(kProbEps), static_cast<T>(1.0 - kProbEps));
    Var<T> pos = mul_const(log_op(p), y);
    Var<T> negt = mul_const(log_op(rsub_scalar(p, T(1))), ny);
    return neg(mean_all(add(pos, negt)));
}

template <class T>
Var<T> binary_cross_entropy(const Var<T>& probs, const BitMessage& target) {
    return binary_cross_entropy(probs, target.bits);
}

template <class T>
Var<T> probabilities(const Var<T>& logits) {
    return sigmoid(logits);
}

// Message-recovery loss: (1/M) sum_l BCE(p_{a_l}, w) + BCE(p_{I_w}, w)
// + BCE(p_edited, w).
template <class T>
Var<T> message_loss(const std::vector<Var<T>>& warped_probs, const Var<T>& watermarked_probs,
                    const Var<T>& edited_probs, const BitMessage& truth) {
    Var<T> total = add(binary_cross_entropy(watermarked_probs, truth),
                       binary_cross_entropy(edited_probs, truth));
    if (!warped_probs.empty()) {
        Var<T> frames;
        for (const auto& p : warped_probs) {
            Var<T> term = binary_cross_entropy(p, truth);
            frames = frames.valid() ? add(frames, term) : term;
        }
        total = add(total, mul_scalar(frames, T(1) / static_cast<T>(warped_probs.size())));
    }
    return total;
}

// Decoder loss: temporal consistency + message recovery, unweighted sum.
template <class T>
Var<T> decoder_loss(const Var<T>& temporal, const Var<T>& message) {
    return add(temporal, message);
}

// Encoder loss: pixel MSE + weighted latent MSE, perceptual distance and
// semantic preservation terms. All MSE terms are mean-per-element.
template <class T>
Var<T> encoder_loss(const Var<T>& original, const Var<T>& watermarked, const LossWeights& weights,
                    const LatentMapper<T>& latent, const PerceptualMetric<T>& perceptual,
                    const SemanticEmbedder<T>& embedder) {
    require(original.val().same_shape(watermarked.val()), "encoder_loss: shape mismatch");
    Var<T> pixel = mse(watermarked, original);
    Var<T> lat = mse(latent.encode(watermarked), latent.encode(original));
    Var<T> perc = perceptual.distance(watermarked, original);
    Var<T> sem = semantic_loss(watermarked, original, embedder);
    Var<T> total = add(pixel, mul_scalar(lat, static_cast<T>(weights.lambda_latent)));
    total = add(total, mul_scalar(perc, static_cast<T>(weights.lambda_perceptual)));
    return add(total, mul_scalar(sem, static_cast<T>(weights.lambda_semantic)));
}

// Generator-side adversarial loss: -(1/(H'W')) sum log sigma(A(I_w)).
template <class T>
Var<T> adversarial_generator_loss(const Var<T>& watermarked, const PatchAdversary<T>& adversary) {
    Var<T> p = clamp(sigmoid(adversary.logits(watermarked)), static_cast<T>(kProbEps),
                     static_cast<T>(1.0 - kProbEps));
    return neg(mean_all(log_op(p)));
}

// Discriminator loss: -(1/(H'W')) sum [log sigma(A(I)) + log(1 - sigma(A(I_w)))].
template <class T>
Var<T> discriminator_loss(const Var<T>& original, const Var<T>& watermarked,
                          const PatchAdversary<T>& adversary) {
    require(original.val().same_shape(watermarked.val()), "discriminator_loss: shape mismatch");
    Var<T> preal = clamp(sigmoid(adversary.logits(original)), static_cast<T>(kProbEps),
                         static_cast<T>(1.0 - kProbEps));
    Var<T> pfake = clamp(sigmoid(adversary.logits(watermarked)), static_cast<T>(kProbEps),
                         static_cast<T>(1.0 - kProbEps));
    Var<T> real_term = mean_all(log_op(preal));
    Var<T> fake_term = mean_all(log_op(rsub_scalar(pfake, T(1))));
    return neg(add(real_term, fake_term));
}

// Overall objective: encoder loss + lambda_dec * decoder loss
// + lambda_adv * generator-side adversarial loss.
template <class T>
Var<T> total_loss(const Var<T>& enc, const Var<T>& dec, const Var<T>& adv_g,
                  const LossWeights& weights) {
    Var<T> total = add(enc, mul_scalar(dec, static_cast<T>(weights.lambda_decoder)));
    return add(total, mul_scalar(adv_g, static_cast<T>(weights.lambda_adversarial)));
}

}  // namespace flowmark

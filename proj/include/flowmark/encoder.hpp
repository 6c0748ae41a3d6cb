#pragma once

#include <string>
#include <vector>

#include "flowmark/image.hpp"
#include "flowmark/jnd.hpp"
#include "flowmark/message.hpp"
#include "flowmark/nn.hpp"

namespace flowmark {

struct EncoderConfig {
    int base_channels = 16;
    int unet_depth = 3;
    int message_feature_channels = 8;
    double scale_min = 0.2;  // masking floor, keeps the residual from vanishing
    double scale_max = 1.0;

    void validate() const {
        require(scale_min > 0, "EncoderConfig: scale_min must be > 0");
        require(scale_max >= scale_min, "EncoderConfig: scale_max < scale_min");
        require(unet_depth >= 2, "EncoderConfig: unet_depth must be >= 2");
        require(base_channels >= 1 && message_feature_channels >= 1, "EncoderConfig: bad channels");
    }
};

// Message-conditioned residual U-Net. The bit grid is lifted by a small CNN
// and nearest-upsampled onto the image plane (nearest keeps bit-block
// locality), concatenated with the image, and run through the U-Net. Only
// the residual against the input is emitted, modulated by the perceptual
// scale map; the head conv is zero-initialized so an untrained encoder is
// exactly the identity.
template <class T>
class Encoder {
  public:
    Encoder() = default;
    Encoder(const EncoderConfig& cfg, int message_k, RngStream rng) : cfg_(cfg), k_(message_k) {
        cfg_.validate();
        m_ = BitMessage::grid_side(k_);
        int cf = cfg_.message_feature_channels;
        lift1_ = Conv<T>(params_, "enc.lift1", 1, cf, 3, 1, rng.fork("lift1"));
        lift2_ = Conv<T>(params_, "enc.lift2", cf, cf, 3, 1, rng.fork("lift2"));

        int bc = cfg_.base_channels;
        int d = cfg_.unet_depth;
        stem_ = Conv<T>(params_, "enc.stem", 3 + cf, bc, 3, 1, rng.fork("stem"));
        int ch = bc;
        for (int i = 0; i < d - 1; ++i) {
            downs_.emplace_back(params_, "enc.down" + std::to_string(i), ch, ch * 2, 3, 2,
                                rng.fork("down" + std::to_string(i)));
            ch *= 2;
        }
        bottleneck_ = Conv<T>(params_, "enc.bottleneck", ch, ch, 3, 1, rng.fork("bottleneck"));
        for (int i = d - 2; i >= 0; --i) {
            int skip_ch = bc << i;
            up_convs_.emplace_back(params_, "enc.up" + std::to_string(i), ch, skip_ch, 3, 1,
                                   rng.fork("up" + std::to_string(i)));
            merge_convs_.emplace_back(params_, "enc.merge" + std::to_string(i), 2 * skip_ch, skip_ch,
                                     3, 1, rng.fork("merge" + std::to_string(i)));
            ch = skip_ch;
        }
        head_ = Conv<T>(params_, "enc.head", bc, 3, 3, 1, rng.fork("head"), /*zero_init=*/true);
    }

    const EncoderConfig& config() const { return cfg_; }
    int message_bits() const { return k_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

    // Bit grid -> C_f x H x W feature map (deterministic given weights).
    Var<T> lift_message(const TensorT<T>& grid, int target_h, int target_w) const {
        require(grid.ndim() == 3 && grid.dim(0) == 1 && grid.dim(1) == m_ && grid.dim(2) == m_,
                "lift_message: grid must be 1 x m x m");
        require(target_h >= m_ && target_w >= m_,
                "lift_message: target smaller than message grid");
        Var<T> g = Var<T>::constant(grid);
        Var<T> f = leaky_relu(lift1_(g));
        f = leaky_relu(lift2_(f));
        return resize_nearest(f, target_h, target_w);
    }

    // Raw U-Net output U(I, msg) = I + r(I, msg).
    Var<T> unet(const Var<T>& img, const Var<T>& lifted) const {
        Var<T> x = concat_channels(img, lifted);
        Var<T> h = leaky_relu(stem_(x));
        std::vector<Var<T>> skips{h};
        for (const auto& down : downs_) {
            h = leaky_relu(down(h));
            skips.push_back(h);
        }
        h = leaky_relu(bottleneck_(h));
        for (std::size_t i = 0; i < up_convs_.size(); ++i) {
            const Var<T>& skip = skips[skips.size() - 2 - i];
            h = resize_nearest(h, skip.val().dim(1), skip.val().dim(2));
            h = leaky_relu(up_convs_[i](h));
            h = leaky_relu(merge_convs_[i](concat_channels(h, skip)));
        }
        return add(img, head_(h));
    }

    // I_w = clamp(I + S * (U(I, msg) - I), -1, 1) with S the perceptual
    // scale map of I (treated as a constant in the gradient path).
    Var<T> embed(const Var<T>& img, const BitMessage& msg) const {
        require(img.val().ndim() == 3 && img.val().dim(0) == 3, "embed: expected 3 x H x W image");
        require(msg.k == k_, "embed: message capacity mismatch (" + std::to_string(msg.k) +
                                 " vs encoder k=" + std::to_string(k_) + ")");
        int h = img.val().dim(1), w = img.val().dim(2);
        Var<T> lifted = lift_message(message_to_grid<T>(msg), h, w);
        Var<T> u = unet(img, lifted);
        TensorT<T> scale = jnd_scale_map(img.val(), cfg_.scale_min, cfg_.scale_max);
        Var<T> residual = sub(u, img);
        return clamp(add(img, mul_const(residual, scale)), T(-1), T(1));
    }

    // Convenience forward on plain tensors (inference).
    TensorT<T> embed_plain(const TensorT<T>& img, const BitMessage& msg) const {
        return embed(Var<T>::constant(img), msg).val();
    }

  private:
    EncoderConfig cfg_;
    int k_ = 0, m_ = 0;
    ParamStore<T> params_;
    Conv<T> lift1_, lift2_, stem_, bottleneck_, head_;
    std::vector<Conv<T>> downs_, up_convs_, merge_convs_;
};

}  // namespace flowmark

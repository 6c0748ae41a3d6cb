#pragma once

#include <string>
#include <vector>

#include "flowmark/message.hpp"
#include "flowmark/nn.hpp"

namespace flowmark {

struct DecoderConfig {
    int base_channels = 16;
    std::vector<int> dilations{1, 2, 4, 8};  // residual stack
    int target_grid = 4;                     // m
    int input_resolution = 64;               // native H == W

    // Stride-2 stages run while the spatial size stays at or above the bit
    // grid; a final adaptive mean-pool lands exactly on m x m when halving
    // alone cannot (e.g. 512 -> 16 -> pool to 10).
    int num_stages() const {
        int res = input_resolution, n = 0;
        while (res / 2 >= target_grid) {
            res /= 2;
            ++n;
        }
        require(n >= 1, "DecoderConfig: input resolution " + std::to_string(input_resolution) +
                            " cannot reduce to the " + std::to_string(target_grid) + "x" +
                            std::to_string(target_grid) + " bit grid");
        return n;
    }

    int pooled_from() const {
        int res = input_resolution;
        for (int i = 0, n = num_stages(); i < n; ++i) res /= 2;
        return res;  // == target_grid when halving lands exactly
    }

    void validate() const {
        require(base_channels >= 1, "DecoderConfig: bad channels");
        require(!dilations.empty(), "DecoderConfig: empty dilation list");
        (void)num_stages();
    }
};

// Strided downsampling residual CNN: stride-2 convs until the spatial size
// equals the bit grid side m, a stack of dilated residual blocks, then a 1x1
// head producing the 1 x m x m logit map. Flattened row-major, the map is the
// k-logit vector; bit i is 1 iff logit i > 0 (sigmoid > 1/2, ties decode 0).
template <class T>
class Decoder {
  public:
    Decoder() = default;
    Decoder(const DecoderConfig& cfg, RngStream rng) : cfg_(cfg) {
        cfg_.validate();
        int stages = cfg_.num_stages();
        int bc = cfg_.base_channels;
        int ch = 3;
        for (int i = 0; i < stages; ++i) {
            int next = std::min(bc * (1 << std::min(i, 2)), 4 * bc);
            stem_.emplace_back(params_, "dec.stage" + std::to_string(i), ch, next, 3, 2,
                               rng.fork("stage" + std::to_string(i)));
            ch = next;
        }
        for (std::size_t i = 0; i < cfg_.dilations.size(); ++i) {
            blocks_.emplace_back(params_, "dec.block" + std::to_string(i), ch, ch, 3, 1,
                                 rng.fork("block" + std::to_string(i)), false, true,
                                 cfg_.dilations[i]);
        }
        head_ = Conv<T>(params_, "dec.head", ch, 1, 1, 1, rng.fork("head"));
        head_.pad = 0;
    }

    const DecoderConfig& config() const { return cfg_; }
    int message_bits() const { return cfg_.target_grid * cfg_.target_grid; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

    // Logit map as a flat k-vector (row-major over the m x m map, matching
    // the message grid order).
    Var<T> decode_logits(const Var<T>& img) const {
        require(img.val().ndim() == 3 && img.val().dim(0) == 3,
                "decode_logits: expected 3 x H x W image");
        require(img.val().dim(1) == cfg_.input_resolution &&
                    img.val().dim(2) == cfg_.input_resolution,
                "decode_logits: resolution " + std::to_string(img.val().dim(1)) + "x" +
                    std::to_string(img.val().dim(2)) + " incompatible with decoder native " +
                    std::to_string(cfg_.input_resolution));
        Var<T> h = img;
        for (const auto& s : stem_) h = leaky_relu(s(h));
        if (h.val().dim(1) != cfg_.target_grid || h.val().dim(2) != cfg_.target_grid)
            h = adaptive_avg_pool(h, cfg_.target_grid, cfg_.target_grid);
        for (const auto& blk : blocks_) h = add(h, leaky_relu(blk(h)));
        Var<T> map = head_(h);
        return reshape(map, {message_bits()});
    }

    Var<T> decode_logits(const TensorT<T>& img) const {
        return decode_logits(Var<T>::constant(img));
    }

    BitMessage extract(const TensorT<T>& img) const {
        TensorT<T> logits = decode_logits(img).val();
        return logits_to_message(logits);
    }

    static BitMessage logits_to_message(const TensorT<T>& logits) {
        std::vector<std::uint8_t> bits(logits.numel());
        for (std::size_t i = 0; i < logits.numel(); ++i) bits[i] = logits[i] > T(0) ? 1 : 0;
        return BitMessage(std::move(bits));
    }

    // Per-bit confidence sigma(logit).
    static std::vector<double> confidences(const TensorT<T>& logits) {
        std::vector<double> out(logits.numel());
        for (std::size_t i = 0; i < logits.numel(); ++i)
            out[i] = 1.0 / (1.0 + std::exp(-static_cast<double>(logits[i])));
        return out;
    }

  private:
    DecoderConfig cfg_;
    ParamStore<T> params_;
    std::vector<Conv<T>> stem_, blocks_;
    Conv<T> head_;
};

}  // namespace flowmark

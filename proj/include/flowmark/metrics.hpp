#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "flowmark/image.hpp"
#include "flowmark/image_io.hpp"

namespace flowmark {

// PSNR over the byte range (MAX = 255); identical images give +infinity.
template <class T>
double psnr_db(const TensorT<T>& a_byte, const TensorT<T>& b_byte) {
    require(a_byte.same_shape(b_byte), "psnr: shape mismatch");
    double mse = 0;
    for (std::size_t i = 0; i < a_byte.numel(); ++i) {
        double d = static_cast<double>(a_byte[i]) - static_cast<double>(b_byte[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(a_byte.numel());
    if (mse == 0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(255.0 * 255.0 / mse);
}

template <class T>
double psnr_db(const ImagePlaneT<T>& a, const ImagePlaneT<T>& b) {
    require(a.range == b.range, "psnr: range mismatch");
    if (a.range == Range::byte) return psnr_db(a.data, b.data);
    return psnr_db(to_byte(a).data, to_byte(b).data);
}

namespace ssim_detail {

inline const std::vector<double>& window11() {
    static const std::vector<double> w = [] {
        std::vector<double> k(11);
        double sum = 0;
        for (int i = 0; i < 11; ++i) {
            double d = i - 5;
            k[static_cast<std::size_t>(i)] = std::exp(-0.5 * d * d / (1.5 * 1.5));
            sum += k[static_cast<std::size_t>(i)];
        }
        for (auto& v : k) v /= sum;
        return k;
    }();
    return w;
}

}  // namespace ssim_detail

// Structural similarity on the byte range: 11x11 Gaussian window
// (sigma 1.5), standard constants, mean over the valid (un-padded) region,
// channels averaged.
template <class T>
double ssim(const TensorT<T>& a_byte, const TensorT<T>& b_byte) {
    require(a_byte.same_shape(b_byte), "ssim: shape mismatch");
    const int C = a_byte.dim(0), H = a_byte.dim(1), W = a_byte.dim(2);
    require(H >= 11 && W >= 11, "ssim: image smaller than the 11x11 window");
    const auto& win = ssim_detail::window11();
    const double c1 = (0.01 * 255) * (0.01 * 255), c2 = (0.03 * 255) * (0.03 * 255);

    double total = 0;
    long count = 0;
    for (int c = 0; c < C; ++c)
        for (int y = 5; y < H - 5; ++y)
            for (int x = 5; x < W - 5; ++x) {
                double ma = 0, mb = 0;
                for (int i = -5; i <= 5; ++i)
                    for (int j = -5; j <= 5; ++j) {
                        double wv = win[static_cast<std::size_t>(i + 5)] * win[static_cast<std::size_t>(j + 5)];
                        ma += wv * static_cast<double>(a_byte.at3(c, y + i, x + j));
                        mb += wv * static_cast<double>(b_byte.at3(c, y + i, x + j));
                    }
                double va = 0, vb = 0, cov = 0;
                for (int i = -5; i <= 5; ++i)
                    for (int j = -5; j <= 5; ++j) {
                        double wv = win[static_cast<std::size_t>(i + 5)] * win[static_cast<std::size_t>(j + 5)];
                        double da = static_cast<double>(a_byte.at3(c, y + i, x + j)) - ma;
                        double db = static_cast<double>(b_byte.at3(c, y + i, x + j)) - mb;
                        va += wv * da * da;
                        vb += wv * db * db;
                        cov += wv * da * db;
                    }
                total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                         ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
    return total / static_cast<double>(count);
}

// Per-pixel grayscale difference map in [0,1]: L2 over the RGB channels,
// then an affine rescale of the 1st..99th percentile span, clipped.
template <class T>
TensorT<T> heatmap(const TensorT<T>& a, const TensorT<T>& b) {
    require(a.same_shape(b), "heatmap: shape mismatch");
    const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
    TensorT<double> diff({1, H, W});
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(H) * W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double s = 0;
            for (int c = 0; c < C; ++c) {
                double d = static_cast<double>(a.at3(c, y, x)) - static_cast<double>(b.at3(c, y, x));
                s += d * d;
            }
            double v = std::sqrt(s);
            diff.at3(0, y, x) = v;
            values.push_back(v);
        }
    std::sort(values.begin(), values.end());
    auto percentile = [&](double q) {
        std::size_t idx = static_cast<std::size_t>(
            std::lround(q * static_cast<double>(values.size() - 1)));
        return values[idx];
    };
    double lo = percentile(0.01), hi = percentile(0.99);
    double span = std::max(hi - lo, 1e-12);
    TensorT<T> out({1, H, W});
    for (std::size_t i = 0; i < out.numel(); ++i) {
        double v = (diff[i] - lo) / span;
        out[i] = static_cast<T>(std::min(1.0, std::max(0.0, v)));
    }
    return out;
}

// Blue (no change) -> red (large change) rendering of a [0,1] map.
template <class T>
ImagePlaneT<T> render_heatmap(const TensorT<T>& map) {
    require(map.ndim() == 3 && map.dim(0) == 1, "render_heatmap: expected 1 x H x W");
    const int H = map.dim(1), W = map.dim(2);
    ImagePlaneT<T> img(TensorT<T>({3, H, W}), Range::byte);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double v = static_cast<double>(map.at3(0, y, x));
            // blue -> cyan -> yellow -> red
            double r = std::min(1.0, std::max(0.0, 1.5 * v - 0.25));
            double g = std::min(1.0, std::max(0.0, 1.0 - std::abs(2.0 * v - 1.0) * 1.2 + 0.2));
            double b = std::min(1.0, std::max(0.0, 1.25 - 1.5 * v));
            img.data.at3(0, y, x) = static_cast<T>(r * 255.0);
            img.data.at3(1, y, x) = static_cast<T>(g * 255.0);
            img.data.at3(2, y, x) = static_cast<T>(b * 255.0);
        }
    return img;
}

}  // namespace flowmark

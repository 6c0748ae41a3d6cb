#pragma once

#include <algorithm>
#include <cmath>

#include "flowmark/image.hpp"
#include "flowmark/tensor.hpp"

namespace flowmark {

// Perceptual masking map: how much a pixel may change before the change is
// noticeable. Two classical factors, computed on the [0,1] luminance plane:
//   - luminance adaptation: deviation of the local mean from mid-gray,
//   - contrast masking: local Laplacian magnitude.
// Each factor is normalized to [0,1] over the image, the two are averaged,
// and the result is affinely mapped to [scale_min, scale_max]. A flat
// mid-gray image gets the constant map scale_min (no masking anywhere).
template <class T>
TensorT<T> jnd_scale_map(const TensorT<T>& img, double scale_min, double scale_max) {
    require(img.ndim() == 3, "jnd_scale_map: expected C x H x W");
    require(scale_min > 0 && scale_max >= scale_min, "jnd_scale_map: bad scale bounds");
    const int C = img.dim(0), H = img.dim(1), W = img.dim(2);

    // luminance in [0,1]
    TensorT<double> lum({1, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double s = 0;
            for (int c = 0; c < C; ++c) s += static_cast<double>(img.at3(c, y, x));
            lum.at3(0, y, x) = (s / C + 1.0) * 0.5;
        }

    auto clamped = [&](int y, int x) {
        return lum.at3(0, std::min(H - 1, std::max(0, y)), std::min(W - 1, std::max(0, x)));
    };

    // local mean over a 5x5 box -> luminance adaptation
    TensorT<double> adapt({1, H, W});
    double adapt_max = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double s = 0;
            for (int dy = -2; dy <= 2; ++dy)
                for (int dx = -2; dx <= 2; ++dx) s += clamped(y + dy, x + dx);
            double a = std::abs(s / 25.0 - 0.5) * 2.0;
            adapt.at3(0, y, x) = a;
            adapt_max = std::max(adapt_max, a);
        }

    // 3x3 Laplacian magnitude -> contrast masking
    TensorT<double> contrast({1, H, W});
    double contrast_max = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double v = 4.0 * clamped(y, x) - clamped(y - 1, x) - clamped(y + 1, x) -
                       clamped(y, x - 1) - clamped(y, x + 1);
            double m = std::abs(v);
            contrast.at3(0, y, x) = m;
            contrast_max = std::max(contrast_max, m);
        }

    TensorT<T> out({1, H, W});
    for (std::size_t i = 0; i < out.numel(); ++i) {
        double a = adapt_max > 0 ? adapt[i] / adapt_max : 0.0;
        double c = contrast_max > 0 ? contrast[i] / contrast_max : 0.0;
        double s = 0.5 * (a + c);
        out[i] = static_cast<T>(scale_min + (scale_max - scale_min) * s);
    }
    return out;
}

}  // namespace flowmark

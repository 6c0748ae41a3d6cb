#pragma once

#include <cmath>

#include "flowmark/image.hpp"
#include "flowmark/rng.hpp"

namespace flowmark {

// Procedural RGB images for demos and desk-scale corpora: a smooth gradient
// base, a few Gaussian blobs, a sinusoidal texture field and an occasional
// hard-edged rectangle, all drawn from one stream.
template <class T>
TensorT<T> synth_image(int height, int width, RngStream rng) {
    TensorT<double> img({3, height, width});

    double gx[3], gy[3], base[3];
    for (int c = 0; c < 3; ++c) {
        base[c] = rng.uniform(-0.4, 0.4);
        gx[c] = rng.uniform(-0.6, 0.6);
        gy[c] = rng.uniform(-0.6, 0.6);
    }
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x)
                img.at3(c, y, x) = base[c] + gx[c] * (2.0 * x / width - 1.0) +
                                   gy[c] * (2.0 * y / height - 1.0);

    int blobs = 2 + rng.uniform_int(4);
    for (int b = 0; b < blobs; ++b) {
        double cx = rng.uniform(0, width), cy = rng.uniform(0, height);
        double r = rng.uniform(0.08, 0.35) * std::min(width, height);
        double amp[3] = {rng.uniform(-0.7, 0.7), rng.uniform(-0.7, 0.7), rng.uniform(-0.7, 0.7)};
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                double d2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (r * r);
                double w = std::exp(-d2);
                for (int c = 0; c < 3; ++c) img.at3(c, y, x) += amp[c] * w;
            }
    }

    double fx = rng.uniform(0.5, 4.0), fy = rng.uniform(0.5, 4.0);
    double phase = rng.uniform(0, 2 * M_PI), tamp = rng.uniform(0.02, 0.15);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            double t = tamp * std::sin(2 * M_PI * (fx * x / width + fy * y / height) + phase);
            for (int c = 0; c < 3; ++c) img.at3(c, y, x) += t;
        }

    if (rng.bernoulli(0.5)) {
        int x0 = rng.uniform_int(width / 2), y0 = rng.uniform_int(height / 2);
        int x1 = x0 + 2 + rng.uniform_int(width / 2), y1 = y0 + 2 + rng.uniform_int(height / 2);
        double col[3] = {rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8)};
        for (int y = y0; y < std::min(height, y1); ++y)
            for (int x = x0; x < std::min(width, x1); ++x)
                for (int c = 0; c < 3; ++c) img.at3(c, y, x) = 0.6 * img.at3(c, y, x) + 0.4 * col[c];
    }

    TensorT<T> out({3, height, width});
    for (std::size_t i = 0; i < out.numel(); ++i)
        out[i] = static_cast<T>(std::tanh(img[i]));  // soft-limit into (-1,1)
    return out;
}

}  // namespace flowmark

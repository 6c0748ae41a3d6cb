#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "flowmark/autodiff_spatial.hpp"
#include "flowmark/image.hpp"

namespace flowmark {

// Dense displacement field {H,W,2}, (dx,dy) in pixels, defined on the
// reference frame's grid: warped(p) = frame(p + u(p)).

template <class T>
struct FlowEstimator {
    virtual ~FlowEstimator() = default;
    virtual TensorT<T> estimate(const TensorT<T>& v0, const TensorT<T>& vt) const = 0;
    virtual std::string name() const = 0;
};

template <class T>
struct ZeroFlow final : FlowEstimator<T> {
    TensorT<T> estimate(const TensorT<T>& v0, const TensorT<T>&) const override {
        return TensorT<T>({v0.dim(1), v0.dim(2), 2});
    }
    std::string name() const override { return "flow.zero"; }
};

// Deterministic pyramidal block matching: 3 levels, 8x8 blocks, +-2 px
// search per level, parabolic sub-pixel refinement at the finest level.
// Ties always resolve to the inherited (coarser) displacement, so identical
// frames produce an exactly zero field, and refinement is skipped on exact
// matches so pure integer translations are recovered exactly.
template <class T>
class BlockMatchFlow final : public FlowEstimator<T> {
  public:
    explicit BlockMatchFlow(int levels = 3, int block = 8, int radius = 2)
        : levels_(levels), block_(block), radius_(radius) {}

    std::string name() const override { return "flow.block_match"; }

    TensorT<T> estimate(const TensorT<T>& v0, const TensorT<T>& vt) const override {
        require(v0.same_shape(vt), "flow estimate: frame shape mismatch");
        const int H = v0.dim(1), W = v0.dim(2);

        std::vector<TensorT<double>> pyr0{luminance(v0)}, pyrt{luminance(vt)};
        for (int l = 1; l < levels_; ++l) {
            if (pyr0.back().dim(1) < 2 * block_ || pyr0.back().dim(2) < 2 * block_) break;
            pyr0.push_back(half(pyr0.back()));
            pyrt.push_back(half(pyrt.back()));
        }

        // block-grid displacement, coarse-to-fine
        std::vector<double> bx, by;
        int gh = 0, gw = 0;
        for (int l = static_cast<int>(pyr0.size()) - 1; l >= 0; --l) {
            const auto& a = pyr0[static_cast<std::size_t>(l)];
            const auto& b = pyrt[static_cast<std::size_t>(l)];
            int lh = a.dim(1), lw = a.dim(2);
            int ngh = std::max(1, lh / block_), ngw = std::max(1, lw / block_);
            std::vector<double> nbx(static_cast<std::size_t>(ngh * ngw), 0.0);
            std::vector<double> nby(static_cast<std::size_t>(ngh * ngw), 0.0);
            for (int gy = 0; gy < ngh; ++gy)
                for (int gx = 0; gx < ngw; ++gx) {
                    double ix = 0, iy = 0;
                    if (gh > 0) {
                        // inherit from coarser grid (block centers align 2:1)
                        int cy = std::min(gh - 1, gy / 2), cx = std::min(gw - 1, gx / 2);
                        ix = 2.0 * bx[static_cast<std::size_t>(cy * gw + cx)];
                        iy = 2.0 * by[static_cast<std::size_t>(cy * gw + cx)];
                    }
                    match_block(a, b, gx * block_, gy * block_, std::lround(ix), std::lround(iy),
                                l == 0, nbx[static_cast<std::size_t>(gy * ngw + gx)],
                                nby[static_cast<std::size_t>(gy * ngw + gx)]);
                }
            bx = std::move(nbx);
            by = std::move(nby);
            gh = ngh;
            gw = ngw;
        }

        return upsample_block_grid(bx, by, gh, gw, H, W);
    }

  private:
    int levels_, block_, radius_;

    static TensorT<double> luminance(const TensorT<T>& img) {
        const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
        TensorT<double> out({1, H, W});
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double s = 0;
                for (int c = 0; c < C; ++c) s += static_cast<double>(img.at3(c, y, x));
                out.at3(0, y, x) = s / C;
            }
        return out;
    }

    static TensorT<double> half(const TensorT<double>& in) {
        int H = in.dim(1) / 2, W = in.dim(2) / 2;
        TensorT<double> out({1, H, W});
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                out.at3(0, y, x) = 0.25 * (in.at3(0, 2 * y, 2 * x) + in.at3(0, 2 * y, 2 * x + 1) +
                                           in.at3(0, 2 * y + 1, 2 * x) + in.at3(0, 2 * y + 1, 2 * x + 1));
        return out;
    }

    // SAD of the reference block at (bx0,by0) in a against the block at
    // (bx0+dx, by0+dy) in b; out-of-bounds taps clamp to the border.
    static double sad(const TensorT<double>& a, const TensorT<double>& b, int bx0, int by0, int bw,
                      int bh, int dx, int dy) {
        const int H = a.dim(1), W = a.dim(2);
        double s = 0;
        for (int y = 0; y < bh; ++y)
            for (int x = 0; x < bw; ++x) {
                int sy = std::min(H - 1, std::max(0, by0 + y + dy));
                int sx = std::min(W - 1, std::max(0, bx0 + x + dx));
                s += std::abs(a.at3(0, by0 + y, bx0 + x) - b.at3(0, sy, sx));
            }
        return s;
    }

    void match_block(const TensorT<double>& a, const TensorT<double>& b, int bx0, int by0,
                     long init_x, long init_y, bool refine, double& out_x, double& out_y) const {
        const int H = a.dim(1), W = a.dim(2);
        int bw = std::min(block_, W - bx0), bh = std::min(block_, H - by0);
        int best_dx = static_cast<int>(init_x), best_dy = static_cast<int>(init_y);
        double best = sad(a, b, bx0, by0, bw, bh, best_dx, best_dy);
        for (int dy = -radius_; dy <= radius_; ++dy)
            for (int dx = -radius_; dx <= radius_; ++dx) {
                if (dx == 0 && dy == 0) continue;
                double s = sad(a, b, bx0, by0, bw, bh, static_cast<int>(init_x) + dx,
                               static_cast<int>(init_y) + dy);
                if (s < best) {  // strict: ties keep the inherited displacement
                    best = s;
                    best_dx = static_cast<int>(init_x) + dx;
                    best_dy = static_cast<int>(init_y) + dy;
                }
            }
        out_x = best_dx;
        out_y = best_dy;
        if (!refine || best == 0.0) return;  // exact match: keep the integer vector

        // parabolic sub-pixel refinement per axis
        auto refine_axis = [&](bool horizontal) -> double {
            double s_m = sad(a, b, bx0, by0, bw, bh, best_dx - (horizontal ? 1 : 0),
                             best_dy - (horizontal ? 0 : 1));
            double s_p = sad(a, b, bx0, by0, bw, bh, best_dx + (horizontal ? 1 : 0),
                             best_dy + (horizontal ? 0 : 1));
            double denom = s_m - 2.0 * best + s_p;
            if (denom <= 1e-12) return 0.0;
            double off = 0.5 * (s_m - s_p) / denom;
            return std::min(0.5, std::max(-0.5, off));
        };
        out_x = best_dx + refine_axis(true);
        out_y = best_dy + refine_axis(false);
    }

    TensorT<T> upsample_block_grid(const std::vector<double>& bx, const std::vector<double>& by,
                                   int gh, int gw, int H, int W) const {
        TensorT<T> flow({H, W, 2});
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                // position in block-grid coordinates (block centers)
                double gyf = (y + 0.5) / block_ - 0.5;
                double gxf = (x + 0.5) / block_ - 0.5;
                gyf = std::min(static_cast<double>(gh - 1), std::max(0.0, gyf));
                gxf = std::min(static_cast<double>(gw - 1), std::max(0.0, gxf));
                int g0y = static_cast<int>(std::floor(gyf)), g0x = static_cast<int>(std::floor(gxf));
                int g1y = std::min(gh - 1, g0y + 1), g1x = std::min(gw - 1, g0x + 1);
                double fy = gyf - g0y, fx = gxf - g0x;
                auto lerp = [&](const std::vector<double>& g) {
                    double top = g[static_cast<std::size_t>(g0y * gw + g0x)] * (1 - fx) +
                                 g[static_cast<std::size_t>(g0y * gw + g1x)] * fx;
                    double bot = g[static_cast<std::size_t>(g1y * gw + g0x)] * (1 - fx) +
                                 g[static_cast<std::size_t>(g1y * gw + g1x)] * fx;
                    return top * (1 - fy) + bot * fy;
                };
                flow.at3(y, x, 0) = static_cast<T>(lerp(bx));
                flow.at3(y, x, 1) = static_cast<T>(lerp(by));
            }
        return flow;
    }
};

// Warp every frame of a sequence toward the reference frame using the given
// estimator. Frame 0 passes through unchanged.
template <class T>
FrameSequenceT<T> warp_sequence(const FrameSequenceT<T>& seq, const FlowEstimator<T>& estimator) {
    std::vector<TensorT<T>> out;
    out.reserve(seq.frames.size());
    out.push_back(seq.frames.front());
    for (std::size_t t = 1; t < seq.frames.size(); ++t) {
        TensorT<T> flow;
        try {
            flow = estimator.estimate(seq.reference(), seq.frames[t]);
        } catch (const std::exception& e) {
            throw Error("warp_sequence: estimator failed on frame " + std::to_string(t) + ": " +
                        e.what());
        }
        out.push_back(warp_bilinear(Var<T>::constant(seq.frames[t]), Var<T>::constant(flow)).val());
    }
    return FrameSequenceT<T>(std::move(out));
}

}  // namespace flowmark

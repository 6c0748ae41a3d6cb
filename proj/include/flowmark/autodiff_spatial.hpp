#pragma once

#include <cmath>
#include <vector>

#include "flowmark/autodiff.hpp"

namespace flowmark {

namespace conv_detail {

inline int out_dim(int in, int k, int stride, int pad, int dil) {
    int eff = dil * (k - 1) + 1;
    int out = (in + 2 * pad - eff) / stride + 1;
    require(out > 0, "conv2d: output dimension collapsed to zero");
    return out;
}

// x {C,H,W} * w {O,C,kh,kw} (+ b {O}) -> y {O,Ho,Wo}. Accumulation order per
// output element is fixed (ic,ky,kx ascending); parallelism is over output
// channels only.
template <class T>
void conv2d_fwd(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b, TensorT<T>& y,
                int stride, int pad, int dil) {
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int Ho = y.dim(1), Wo = y.dim(2);
    const bool has_bias = !b.data.empty();
#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < O; ++oc) {
        T* yo = y.ptr() + static_cast<std::size_t>(oc) * Ho * Wo;
        T bias = has_bias ? b[static_cast<std::size_t>(oc)] : T(0);
        for (int i = 0; i < Ho * Wo; ++i) yo[i] = bias;
        for (int ic = 0; ic < C; ++ic) {
            const T* xi = x.ptr() + static_cast<std::size_t>(ic) * H * W;
            const T* wb = w.ptr() + (static_cast<std::size_t>(oc) * C + ic) * kh * kw;
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    T wv = wb[ky * kw + kx];
                    for (int oy = 0; oy < Ho; ++oy) {
                        int iy = oy * stride - pad + ky * dil;
                        if (iy < 0 || iy >= H) continue;
                        // valid ox range: 0 <= ox*stride - pad + kx*dil < W
                        int off = kx * dil - pad;
                        int lo = off < 0 ? (-off + stride - 1) / stride : 0;
                        int hi = (W - 1 - off) / stride + 1;
                        if (hi > Wo) hi = Wo;
                        T* yrow = yo + oy * Wo;
                        const T* xrow = xi + iy * W + off;
                        if (stride == 1) {
                            for (int ox = lo; ox < hi; ++ox) yrow[ox] += wv * xrow[ox];
                        } else {
                            for (int ox = lo; ox < hi; ++ox) yrow[ox] += wv * xrow[ox * stride];
                        }
                    }
                }
            }
        }
    }
}

template <class T>
void conv2d_bwd_input(TensorT<T>& gx, const TensorT<T>& w, const TensorT<T>& gy, int stride,
                      int pad, int dil) {
    const int C = gx.dim(0), H = gx.dim(1), W = gx.dim(2);
    const int O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int Ho = gy.dim(1), Wo = gy.dim(2);
#pragma omp parallel for schedule(static)
    for (int ic = 0; ic < C; ++ic) {
        T* gxi = gx.ptr() + static_cast<std::size_t>(ic) * H * W;
        for (int oc = 0; oc < O; ++oc) {
            const T* gyo = gy.ptr() + static_cast<std::size_t>(oc) * Ho * Wo;
            const T* wb = w.ptr() + (static_cast<std::size_t>(oc) * C + ic) * kh * kw;
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    T wv = wb[ky * kw + kx];
                    for (int oy = 0; oy < Ho; ++oy) {
                        int iy = oy * stride - pad + ky * dil;
                        if (iy < 0 || iy >= H) continue;
                        int off = kx * dil - pad;
                        int lo = off < 0 ? (-off + stride - 1) / stride : 0;
                        int hi = (W - 1 - off) / stride + 1;
                        if (hi > Wo) hi = Wo;
                        const T* gyrow = gyo + oy * Wo;
                        T* gxrow = gxi + iy * W + off;
                        if (stride == 1) {
                            for (int ox = lo; ox < hi; ++ox) gxrow[ox] += wv * gyrow[ox];
                        } else {
                            for (int ox = lo; ox < hi; ++ox) gxrow[ox * stride] += wv * gyrow[ox];
                        }
                    }
                }
            }
        }
    }
}

template <class T>
void conv2d_bwd_weight(const TensorT<T>& x, TensorT<T>& gw, const TensorT<T>& gy, int stride,
                       int pad, int dil) {
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int O = gw.dim(0), kh = gw.dim(2), kw = gw.dim(3);
    const int Ho = gy.dim(1), Wo = gy.dim(2);
#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < O; ++oc) {
        const T* gyo = gy.ptr() + static_cast<std::size_t>(oc) * Ho * Wo;
        for (int ic = 0; ic < C; ++ic) {
            const T* xi = x.ptr() + static_cast<std::size_t>(ic) * H * W;
            T* wb = gw.ptr() + (static_cast<std::size_t>(oc) * C + ic) * kh * kw;
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    T acc = T(0);
                    for (int oy = 0; oy < Ho; ++oy) {
                        int iy = oy * stride - pad + ky * dil;
                        if (iy < 0 || iy >= H) continue;
                        int off = kx * dil - pad;
                        int lo = off < 0 ? (-off + stride - 1) / stride : 0;
                        int hi = (W - 1 - off) / stride + 1;
                        if (hi > Wo) hi = Wo;
                        const T* gyrow = gyo + oy * Wo;
                        const T* xrow = xi + iy * W + off;
                        if (stride == 1) {
                            for (int ox = lo; ox < hi; ++ox) acc += gyrow[ox] * xrow[ox];
                        } else {
                            for (int ox = lo; ox < hi; ++ox) acc += gyrow[ox] * xrow[ox * stride];
                        }
                    }
                    wb[ky * kw + kx] += acc;
                }
            }
        }
    }
}

}  // namespace conv_detail

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride = 1, int pad = 1,
              int dil = 1) {
    require(x.val().ndim() == 3 && w.val().ndim() == 4, "conv2d: bad ranks");
    require(x.val().dim(0) == w.val().dim(1), "conv2d: channel mismatch");
    const int Ho = conv_detail::out_dim(x.val().dim(1), w.val().dim(2), stride, pad, dil);
    const int Wo = conv_detail::out_dim(x.val().dim(2), w.val().dim(3), stride, pad, dil);
    TensorT<T> y({w.val().dim(0), Ho, Wo});
    static const TensorT<T> no_bias;
    conv_detail::conv2d_fwd(x.val(), w.val(), b.valid() ? b.val() : no_bias, y, stride, pad, dil);

    auto px = x.handle(), pw = w.handle();
    auto pb = b.valid() ? b.handle() : nullptr;
    std::vector<std::shared_ptr<ADNode<T>>> parents{px, pw};
    if (pb) parents.push_back(pb);
    return Var<T>(ad_detail::make_op<T>(
        std::move(y), std::move(parents), [px, pw, pb, stride, pad, dil](ADNode<T>& n) {
            if (px->needs_grad) {
                ad_detail::ensure_grad(*px);
                conv_detail::conv2d_bwd_input(px->grad, pw->val, n.grad, stride, pad, dil);
            }
            if (pw->needs_grad) {
                ad_detail::ensure_grad(*pw);
                conv_detail::conv2d_bwd_weight(px->val, pw->grad, n.grad, stride, pad, dil);
            }
            if (pb && pb->needs_grad) {
                ad_detail::ensure_grad(*pb);
                const int O = n.grad.dim(0);
                const std::size_t plane = n.grad.numel() / static_cast<std::size_t>(O);
                for (int oc = 0; oc < O; ++oc) {
                    T acc = T(0);
                    const T* g = n.grad.ptr() + static_cast<std::size_t>(oc) * plane;
                    for (std::size_t i = 0; i < plane; ++i) acc += g[i];
                    pb->grad[static_cast<std::size_t>(oc)] += acc;
                }
            }
        }));
}

// Nearest-neighbor resize to an arbitrary target; preserves bit-block
// locality when upsampling message grids (source index = floor(d*in/out)).
template <class T>
Var<T> resize_nearest(const Var<T>& x, int H2, int W2) {
    const int C = x.val().dim(0), H = x.val().dim(1), W = x.val().dim(2);
    if (H2 == H && W2 == W) return x;
    std::vector<int> sy(static_cast<std::size_t>(H2)), sx(static_cast<std::size_t>(W2));
    for (int y = 0; y < H2; ++y)
        sy[static_cast<std::size_t>(y)] =
            std::min(H - 1, static_cast<int>((static_cast<long long>(y) * H) / H2));
    for (int xq = 0; xq < W2; ++xq)
        sx[static_cast<std::size_t>(xq)] =
            std::min(W - 1, static_cast<int>((static_cast<long long>(xq) * W) / W2));
    TensorT<T> out({C, H2, W2});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H2; ++y)
            for (int xq = 0; xq < W2; ++xq)
                out.at3(c, y, xq) = x.val().at3(c, sy[static_cast<std::size_t>(y)], sx[static_cast<std::size_t>(xq)]);
    auto px = x.handle();
    return Var<T>(ad_detail::make_op<T>(std::move(out), {px}, [px, sy, sx, C, H2, W2](ADNode<T>& n) {
        ad_detail::ensure_grad(*px);
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H2; ++y)
                for (int xq = 0; xq < W2; ++xq)
                    px->grad.at3(c, sy[static_cast<std::size_t>(y)], sx[static_cast<std::size_t>(xq)]) +=
                        n.grad.at3(c, y, xq);
    }));
}

namespace resize_detail {

struct Tap {
    int i0, i1;
    double w1;  // weight of i1; w0 = 1 - w1
};

// Half-pixel-centers convention, source coords clamped to the image.
inline std::vector<Tap> bilinear_taps(int in, int out) {
    std::vector<Tap> taps(static_cast<std::size_t>(out));
    double scale = static_cast<double>(in) / static_cast<double>(out);
    for (int d = 0; d < out; ++d) {
        double s = (d + 0.5) * scale - 0.5;
        if (s < 0) s = 0;
        if (s > in - 1) s = in - 1;
        int i0 = static_cast<int>(std::floor(s));
        int i1 = std::min(in - 1, i0 + 1);
        taps[static_cast<std::size_t>(d)] = {i0, i1, s - i0};
    }
    return taps;
}

}  // namespace resize_detail

template <class T>
Var<T> resize_bilinear(const Var<T>& x, int H2, int W2) {
    const int C = x.val().dim(0), H = x.val().dim(1), W = x.val().dim(2);
    if (H2 == H && W2 == W) return x;
    auto ty = resize_detail::bilinear_taps(H, H2);
    auto tx = resize_detail::bilinear_taps(W, W2);
    TensorT<T> out({C, H2, W2});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H2; ++y) {
            const auto& a = ty[static_cast<std::size_t>(y)];
            for (int xq = 0; xq < W2; ++xq) {
                const auto& b = tx[static_cast<std::size_t>(xq)];
                double v00 = x.val().at3(c, a.i0, b.i0), v01 = x.val().at3(c, a.i0, b.i1);
                double v10 = x.val().at3(c, a.i1, b.i0), v11 = x.val().at3(c, a.i1, b.i1);
                double top = v00 * (1 - b.w1) + v01 * b.w1;
                double bot = v10 * (1 - b.w1) + v11 * b.w1;
                out.at3(c, y, xq) = static_cast<T>(top * (1 - a.w1) + bot * a.w1);
            }
        }
    auto px = x.handle();
    return Var<T>(ad_detail::make_op<T>(std::move(out), {px}, [px, ty, tx, C, H2, W2](ADNode<T>& n) {
        ad_detail::ensure_grad(*px);
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H2; ++y) {
                const auto& a = ty[static_cast<std::size_t>(y)];
                for (int xq = 0; xq < W2; ++xq) {
                    const auto& b = tx[static_cast<std::size_t>(xq)];
                    T g = n.grad.at3(c, y, xq);
                    px->grad.at3(c, a.i0, b.i0) += g * static_cast<T>((1 - a.w1) * (1 - b.w1));
                    px->grad.at3(c, a.i0, b.i1) += g * static_cast<T>((1 - a.w1) * b.w1);
                    px->grad.at3(c, a.i1, b.i0) += g * static_cast<T>(a.w1 * (1 - b.w1));
                    px->grad.at3(c, a.i1, b.i1) += g * static_cast<T>(a.w1 * b.w1);
                }
            }
    }));
}

// Backward bilinear warp: out(c,p) = frame(c, p + u(p)), sample coordinates
// clamped to the image border. flow is {H,W,2} with (dx,dy) per pixel.
// Differentiable in both the frame and (when it is a graph node) the flow;
// the coordinate clamp zeroes flow gradients at the border.
template <class T>
Var<T> warp_bilinear(const Var<T>& frame, const Var<T>& flow) {
    const int C = frame.val().dim(0), H = frame.val().dim(1), W = frame.val().dim(2);
    require(flow.val().ndim() == 3 && flow.val().dim(0) == H && flow.val().dim(1) == W &&
                flow.val().dim(2) == 2,
            "warp_bilinear: flow must be H x W x 2");
    TensorT<T> out({C, H, W});
    const TensorT<T>& u = flow.val();
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double sx = x + static_cast<double>(u.at3(y, x, 0));
            double sy = y + static_cast<double>(u.at3(y, x, 1));
            double cx = std::min(static_cast<double>(W - 1), std::max(0.0, sx));
            double cy = std::min(static_cast<double>(H - 1), std::max(0.0, sy));
            int x0 = static_cast<int>(std::floor(cx)), y0 = static_cast<int>(std::floor(cy));
            int x1 = std::min(W - 1, x0 + 1), y1 = std::min(H - 1, y0 + 1);
            double fx = cx - x0, fy = cy - y0;
            for (int c = 0; c < C; ++c) {
                double v00 = frame.val().at3(c, y0, x0), v01 = frame.val().at3(c, y0, x1);
                double v10 = frame.val().at3(c, y1, x0), v11 = frame.val().at3(c, y1, x1);
                out.at3(c, y, x) = static_cast<T>((v00 * (1 - fx) + v01 * fx) * (1 - fy) +
                                                  (v10 * (1 - fx) + v11 * fx) * fy);
            }
        }
    auto pf = frame.handle(), pu = flow.handle();
    return Var<T>(ad_detail::make_op<T>(std::move(out), {pf, pu}, [pf, pu, C, H, W](ADNode<T>& n) {
        const TensorT<T>& u = pu->val;
        bool gf = pf->needs_grad, gu = pu->needs_grad;
        if (gf) ad_detail::ensure_grad(*pf);
        if (gu) ad_detail::ensure_grad(*pu);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double sx = x + static_cast<double>(u.at3(y, x, 0));
                double sy = y + static_cast<double>(u.at3(y, x, 1));
                bool in_x = sx > 0.0 && sx < W - 1;
                bool in_y = sy > 0.0 && sy < H - 1;
                double cx = std::min(static_cast<double>(W - 1), std::max(0.0, sx));
                double cy = std::min(static_cast<double>(H - 1), std::max(0.0, sy));
                int x0 = static_cast<int>(std::floor(cx)), y0 = static_cast<int>(std::floor(cy));
                int x1 = std::min(W - 1, x0 + 1), y1 = std::min(H - 1, y0 + 1);
                double fx = cx - x0, fy = cy - y0;
                double gx_acc = 0, gy_acc = 0;
                for (int c = 0; c < C; ++c) {
                    T g = n.grad.at3(c, y, x);
                    if (g == T(0)) continue;
                    if (gf) {
                        pf->grad.at3(c, y0, x0) += g * static_cast<T>((1 - fx) * (1 - fy));
                        pf->grad.at3(c, y0, x1) += g * static_cast<T>(fx * (1 - fy));
                        pf->grad.at3(c, y1, x0) += g * static_cast<T>((1 - fx) * fy);
                        pf->grad.at3(c, y1, x1) += g * static_cast<T>(fx * fy);
                    }
                    if (gu) {
                        double v00 = pf->val.at3(c, y0, x0), v01 = pf->val.at3(c, y0, x1);
                        double v10 = pf->val.at3(c, y1, x0), v11 = pf->val.at3(c, y1, x1);
                        gx_acc += static_cast<double>(g) *
                                  ((v01 - v00) * (1 - fy) + (v11 - v10) * fy);
                        gy_acc += static_cast<double>(g) *
                                  ((v10 - v00) * (1 - fx) + (v11 - v01) * fx);
                    }
                }
                if (gu) {
                    if (in_x) pu->grad.at3(y, x, 0) += static_cast<T>(gx_acc);
                    if (in_y) pu->grad.at3(y, x, 1) += static_cast<T>(gy_acc);
                }
            }
    }));
}

namespace blur_detail {

inline std::vector<double> gaussian_kernel(double sigma, int radius) {
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = v;
        sum += v;
    }
    for (auto& v : k) v /= sum;
    return k;
}

// Separable pass along one axis with border clamp. dir 0 = horizontal.
template <class T>
void blur_pass(const TensorT<T>& in, TensorT<T>& out, const std::vector<double>& k, int dir) {
    const int C = in.dim(0), H = in.dim(1), W = in.dim(2);
    const int r = (static_cast<int>(k.size()) - 1) / 2;
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double acc = 0;
                for (int i = -r; i <= r; ++i) {
                    int yy = y, xx = x;
                    if (dir == 0)
                        xx = std::min(W - 1, std::max(0, x + i));
                    else
                        yy = std::min(H - 1, std::max(0, y + i));
                    acc += k[static_cast<std::size_t>(i + r)] * static_cast<double>(in.at3(c, yy, xx));
                }
                out.at3(c, y, x) = static_cast<T>(acc);
            }
}

// Adjoint of blur_pass (scatter with the same clamped taps).
template <class T>
void blur_pass_adjoint(const TensorT<T>& gout, TensorT<T>& gin, const std::vector<double>& k,
                       int dir) {
    const int C = gout.dim(0), H = gout.dim(1), W = gout.dim(2);
    const int r = (static_cast<int>(k.size()) - 1) / 2;
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                T g = gout.at3(c, y, x);
                if (g == T(0)) continue;
                for (int i = -r; i <= r; ++i) {
                    int yy = y, xx = x;
                    if (dir == 0)
                        xx = std::min(W - 1, std::max(0, x + i));
                    else
                        yy = std::min(H - 1, std::max(0, y + i));
                    gin.at3(c, yy, xx) += g * static_cast<T>(k[static_cast<std::size_t>(i + r)]);
                }
            }
}

}  // namespace blur_detail

// Depthwise separable Gaussian blur with border clamp; kernel radius is
// ceil(3*sigma). sigma <= 0 returns the input untouched.
template <class T>
Var<T> gaussian_blur(const Var<T>& x, double sigma) {
    if (sigma <= 0.0) return x;
    int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    auto k = blur_detail::gaussian_kernel(sigma, radius);
    TensorT<T> tmp(x.val().shape), out(x.val().shape);
    blur_detail::blur_pass(x.val(), tmp, k, 0);
    blur_detail::blur_pass(tmp, out, k, 1);
    auto px = x.handle();
    return Var<T>(ad_detail::make_op<T>(std::move(out), {px}, [px, k](ADNode<T>& n) {
        ad_detail::ensure_grad(*px);
        TensorT<T> gtmp(n.grad.shape);
        blur_detail::blur_pass_adjoint(n.grad, gtmp, k, 1);
        blur_detail::blur_pass_adjoint(gtmp, px->grad, k, 0);
    }));
}

// Mean pooling onto an arbitrary output grid; cell (i,j) averages the input
// window [floor(i*H/oh), ceil((i+1)*H/oh)) x [floor(j*W/ow), ceil((j+1)*W/ow)).
template <class T>
Var<T> adaptive_avg_pool(const Var<T>& x, int oh, int ow) {
    const int C = x.val().dim(0), H = x.val().dim(1), W = x.val().dim(2);
    require(oh >= 1 && ow >= 1 && oh <= H && ow <= W, "adaptive_avg_pool: bad output size");
    if (oh == H && ow == W) return x;
    auto lo = [](int i, int in, int out) { return (i * in) / out; };
    auto hi = [](int i, int in, int out) { return ((i + 1) * in + out - 1) / out; };
    TensorT<T> out({C, oh, ow});
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < oh; ++i)
            for (int j = 0; j < ow; ++j) {
                int y0 = lo(i, H, oh), y1 = hi(i, H, oh);
                int x0 = lo(j, W, ow), x1 = hi(j, W, ow);
                T acc = T(0);
                for (int y = y0; y < y1; ++y)
                    for (int xq = x0; xq < x1; ++xq) acc += x.val().at3(c, y, xq);
                out.at3(c, i, j) = acc / static_cast<T>((y1 - y0) * (x1 - x0));
            }
    auto px = x.handle();
    return Var<T>(ad_detail::make_op<T>(std::move(out), {px},
                                        [px, lo, hi, C, H, W, oh, ow](ADNode<T>& n) {
        ad_detail::ensure_grad(*px);
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < oh; ++i)
                for (int j = 0; j < ow; ++j) {
                    int y0 = lo(i, H, oh), y1 = hi(i, H, oh);
                    int x0 = lo(j, W, ow), x1 = hi(j, W, ow);
                    T g = n.grad.at3(c, i, j) / static_cast<T>((y1 - y0) * (x1 - x0));
                    for (int y = y0; y < y1; ++y)
                        for (int xq = x0; xq < x1; ++xq) px->grad.at3(c, y, xq) += g;
                }
    }));
}

// 2x2 mean pooling; input dims must be even.
template <class T>
Var<T> avg_pool2(const Var<T>& x) {
    const int C = x.val().dim(0), H = x.val().dim(1), W = x.val().dim(2);
    require(H % 2 == 0 && W % 2 == 0, "avg_pool2: dims must be even");
    TensorT<T> out({C, H / 2, W / 2});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H / 2; ++y)
            for (int xq = 0; xq < W / 2; ++xq)
                out.at3(c, y, xq) =
                    (x.val().at3(c, 2 * y, 2 * xq) + x.val().at3(c, 2 * y, 2 * xq + 1) +
                     x.val().at3(c, 2 * y + 1, 2 * xq) + x.val().at3(c, 2 * y + 1, 2 * xq + 1)) /
                    T(4);
    auto px = x.handle();
    return Var<T>(ad_detail::make_op<T>(std::move(out), {px}, [px, C, H, W](ADNode<T>& n) {
        ad_detail::ensure_grad(*px);
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H / 2; ++y)
                for (int xq = 0; xq < W / 2; ++xq) {
                    T g = n.grad.at3(c, y, xq) / T(4);
                    px->grad.at3(c, 2 * y, 2 * xq) += g;
                    px->grad.at3(c, 2 * y, 2 * xq + 1) += g;
                    px->grad.at3(c, 2 * y + 1, 2 * xq) += g;
                    px->grad.at3(c, 2 * y + 1, 2 * xq + 1) += g;
                }
    }));
}

// {C,H,W} -> {C}
template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
    const int C = x.val().dim(0);
    const std::size_t plane = x.val().numel() / static_cast<std::size_t>(C);
    TensorT<T> out({C});
    for (int c = 0; c < C; ++c) {
        T acc = T(0);
        const T* p = x.val().ptr() + static_cast<std::size_t>(c) * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
        out[static_cast<std::size_t>(c)] = acc / static_cast<T>(plane);
    }
    auto px = x.handle();
    return Var<T>(ad_detail::make_op<T>(std::move(out), {px}, [px, C, plane](ADNode<T>& n) {
        ad_detail::ensure_grad(*px);
        for (int c = 0; c < C; ++c) {
            T g = n.grad[static_cast<std::size_t>(c)] / static_cast<T>(plane);
            T* p = px->grad.ptr() + static_cast<std::size_t>(c) * plane;
            for (std::size_t i = 0; i < plane; ++i) p[i] += g;
        }
    }));
}

// y = W x + b with x {N}, W {M,N}, b {M}
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    require(x.val().ndim() == 1 && w.val().ndim() == 2, "linear: bad ranks");
    const int N = x.val().dim(0), M = w.val().dim(0);
    require(w.val().dim(1) == N, "linear: weight shape mismatch");
    TensorT<T> out({M});
    for (int m = 0; m < M; ++m) {
        T acc = b.valid() ? b.val()[static_cast<std::size_t>(m)] : T(0);
        const T* wr = w.val().ptr() + static_cast<std::size_t>(m) * N;
        for (int i = 0; i < N; ++i) acc += wr[i] * x.val()[static_cast<std::size_t>(i)];
        out[static_cast<std::size_t>(m)] = acc;
    }
    auto px = x.handle(), pw = w.handle();
    auto pb = b.valid() ? b.handle() : nullptr;
    std::vector<std::shared_ptr<ADNode<T>>> parents{px, pw};
    if (pb) parents.push_back(pb);
    return Var<T>(ad_detail::make_op<T>(std::move(out), std::move(parents),
                                        [px, pw, pb, M, N](ADNode<T>& n) {
        if (px->needs_grad) {
            ad_detail::ensure_grad(*px);
            for (int i = 0; i < N; ++i) {
                T acc = T(0);
                for (int m = 0; m < M; ++m)
                    acc += pw->val[static_cast<std::size_t>(m) * N + static_cast<std::size_t>(i)] *
                           n.grad[static_cast<std::size_t>(m)];
                px->grad[static_cast<std::size_t>(i)] += acc;
            }
        }
        if (pw->needs_grad) {
            ad_detail::ensure_grad(*pw);
            for (int m = 0; m < M; ++m) {
                T g = n.grad[static_cast<std::size_t>(m)];
                T* gw = pw->grad.ptr() + static_cast<std::size_t>(m) * N;
                for (int i = 0; i < N; ++i) gw[i] += g * px->val[static_cast<std::size_t>(i)];
            }
        }
        if (pb && pb->needs_grad) {
            ad_detail::ensure_grad(*pb);
            for (int m = 0; m < M; ++m)
                pb->grad[static_cast<std::size_t>(m)] += n.grad[static_cast<std::size_t>(m)];
        }
    }));
}

// x / ||x||_2 for a vector; throws if the norm is numerically zero.
template <class T>
Var<T> l2_normalize(const Var<T>& x) {
    require(x.val().ndim() == 1, "l2_normalize: expected a vector");
    double nsq = 0;
    for (auto v : x.val().data) nsq += static_cast<double>(v) * static_cast<double>(v);
    double norm = std::sqrt(nsq);
    if (norm < 1e-12) throw ContractError("l2_normalize: zero-norm embedding");
    TensorT<T> out = x.val();
    for (auto& v : out.data) v = static_cast<T>(v / norm);
    auto px = x.handle();
    TensorT<T> y = out;
    return Var<T>(ad_detail::make_op<T>(std::move(out), {px}, [px, y, norm](ADNode<T>& n) {
        ad_detail::ensure_grad(*px);
        double gy = 0;
        for (std::size_t i = 0; i < n.grad.numel(); ++i)
            gy += static_cast<double>(n.grad[i]) * static_cast<double>(y[i]);
        for (std::size_t i = 0; i < n.grad.numel(); ++i)
            px->grad[i] += static_cast<T>((static_cast<double>(n.grad[i]) -
                                           static_cast<double>(y[i]) * gy) /
                                          norm);
    }));
}

}  // namespace flowmark

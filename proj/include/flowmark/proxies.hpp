#pragma once

#include <cstdlib>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowmark/embedders.hpp"
#include "flowmark/flow.hpp"
#include "flowmark/image_io.hpp"

namespace flowmark {

using json = nlohmann::ordered_json;

// ---- interfaces ----

// Image-editing stand-in inserted between encoder and decoder. During
// training only differentiable proxies are legal; external (non-diff)
// adapters are evaluation-only.
template <class T>
struct EditProxy {
    virtual ~EditProxy() = default;
    virtual bool differentiable() const = 0;
    virtual std::string name() const = 0;
    // item_hint identifies the corpus item for external adapters.
    virtual Var<T> apply(const Var<T>& img, RngStream rng, const std::string& item_hint = "") const = 0;
};

template <class T>
struct VideoResult {
    std::vector<Var<T>> frames;  // frames[0] derived from the input image
    // Ground-truth return flows for frames t>=1 (empty when unknown):
    // warp(frames[t], gt_flows[t-1]) realigns the frame to the reference grid.
    std::vector<TensorT<T>> gt_flows;

    FrameSequenceT<T> sequence() const {
        std::vector<TensorT<T>> out;
        out.reserve(frames.size());
        for (const auto& f : frames) out.push_back(f.val());
        return FrameSequenceT<T>(std::move(out));
    }
};

// Video-generation stand-in: M frames conditioned on one image.
template <class T>
struct VideoProxy {
    virtual ~VideoProxy() = default;
    virtual bool differentiable() const = 0;
    virtual std::string name() const = 0;
    virtual VideoResult<T> generate(const Var<T>& img, int frame_count, RngStream rng,
                                    const std::string& item_hint = "") const = 0;
};

// ---- identity proxies (test fixtures and ablation switches) ----

template <class T>
struct IdentityEditProxy final : EditProxy<T> {
    bool differentiable() const override { return true; }
    std::string name() const override { return "edit.identity"; }
    Var<T> apply(const Var<T>& img, RngStream, const std::string& = "") const override { return img; }
};

template <class T>
struct IdentityVideoProxy final : VideoProxy<T> {
    bool differentiable() const override { return true; }
    std::string name() const override { return "video.identity"; }
    VideoResult<T> generate(const Var<T>& img, int frame_count, RngStream,
                            const std::string& = "") const override {
        require(frame_count >= 2, "video proxy: frame count must be >= 2");
        VideoResult<T> out;
        for (int t = 0; t < frame_count; ++t) out.frames.push_back(img);
        for (int t = 1; t < frame_count; ++t)
            out.gt_flows.emplace_back(TensorT<T>({img.val().dim(1), img.val().dim(2), 2}));
        return out;
    }
};

// ---- synthetic edit proxy ----

struct SyntheticEditConfig {
    double curve_gain = 0.10;      // odd cubic tone-curve amplitude
    double gain_jitter = 0.08;     // per-channel multiplicative jitter
    double bias_jitter = 0.04;     // per-channel additive jitter
    double max_blotch_frac = 0.08; // occlusion area budget (<= 0.10 contract)
    double blur_sigma_max = 0.8;

    static SyntheticEditConfig identity() { return {0, 0, 0, 0, 0}; }

    static SyntheticEditConfig from_json(const json& j) {
        SyntheticEditConfig c;
        if (j.contains("curve_gain")) c.curve_gain = j["curve_gain"].get<double>();
        if (j.contains("gain_jitter")) c.gain_jitter = j["gain_jitter"].get<double>();
        if (j.contains("bias_jitter")) c.bias_jitter = j["bias_jitter"].get<double>();
        if (j.contains("max_blotch_frac")) c.max_blotch_frac = j["max_blotch_frac"].get<double>();
        if (j.contains("blur_sigma_max")) c.blur_sigma_max = j["blur_sigma_max"].get<double>();
        require(c.max_blotch_frac <= 0.10, "edit proxy: blotch area budget exceeds 10%");
        return c;
    }
};

// Randomized global color curve + local occlusion blotch + Gaussian blur,
// all differentiable with respect to the image. With every stage disabled
// the input passes through bit-exactly.
template <class T>
class SyntheticEditProxy final : public EditProxy<T> {
  public:
    explicit SyntheticEditProxy(SyntheticEditConfig cfg = {}) : cfg_(cfg) {}

    bool differentiable() const override { return true; }
    std::string name() const override { return "edit.synthetic"; }

    Var<T> apply(const Var<T>& img, RngStream rng, const std::string& = "") const override {
        const int C = img.val().dim(0), H = img.val().dim(1), W = img.val().dim(2);
        Var<T> x = img;
        bool touched = false;

        if (cfg_.curve_gain > 0 || cfg_.gain_jitter > 0 || cfg_.bias_jitter > 0) {
            RngStream r = rng.fork("curve");
            // x' = g*(x + c*(x - x^3)) + b per channel
            Var<T> cubic = mul(mul(x, x), x);
            TensorT<T> camp({C, H, W}), gmap({C, H, W}), bmap({C, H, W});
            std::size_t plane = static_cast<std::size_t>(H) * W;
            for (int c = 0; c < C; ++c) {
                T cv = static_cast<T>(r.uniform(-cfg_.curve_gain, cfg_.curve_gain));
                T gv = static_cast<T>(r.uniform(1.0 - cfg_.gain_jitter, 1.0 + cfg_.gain_jitter));
                T bv = static_cast<T>(r.uniform(-cfg_.bias_jitter, cfg_.bias_jitter));
                for (std::size_t i = 0; i < plane; ++i) {
                    camp[static_cast<std::size_t>(c) * plane + i] = cv;
                    gmap[static_cast<std::size_t>(c) * plane + i] = gv;
                    bmap[static_cast<std::size_t>(c) * plane + i] = bv;
                }
            }
            Var<T> curved = add(x, mul_const(sub(x, cubic), camp));
            x = add_const(mul_const(curved, gmap), bmap);
            touched = true;
        }

        if (cfg_.max_blotch_frac > 0) {
            RngStream r = rng.fork("blotch");
            double frac = r.uniform(0.01, cfg_.max_blotch_frac);
            double aspect = r.uniform(0.5, 2.0);
            double area = frac * H * W;
            double a = std::sqrt(area * aspect / M_PI);  // semi-axes
            double b = area / (M_PI * a);
            double cx = r.uniform(0.0, W - 1.0), cy = r.uniform(0.0, H - 1.0);
            double angle = r.uniform(0.0, M_PI);
            double ca = std::cos(angle), sa = std::sin(angle);
            TensorT<T> keep({1, H, W}), colmap({C, H, W});
            T col[3] = {static_cast<T>(r.uniform(-0.5, 0.5)), static_cast<T>(r.uniform(-0.5, 0.5)),
                        static_cast<T>(r.uniform(-0.5, 0.5))};
            for (int y = 0; y < H; ++y)
                for (int xq = 0; xq < W; ++xq) {
                    double dx = xq - cx, dy = y - cy;
                    double u = (dx * ca + dy * sa) / a;
                    double v = (-dx * sa + dy * ca) / b;
                    double d = u * u + v * v;
                    // hard ellipse with a narrow smooth fringe
                    double mask = d <= 1.0 ? 1.0 : (d < 1.2 ? (1.2 - d) / 0.2 : 0.0);
                    keep.at3(0, y, xq) = static_cast<T>(1.0 - mask);
                    for (int c = 0; c < C; ++c)
                        colmap.at3(c, y, xq) = static_cast<T>(mask) * col[c];
                }
            x = add_const(mul_const(x, keep), colmap);
            touched = true;
        }

        if (cfg_.blur_sigma_max > 0) {
            RngStream r = rng.fork("blur");
            double sigma = r.uniform(0.0, cfg_.blur_sigma_max);
            if (sigma > 0.05) {
                x = gaussian_blur(x, sigma);
                touched = true;
            }
        }

        return touched ? clamp(x, T(-1), T(1)) : x;
    }

    const SyntheticEditConfig& config() const { return cfg_; }

  private:
    SyntheticEditConfig cfg_;
};

// ---- synthetic video proxy ----

struct SyntheticVideoConfig {
    double max_translate = 2.0;     // px, cumulative by the last frame
    double max_rotate_deg = 1.2;
    double max_scale_dev = 0.02;
    double noise_sigma = 0.01;      // per-frame Gaussian noise (contract: <= 0.02)
    double blur_sigma = 0.4;        // mild blur on generated frames
    double photometric_jitter = 0.02;
    // Conditioning resynthesis on frame 0: the frame is blended with content
    // decoded from the frozen semantic embedding of the input, so shifts in
    // that embedding corrupt the first frame the way conditioning drift
    // corrupts a generated video's first frame.
    double conditioning_blend = 0.12;
    double conditioning_amp = 1.5;  // embedding-to-content sensitivity
    std::uint64_t weights_seed = kSemanticStackSeed;

    static SyntheticVideoConfig identity_motion() {
        SyntheticVideoConfig c;
        c.max_translate = c.max_rotate_deg = c.max_scale_dev = 0.0;
        c.blur_sigma = 0.0;
        c.photometric_jitter = 0.0;
        c.conditioning_blend = 0.0;
        return c;
    }

    static SyntheticVideoConfig from_json(const json& j) {
        SyntheticVideoConfig c;
        if (j.contains("max_translate")) c.max_translate = j["max_translate"].get<double>();
        if (j.contains("max_rotate_deg")) c.max_rotate_deg = j["max_rotate_deg"].get<double>();
        if (j.contains("max_scale_dev")) c.max_scale_dev = j["max_scale_dev"].get<double>();
        if (j.contains("noise_sigma")) c.noise_sigma = j["noise_sigma"].get<double>();
        if (j.contains("blur_sigma")) c.blur_sigma = j["blur_sigma"].get<double>();
        if (j.contains("photometric_jitter"))
            c.photometric_jitter = j["photometric_jitter"].get<double>();
        if (j.contains("conditioning_blend"))
            c.conditioning_blend = j["conditioning_blend"].get<double>();
        if (j.contains("conditioning_amp"))
            c.conditioning_amp = j["conditioning_amp"].get<double>();
        if (j.contains("weights_seed")) c.weights_seed = j["weights_seed"].get<std::uint64_t>();
        require(c.noise_sigma <= 0.02, "video proxy: noise sigma above the 0.02 contract");
        return c;
    }
};

namespace proxy_detail {

// Row-major 3x3 homography helper.
struct Mat3 {
    double m[9];

    static Mat3 identity() { return {{1, 0, 0, 0, 1, 0, 0, 0, 1}}; }

    void apply(double x, double y, double& ox, double& oy) const {
        double w = m[6] * x + m[7] * y + m[8];
        ox = (m[0] * x + m[1] * y + m[2]) / w;
        oy = (m[3] * x + m[4] * y + m[5]) / w;
    }

    double det() const {
        return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
               m[2] * (m[3] * m[7] - m[4] * m[6]);
    }

    Mat3 inverse() const {
        double d = det();
        require(std::abs(d) > 1e-9, "Mat3: singular");
        Mat3 r;
        r.m[0] = (m[4] * m[8] - m[5] * m[7]) / d;
        r.m[1] = (m[2] * m[7] - m[1] * m[8]) / d;
        r.m[2] = (m[1] * m[5] - m[2] * m[4]) / d;
        r.m[3] = (m[5] * m[6] - m[3] * m[8]) / d;
        r.m[4] = (m[0] * m[8] - m[2] * m[6]) / d;
        r.m[5] = (m[2] * m[3] - m[0] * m[5]) / d;
        r.m[6] = (m[3] * m[7] - m[4] * m[6]) / d;
        r.m[7] = (m[1] * m[6] - m[0] * m[7]) / d;
        r.m[8] = (m[0] * m[4] - m[1] * m[3]) / d;
        return r;
    }
};

// Similarity transform about the image center: rotation, isotropic scale,
// translation. Maps output coordinates to sample coordinates.
inline Mat3 motion_matrix(double angle_rad, double scale, double tx, double ty, double cx,
                          double cy) {
    double ca = std::cos(angle_rad) * scale, sa = std::sin(angle_rad) * scale;
    Mat3 r = Mat3::identity();
    r.m[0] = ca;
    r.m[1] = -sa;
    r.m[2] = cx - ca * cx + sa * cy - tx;
    r.m[3] = sa;
    r.m[4] = ca;
    r.m[5] = cy - sa * cx - ca * cy - ty;
    return r;
}

}  // namespace proxy_detail

// M key frames from one image. Frame 0 is the input plus conditioning-driven
// resynthesis and photometric jitter; frames t >= 1 are smooth random
// similarity warps of the input with mild blur and per-frame Gaussian noise.
// Exact generation flows are recorded (as return flows to the reference
// grid) for oracle tests. Every path is differentiable in the input image.
template <class T>
class SyntheticVideoProxy final : public VideoProxy<T> {
  public:
    explicit SyntheticVideoProxy(SyntheticVideoConfig cfg = {}) : cfg_(cfg) {
        embedder_ = make_semantic_embedder<T>("semantic.default", cfg_.weights_seed);
        RngStream rng(cfg_.weights_seed, "video_proxy_weights");
        int d = embedder_->dim();
        coarse_ = Dense<T>(frozen_, "vp.coarse", d, 3 * 8 * 8, rng.fork("coarse"),
                           cfg_.conditioning_amp / std::sqrt(static_cast<double>(d)), false);
        fine_ = Dense<T>(frozen_, "vp.fine", d, 3 * 16 * 16, rng.fork("fine"),
                         cfg_.conditioning_amp / std::sqrt(static_cast<double>(d)), false);
        fine_pattern_seed_ = rng.fork("pattern").next_u64();
    }

    bool differentiable() const override { return true; }
    std::string name() const override { return "video.synthetic"; }
    const SyntheticVideoConfig& config() const { return cfg_; }

    VideoResult<T> generate(const Var<T>& img, int frame_count, RngStream rng,
                            const std::string& = "") const override {
        require(frame_count >= 2, "video proxy: frame count must be >= 2");
        const int H = img.val().dim(1), W = img.val().dim(2);
        VideoResult<T> out;

        out.frames.push_back(make_frame0(img, rng.fork("frame0")));

        // one smooth motion trajectory per sequence
        RngStream motion = rng.fork("motion");
        double rot_total = motion.uniform(-1.0, 1.0) * cfg_.max_rotate_deg * M_PI / 180.0;
        double scale_total = 1.0 + motion.uniform(-1.0, 1.0) * cfg_.max_scale_dev;
        double tx_total = motion.uniform(-1.0, 1.0) * cfg_.max_translate;
        double ty_total = motion.uniform(-1.0, 1.0) * cfg_.max_translate;

        for (int t = 1; t < frame_count; ++t) {
            RngStream fr = rng.fork("frame").fork(static_cast<std::uint64_t>(t));
            double phase = static_cast<double>(t) / (frame_count - 1);
            double jit = 0.1 * phase;
            proxy_detail::Mat3 gen;
            for (int attempt = 0;; ++attempt) {
                double angle = rot_total * phase + fr.uniform(-jit, jit) * cfg_.max_rotate_deg * M_PI / 180.0;
                double scale = 1.0 + (scale_total - 1.0) * phase +
                               fr.uniform(-jit, jit) * cfg_.max_scale_dev;
                double tx = tx_total * phase + fr.uniform(-jit, jit) * cfg_.max_translate;
                double ty = ty_total * phase + fr.uniform(-jit, jit) * cfg_.max_translate;
                gen = proxy_detail::motion_matrix(angle, scale, tx, ty, (W - 1) / 2.0,
                                                  (H - 1) / 2.0);
                if (std::abs(gen.det()) > 0.2) break;  // degenerate draw: resample
                require(attempt < 16, "video proxy: could not sample an invertible warp");
            }

            // v_t(q) = img(gen(q)); the return flow to the reference grid is
            // u(p) = gen^{-1}(p) - p.
            TensorT<T> gen_flow({H, W, 2}), ret_flow({H, W, 2});
            proxy_detail::Mat3 inv = gen.inverse();
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    double sx, sy;
                    gen.apply(x, y, sx, sy);
                    gen_flow.at3(y, x, 0) = static_cast<T>(sx - x);
                    gen_flow.at3(y, x, 1) = static_cast<T>(sy - y);
                    inv.apply(x, y, sx, sy);
                    ret_flow.at3(y, x, 0) = static_cast<T>(sx - x);
                    ret_flow.at3(y, x, 1) = static_cast<T>(sy - y);
                }

            Var<T> frame = warp_bilinear(img, Var<T>::constant(gen_flow));
            if (cfg_.blur_sigma > 0) frame = gaussian_blur(frame, cfg_.blur_sigma);
            frame = add_noise(frame, fr.fork("noise"));
            out.frames.push_back(clamp(frame, T(-1), T(1)));
            out.gt_flows.push_back(std::move(ret_flow));
        }
        return out;
    }

  private:
    SyntheticVideoConfig cfg_;
    std::shared_ptr<SemanticEmbedder<T>> embedder_;
    ParamStore<T> frozen_;
    Dense<T> coarse_, fine_;
    std::uint64_t fine_pattern_seed_ = 0;

    Var<T> add_noise(const Var<T>& x, RngStream rng) const {
        if (cfg_.noise_sigma <= 0) return x;
        TensorT<T> n(x.val().shape);
        for (auto& v : n.data) v = static_cast<T>(rng.gauss() * cfg_.noise_sigma);
        return add_const(x, n);
    }

    Var<T> make_frame0(const Var<T>& img, RngStream rng) const {
        const int C = img.val().dim(0), H = img.val().dim(1), W = img.val().dim(2);
        Var<T> x = img;

        if (cfg_.conditioning_blend > 0) {
            Var<T> emb = embedder_->embed(img);
            Var<T> coarse = resize_bilinear(reshape(coarse_(emb), {3, 8, 8}), H, W);
            Var<T> fine = resize_bilinear(reshape(fine_(emb), {3, 16, 16}), H, W);
            // modulate the upsampled fine plane with a fixed high-frequency
            // pattern so embedding shifts disturb all spatial frequencies
            TensorT<T> pattern({3, H, W});
            RngStream prng(fine_pattern_seed_, "pattern");
            for (auto& v : pattern.data) v = static_cast<T>(prng.gauss());
            Var<T> content = tanh_op(add(coarse, mul_const(fine, pattern)));
            T beta = static_cast<T>(cfg_.conditioning_blend);
            x = add(mul_scalar(x, T(1) - beta), mul_scalar(content, beta));
        }

        if (cfg_.photometric_jitter > 0) {
            RngStream r = rng.fork("jitter");
            TensorT<T> gmap({C, H, W}), bmap({C, H, W});
            std::size_t plane = static_cast<std::size_t>(H) * W;
            for (int c = 0; c < C; ++c) {
                T gv = static_cast<T>(
                    r.uniform(1.0 - cfg_.photometric_jitter, 1.0 + cfg_.photometric_jitter));
                T bv = static_cast<T>(
                    r.uniform(-cfg_.photometric_jitter, cfg_.photometric_jitter) * 0.5);
                for (std::size_t i = 0; i < plane; ++i) {
                    gmap[static_cast<std::size_t>(c) * plane + i] = gv;
                    bmap[static_cast<std::size_t>(c) * plane + i] = bv;
                }
            }
            x = add_const(mul_const(x, gmap), bmap);
        }

        Var<T> noisy = add_noise(x, rng.fork("noise"));
        if (noisy.node() == img.node()) return img;  // fully neutral configuration
        return clamp(noisy, T(-1), T(1));
    }
};

// ---- external adapters (evaluation only) ----

// Reads pre-generated frames from <root>/<item_hint>/frame_%03d.png, or runs
// an external command "<command> <input.png> <outdir> <M>" first when one is
// configured.
template <class T>
class ExternalVideoProxy final : public VideoProxy<T> {
  public:
    ExternalVideoProxy(std::string root, std::string command)
        : root_(std::move(root)), command_(std::move(command)) {}

    bool differentiable() const override { return false; }
    std::string name() const override { return "video.external"; }

    VideoResult<T> generate(const Var<T>& img, int frame_count, RngStream,
                            const std::string& item_hint = "") const override {
        require(frame_count >= 2, "video proxy: frame count must be >= 2");
        namespace fs = std::filesystem;
        fs::path dir = fs::path(root_) / (item_hint.empty() ? "frames" : item_hint);
        if (!command_.empty()) {
            fs::create_directories(dir);
            fs::path in = dir / "input.png";
            ImagePlaneT<T> plane(img.val(), Range::unit_signed);
            write_png(in.string(), to_byte(ImagePlaneT<T>(clamp_unit(plane.data), Range::unit_signed)));
            std::string cmd = command_ + " " + in.string() + " " + dir.string() + " " +
                              std::to_string(frame_count);
            int rc = std::system(cmd.c_str());
            if (rc != 0)
                throw Error("video.external: command failed (" + std::to_string(rc) + "): " + cmd);
        }
        VideoResult<T> out;
        for (int t = 0; t < frame_count; ++t) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "frame_%03d.png", t);
            fs::path p = dir / buf;
            if (!fs::exists(p))
                throw Error("video.external: missing frame " + p.string());
            ImagePlaneT<T> frame = to_unit_signed(read_png<T>(p.string()));
            out.frames.push_back(Var<T>::constant(frame.data));
        }
        return out;
    }

  private:
    std::string root_, command_;
};

// Reads a pre-edited image from <root>/<item_hint>.png, or runs
// "<command> <input.png> <output.png>" first.
template <class T>
class ExternalEditProxy final : public EditProxy<T> {
  public:
    ExternalEditProxy(std::string root, std::string command)
        : root_(std::move(root)), command_(std::move(command)) {}

    bool differentiable() const override { return false; }
    std::string name() const override { return "edit.external"; }

    Var<T> apply(const Var<T>& img, RngStream, const std::string& item_hint = "") const override {
        namespace fs = std::filesystem;
        fs::path outp = fs::path(root_) / ((item_hint.empty() ? "edited" : item_hint) + ".png");
        if (!command_.empty()) {
            fs::create_directories(outp.parent_path());
            fs::path in = fs::path(root_) / ((item_hint.empty() ? "edited" : item_hint) + ".in.png");
            ImagePlaneT<T> plane(clamp_unit(img.val()), Range::unit_signed);
            write_png(in.string(), to_byte(plane));
            std::string cmd = command_ + " " + in.string() + " " + outp.string();
            int rc = std::system(cmd.c_str());
            if (rc != 0)
                throw Error("edit.external: command failed (" + std::to_string(rc) + "): " + cmd);
        }
        if (!fs::exists(outp)) throw Error("edit.external: missing edited image " + outp.string());
        return Var<T>::constant(to_unit_signed(read_png<T>(outp.string())).data);
    }

  private:
    std::string root_, command_;
};

// ---- registry ----

template <class T>
std::shared_ptr<EditProxy<T>> make_edit_proxy(const std::string& name, const json& params) {
    if (name == "edit.identity") return std::make_shared<IdentityEditProxy<T>>();
    if (name == "edit.synthetic")
        return std::make_shared<SyntheticEditProxy<T>>(SyntheticEditConfig::from_json(params));
    if (name == "edit.external")
        return std::make_shared<ExternalEditProxy<T>>(
            params.value("dir", std::string(".")), params.value("command", std::string()));
    throw ConfigError("unknown edit proxy: " + name);
}

template <class T>
std::shared_ptr<VideoProxy<T>> make_video_proxy(const std::string& name, const json& params) {
    if (name == "video.identity") return std::make_shared<IdentityVideoProxy<T>>();
    if (name == "video.synthetic")
        return std::make_shared<SyntheticVideoProxy<T>>(SyntheticVideoConfig::from_json(params));
    if (name == "video.external")
        return std::make_shared<ExternalVideoProxy<T>>(
            params.value("dir", std::string(".")), params.value("command", std::string()));
    throw ConfigError("unknown video proxy: " + name);
}

template <class T>
std::shared_ptr<FlowEstimator<T>> make_flow_estimator(const std::string& name) {
    if (name == "flow.block_match") return std::make_shared<BlockMatchFlow<T>>();
    if (name == "flow.zero") return std::make_shared<ZeroFlow<T>>();
    throw ConfigError("unknown flow estimator: " + name);
}

}  // namespace flowmark

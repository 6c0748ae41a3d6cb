#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "flowmark/decoder.hpp"
#include "flowmark/distortion_path.hpp"
#include "test_util.hpp"

using namespace flowmark;

namespace {

template <class T>
TensorT<T> translate_clamped(const TensorT<T>& img, int dx, int dy) {
    const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    TensorT<T> out(img.shape);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                int sy = std::min(H - 1, std::max(0, y + dy));
                int sx = std::min(W - 1, std::max(0, x + dx));
                out.at3(c, y, x) = img.at3(c, sy, sx);
            }
    return out;
}

}  // namespace

TEST_CASE("zero flow is the exact identity") {
    RngStream rng(1, "warp");
    auto img = testutil::random_image<double>(24, 24, rng);
    TensorT<double> zero({24, 24, 2});
    auto out = warp_bilinear(Var<double>::constant(img), Var<double>::constant(zero));
    CHECK(max_abs_diff(out.val(), img) == 0.0);
}

TEST_CASE("constant flow recovers a translated image in the interior") {
    RngStream rng(2, "trans");
    auto img = testutil::random_image<double>(32, 32, rng);
    // content moved one pixel right: moved(y,x) = img(y, x-1)
    auto moved = translate_clamped(img, -1, 0);
    // warping moved with u = (1,0) samples moved(y, x+1) = img(y, x)
    TensorT<double> flow({32, 32, 2});
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) flow.at3(y, x, 0) = 1.0;
    auto warped = warp_bilinear(Var<double>::constant(moved), Var<double>::constant(flow));
    double worst = 0;
    for (int c = 0; c < 3; ++c)
        for (int y = 1; y < 31; ++y)
            for (int x = 1; x < 31; ++x)
                worst = std::max(worst, std::abs(warped.val().at3(c, y, x) - img.at3(c, y, x)));
    CHECK(worst <= 1e-5);
}

TEST_CASE("warping a constant image returns that constant") {
    TensorT<double> flat({3, 16, 16}, 0.37);
    RngStream rng(3, "flow");
    auto flow = testutil::random_tensor<double>({16, 16, 2}, rng, 2.5);
    auto out = warp_bilinear(Var<double>::constant(flat), Var<double>::constant(flow));
    CHECK(max_abs_diff(out.val(), flat) < 1e-12);
}

TEST_CASE("block matching returns an exactly zero field on identical frames") {
    RngStream rng(4, "same");
    auto img = testutil::random_image<double>(64, 64, rng);
    BlockMatchFlow<double> est;
    auto flow = est.estimate(img, img);
    for (auto v : flow.data) CHECK(v == 0.0);
}

TEST_CASE("block matching recovers pure integer translations up to +-4 px") {
    RngStream rng(5, "puretrans");
    auto img = testutil::random_image<double>(64, 64, rng);
    BlockMatchFlow<double> est;
    for (auto [dx, dy] : {std::pair{1, 0}, {0, 1}, {-2, 1}, {3, -2}, {4, 4}, {-4, 0}}) {
        // moved frame: vt(p) = img(p + d); warp(vt, u) samples vt(p + u), so
        // the exact return flow is u = -d
        TensorT<double> vt = translate_clamped(img, dx, dy);
        auto flow = est.estimate(img, vt);
        // interior blocks only (border blocks see clamp padding)
        for (int y = 16; y < 48; ++y)
            for (int x = 16; x < 48; ++x) {
                CHECK(flow.at3(y, x, 0) == doctest::Approx(-dx).epsilon(1e-12));
                CHECK(flow.at3(y, x, 1) == doctest::Approx(-dy).epsilon(1e-12));
            }
    }
}

TEST_CASE("warp_sequence: single frame passes through, shapes preserved") {
    RngStream rng(6, "seq");
    auto img = testutil::random_image<double>(32, 32, rng);
    BlockMatchFlow<double> est;
    FrameSequenceT<double> one({img});
    auto out1 = warp_sequence(one, est);
    CHECK(out1.count() == 1);
    CHECK(max_abs_diff(out1.frames[0], img) == 0.0);

    std::vector<TensorT<double>> four{img, translate_clamped(img, 1, 0), translate_clamped(img, 0, 1),
                                      translate_clamped(img, 1, 1)};
    auto out4 = warp_sequence(FrameSequenceT<double>(four), est);
    CHECK(out4.count() == 4);
    CHECK(max_abs_diff(out4.frames[0], img) == 0.0);  // a_0 == v_0 untouched
    for (const auto& f : out4.frames) CHECK(f.same_shape(img));
}

TEST_CASE("synthetic video proxy: determinism under a fixed stream") {
    SyntheticVideoProxy<double> proxy;
    RngStream rng(7, "det");
    auto img = testutil::random_image<double>(32, 32, rng);
    auto a = proxy.generate(Var<double>::constant(img), 4, RngStream(99, "gen"));
    auto b = proxy.generate(Var<double>::constant(img), 4, RngStream(99, "gen"));
    REQUIRE(a.frames.size() == 4);
    for (std::size_t t = 0; t < 4; ++t)
        CHECK(max_abs_diff(a.frames[t].val(), b.frames[t].val()) == 0.0);
    for (std::size_t t = 0; t + 1 < 4; ++t)
        CHECK(max_abs_diff(a.gt_flows[t], b.gt_flows[t]) == 0.0);
}

TEST_CASE("synthetic video proxy: identity motion leaves frames at the input + noise") {
    SyntheticVideoConfig cfg = SyntheticVideoConfig::identity_motion();
    cfg.noise_sigma = 0.01;
    SyntheticVideoProxy<double> proxy(cfg);
    RngStream rng(8, "idmotion");
    auto img = testutil::random_image<double>(32, 32, rng);
    auto vid = proxy.generate(Var<double>::constant(img), 4, rng.fork("gen"));
    for (const auto& f : vid.frames)
        CHECK(mean_abs_diff(f.val(), img) <= 3.0 * cfg.noise_sigma);
    for (const auto& u : vid.gt_flows)
        for (auto v : u.data) CHECK(v == 0.0);
}

TEST_CASE("synthetic video proxy: ground-truth flows realign frames to the reference") {
    SyntheticVideoConfig cfg;
    cfg.noise_sigma = 0.005;
    cfg.blur_sigma = 0.0;
    cfg.photometric_jitter = 0.0;
    cfg.conditioning_blend = 0.0;
    SyntheticVideoProxy<double> proxy(cfg);
    RngStream rng(9, "oracle");
    auto img = testutil::random_image<double>(64, 64, rng);
    auto vid = proxy.generate(Var<double>::constant(img), 4, rng.fork("gen"));
    const auto& v0 = vid.frames[0].val();
    for (std::size_t t = 1; t < vid.frames.size(); ++t) {
        const auto& flow = vid.gt_flows[t - 1];
        auto warped =
            warp_bilinear(vid.frames[t], Var<double>::constant(flow)).val();
        // valid pixels: the flow samples inside the frame
        double err = 0;
        long n = 0;
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) {
                double sx = x + flow.at3(y, x, 0), sy = y + flow.at3(y, x, 1);
                if (sx < 0 || sy < 0 || sx > 63 || sy > 63) continue;
                for (int c = 0; c < 3; ++c) {
                    err += std::abs(warped.at3(c, y, x) - v0.at3(c, y, x));
                    ++n;
                }
            }
        CHECK(err / n <= 0.02);
    }
}

TEST_CASE("synthetic video proxy: gradient w.r.t. the input image") {
    SyntheticVideoConfig cfg;
    cfg.noise_sigma = 0.005;
    SyntheticVideoProxy<double> proxy(cfg);
    RngStream rng(10, "grad");
    auto img = testutil::random_image<double>(8, 8, rng);
    double err = testutil::grad_check<double>(
        [&](Var<double> v) {
            auto vid = proxy.generate(v, 3, RngStream(42, "gen"));
            Var<double> acc;
            for (const auto& f : vid.frames) {
                Var<double> m = mean_all(mul(f, add_scalar(f, 0.1)));
                acc = acc.valid() ? add(acc, m) : m;
            }
            return acc;
        },
        img, 1e-5);
    CHECK(err <= 1e-3);
}

TEST_CASE("synthetic edit proxy: determinism, identity config, blotch budget") {
    RngStream rng(11, "edit");
    auto img = testutil::random_image<double>(32, 32, rng);

    SyntheticEditProxy<double> proxy;
    auto a = proxy.apply(Var<double>::constant(img), RngStream(5, "e"));
    auto b = proxy.apply(Var<double>::constant(img), RngStream(5, "e"));
    CHECK(max_abs_diff(a.val(), b.val()) == 0.0);
    for (auto v : a.val().data) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }

    SyntheticEditProxy<double> identity(SyntheticEditConfig::identity());
    auto same = identity.apply(Var<double>::constant(img), RngStream(6, "e"));
    CHECK(max_abs_diff(same.val(), img) == 0.0);

    // Monte Carlo: measured blotch area stays within the 10% budget
    TensorT<double> gray({3, 32, 32}, 0.0);
    SyntheticEditConfig blotch_only;
    blotch_only.curve_gain = blotch_only.gain_jitter = blotch_only.bias_jitter = 0;
    blotch_only.blur_sigma_max = 0;
    SyntheticEditProxy<double> bp(blotch_only);
    for (int i = 0; i < 1000; ++i) {
        auto out = bp.apply(Var<double>::constant(gray), RngStream(1000 + i, "mc"));
        long changed = 0;
        for (std::size_t j = 0; j < out.val().numel(); ++j)
            if (out.val()[j] != gray[j]) ++changed;
        double frac = static_cast<double>(changed) / static_cast<double>(out.val().numel());
        CHECK(frac <= 0.10);
    }
}

TEST_CASE("synthetic edit proxy: gradient w.r.t. the image") {
    SyntheticEditConfig cfg;
    cfg.blur_sigma_max = 0.6;
    SyntheticEditProxy<double> proxy(cfg);
    RngStream rng(12, "egrad");
    auto img = testutil::random_image<double>(8, 8, rng);
    for (auto& v : img.data) v *= 0.7;  // keep away from the clamp boundary
    double err = testutil::grad_check<double>(
        [&](Var<double> v) {
            auto e = proxy.apply(v, RngStream(21, "e"));
            return mean_all(mul(e, add_scalar(e, 0.2)));
        },
        img, 1e-5);
    CHECK(err <= 1e-3);
}

TEST_CASE("distortion_forward with identity proxies and zero flow is a passthrough") {
    RngStream rng(13, "idpath");
    auto img = testutil::random_image<double>(32, 32, rng);
    IdentityEditProxy<double> edit;
    IdentityVideoProxy<double> video;
    ZeroFlow<double> flow;
    auto out = distortion_forward(Var<double>::constant(img), edit, video, flow, 4,
                                  RngStream(3, "r"));
    CHECK(max_abs_diff(out.edited.val(), img) == 0.0);
    REQUIRE(out.warped.size() == 4);
    for (const auto& f : out.warped) CHECK(max_abs_diff(f.val(), img) == 0.0);
}

TEST_CASE("distortion_forward outputs stay in range for 100 random inputs") {
    SyntheticEditProxy<double> edit;
    SyntheticVideoProxy<double> video;
    BlockMatchFlow<double> flow;
    RngStream rng(14, "range");
    for (int i = 0; i < 100; ++i) {
        auto img = testutil::random_image<double>(16, 16, rng.fork(static_cast<std::uint64_t>(i)));
        auto out = distortion_forward(Var<double>::constant(img), edit, video, flow, 4,
                                      rng.fork("r").fork(static_cast<std::uint64_t>(i)));
        for (auto v : out.edited.val().data) {
            CHECK(v >= -1.0);
            CHECK(v <= 1.0);
        }
        // warped frames interpolate in-range frames, so they stay in range
        for (const auto& f : out.warped)
            for (auto v : f.val().data) {
                CHECK(v >= -1.0);
                CHECK(v <= 1.0);
            }
    }
}

TEST_CASE("noise-free identity motion: frames equal the reference and decode identically") {
    SyntheticVideoConfig cfg = SyntheticVideoConfig::identity_motion();
    cfg.noise_sigma = 0.0;
    SyntheticVideoProxy<double> proxy(cfg);
    RngStream rng(16, "pure");
    auto img = testutil::random_image<double>(16, 16, rng);
    auto vid = proxy.generate(Var<double>::constant(img), 3, rng.fork("gen"));
    BlockMatchFlow<double> est;
    auto warped = warp_sequence(vid.sequence(), est);
    DecoderConfig dc;
    dc.base_channels = 6;
    dc.dilations = {1, 2};
    dc.target_grid = 4;
    dc.input_resolution = 16;
    Decoder<double> dec(dc, RngStream(8, "dec"));
    auto ref_logits = dec.decode_logits(warped.reference()).val();
    for (const auto& frame : warped.frames) {
        CHECK(max_abs_diff(frame, img) == 0.0);  // a_t == v_0 exactly
        CHECK(max_abs_diff(dec.decode_logits(frame).val(), ref_logits) == 0.0);
    }
}

TEST_CASE("video proxy frame count contract") {
    SyntheticVideoProxy<double> proxy;
    RngStream rng(15, "m");
    auto img = testutil::random_image<double>(16, 16, rng);
    CHECK_THROWS_AS((void)proxy.generate(Var<double>::constant(img), 1, rng), ContractError);
}

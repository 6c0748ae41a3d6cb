#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "flowmark/encoder.hpp"
#include "test_util.hpp"

using namespace flowmark;
using testutil::grad_check;

namespace {

Encoder<double> tiny_encoder(int k = 4, std::uint64_t seed = 5) {
    EncoderConfig cfg;
    cfg.base_channels = 6;
    cfg.message_feature_channels = 4;
    return Encoder<double>(cfg, k, RngStream(seed, "enc"));
}

}  // namespace

TEST_CASE("config invariants") {
    EncoderConfig cfg;
    cfg.scale_min = 0;
    CHECK_THROWS_AS(cfg.validate(), ContractError);
    cfg = EncoderConfig{};
    cfg.unet_depth = 1;
    CHECK_THROWS_AS(cfg.validate(), ContractError);
    cfg = EncoderConfig{};
    cfg.scale_max = 0.1;  // below scale_min
    CHECK_THROWS_AS(cfg.validate(), ContractError);
}

TEST_CASE("lift_message shape contract and determinism") {
    auto enc = tiny_encoder(16, 7);
    RngStream rng(9, "lift");
    BitMessage msg = BitMessage::random(16, rng);
    auto grid = message_to_grid<double>(msg);

    auto f1 = enc.lift_message(grid, 64, 64);
    CHECK(f1.val().dim(0) == 4);
    CHECK(f1.val().dim(1) == 64);
    CHECK(f1.val().dim(2) == 64);

    auto f2 = enc.lift_message(grid, 64, 64);
    CHECK(max_abs_diff(f1.val(), f2.val()) == 0.0);

    CHECK_THROWS_AS((void)enc.lift_message(grid, 2, 2), ContractError);
}

TEST_CASE("one-bit message difference moves the lifted features") {
    auto enc = tiny_encoder(16, 7);
    RngStream rng(11, "bits");
    BitMessage a = BitMessage::random(16, rng);
    BitMessage b = a;
    b.bits[5] ^= 1;
    auto fa = enc.lift_message(message_to_grid<double>(a), 32, 32);
    auto fb = enc.lift_message(message_to_grid<double>(b), 32, 32);
    double l2 = 0;
    for (std::size_t i = 0; i < fa.val().numel(); ++i) {
        double d = fa.val()[i] - fb.val()[i];
        l2 += d * d;
    }
    CHECK(l2 > 0.0);
}

TEST_CASE("scale map: flat mid-gray image gives the constant floor") {
    TensorT<double> gray({3, 16, 16}, 0.0);
    auto map = jnd_scale_map(gray, 0.2, 1.0);
    for (auto v : map.data) CHECK(v == doctest::Approx(0.2));
}

TEST_CASE("scale map: checkerboard exceeds the flat image everywhere inside") {
    TensorT<double> flat({3, 16, 16}, 0.0);
    TensorT<double> checker({3, 16, 16});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) checker.at3(c, y, x) = ((x + y) % 2 == 0) ? 0.5 : -0.5;
    auto mflat = jnd_scale_map(flat, 0.2, 1.0);
    auto mcheck = jnd_scale_map(checker, 0.2, 1.0);
    for (int y = 2; y < 14; ++y)
        for (int x = 2; x < 14; ++x) CHECK(mcheck.at3(0, y, x) > mflat.at3(0, y, x));
}

TEST_CASE("scale map stays within bounds for 100 random images") {
    RngStream rng(13, "sweep");
    for (int i = 0; i < 100; ++i) {
        auto img = testutil::random_image<double>(16, 16, rng.fork(static_cast<std::uint64_t>(i)));
        auto map = jnd_scale_map(img, 0.2, 1.0);
        for (auto v : map.data) {
            CHECK(v >= 0.2);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("untrained embed is exactly the identity (zero-initialized head)") {
    auto enc = tiny_encoder();
    RngStream rng(15, "id");
    auto img = testutil::random_image<double>(16, 16, rng);
    BitMessage msg = BitMessage::random(4, rng);
    auto iw = enc.embed_plain(img, msg);
    CHECK(max_abs_diff(iw, img) == 0.0);
}

TEST_CASE("embed output stays in [-1,1] and respects the modulation bound") {
    auto enc = tiny_encoder();
    // push weights away from zero so the residual is nontrivial
    for (auto& e : enc.params().entries) {
        RngStream r(99, e.name);
        for (auto& v : e.var.mutable_val().data) v += r.gauss() * 0.1;
    }
    RngStream rng(17, "bound");
    auto img = testutil::random_image<double>(16, 16, rng);
    BitMessage msg = BitMessage::random(4, rng);

    Var<double> iv = Var<double>::constant(img);
    auto lifted = enc.lift_message(message_to_grid<double>(msg), 16, 16);
    auto u = enc.unet(iv, lifted);
    auto iw = enc.embed(iv, msg);

    const auto& cfg = enc.config();
    for (std::size_t i = 0; i < iw.val().numel(); ++i) {
        CHECK(iw.val()[i] >= -1.0);
        CHECK(iw.val()[i] <= 1.0);
    }
    // pre-clamp residual bound: |I_w - I| <= scale_max * |U - I| elementwise
    auto scale = jnd_scale_map(img, cfg.scale_min, cfg.scale_max);
    std::size_t plane = static_cast<std::size_t>(16) * 16;
    int violations = 0;
    for (std::size_t i = 0; i < img.numel(); ++i) {
        double raw = u.val()[i] - img[i];
        double pre_clamp = img[i] + scale[i % plane] * raw;
        if (pre_clamp >= -1.0 && pre_clamp <= 1.0) {
            double got = std::abs(iw.val()[i] - img[i]);
            if (got > cfg.scale_max * std::abs(raw) + 1e-12) ++violations;
        }
    }
    CHECK(violations == 0);
}

TEST_CASE("modulation is linear at the scale floor") {
    auto enc = tiny_encoder();
    for (auto& e : enc.params().entries) {
        RngStream r(7, e.name);
        for (auto& v : e.var.mutable_val().data) v += r.gauss() * 0.05;
    }
    TensorT<double> gray({3, 16, 16}, 0.0);  // flat: scale map == scale_min everywhere
    RngStream rng(19, "lin");
    BitMessage msg = BitMessage::random(4, rng);
    Var<double> iv = Var<double>::constant(gray);
    auto lifted = enc.lift_message(message_to_grid<double>(msg), 16, 16);
    auto u = enc.unet(iv, lifted);
    auto iw = enc.embed(iv, msg);
    const double smin = enc.config().scale_min;
    for (std::size_t i = 0; i < gray.numel(); ++i) {
        double expect = gray[i] + smin * (u.val()[i] - gray[i]);
        expect = std::min(1.0, std::max(-1.0, expect));
        CHECK(iw.val()[i] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("embed gradient w.r.t. encoder weights matches finite differences") {
    RngStream rng(21, "grad");
    auto img = testutil::random_image<double>(8, 8, rng);
    BitMessage msg = BitMessage::random(4, rng);

    // Rebuild a fresh encoder per evaluation so a perturbed weight tensor can
    // be injected as the leaf under test.
    auto eval_with = [&](const std::string& target, const TensorT<double>& wval, bool need_grad,
                         TensorT<double>* grad_out) {
        EncoderConfig cfg;
        cfg.base_channels = 6;
        cfg.message_feature_channels = 4;
        Encoder<double> enc(cfg, 4, RngStream(5, "enc"));
        // make the residual path nontrivial
        for (auto& e : enc.params().entries) {
            RngStream r(33, e.name);
            for (auto& v : e.var.mutable_val().data) v += r.gauss() * 0.05;
        }
        Var<double> leaf;
        for (auto& e : enc.params().entries)
            if (e.name == target) {
                e.var.mutable_val() = wval;
                leaf = e.var;
            }
        // scalar probe of the embedded image
        Var<double> iw = enc.embed(Var<double>::constant(img), msg);
        Var<double> probe = mean_all(mul(iw, add_scalar(iw, 0.25)));
        if (need_grad) {
            backward(probe);
            *grad_out = leaf.grad();
        }
        return scalar_value(probe);
    };

    const std::string target = "enc.merge0.w";
    EncoderConfig cfg;
    cfg.base_channels = 6;
    cfg.message_feature_channels = 4;
    Encoder<double> ref(cfg, 4, RngStream(5, "enc"));
    TensorT<double> w0;
    for (auto& e : ref.params().entries)
        if (e.name == target) {
            RngStream r(33, e.name);
            w0 = e.var.val();
            for (auto& v : w0.data) v += r.gauss() * 0.05;
        }

    TensorT<double> analytic;
    eval_with(target, w0, true, &analytic);

    double h = 1e-5, worst = 0;
    RngStream pick(55, "pick");
    for (int trial = 0; trial < 24; ++trial) {
        std::size_t i = static_cast<std::size_t>(pick.uniform_int(static_cast<int>(w0.numel())));
        TensorT<double> wp = w0, wm = w0;
        wp[i] += h;
        wm[i] -= h;
        double fp = eval_with(target, wp, false, nullptr);
        double fm = eval_with(target, wm, false, nullptr);
        double numeric = (fp - fm) / (2 * h);
        double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-8});
        worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
    }
    CHECK(worst < 1e-3);
}

TEST_CASE("embed rejects capacity mismatch") {
    auto enc = tiny_encoder(4);
    RngStream rng(25, "cap");
    auto img = testutil::random_image<double>(16, 16, rng);
    BitMessage msg16 = BitMessage::random(16, rng);
    CHECK_THROWS_AS((void)enc.embed_plain(img, msg16), ContractError);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "flowmark/eval.hpp"
#include "test_util.hpp"

using namespace flowmark;
namespace fs = std::filesystem;

namespace {

// Independent PSNR reference: direct formula.
double psnr_reference(const TensorT<double>& a, const TensorT<double>& b) {
    double mse = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
    mse /= static_cast<double>(a.numel());
    return 10.0 * std::log10(255.0 * 255.0 / mse);
}

// Independent SSIM reference via separable Gaussian filtering of the moment
// maps (different loop structure from the per-window library version).
double ssim_reference(const TensorT<double>& a, const TensorT<double>& b) {
    const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
    std::vector<double> win(11);
    double wsum = 0;
    for (int i = 0; i < 11; ++i) {
        double d = i - 5;
        win[static_cast<std::size_t>(i)] = std::exp(-0.5 * d * d / 2.25);
        wsum += win[static_cast<std::size_t>(i)];
    }
    for (auto& v : win) v /= wsum;
    const double c1 = 6.5025, c2 = 58.5225;  // (0.01*255)^2, (0.03*255)^2

    auto filt = [&](const std::vector<double>& img) {
        std::vector<double> tmp(static_cast<std::size_t>(H) * W, 0.0), out = tmp;
        for (int y = 0; y < H; ++y)
            for (int x = 5; x < W - 5; ++x) {
                double s = 0;
                for (int j = -5; j <= 5; ++j)
                    s += win[static_cast<std::size_t>(j + 5)] * img[static_cast<std::size_t>(y) * W + x + j];
                tmp[static_cast<std::size_t>(y) * W + x] = s;
            }
        for (int y = 5; y < H - 5; ++y)
            for (int x = 0; x < W; ++x) {
                double s = 0;
                for (int j = -5; j <= 5; ++j)
                    s += win[static_cast<std::size_t>(j + 5)] * tmp[static_cast<std::size_t>(y + j) * W + x];
                out[static_cast<std::size_t>(y) * W + x] = s;
            }
        return out;
    };

    double total = 0;
    long count = 0;
    for (int c = 0; c < C; ++c) {
        std::vector<double> ia(static_cast<std::size_t>(H) * W), ib = ia, iaa = ia, ibb = ia, iab = ia;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double va = a.at3(c, y, x), vb = b.at3(c, y, x);
                ia[static_cast<std::size_t>(y) * W + x] = va;
                ib[static_cast<std::size_t>(y) * W + x] = vb;
                iaa[static_cast<std::size_t>(y) * W + x] = va * va;
                ibb[static_cast<std::size_t>(y) * W + x] = vb * vb;
                iab[static_cast<std::size_t>(y) * W + x] = va * vb;
            }
        auto ma = filt(ia), mb = filt(ib), maa = filt(iaa), mbb = filt(ibb), mab = filt(iab);
        for (int y = 5; y < H - 5; ++y)
            for (int x = 5; x < W - 5; ++x) {
                std::size_t i = static_cast<std::size_t>(y) * W + x;
                double va = maa[i] - ma[i] * ma[i];
                double vb = mbb[i] - mb[i] * mb[i];
                double cov = mab[i] - ma[i] * mb[i];
                total += ((2 * ma[i] * mb[i] + c1) * (2 * cov + c2)) /
                         ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2));
                ++count;
            }
    }
    return total / static_cast<double>(count);
}

Corpus<float> make_corpus(int n, int res, std::uint64_t seed) {
    Corpus<float> c;
    RngStream rng(seed, "eval_corpus");
    for (int i = 0; i < n; ++i) {
        c.images.push_back(synth_image<float>(res, res, rng.fork(static_cast<std::uint64_t>(i))));
        c.names.push_back("item" + std::to_string(i));
    }
    return c;
}

RunConfig small_model_config() {
    RunConfig cfg;
    cfg.seed = 7;
    cfg.message_bits = 16;
    cfg.resolution = 32;
    cfg.encoder.base_channels = 8;
    cfg.encoder.message_feature_channels = 4;
    cfg.decoder.base_channels = 8;
    cfg.decoder.dilations = {1, 2};
    cfg.decoder.target_grid = 4;
    cfg.decoder.input_resolution = 32;
    return cfg;
}

}  // namespace

TEST_CASE("every distortion with neutral parameters is the identity") {
    RngStream rng(1, "neutral");
    auto img = testutil::random_image<float>(32, 32, rng);
    for (const auto& name : distortion_names()) {
        auto neutral = neutral_params(name);
        if (!neutral) continue;
        auto d = make_distortion<float>(name, *neutral);
        REQUIRE(d.available());
        RngStream arng(2, name);
        auto out = d.apply_image(img, arng);
        INFO("distortion: " << name);
        CHECK(max_abs_diff(out, img) == 0.0);
    }
}

TEST_CASE("jpeg round trip at Q=50 perturbs but preserves the image") {
    RngStream rng(3, "jpeg");
    auto img = testutil::random_image<float>(32, 32, rng);
    auto d = make_distortion<float>("jpeg", {{"quality", 50}});
    RngStream arng(4, "a");
    auto out = d.apply_image(img, arng);
    CHECK(out.same_shape(img));
    CHECK(max_abs_diff(out, img) > 0.0);
    CHECK(mean_abs_diff(out, img) < 0.2);
    for (auto v : out.data) {
        CHECK(v >= -1.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("unknown distortion name is a config error") {
    CHECK_THROWS_AS((void)make_distortion<float>("solarize", {}), ConfigError);
}

TEST_CASE("h264 and regeneration report explicit skip status when unavailable") {
    auto h264 = make_distortion<float>("h264", {{"crf", 23}});
    if (!h264.available()) CHECK(h264.status.find("skipped") == 0);

    auto regen = make_distortion<float>("regeneration", {});
    CHECK(!regen.available());
    CHECK(regen.status.find("skipped") == 0);
}

TEST_CASE("regeneration hook runs a configured external command") {
    fs::path script = fs::temp_directory_path() / "fm_regen_stub.sh";
    {
        std::ofstream f(script);
        f << "#!/bin/sh\ncp \"$1\" \"$2\"\n";
    }
    fs::permissions(script, fs::perms::owner_all);
    auto d = make_distortion<float>("regeneration", {{"command", script.string()}});
    REQUIRE(d.available());
    RngStream rng(5, "regen");
    auto img = testutil::random_image<float>(16, 16, rng);
    RngStream arng(6, "r");
    auto out = d.apply_image(img, arng);
    // identity command, so only byte quantization remains
    CHECK(mean_abs_diff(out, img) < 1.0 / 127.5);
    fs::remove(script);
}

TEST_CASE("psnr: closed forms and the infinity sentinel") {
    TensorT<double> a({3, 8, 8}, 100.0);
    CHECK(std::isinf(psnr_db(a, a)));
    TensorT<double> b = a;
    for (auto& v : b.data) v += 1.0;  // uniform one-gray-level offset: MSE = 1
    CHECK(psnr_db(a, b) == doctest::Approx(20.0 * std::log10(255.0)).epsilon(1e-9));
    CHECK(psnr_db(a, b) == doctest::Approx(48.13).epsilon(1e-3));
    CHECK(EvalReport::json_psnr(psnr_db(a, a)) == nlohmann::ordered_json("inf"));
}

TEST_CASE("psnr and ssim match independent references on 20 random pairs") {
    RngStream rng(7, "ref");
    for (int trial = 0; trial < 20; ++trial) {
        auto ua = testutil::random_image<double>(24, 24, rng.fork(static_cast<std::uint64_t>(trial * 2)));
        auto ub = testutil::random_image<double>(24, 24, rng.fork(static_cast<std::uint64_t>(trial * 2 + 1)));
        // mix so the pair is correlated (realistic SSIM range)
        for (std::size_t i = 0; i < ub.numel(); ++i) ub[i] = 0.8 * ua[i] + 0.2 * ub[i];
        TensorT<double> a = to_byte(ImagePlaneT<double>(ua, Range::unit_signed)).data;
        TensorT<double> b = to_byte(ImagePlaneT<double>(ub, Range::unit_signed)).data;
        CHECK(std::abs(psnr_db(a, b) - psnr_reference(a, b)) < 1e-3);
        CHECK(std::abs(ssim(a, b) - ssim_reference(a, b)) < 1e-3);
        CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("heatmap: zero map on identical images, single-pixel spike, symmetry") {
    RngStream rng(8, "heat");
    auto img = testutil::random_image<double>(16, 16, rng);
    auto zero = heatmap(img, img);
    for (auto v : zero.data) CHECK(v == 0.0);

    auto changed = img;
    changed.at3(1, 7, 9) += 0.5;
    auto map = heatmap(img, changed);
    CHECK(map.at3(0, 7, 9) == 1.0);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
            if (y != 7 || x != 9) CHECK(map.at3(0, y, x) == 0.0);

    auto other = testutil::random_image<double>(16, 16, rng.fork("o"));
    auto ab = heatmap(img, other);
    auto ba = heatmap(other, img);
    CHECK(max_abs_diff(ab, ba) == 0.0);
    for (auto v : ab.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    // blue at zero change, red at max change
    auto rendered = render_heatmap(map);
    CHECK(rendered.data.at3(2, 0, 0) == 255.0);  // blue channel saturated
    CHECK(rendered.data.at3(0, 0, 0) == 0.0);
    CHECK(rendered.data.at3(0, 7, 9) == 255.0);  // red channel saturated
    CHECK(rendered.data.at3(2, 7, 9) == 0.0);
}

TEST_CASE("resolution scaling reduces to a direct embed at native size") {
    RunConfig cfg = small_model_config();
    auto state = TrainState<float>::make(cfg);
    // non-identity encoder
    for (auto& e : state.encoder->params().entries) {
        RngStream r(17, e.name);
        for (auto& v : e.var.mutable_val().data) v += static_cast<float>(r.gauss() * 0.05);
    }
    RngStream rng(9, "alg1");
    auto unit = testutil::random_image<float>(32, 32, rng);
    ImagePlaneT<float> byte = to_byte(ImagePlaneT<float>(unit, Range::unit_signed));
    BitMessage msg = BitMessage::random(16, rng);

    ImagePlaneT<float> scaled = resolution_scaled_embed(*state.encoder, byte, msg, 32);
    TensorT<float> direct = state.encoder->embed_plain(to_unit_signed(byte).data, msg);
    ImagePlaneT<float> direct_byte = to_byte(ImagePlaneT<float>(direct, Range::unit_signed));
    CHECK(max_abs_diff(scaled.data, direct_byte.data) == 0.0);
}

TEST_CASE("resolution scaling with an identity encoder is an exact passthrough") {
    RunConfig cfg = small_model_config();
    auto state = TrainState<float>::make(cfg);  // untrained: zero residual head
    RngStream rng(10, "alg1id");
    // arbitrary non-native resolution
    auto unit = testutil::random_image<float>(48, 40, rng);
    ImagePlaneT<float> byte = quantize_bytes(to_byte(ImagePlaneT<float>(unit, Range::unit_signed)));
    BitMessage msg = BitMessage::random(16, rng);
    ImagePlaneT<float> out = resolution_scaled_embed(*state.encoder, byte, msg, 32);
    CHECK(max_abs_diff(quantize_bytes(out).data, byte.data) == 0.0);
}

TEST_CASE("evaluate: identity proxy and no attacks reproduce clean accuracy per frame") {
    RunConfig cfg = small_model_config();
    auto state = TrainState<float>::make(cfg);
    for (auto& e : state.encoder->params().entries) {
        RngStream r(21, e.name);
        for (auto& v : e.var.mutable_val().data) v += static_cast<float>(r.gauss() * 0.03);
    }
    Corpus<float> corpus = make_corpus(4, 32, 11);
    IdentityVideoProxy<float> video;
    PerceptualMetric<float> perc(3);
    EvalReport report = evaluate_i2v(*state.encoder, *state.decoder, corpus, video, {}, {}, 4,
                                     123, perc);
    REQUIRE(report.items.size() == 4);
    for (const auto& item : report.items) {
        REQUIRE(item.error.empty());
        CHECK(item.per_frame_acc.size() == 4);
        for (double acc : item.per_frame_acc) CHECK(acc == item.clean_acc);
        CHECK(item.first_frame_acc == item.clean_acc);
        CHECK(item.avg_frame_acc == doctest::Approx(item.clean_acc).epsilon(1e-12));
    }
}

TEST_CASE("evaluate: two seeded runs produce byte-identical reports") {
    RunConfig cfg = small_model_config();
    auto state = TrainState<float>::make(cfg);
    Corpus<float> corpus = make_corpus(3, 32, 13);
    SyntheticVideoProxy<float> video;
    PerceptualMetric<float> perc(3);
    std::vector<AttackSpec> pre{{"jpeg", {{"quality", 50}}}, {"gaussian_noise", {{"sigma", 0.05}}}};
    std::vector<AttackSpec> post{{"gaussian_blur", {{"sigma", 0.6}}}};

    auto run = [&]() {
        EvalReport r = evaluate_i2v(*state.encoder, *state.decoder, corpus, video, pre, post, 4,
                                    999, perc);
        r.config_echo = cfg.to_json();
        return r.to_json().dump(2);
    };
    std::string a = run(), b = run();
    CHECK(a == b);
}

TEST_CASE("evaluate: report echoes attack parameters bit-exactly") {
    RunConfig cfg = small_model_config();
    auto state = TrainState<float>::make(cfg);
    Corpus<float> corpus = make_corpus(2, 32, 15);
    IdentityVideoProxy<float> video;
    PerceptualMetric<float> perc(3);
    std::vector<AttackSpec> pre{{"brightness", {{"s", 1.2}}}, {"contrast", {{"alpha", 1.2}}}};
    std::vector<AttackSpec> post{{"h264", {{"crf", 23}}}};
    EvalReport report =
        evaluate_i2v(*state.encoder, *state.decoder, corpus, video, pre, post, 4, 5, perc);
    CHECK(report.attacks["pre"][0]["name"] == "brightness");
    CHECK(report.attacks["pre"][0]["params"]["s"].get<double>() == 1.2);
    CHECK(report.attacks["pre"][1]["params"]["alpha"].get<double>() == 1.2);
    CHECK(report.attacks["post"][0]["params"]["crf"].get<int>() == 23);
    const std::string status = report.attacks["post"][0]["status"].get<std::string>();
    CHECK((status == "ok" || status.find("skipped") == 0));
}

TEST_CASE("evaluate: per-item proxy failure is recorded and the run continues") {
    RunConfig cfg = small_model_config();
    auto state = TrainState<float>::make(cfg);
    Corpus<float> corpus = make_corpus(2, 32, 17);

    fs::path root = fs::temp_directory_path() / "fm_external_frames";
    fs::remove_all(root);
    // frames exist only for item0
    fs::create_directories(root / "item0");
    RngStream rng(19, "frames");
    for (int t = 0; t < 3; ++t) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "frame_%03d.png", t);
        auto img = testutil::random_image<float>(32, 32, rng.fork(static_cast<std::uint64_t>(t)));
        write_png((root / "item0" / buf).string(),
                  to_byte(ImagePlaneT<float>(img, Range::unit_signed)));
    }
    ExternalVideoProxy<float> video(root.string(), "");
    PerceptualMetric<float> perc(3);
    EvalReport report =
        evaluate_i2v(*state.encoder, *state.decoder, corpus, video, {}, {}, 3, 7, perc);
    REQUIRE(report.items.size() == 2);
    CHECK(report.items[0].error.empty());
    CHECK(report.items[0].per_frame_acc.size() == 3);
    CHECK(!report.items[1].error.empty());
    auto j = report.to_json();
    CHECK(j["summary"]["items_ok"].get<int>() == 1);
    CHECK(j["summary"]["items_failed"].get<int>() == 1);
    fs::remove_all(root);
}

TEST_CASE("external video adapter honors a generation command") {
    fs::path script = fs::temp_directory_path() / "fm_video_stub.sh";
    {
        std::ofstream f(script);
        f << "#!/bin/sh\nin=$1; out=$2; M=$3\ni=0\nwhile [ $i -lt $M ]; do\n"
             "  cp \"$in\" \"$out/$(printf 'frame_%03d.png' $i)\"\n  i=$((i+1))\ndone\n";
    }
    fs::permissions(script, fs::perms::owner_all);
    fs::path root = fs::temp_directory_path() / "fm_external_cmd";
    fs::remove_all(root);
    fs::create_directories(root);

    ExternalVideoProxy<float> video(root.string(), script.string());
    RngStream rng(23, "ext");
    auto img = testutil::random_image<float>(32, 32, rng);
    auto result = video.generate(Var<float>::constant(img), 3, rng, "clip");
    REQUIRE(result.frames.size() == 3);
    for (const auto& f : result.frames)
        CHECK(mean_abs_diff(f.val(), img) < 1.0 / 127.5);  // byte quantization only
    CHECK(!video.differentiable());
    fs::remove_all(root);
    fs::remove(script);
}

TEST_CASE("crop asymmetry: untrained decoder sits at chance with near-zero gap") {
    RunConfig cfg = small_model_config();
    auto state = TrainState<float>::make(cfg);
    Corpus<float> corpus = make_corpus(48, 32, 21);
    auto report = crop_asymmetry(*state.encoder, *state.decoder, corpus, 0.7, 31337);
    CHECK(report.items.size() == 48);
    CHECK(std::abs(report.acc_center - 0.5) < 0.09);
    CHECK(std::abs(report.acc_inverse - 0.5) < 0.09);
    CHECK(report.abs_difference < 0.12);
    for (const auto& item : report.items) {
        CHECK(item.contains("acc_center"));
        CHECK(item.contains("acc_inverse"));
    }
}

TEST_CASE("crop distortions at their neutral parameters keep clean accuracy") {
    RunConfig cfg = small_model_config();
    auto state = TrainState<float>::make(cfg);
    RngStream rng(25, "cropid");
    auto img = testutil::random_image<float>(32, 32, rng);
    BitMessage msg = BitMessage::random(16, rng);
    TensorT<float> iw = quantize_roundtrip(state.encoder->embed_plain(img, msg));
    double clean = bit_accuracy(state.decoder->extract(iw), msg);

    auto center = make_distortion<float>("center_crop", {{"keep", 1.0}});
    auto inverse = make_distortion<float>("inverse_center_crop", {{"keep", 0.0}});
    RngStream r1(1, "c"), r2(2, "i");
    CHECK(bit_accuracy(state.decoder->extract(center.apply_image(iw, r1)), msg) == clean);
    CHECK(bit_accuracy(state.decoder->extract(inverse.apply_image(iw, r2)), msg) == clean);
}

TEST_CASE("csv curve emits even-indexed frames") {
    EvalReport report;
    EvalItemReport item;
    item.name = "x";
    item.per_frame_acc = {1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3};
    item.avg_frame_acc = 0.65;
    report.items.push_back(item);
    std::string csv = report.to_csv_curves();
    CHECK(csv.find("frame_index,mean_bit_accuracy") == 0);
    CHECK(csv.find("\n0,1") != std::string::npos);
    CHECK(csv.find("\n2,0.8") != std::string::npos);
    CHECK(csv.find("\n6,0.4") != std::string::npos);
    CHECK(csv.find("\n1,") == std::string::npos);
    CHECK(csv.find("\n7,") == std::string::npos);
}

#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "flowmark/distortions.hpp"
#include "flowmark/metrics.hpp"
#include "flowmark/training.hpp"

namespace flowmark {

// Embeds at the encoder's native resolution and transplants the bilinearly
// resized residual onto the full-resolution image:
//   I <- I/127.5 - 1; I' = resize(I, native); res' = E(I') - I';
//   res = resize(res', original); I_w = clamp(I + res, -1, 1); back to bytes.
// At the native resolution both resizes are exact identities and the result
// reduces to a direct embed.
template <class T>
ImagePlaneT<T> resolution_scaled_embed(const Encoder<T>& encoder, const ImagePlaneT<T>& img_byte,
                                       const BitMessage& msg, int native_res) {
    require(img_byte.range == Range::byte, "resolution_scaled_embed: input must be byte range");
    const int H = img_byte.height(), W = img_byte.width();
    ImagePlaneT<T> unit = to_unit_signed(img_byte);
    Var<T> full = Var<T>::constant(unit.data);
    Var<T> native = resize_bilinear(full, native_res, native_res);
    Var<T> watermarked = encoder.embed(native, msg);
    Var<T> residual_native = sub(watermarked, native);
    Var<T> residual = resize_bilinear(residual_native, H, W);
    Var<T> out = clamp(add(full, residual), T(-1), T(1));
    return to_byte(ImagePlaneT<T>(out.val(), Range::unit_signed));
}

// Quantize a unit_signed image to the byte grid and come back: the exact
// pixels a decoder would see after the image is written to a PNG.
template <class T>
TensorT<T> quantize_roundtrip(const TensorT<T>& unit) {
    TensorT<T> out = unit;
    for (auto& v : out.data) {
        double b = std::round((static_cast<double>(v) + 1.0) * 127.5);
        b = std::min(255.0, std::max(0.0, b));
        v = static_cast<T>(b / 127.5 - 1.0);
    }
    return out;
}

struct EvalItemReport {
    std::string name;
    std::string message_hex;
    double clean_acc = 0;
    double first_frame_acc = 0;
    std::vector<double> per_frame_acc;
    double avg_frame_acc = 0;
    double psnr = 0;  // +inf when identical
    double ssim_val = 0;
    double perceptual = 0;
    std::string error;  // non-empty when this item failed; the run continues
};

struct EvalReport {
    nlohmann::ordered_json config_echo;
    nlohmann::ordered_json attacks;  // name/params/status, pre and post
    std::vector<EvalItemReport> items;

    static nlohmann::ordered_json json_psnr(double v) {
        if (std::isinf(v)) return "inf";
        return v;
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["version"] = 1;
        j["kind"] = "flowmark_eval_report";
        j["config"] = config_echo;
        j["attacks"] = attacks;
        nlohmann::ordered_json arr = nlohmann::ordered_json::array();
        double sum_clean = 0, sum_avg = 0, sum_first = 0, sum_psnr = 0, sum_ssim = 0, sum_perc = 0;
        int ok = 0;
        bool psnr_inf = false;
        for (const auto& it : items) {
            nlohmann::ordered_json ji;
            ji["name"] = it.name;
            if (!it.error.empty()) {
                ji["error"] = it.error;
                arr.push_back(ji);
                continue;
            }
            ji["message_hex"] = it.message_hex;
            ji["clean_acc"] = it.clean_acc;
            ji["first_frame_acc"] = it.first_frame_acc;
            ji["per_frame_acc"] = it.per_frame_acc;
            ji["avg_frame_acc"] = it.avg_frame_acc;
            ji["psnr_db"] = json_psnr(it.psnr);
            ji["ssim"] = it.ssim_val;
            ji["perceptual"] = it.perceptual;
            arr.push_back(ji);
            sum_clean += it.clean_acc;
            sum_avg += it.avg_frame_acc;
            sum_first += it.first_frame_acc;
            if (std::isinf(it.psnr)) psnr_inf = true;
            else sum_psnr += it.psnr;
            sum_ssim += it.ssim_val;
            sum_perc += it.perceptual;
            ++ok;
        }
        j["items"] = arr;
        nlohmann::ordered_json sum;
        sum["items_ok"] = ok;
        sum["items_failed"] = static_cast<int>(items.size()) - ok;
        if (ok > 0) {
            sum["mean_clean_acc"] = sum_clean / ok;
            sum["mean_first_frame_acc"] = sum_first / ok;
            sum["mean_avg_frame_acc"] = sum_avg / ok;
            sum["mean_psnr_db"] = psnr_inf ? nlohmann::ordered_json("inf")
                                           : nlohmann::ordered_json(sum_psnr / ok);
            sum["mean_ssim"] = sum_ssim / ok;
            sum["mean_perceptual"] = sum_perc / ok;
        }
        j["summary"] = sum;
        return j;
    }

    // Per-frame mean accuracy curve over the corpus, even frame indices only.
    std::string to_csv_curves() const {
        std::size_t frames = 0;
        for (const auto& it : items)
            if (it.error.empty()) frames = std::max(frames, it.per_frame_acc.size());
        std::ostringstream out;
        out << "frame_index,mean_bit_accuracy\n";
        for (std::size_t f = 0; f < frames; f += 2) {
            double s = 0;
            int n = 0;
            for (const auto& it : items)
                if (it.error.empty() && f < it.per_frame_acc.size()) {
                    s += it.per_frame_acc[f];
                    ++n;
                }
            if (n == 0) continue;
            out << f << "," << (s / n) << "\n";
        }
        return out.str();
    }
};

// Per-frame watermark recovery under the attack suite: embed, apply
// pre-attacks, generate frames, apply post-attacks, decode every frame.
// Item failures are recorded in the report and do not stop the run.
template <class T>
EvalReport evaluate_i2v(const Encoder<T>& encoder, const Decoder<T>& decoder,
                        const Corpus<T>& corpus, const VideoProxy<T>& video,
                        const std::vector<AttackSpec>& attacks_pre,
                        const std::vector<AttackSpec>& attacks_post, int frame_count,
                        std::uint64_t seed, const PerceptualMetric<T>& perceptual) {
    require(!corpus.images.empty(), "evaluate_i2v: empty corpus");
    EvalReport report;

    std::vector<Distortion<T>> pre, post;
    nlohmann::ordered_json attacks_echo;
    attacks_echo["pre"] = nlohmann::ordered_json::array();
    attacks_echo["post"] = nlohmann::ordered_json::array();
    for (const auto& a : attacks_pre) {
        pre.push_back(make_distortion<T>(a.name, a.params));
        attacks_echo["pre"].push_back(
            {{"name", a.name}, {"params", pre.back().params}, {"status", pre.back().status}});
    }
    for (const auto& a : attacks_post) {
        post.push_back(make_distortion<T>(a.name, a.params));
        attacks_echo["post"].push_back(
            {{"name", a.name}, {"params", post.back().params}, {"status", post.back().status}});
    }
    report.attacks = attacks_echo;

    const int n = static_cast<int>(corpus.images.size());
    report.items.resize(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        EvalItemReport& item = report.items[static_cast<std::size_t>(i)];
        item.name = corpus.names[static_cast<std::size_t>(i)];
        try {
            RngStream rng = RngStream(seed, "eval").fork("item").fork(static_cast<std::uint64_t>(i));
            RngStream msg_rng = rng.fork("msg");
            BitMessage msg = BitMessage::random(encoder.message_bits(), msg_rng);
            item.message_hex = message_to_hex(msg);

            const TensorT<T>& img = corpus.images[static_cast<std::size_t>(i)];
            TensorT<T> iw = quantize_roundtrip(encoder.embed_plain(img, msg));

            item.clean_acc = bit_accuracy(decoder.extract(iw), msg);
            ImagePlaneT<T> a_plane(img, Range::unit_signed), b_plane(iw, Range::unit_signed);
            ImagePlaneT<T> a_byte = to_byte(a_plane), b_byte = to_byte(b_plane);
            item.psnr = psnr_db(a_byte.data, b_byte.data);
            item.ssim_val = ssim(a_byte.data, b_byte.data);
            item.perceptual = static_cast<double>(scalar_value(
                perceptual.distance(Var<T>::constant(iw), Var<T>::constant(img))));

            TensorT<T> attacked = iw;
            for (auto& d : pre) {
                if (!d.available()) continue;
                RngStream arng = rng.fork("pre").fork(d.name);
                attacked = d.apply_image(attacked, arng);
            }

            FrameSequenceT<T> frames =
                video.generate(Var<T>::constant(attacked), frame_count, rng.fork("video"), item.name)
                    .sequence();
            for (auto& d : post) {
                if (!d.available()) continue;
                RngStream arng = rng.fork("post").fork(d.name);
                frames = d.apply_frames(frames, arng);
            }

            double sum = 0;
            for (int t = 0; t < frames.count(); ++t) {
                double acc = bit_accuracy(decoder.extract(frames.frames[static_cast<std::size_t>(t)]), msg);
                item.per_frame_acc.push_back(acc);
                sum += acc;
            }
            item.avg_frame_acc = sum / frames.count();
            item.first_frame_acc = item.per_frame_acc.front();
        } catch (const std::exception& e) {
            item.error = e.what();
        }
    }
    return report;
}

struct CropAsymmetryReport {
    double acc_center = 0;
    double acc_inverse = 0;
    double abs_difference = 0;
    std::vector<nlohmann::ordered_json> items;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["kind"] = "flowmark_crop_asymmetry";
        j["acc_center"] = acc_center;
        j["acc_inverse"] = acc_inverse;
        j["abs_difference"] = abs_difference;
        j["items"] = items;
        return j;
    }
};

// Center crop (crop + resize back to native) vs inverse center crop (central
// box masked to mid-gray, full frame decoded): per-item accuracies and the
// absolute difference of the means.
template <class T>
CropAsymmetryReport crop_asymmetry(const Encoder<T>& encoder, const Decoder<T>& decoder,
                                   const Corpus<T>& corpus, double keep, std::uint64_t seed) {
    require(!corpus.images.empty(), "crop_asymmetry: empty corpus");
    CropAsymmetryReport report;
    auto center = make_distortion<T>("center_crop", {{"keep", keep}});
    auto inverse = make_distortion<T>("inverse_center_crop", {{"keep", keep}});
    double sum_c = 0, sum_i = 0;
    for (int i = 0; i < static_cast<int>(corpus.images.size()); ++i) {
        RngStream rng = RngStream(seed, "crop").fork("item").fork(static_cast<std::uint64_t>(i));
        RngStream msg_rng = rng.fork("msg");
        BitMessage msg = BitMessage::random(encoder.message_bits(), msg_rng);
        TensorT<T> iw =
            quantize_roundtrip(encoder.embed_plain(corpus.images[static_cast<std::size_t>(i)], msg));
        RngStream crng = rng.fork("center"), irng = rng.fork("inverse");
        double acc_c = bit_accuracy(decoder.extract(center.apply_image(iw, crng)), msg);
        double acc_i = bit_accuracy(decoder.extract(inverse.apply_image(iw, irng)), msg);
        sum_c += acc_c;
        sum_i += acc_i;
        report.items.push_back({{"name", corpus.names[static_cast<std::size_t>(i)]},
                                {"acc_center", acc_c},
                                {"acc_inverse", acc_i}});
    }
    report.acc_center = sum_c / static_cast<double>(corpus.images.size());
    report.acc_inverse = sum_i / static_cast<double>(corpus.images.size());
    report.abs_difference = std::abs(report.acc_center - report.acc_inverse);
    return report;
}

}  // namespace flowmark

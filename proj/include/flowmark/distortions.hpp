#pragma once

#include <jpeglib.h>

#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "flowmark/config.hpp"
#include "flowmark/image_io.hpp"
#include "flowmark/proxies.hpp"

namespace flowmark {

namespace jpeg_detail {

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    std::longjmp(err->jump, 1);
}

// Round-trip an 8-bit RGB buffer through the JPEG codec at the given quality.
inline std::vector<std::uint8_t> roundtrip_rgb(const std::vector<std::uint8_t>& rgb, int h, int w,
                                               int quality) {
    unsigned char* buf = nullptr;
    unsigned long buf_size = 0;
    {
        jpeg_compress_struct cinfo;
        JpegErrorMgr err;
        cinfo.err = jpeg_std_error(&err.pub);
        err.pub.error_exit = jpeg_error_exit;
        if (setjmp(err.jump)) {
            jpeg_destroy_compress(&cinfo);
            if (buf) free(buf);
            throw Error("jpeg: encode failed");
        }
        jpeg_create_compress(&cinfo);
        jpeg_mem_dest(&cinfo, &buf, &buf_size);
        cinfo.image_width = static_cast<JDIMENSION>(w);
        cinfo.image_height = static_cast<JDIMENSION>(h);
        cinfo.input_components = 3;
        cinfo.in_color_space = JCS_RGB;
        jpeg_set_defaults(&cinfo);
        jpeg_set_quality(&cinfo, quality, TRUE);
        jpeg_start_compress(&cinfo, TRUE);
        while (cinfo.next_scanline < cinfo.image_height) {
            const JSAMPLE* row = rgb.data() + static_cast<std::size_t>(cinfo.next_scanline) * w * 3;
            JSAMPROW rows[1] = {const_cast<JSAMPROW>(row)};
            jpeg_write_scanlines(&cinfo, rows, 1);
        }
        jpeg_finish_compress(&cinfo);
        jpeg_destroy_compress(&cinfo);
    }

    std::vector<std::uint8_t> out(static_cast<std::size_t>(h) * w * 3);
    {
        jpeg_decompress_struct dinfo;
        JpegErrorMgr err;
        dinfo.err = jpeg_std_error(&err.pub);
        err.pub.error_exit = jpeg_error_exit;
        if (setjmp(err.jump)) {
            jpeg_destroy_decompress(&dinfo);
            free(buf);
            throw Error("jpeg: decode failed");
        }
        jpeg_create_decompress(&dinfo);
        jpeg_mem_src(&dinfo, buf, buf_size);
        jpeg_read_header(&dinfo, TRUE);
        dinfo.out_color_space = JCS_RGB;
        jpeg_start_decompress(&dinfo);
        while (dinfo.output_scanline < dinfo.output_height) {
            JSAMPROW rows[1] = {out.data() + static_cast<std::size_t>(dinfo.output_scanline) * w * 3};
            jpeg_read_scanlines(&dinfo, rows, 1);
        }
        jpeg_finish_decompress(&dinfo);
        jpeg_destroy_decompress(&dinfo);
    }
    free(buf);
    return out;
}

}  // namespace jpeg_detail

// A named, parameterized attack applied between embedding and decoding.
// Images stay unit_signed in [-1,1]; amplitude parameters are defined on the
// [0,1] scale. Entries whose backing tool is unavailable carry a "skipped"
// status and are reported, never silently dropped.
template <class T>
struct Distortion {
    std::string name;
    nlohmann::ordered_json params;
    std::string status = "ok";
    std::function<TensorT<T>(const TensorT<T>&, RngStream&)> apply_image;
    std::function<FrameSequenceT<T>(const FrameSequenceT<T>&, RngStream&)> apply_frames;

    bool available() const { return status == "ok"; }
};

namespace distort_detail {

template <class T>
TensorT<T> on_01(const TensorT<T>& x, const std::function<double(double)>& f) {
    TensorT<T> out = x;
    for (auto& v : out.data) {
        double y = (static_cast<double>(v) + 1.0) * 0.5;
        y = std::min(1.0, std::max(0.0, f(y)));
        v = static_cast<T>(y * 2.0 - 1.0);
    }
    return out;
}

inline bool have_command(const std::string& probe) {
    std::string cmd = probe + " > /dev/null 2>&1";
    return std::system(cmd.c_str()) == 0;
}

inline bool& ffmpeg_available() {
    static bool avail = have_command("ffmpeg -version");
    return avail;
}

}  // namespace distort_detail

template <class T>
Distortion<T> make_distortion(const std::string& name, const nlohmann::ordered_json& params_in) {
    nlohmann::ordered_json params =
        params_in.is_null() ? nlohmann::ordered_json::object() : params_in;
    Distortion<T> d;
    d.name = name;
    d.params = params;

    if (name == "jpeg") {
        int quality = params.value("quality", 50);
        d.params["quality"] = quality;
        d.apply_image = [quality](const TensorT<T>& x, RngStream&) {
            const int H = x.dim(1), W = x.dim(2);
            std::vector<std::uint8_t> rgb(static_cast<std::size_t>(H) * W * 3);
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx)
                    for (int c = 0; c < 3; ++c) {
                        double b = (static_cast<double>(x.at3(c, y, xx)) + 1.0) * 127.5;
                        rgb[(static_cast<std::size_t>(y) * W + xx) * 3 + static_cast<std::size_t>(c)] =
                            static_cast<std::uint8_t>(std::min(255.0, std::max(0.0, std::round(b))));
                    }
            auto back = jpeg_detail::roundtrip_rgb(rgb, H, W, quality);
            TensorT<T> out = x;
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx)
                    for (int c = 0; c < 3; ++c)
                        out.at3(c, y, xx) = static_cast<T>(
                            back[(static_cast<std::size_t>(y) * W + xx) * 3 + static_cast<std::size_t>(c)] /
                                127.5 - 1.0);
            return out;
        };
    } else if (name == "gaussian_noise") {
        double sigma = params.value("sigma", 0.05);
        d.params["sigma"] = sigma;
        d.apply_image = [sigma](const TensorT<T>& x, RngStream& rng) {
            if (sigma == 0.0) return x;
            RngStream r = rng.fork("noise");
            return distort_detail::on_01<T>(x, [&](double v) { return v + sigma * r.gauss(); });
        };
    } else if (name == "gaussian_blur") {
        double sigma = params.value("sigma", 1.5);
        d.params["sigma"] = sigma;
        d.apply_image = [sigma](const TensorT<T>& x, RngStream&) {
            if (sigma == 0.0) return x;
            return gaussian_blur(Var<T>::constant(x), sigma).val();
        };
    } else if (name == "brightness") {
        double s = params.value("s", 1.2);
        d.params["s"] = s;
        d.apply_image = [s](const TensorT<T>& x, RngStream&) {
            if (s == 1.0) return x;
            return distort_detail::on_01<T>(x, [&](double v) { return v * s; });
        };
    } else if (name == "contrast") {
        double alpha = params.value("alpha", 1.2);
        d.params["alpha"] = alpha;
        d.apply_image = [alpha](const TensorT<T>& x, RngStream&) {
            if (alpha == 1.0) return x;
            return distort_detail::on_01<T>(x, [&](double v) { return (v - 0.5) * alpha + 0.5; });
        };
    } else if (name == "center_crop") {
        double keep = params.value("keep", 0.70);
        d.params["keep"] = keep;
        require(keep > 0.0 && keep <= 1.0, "center_crop: keep must be in (0,1]");
        d.apply_image = [keep](const TensorT<T>& x, RngStream&) {
            if (keep == 1.0) return x;
            const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
            int ch = std::max(1, static_cast<int>(std::lround(keep * H)));
            int cw = std::max(1, static_cast<int>(std::lround(keep * W)));
            int y0 = (H - ch) / 2, x0 = (W - cw) / 2;
            TensorT<T> crop({C, ch, cw});
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < ch; ++y)
                    for (int xx = 0; xx < cw; ++xx) crop.at3(c, y, xx) = x.at3(c, y0 + y, x0 + xx);
            return resize_bilinear(Var<T>::constant(crop), H, W).val();
        };
    } else if (name == "inverse_center_crop") {
        // Keeps only the periphery: the central keep-fraction box is replaced
        // with mid-gray. keep = 0 is the neutral (empty box) configuration.
        double keep = params.value("keep", 0.70);
        d.params["keep"] = keep;
        require(keep >= 0.0 && keep <= 1.0, "inverse_center_crop: keep must be in [0,1]");
        d.apply_image = [keep](const TensorT<T>& x, RngStream&) {
            if (keep == 0.0) return x;
            const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
            int ch = static_cast<int>(std::lround(keep * H));
            int cw = static_cast<int>(std::lround(keep * W));
            int y0 = (H - ch) / 2, x0 = (W - cw) / 2;
            TensorT<T> out = x;
            for (int c = 0; c < C; ++c)
                for (int y = y0; y < y0 + ch; ++y)
                    for (int xx = x0; xx < x0 + cw; ++xx) out.at3(c, y, xx) = T(0);  // mid-gray
            return out;
        };
    } else if (name == "h264") {
        int crf = params.value("crf", 23);
        d.params["crf"] = crf;
        if (!distort_detail::ffmpeg_available()) {
            d.status = "skipped: ffmpeg not found";
        } else {
            d.apply_frames = [crf](const FrameSequenceT<T>& seq, RngStream& rng) {
                namespace fs = std::filesystem;
                fs::path dir = fs::temp_directory_path() /
                               ("fm_h264_" + std::to_string(rng.fork("dir").next_u64() % 1000000));
                fs::create_directories(dir);
                for (int t = 0; t < seq.count(); ++t) {
                    char buf[32];
                    std::snprintf(buf, sizeof(buf), "in_%03d.png", t);
                    ImagePlaneT<T> plane(clamp_unit(seq.frames[static_cast<std::size_t>(t)]),
                                         Range::unit_signed);
                    write_png((dir / buf).string(), to_byte(plane));
                }
                std::string enc = "ffmpeg -y -loglevel error -framerate 8 -i " +
                                  (dir / "in_%03d.png").string() +
                                  " -c:v libx264 -pix_fmt yuv420p -crf " + std::to_string(crf) +
                                  " " + (dir / "clip.mp4").string();
                if (std::system(enc.c_str()) != 0) throw Error("h264: ffmpeg encode failed");
                std::string dec = "ffmpeg -y -loglevel error -i " + (dir / "clip.mp4").string() +
                                  " " + (dir / "out_%03d.png").string();
                if (std::system(dec.c_str()) != 0) throw Error("h264: ffmpeg decode failed");
                std::vector<TensorT<T>> frames;
                for (int t = 0; t < seq.count(); ++t) {
                    char buf[32];
                    std::snprintf(buf, sizeof(buf), "out_%03d.png", t + 1);  // ffmpeg counts from 1
                    frames.push_back(to_unit_signed(read_png<T>((dir / buf).string())).data);
                }
                fs::remove_all(dir);
                return FrameSequenceT<T>(std::move(frames));
            };
        }
    } else if (name == "regeneration") {
        // Hook for an external stochastic-regeneration model:
        // "<command> <in.png> <out.png> <noise_steps>".
        int noise_steps = params.value("noise_steps", 150);
        std::string command = params.value("command", std::string());
        d.params["noise_steps"] = noise_steps;
        d.params["command"] = command;
        if (command.empty()) {
            d.status = "skipped: no external regeneration command configured";
        } else {
            d.apply_image = [command, noise_steps](const TensorT<T>& x, RngStream& rng) {
                namespace fs = std::filesystem;
                fs::path dir = fs::temp_directory_path() /
                               ("fm_regen_" + std::to_string(rng.fork("dir").next_u64() % 1000000));
                fs::create_directories(dir);
                fs::path in = dir / "in.png", out = dir / "out.png";
                write_png(in.string(), to_byte(ImagePlaneT<T>(clamp_unit(x), Range::unit_signed)));
                std::string cmd = command + " " + in.string() + " " + out.string() + " " +
                                  std::to_string(noise_steps);
                if (std::system(cmd.c_str()) != 0)
                    throw Error("regeneration: external command failed: " + cmd);
                TensorT<T> res = to_unit_signed(read_png<T>(out.string())).data;
                fs::remove_all(dir);
                return res;
            };
        }
    } else {
        throw ConfigError("unknown distortion: " + name);
    }

    // Frame-sequence application defaults to per-frame image application.
    if (!d.apply_frames && d.apply_image) {
        auto apply_image = d.apply_image;
        d.apply_frames = [apply_image](const FrameSequenceT<T>& seq, RngStream& rng) {
            std::vector<TensorT<T>> frames;
            frames.reserve(seq.frames.size());
            for (std::size_t t = 0; t < seq.frames.size(); ++t) {
                RngStream fr = rng.fork("frame").fork(static_cast<std::uint64_t>(t));
                frames.push_back(apply_image(seq.frames[t], fr));
            }
            return FrameSequenceT<T>(std::move(frames));
        };
    }
    return d;
}

// Neutral parameterization for every distortion that has one (the identity
// configuration); nullopt for codec-style attacks without a neutral point.
inline std::optional<nlohmann::ordered_json> neutral_params(const std::string& name) {
    if (name == "gaussian_noise") return nlohmann::ordered_json{{"sigma", 0.0}};
    if (name == "gaussian_blur") return nlohmann::ordered_json{{"sigma", 0.0}};
    if (name == "brightness") return nlohmann::ordered_json{{"s", 1.0}};
    if (name == "contrast") return nlohmann::ordered_json{{"alpha", 1.0}};
    if (name == "center_crop") return nlohmann::ordered_json{{"keep", 1.0}};
    if (name == "inverse_center_crop") return nlohmann::ordered_json{{"keep", 0.0}};
    return std::nullopt;
}

inline const std::vector<std::string>& distortion_names() {
    static const std::vector<std::string> names{
        "jpeg",        "gaussian_noise", "gaussian_blur",       "brightness",
        "contrast",    "center_crop",    "inverse_center_crop", "h264",
        "regeneration"};
    return names;
}

}  // namespace flowmark

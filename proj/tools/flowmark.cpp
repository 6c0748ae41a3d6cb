// Command-line surface: embed, extract, train, evaluate, heatmap.
// Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "flowmark/flowmark.hpp"

namespace fs = std::filesystem;
using namespace flowmark;

using Real = float;

namespace {

std::optional<std::uint64_t> env_seed() {
    const char* s = std::getenv("FLOWMARK_SEED");
    if (!s || !*s) return std::nullopt;
    return std::strtoull(s, nullptr, 10);
}

std::uint64_t resolve_seed(const CLI::Option* seed_opt, std::uint64_t flag_value,
                           std::uint64_t fallback) {
    if (seed_opt->count() > 0) return flag_value;
    if (auto e = env_seed()) return *e;
    return fallback;
}

BitMessage parse_message(const std::string& hex, const std::string& bits, int expected_k) {
    if (hex.empty() == bits.empty())
        throw ConfigError("exactly one of --message (hex) or --bits must be given");
    int got_k = hex.empty() ? static_cast<int>(bits.size()) : static_cast<int>(hex.size()) * 4;
    if (got_k != expected_k)
        throw ConfigError("message capacity mismatch: got " + std::to_string(got_k) +
                          " bits, checkpoint expects " + std::to_string(expected_k));
    try {
        return hex.empty() ? message_from_bitstring(bits) : message_from_hex(hex);
    } catch (const ContractError& e) {
        throw ConfigError(std::string("invalid message: ") + e.what());
    }
}

int cmd_embed(const std::string& in, const std::string& hex, const std::string& bits,
              const std::string& ckpt, const std::string& out) {
    Codec<Real> codec = Codec<Real>::load(ckpt);
    BitMessage msg = parse_message(hex, bits, codec.message_bits);
    ImagePlaneT<Real> img = read_png<Real>(in);

    ImagePlaneT<Real> watermarked_byte;
    if (img.height() == codec.resolution && img.width() == codec.resolution) {
        std::cerr << "embed_path: native\n";
        TensorT<Real> unit = to_unit_signed(img).data;
        TensorT<Real> iw = codec.encoder->embed_plain(unit, msg);
        watermarked_byte = to_byte(ImagePlaneT<Real>(iw, Range::unit_signed));
    } else {
        std::cerr << "embed_path: resolution_scaled (input " << img.width() << "x" << img.height()
                  << ", native " << codec.resolution << ")\n";
        watermarked_byte = resolution_scaled_embed(*codec.encoder, img, msg, codec.resolution);
    }
    write_png(out, watermarked_byte);

    ImagePlaneT<Real> written = quantize_bytes(watermarked_byte);
    double p = psnr_db(img.data, written.data);
    if (std::isinf(p))
        std::cout << "psnr_db: inf\n";
    else
        std::cout << "psnr_db: " << p << "\n";
    return 0;
}

int cmd_extract(const std::string& in, const std::string& ckpt) {
    Codec<Real> codec = Codec<Real>::load(ckpt);
    ImagePlaneT<Real> img = read_png<Real>(in);
    TensorT<Real> unit = to_unit_signed(img).data;
    if (img.height() != codec.resolution || img.width() != codec.resolution) {
        std::cerr << "warning: resizing " << img.width() << "x" << img.height()
                  << " input to decoder native " << codec.resolution << "x" << codec.resolution
                  << "\n";
        unit = resize_bilinear(Var<Real>::constant(unit), codec.resolution, codec.resolution).val();
    }
    TensorT<Real> logits = codec.decoder->decode_logits(unit).val();
    BitMessage msg = Decoder<Real>::logits_to_message(logits);
    if (msg.k % 4 == 0) std::cout << "message_hex: " << message_to_hex(msg) << "\n";
    std::cout << "bits: " << message_to_bitstring(msg) << "\n";
    std::cout << "confidences:";
    for (double c : Decoder<Real>::confidences(logits)) std::cout << " " << c;
    std::cout << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& resume,
              const CLI::Option* seed_opt, std::uint64_t seed_flag) {
    RunConfig cfg = RunConfig::load(config_path);
    cfg.seed = resolve_seed(seed_opt, seed_flag, cfg.seed);
    TrainResult result = train<Real>(cfg, resume, &std::cerr);
    std::cout << "final_checkpoint: " << result.final_checkpoint << "\n";
    std::cout << "telemetry: " << result.telemetry_path << "\n";
    std::cout << "metrics: " << result.metrics_path << "\n";
    return 0;
}

int cmd_evaluate(const std::string& config_path, const CLI::Option* seed_opt,
                 std::uint64_t seed_flag) {
    RunConfig cfg = RunConfig::load(config_path);
    cfg.seed = resolve_seed(seed_opt, seed_flag, cfg.seed);
    if (cfg.checkpoint_path.empty())
        throw ConfigError("config: paths.checkpoint must name a trained checkpoint for evaluate");

    Codec<Real> codec = Codec<Real>::load(cfg.checkpoint_path);
    Corpus<Real> corpus = load_corpus<Real>(cfg.corpus_dir, codec.resolution);
    auto video = make_video_proxy<Real>(cfg.video_proxy, cfg.video_params);
    PerceptualMetric<Real> perceptual(kPerceptualStackSeed);

    EvalReport report = evaluate_i2v(*codec.encoder, *codec.decoder, corpus, *video,
                                     cfg.attacks_pre, cfg.attacks_post, cfg.eval_frames, cfg.seed,
                                     perceptual);
    report.config_echo = cfg.to_json();

    fs::create_directories(cfg.out_dir);
    std::string report_path = (fs::path(cfg.out_dir) / "report.json").string();
    std::string curves_path = (fs::path(cfg.out_dir) / "curves.csv").string();
    {
        std::ofstream f(report_path, std::ios::trunc);
        f << report.to_json().dump(2) << "\n";
    }
    {
        std::ofstream f(curves_path, std::ios::trunc);
        f << report.to_csv_curves();
    }

    CropAsymmetryReport crop =
        crop_asymmetry(*codec.encoder, *codec.decoder, corpus, cfg.crop_keep, cfg.seed);
    std::string crop_path = (fs::path(cfg.out_dir) / "crop_asymmetry.json").string();
    {
        std::ofstream f(crop_path, std::ios::trunc);
        f << crop.to_json().dump(2) << "\n";
    }

    std::cout << "report: " << report_path << "\n";
    std::cout << "curves: " << curves_path << "\n";
    std::cout << "crop_asymmetry: " << crop_path << "\n";
    return 0;
}

int cmd_heatmap(const std::string& orig, const std::string& wm, const std::string& out) {
    ImagePlaneT<Real> a = read_png<Real>(orig);
    ImagePlaneT<Real> b = read_png<Real>(wm);
    TensorT<Real> map = heatmap(a.data, b.data);
    write_png(out, render_heatmap(map));
    std::cout << "heatmap: " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"flowmark: blind image watermarking robust to editing and image-to-video generation"};
    app.require_subcommand(1);

    std::string in, out, hex, bits, ckpt, config_path, resume, orig, wm;
    std::uint64_t seed_flag = 0;

    auto* embed = app.add_subcommand("embed", "embed a message into an image");
    embed->add_option("--in", in, "input PNG")->required();
    embed->add_option("--message", hex, "message as hex (k/4 chars)");
    embed->add_option("--bits", bits, "message as a raw bit string");
    embed->add_option("--checkpoint", ckpt, "trained checkpoint")->required();
    embed->add_option("--out", out, "output PNG")->required();

    auto* extract = app.add_subcommand("extract", "recover the message from an image");
    extract->add_option("--in", in, "input PNG")->required();
    extract->add_option("--checkpoint", ckpt, "trained checkpoint")->required();

    auto* train_cmd = app.add_subcommand("train", "train encoder/decoder from a config");
    train_cmd->add_option("--config", config_path, "run config JSON")->required();
    train_cmd->add_option("--resume", resume, "resume from checkpoint");
    auto* train_seed = train_cmd->add_option("--seed", seed_flag, "seed override");

    auto* eval_cmd = app.add_subcommand("evaluate", "run the attack/evaluation suite");
    eval_cmd->add_option("--config", config_path, "run config JSON")->required();
    auto* eval_seed = eval_cmd->add_option("--seed", seed_flag, "seed override");

    auto* heat = app.add_subcommand("heatmap", "render the difference heatmap of two images");
    heat->add_option("--orig", orig, "original PNG")->required();
    heat->add_option("--wm", wm, "watermarked PNG")->required();
    heat->add_option("--out", out, "output heatmap PNG")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (app.got_subcommand(embed)) return cmd_embed(in, hex, bits, ckpt, out);
        if (app.got_subcommand(extract)) return cmd_extract(in, ckpt);
        if (app.got_subcommand(train_cmd)) return cmd_train(config_path, resume, train_seed, seed_flag);
        if (app.got_subcommand(eval_cmd)) return cmd_evaluate(config_path, eval_seed, seed_flag);
        if (app.got_subcommand(heat)) return cmd_heatmap(orig, wm, out);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "flowmark/checkpoint.hpp"
#include "flowmark/config.hpp"
#include "flowmark/distortion_path.hpp"
#include "flowmark/image_io.hpp"
#include "flowmark/losses.hpp"

namespace flowmark {

struct TrainAbort : Error {
    TrainAbort(const std::string& msg, std::string ckpt)
        : Error(msg), last_good_checkpoint(std::move(ckpt)) {}
    std::string last_good_checkpoint;  // empty if nothing was saved yet
};

// In-memory training corpus: images at native resolution, unit_signed.
template <class T>
struct Corpus {
    std::vector<TensorT<T>> images;
    std::vector<std::string> names;
};

template <class T>
Corpus<T> load_corpus(const std::string& dir, int resolution) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw Error("corpus: not a directory: " + dir);
    std::vector<std::string> paths;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".png") paths.push_back(e.path().string());
    }
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) throw Error("corpus: no .png images in " + dir);
    Corpus<T> out;
    for (const auto& p : paths) {
        ImagePlaneT<T> img = to_unit_signed(read_png<T>(p));
        TensorT<T> t = img.data;
        if (t.dim(1) != resolution || t.dim(2) != resolution)
            t = resize_bilinear(Var<T>::constant(t), resolution, resolution).val();
        out.images.push_back(clamp_unit(t));
        out.names.push_back(fs::path(p).stem().string());
    }
    return out;
}

// All mutable training state: the three networks, the frozen surrogate
// stacks, and one optimizer per party.
template <class T>
struct TrainState {
    EncoderConfig encoder_cfg;
    DecoderConfig decoder_cfg;
    int message_bits = 0;
    int resolution = 0;
    std::uint64_t seed = 0;

    std::unique_ptr<Encoder<T>> encoder;
    std::unique_ptr<Decoder<T>> decoder;
    std::unique_ptr<PatchAdversary<T>> adversary;
    std::unique_ptr<LatentMapper<T>> latent;
    std::unique_ptr<PerceptualMetric<T>> perceptual;
    std::shared_ptr<SemanticEmbedder<T>> embedder;

    Adam<T> opt_main, opt_adv;
    long step = 0;

    static TrainState make(const RunConfig& cfg) {
        TrainState s;
        s.encoder_cfg = cfg.encoder;
        s.decoder_cfg = cfg.decoder;
        s.decoder_cfg.target_grid = BitMessage::grid_side(cfg.message_bits);
        s.decoder_cfg.input_resolution = cfg.resolution;
        s.message_bits = cfg.message_bits;
        s.resolution = cfg.resolution;
        s.seed = cfg.seed;

        RngStream init(cfg.seed, "model_init");
        s.encoder = std::make_unique<Encoder<T>>(s.encoder_cfg, cfg.message_bits, init.fork("encoder"));
        s.decoder = std::make_unique<Decoder<T>>(s.decoder_cfg, init.fork("decoder"));
        s.adversary = std::make_unique<PatchAdversary<T>>(init.fork("adversary"));
        s.latent = std::make_unique<LatentMapper<T>>(kLatentStackSeed);
        s.perceptual = std::make_unique<PerceptualMetric<T>>(kPerceptualStackSeed);
        s.embedder = make_semantic_embedder<T>("semantic.default", kSemanticStackSeed);

        s.opt_main = Adam<T>(cfg.schedule.lr_main);
        s.opt_main.attach(s.encoder->params());
        s.opt_main.attach(s.decoder->params());
        s.opt_adv = Adam<T>(cfg.schedule.lr_adv);
        s.opt_adv.attach(s.adversary->params());
        return s;
    }

    CheckpointData to_checkpoint(bool with_optimizer = true) const {
        CheckpointData ck;
        ck.header["kind"] = "flowmark_checkpoint";
        ck.header["message_bits"] = message_bits;
        ck.header["resolution"] = resolution;
        ck.header["seed"] = seed;
        ck.header["step"] = step;
        ck.header["encoder_config"] = {{"base_channels", encoder_cfg.base_channels},
                                       {"unet_depth", encoder_cfg.unet_depth},
                                       {"message_feature_channels", encoder_cfg.message_feature_channels},
                                       {"scale_min", encoder_cfg.scale_min},
                                       {"scale_max", encoder_cfg.scale_max}};
        ck.header["decoder_config"] = {{"base_channels", decoder_cfg.base_channels},
                                       {"dilations", decoder_cfg.dilations}};
        auto dump_params = [&](const ParamStore<T>& ps) {
            for (const auto& e : ps.entries)
                ck.tensors.emplace_back(e.name, e.var.val().template cast<float>());
        };
        dump_params(encoder->params());
        dump_params(decoder->params());
        dump_params(adversary->params());
        if (with_optimizer) {
            ck.header["optimizer"] = {{"t_main", opt_main.step_count()}, {"t_adv", opt_adv.step_count()}};
            auto dump_opt = [&](Adam<T>& opt, const std::string& prefix) {
                for (auto& [name, mv] : opt.state()) {
                    ck.tensors.emplace_back(prefix + ".m." + name, mv.first->template cast<float>());
                    ck.tensors.emplace_back(prefix + ".v." + name, mv.second->template cast<float>());
                }
            };
            dump_opt(const_cast<Adam<T>&>(opt_main), "adam_main");
            dump_opt(const_cast<Adam<T>&>(opt_adv), "adam_adv");
        }
        return ck;
    }

    static TrainState from_checkpoint(const CheckpointData& ck, const RunConfig& base) {
        RunConfig cfg = base;
        cfg.message_bits = ck.header.at("message_bits").get<int>();
        cfg.resolution = ck.header.at("resolution").get<int>();
        cfg.seed = ck.header.at("seed").get<std::uint64_t>();
        const auto& ec = ck.header.at("encoder_config");
        cfg.encoder.base_channels = ec.at("base_channels").get<int>();
        cfg.encoder.unet_depth = ec.at("unet_depth").get<int>();
        cfg.encoder.message_feature_channels = ec.at("message_feature_channels").get<int>();
        cfg.encoder.scale_min = ec.at("scale_min").get<double>();
        cfg.encoder.scale_max = ec.at("scale_max").get<double>();
        const auto& dc = ck.header.at("decoder_config");
        cfg.decoder.base_channels = dc.at("base_channels").get<int>();
        cfg.decoder.dilations = dc.at("dilations").get<std::vector<int>>();

        TrainState s = make(cfg);
        s.step = ck.header.at("step").get<long>();
        auto load_params = [&](ParamStore<T>& ps) {
            for (auto& e : ps.entries) {
                const TensorT<float>& src = ck.tensor(e.name);
                require(src.shape == e.var.val().shape, "checkpoint: shape mismatch for " + e.name);
                e.var.mutable_val() = src.template cast<T>();
            }
        };
        load_params(s.encoder->params());
        load_params(s.decoder->params());
        load_params(s.adversary->params());
        if (ck.header.contains("optimizer")) {
            s.opt_main.set_step_count(ck.header.at("optimizer").at("t_main").get<long>());
            s.opt_adv.set_step_count(ck.header.at("optimizer").at("t_adv").get<long>());
            auto load_opt = [&](Adam<T>& opt, const std::string& prefix) {
                for (auto& [name, mv] : opt.state()) {
                    if (!ck.has_tensor(prefix + ".m." + name)) continue;
                    *mv.first = ck.tensor(prefix + ".m." + name).template cast<T>();
                    *mv.second = ck.tensor(prefix + ".v." + name).template cast<T>();
                }
            };
            load_opt(s.opt_main, "adam_main");
            load_opt(s.opt_adv, "adam_adv");
        }
        return s;
    }
};

// Inference-only view of a checkpoint (CLI embed/extract, evaluation).
template <class T>
struct Codec {
    std::unique_ptr<Encoder<T>> encoder;
    std::unique_ptr<Decoder<T>> decoder;
    int message_bits = 0;
    int resolution = 0;

    static Codec load(const std::string& path) {
        CheckpointData ck = load_checkpoint(path);
        RunConfig base;
        TrainState<T> s = TrainState<T>::from_checkpoint(ck, base);
        Codec c;
        c.encoder = std::move(s.encoder);
        c.decoder = std::move(s.decoder);
        c.message_bits = s.message_bits;
        c.resolution = s.resolution;
        return c;
    }
};

// One optimization step: a generator update on the total objective followed
// by one adversary update. Returns the telemetry record for the step.
template <class T>
nlohmann::ordered_json train_step(TrainState<T>& state, const Corpus<T>& corpus,
                                  const RunConfig& cfg, const EditProxy<T>& edit,
                                  const VideoProxy<T>& video, const FlowEstimator<T>& estimator,
                                  const std::string& last_checkpoint) {
    require(!corpus.images.empty(), "train_step: empty corpus");
    require(edit.differentiable(), "train_step: edit proxy must be differentiable for training");
    require(video.differentiable(), "train_step: video proxy must be differentiable for training");

    auto t0 = std::chrono::steady_clock::now();
    const long t = state.step;
    const bool video_active = t >= cfg.schedule.video_branch_start;
    RngStream step_rng = RngStream(cfg.seed, "train").fork("step").fork(static_cast<std::uint64_t>(t));

    const int B = cfg.schedule.batch_size;
    Var<T> batch_total;
    double acc_enc = 0, acc_pixel = 0, acc_dec = 0, acc_msg = 0, acc_temporal = 0, acc_advg = 0;
    std::vector<Var<T>> originals, watermarked_detached;

    for (int i = 0; i < B; ++i) {
        RngStream item_rng = step_rng.fork("item").fork(static_cast<std::uint64_t>(i));
        int idx = item_rng.fork("pick").uniform_int(static_cast<int>(corpus.images.size()));
        Var<T> img = Var<T>::constant(corpus.images[static_cast<std::size_t>(idx)]);
        RngStream msg_rng = item_rng.fork("msg");
        BitMessage msg = BitMessage::random(state.message_bits, msg_rng);

        Var<T> iw = state.encoder->embed(img, msg);

        Var<T> enc_l = encoder_loss(img, iw, cfg.weights, *state.latent, *state.perceptual,
                                    *state.embedder);
        Var<T> pixel_l = mse(iw, img);

        Var<T> edited, temporal_l;
        std::vector<Var<T>> warped_probs;
        if (video_active) {
            DistortionPathOutput<T> dist = distortion_forward(
                iw, edit, video, estimator, cfg.schedule.frames, item_rng.fork("distort"));
            edited = dist.edited;
            std::vector<Var<T>> frame_logits;
            frame_logits.reserve(dist.warped.size());
            for (const auto& f : dist.warped) frame_logits.push_back(state.decoder->decode_logits(f));
            if (cfg.schedule.temporal_loss) temporal_l = temporal_consistency_loss(frame_logits);
            for (const auto& lg : frame_logits) warped_probs.push_back(probabilities(lg));
        } else {
            edited = edit.apply(iw, item_rng.fork("distort").fork("edit"));
        }

        Var<T> p_iw = probabilities(state.decoder->decode_logits(iw));
        Var<T> p_edit = probabilities(state.decoder->decode_logits(edited));
        Var<T> msg_l = message_loss(warped_probs, p_iw, p_edit, msg);
        Var<T> dec_l = (video_active && cfg.schedule.temporal_loss) ? decoder_loss(temporal_l, msg_l) : msg_l;

        Var<T> advg_l = adversarial_generator_loss(iw, *state.adversary);
        Var<T> item_total = total_loss(enc_l, dec_l, advg_l, cfg.weights);

        batch_total = batch_total.valid() ? add(batch_total, item_total) : item_total;
        acc_enc += static_cast<double>(scalar_value(enc_l));
        acc_pixel += static_cast<double>(scalar_value(pixel_l));
        acc_dec += static_cast<double>(scalar_value(dec_l));
        acc_msg += static_cast<double>(scalar_value(msg_l));
        if (video_active && cfg.schedule.temporal_loss)
            acc_temporal += static_cast<double>(scalar_value(temporal_l));
        acc_advg += static_cast<double>(scalar_value(advg_l));

        originals.push_back(img);
        watermarked_detached.push_back(iw.detach());
    }

    batch_total = mul_scalar(batch_total, T(1) / static_cast<T>(B));
    double total_val = static_cast<double>(scalar_value(batch_total));
    if (!std::isfinite(total_val))
        throw TrainAbort("train: non-finite loss at step " + std::to_string(t) +
                             (last_checkpoint.empty() ? " (no checkpoint saved yet)"
                                                      : "; last good checkpoint: " + last_checkpoint),
                         last_checkpoint);
    backward(batch_total);
    state.opt_main.step();

    // adversary update on (I, detached I_w) pairs
    Var<T> disc_total;
    for (int i = 0; i < B; ++i) {
        Var<T> term = discriminator_loss(originals[static_cast<std::size_t>(i)],
                                         watermarked_detached[static_cast<std::size_t>(i)],
                                         *state.adversary);
        disc_total = disc_total.valid() ? add(disc_total, term) : term;
    }
    disc_total = mul_scalar(disc_total, T(1) / static_cast<T>(B));
    double disc_val = static_cast<double>(scalar_value(disc_total));
    if (!std::isfinite(disc_val))
        throw TrainAbort("train: non-finite adversary loss at step " + std::to_string(t),
                         last_checkpoint);
    backward(disc_total);
    state.opt_adv.step();

    ++state.step;

    auto ms = std::chrono::duration_cast<std::chrono::microseconds>(
                  std::chrono::steady_clock::now() - t0).count() / 1000.0;
    nlohmann::ordered_json rec;
    rec["step"] = t;
    rec["loss_total"] = total_val;
    rec["loss_enc"] = acc_enc / B;
    rec["loss_pixel"] = acc_pixel / B;
    rec["loss_dec"] = acc_dec / B;
    rec["loss_msg"] = acc_msg / B;
    if (video_active && cfg.schedule.temporal_loss)
        rec["loss_temporal"] = acc_temporal / B;  // absent before the video branch starts
    rec["loss_adv_g"] = acc_advg / B;
    rec["loss_disc"] = disc_val;
    rec["wall_ms"] = ms;
    return rec;
}

struct TrainResult {
    std::string final_checkpoint;
    std::string telemetry_path;
    std::string metrics_path;
    double final_loss = 0;
};

// Full training driver: telemetry as JSON lines, periodic checkpoints, a
// final checkpoint and a metrics summary. Passing resume_from continues an
// interrupted run with identical subsequent telemetry.
template <class T>
TrainResult train(const RunConfig& cfg, const std::string& resume_from = "",
                  std::ostream* progress = nullptr) {
    namespace fs = std::filesystem;
    Corpus<T> corpus = load_corpus<T>(cfg.corpus_dir, cfg.resolution);
    fs::create_directories(cfg.out_dir);

    TrainState<T> state = resume_from.empty()
                              ? TrainState<T>::make(cfg)
                              : TrainState<T>::from_checkpoint(load_checkpoint(resume_from), cfg);

    auto edit = make_edit_proxy<T>(cfg.edit_proxy, cfg.edit_params);
    auto video = make_video_proxy<T>(cfg.video_proxy, cfg.video_params);
    auto flow = make_flow_estimator<T>(cfg.flow_estimator);

    std::string telemetry_path = (fs::path(cfg.out_dir) / "telemetry.jsonl").string();
    std::ofstream telemetry(telemetry_path, resume_from.empty() ? std::ios::trunc : std::ios::app);
    if (!telemetry) throw Error("train: cannot write " + telemetry_path);

    std::string last_checkpoint = resume_from;
    double final_loss = 0;
    while (state.step < cfg.schedule.total_steps) {
        nlohmann::ordered_json rec =
            train_step(state, corpus, cfg, *edit, *video, *flow, last_checkpoint);
        final_loss = rec["loss_total"].get<double>();
        telemetry << rec.dump() << "\n";
        if (progress && state.step % 50 == 0) {
            (*progress) << "step " << state.step << "/" << cfg.schedule.total_steps
                        << " loss " << final_loss << "\n";
            progress->flush();
        }
        if (cfg.schedule.checkpoint_every > 0 && state.step % cfg.schedule.checkpoint_every == 0 &&
            state.step < cfg.schedule.total_steps) {
            std::string p =
                (fs::path(cfg.out_dir) / ("checkpoint_step" + std::to_string(state.step) + ".fmck"))
                    .string();
            save_checkpoint(p, state.to_checkpoint());
            last_checkpoint = p;
        }
    }
    telemetry.flush();

    TrainResult result;
    result.final_checkpoint = (fs::path(cfg.out_dir) / "checkpoint_final.fmck").string();
    save_checkpoint(result.final_checkpoint, state.to_checkpoint());
    result.telemetry_path = telemetry_path;
    result.final_loss = final_loss;

    nlohmann::ordered_json metrics;
    metrics["config"] = cfg.to_json();
    metrics["steps_completed"] = state.step;
    metrics["final_loss"] = final_loss;
    metrics["final_checkpoint"] = result.final_checkpoint;
    result.metrics_path = (fs::path(cfg.out_dir) / "metrics.json").string();
    std::ofstream mf(result.metrics_path, std::ios::trunc);
    mf << metrics.dump(2) << "\n";
    return result;
}

}  // namespace flowmark

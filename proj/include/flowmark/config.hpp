#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowmark/decoder.hpp"
#include "flowmark/encoder.hpp"
#include "flowmark/losses.hpp"

namespace flowmark {

// Optimization schedule. The video branch of the distortion path activates
// at video_branch_start; before that the decoder trains only on the
// watermarked and edited images and the temporal term is absent.
struct TrainSchedule {
    long total_steps = 20000;
    long video_branch_start = 7000;
    int batch_size = 2;
    int frames = 4;  // key frames per sequence, reference frame included
    double lr_main = 1e-4;
    double lr_adv = 1e-4;
    long checkpoint_every = 500;
    bool temporal_loss = true;  // ablation switch for the frame-consistency term

    void validate() const {
        require(total_steps >= 1, "schedule: total_steps must be >= 1");
        require(video_branch_start >= 0 && video_branch_start <= total_steps,
                "schedule: video_branch_start must lie in [0, total_steps]");
        require(batch_size >= 1, "schedule: batch_size must be >= 1");
        require(frames >= 2, "schedule: frames must be >= 2");
        require(lr_main > 0 && lr_adv > 0, "schedule: learning rates must be positive");
    }
};

struct AttackSpec {
    std::string name;
    nlohmann::ordered_json params = nlohmann::ordered_json::object();
};

// Single source of truth for a run; round-trips losslessly through JSON.
struct RunConfig {
    std::uint64_t seed = 42;

    std::string corpus_dir;
    std::string out_dir;
    std::string checkpoint_path;  // evaluation input

    int message_bits = 16;
    int resolution = 64;
    EncoderConfig encoder;
    DecoderConfig decoder;  // target_grid/input_resolution derived from the two fields above

    LossWeights weights;
    TrainSchedule schedule;

    std::string edit_proxy = "edit.synthetic";
    nlohmann::ordered_json edit_params = nlohmann::ordered_json::object();
    std::string video_proxy = "video.synthetic";
    nlohmann::ordered_json video_params = nlohmann::ordered_json::object();
    std::string flow_estimator = "flow.block_match";

    int eval_frames = 8;
    std::vector<AttackSpec> attacks_pre, attacks_post;
    double crop_keep = 0.7;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["version"] = 1;
        j["seed"] = seed;
        j["paths"] = {{"corpus", corpus_dir}, {"out_dir", out_dir}, {"checkpoint", checkpoint_path}};
        j["model"] = {{"message_bits", message_bits},
                      {"resolution", resolution},
                      {"encoder",
                       {{"base_channels", encoder.base_channels},
                        {"unet_depth", encoder.unet_depth},
                        {"message_feature_channels", encoder.message_feature_channels},
                        {"scale_min", encoder.scale_min},
                        {"scale_max", encoder.scale_max}}},
                      {"decoder",
                       {{"base_channels", decoder.base_channels}, {"dilations", decoder.dilations}}}};
        j["weights"] = weights.to_json();
        j["schedule"] = {{"total_steps", schedule.total_steps},
                         {"video_branch_start", schedule.video_branch_start},
                         {"batch_size", schedule.batch_size},
                         {"frames", schedule.frames},
                         {"lr_main", schedule.lr_main},
                         {"lr_adv", schedule.lr_adv},
                         {"checkpoint_every", schedule.checkpoint_every},
                         {"temporal_loss", schedule.temporal_loss}};
        j["proxies"] = {{"edit", edit_proxy},
                        {"edit_params", edit_params},
                        {"video", video_proxy},
                        {"video_params", video_params},
                        {"flow", flow_estimator}};
        nlohmann::ordered_json pre = nlohmann::ordered_json::array(),
                               post = nlohmann::ordered_json::array();
        for (const auto& a : attacks_pre) pre.push_back({{"name", a.name}, {"params", a.params}});
        for (const auto& a : attacks_post) post.push_back({{"name", a.name}, {"params", a.params}});
        j["eval"] = {{"frames", eval_frames},
                     {"attacks_pre", pre},
                     {"attacks_post", post},
                     {"crop_keep", crop_keep}};
        return j;
    }

    // Parses a config, collecting EVERY missing required key instead of
    // stopping at the first, so a bad config is fixable in one pass.
    static RunConfig from_json(const nlohmann::ordered_json& j) {
        std::vector<std::string> missing;
        auto fetch = [&](const nlohmann::ordered_json& obj, const std::string& section,
                         const std::string& key) -> const nlohmann::ordered_json* {
            if (!obj.is_object() || !obj.contains(key)) {
                missing.push_back(section.empty() ? key : section + "." + key);
                return nullptr;
            }
            return &obj.at(key);
        };

        RunConfig c;
        if (const auto* v = fetch(j, "", "seed")) c.seed = v->get<std::uint64_t>();

        const auto* paths = fetch(j, "", "paths");
        if (paths) {
            if (const auto* v = fetch(*paths, "paths", "corpus")) c.corpus_dir = v->get<std::string>();
            if (const auto* v = fetch(*paths, "paths", "out_dir")) c.out_dir = v->get<std::string>();
            if (const auto* v = fetch(*paths, "paths", "checkpoint"))
                c.checkpoint_path = v->get<std::string>();
        }

        const auto* model = fetch(j, "", "model");
        if (model) {
            if (const auto* v = fetch(*model, "model", "message_bits"))
                c.message_bits = v->get<int>();
            if (const auto* v = fetch(*model, "model", "resolution")) c.resolution = v->get<int>();
            if (const auto* enc = fetch(*model, "model", "encoder")) {
                if (const auto* v = fetch(*enc, "model.encoder", "base_channels"))
                    c.encoder.base_channels = v->get<int>();
                if (const auto* v = fetch(*enc, "model.encoder", "unet_depth"))
                    c.encoder.unet_depth = v->get<int>();
                if (const auto* v = fetch(*enc, "model.encoder", "message_feature_channels"))
                    c.encoder.message_feature_channels = v->get<int>();
                if (const auto* v = fetch(*enc, "model.encoder", "scale_min"))
                    c.encoder.scale_min = v->get<double>();
                if (const auto* v = fetch(*enc, "model.encoder", "scale_max"))
                    c.encoder.scale_max = v->get<double>();
            }
            if (const auto* dec = fetch(*model, "model", "decoder")) {
                if (const auto* v = fetch(*dec, "model.decoder", "base_channels"))
                    c.decoder.base_channels = v->get<int>();
                if (const auto* v = fetch(*dec, "model.decoder", "dilations"))
                    c.decoder.dilations = v->get<std::vector<int>>();
            }
        }

        const auto* weights = fetch(j, "", "weights");
        if (weights) {
            for (const char* key : {"lambda_latent", "lambda_perceptual", "lambda_semantic",
                                    "lambda_decoder", "lambda_adversarial"})
                fetch(*weights, "weights", key);
            if (missing.empty()) c.weights = LossWeights::from_json(*weights);
        }

        const auto* sched = fetch(j, "", "schedule");
        if (sched) {
            if (const auto* v = fetch(*sched, "schedule", "total_steps"))
                c.schedule.total_steps = v->get<long>();
            if (const auto* v = fetch(*sched, "schedule", "video_branch_start"))
                c.schedule.video_branch_start = v->get<long>();
            if (const auto* v = fetch(*sched, "schedule", "batch_size"))
                c.schedule.batch_size = v->get<int>();
            if (const auto* v = fetch(*sched, "schedule", "frames"))
                c.schedule.frames = v->get<int>();
            if (const auto* v = fetch(*sched, "schedule", "lr_main"))
                c.schedule.lr_main = v->get<double>();
            if (const auto* v = fetch(*sched, "schedule", "lr_adv"))
                c.schedule.lr_adv = v->get<double>();
            if (const auto* v = fetch(*sched, "schedule", "checkpoint_every"))
                c.schedule.checkpoint_every = v->get<long>();
            if (const auto* v = fetch(*sched, "schedule", "temporal_loss"))
                c.schedule.temporal_loss = v->get<bool>();
        }

        const auto* proxies = fetch(j, "", "proxies");
        if (proxies) {
            if (const auto* v = fetch(*proxies, "proxies", "edit"))
                c.edit_proxy = v->get<std::string>();
            if (const auto* v = fetch(*proxies, "proxies", "video"))
                c.video_proxy = v->get<std::string>();
            if (const auto* v = fetch(*proxies, "proxies", "flow"))
                c.flow_estimator = v->get<std::string>();
            if (proxies->contains("edit_params")) c.edit_params = proxies->at("edit_params");
            if (proxies->contains("video_params")) c.video_params = proxies->at("video_params");
        }

        const auto* eval = fetch(j, "", "eval");
        if (eval) {
            if (const auto* v = fetch(*eval, "eval", "frames")) c.eval_frames = v->get<int>();
            if (const auto* v = fetch(*eval, "eval", "crop_keep")) c.crop_keep = v->get<double>();
            for (const char* key : {"attacks_pre", "attacks_post"}) {
                if (const auto* arr = fetch(*eval, "eval", key)) {
                    auto& dst = std::string(key) == "attacks_pre" ? c.attacks_pre : c.attacks_post;
                    for (const auto& a : *arr) {
                        AttackSpec spec;
                        spec.name = a.at("name").get<std::string>();
                        if (a.contains("params")) spec.params = a.at("params");
                        dst.push_back(std::move(spec));
                    }
                }
            }
        }

        if (!missing.empty()) {
            std::string msg = "config: missing required keys:";
            for (const auto& k : missing) msg += " " + k;
            throw ConfigError(msg);
        }

        c.decoder.target_grid = BitMessage::grid_side(c.message_bits);
        c.decoder.input_resolution = c.resolution;
        c.encoder.validate();
        c.decoder.validate();
        c.weights.validate();
        c.schedule.validate();
        return c;
    }

    static RunConfig load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw ConfigError("config: cannot open " + path);
        nlohmann::ordered_json j;
        try {
            f >> j;
        } catch (const std::exception& e) {
            throw ConfigError("config: invalid JSON in " + path + ": " + e.what());
        }
        return from_json(j);
    }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::trunc);
        if (!f) throw Error("config: cannot write " + path);
        f << to_json().dump(2) << "\n";
    }
};

}  // namespace flowmark

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "flowmark/proxies.hpp"

namespace flowmark {

// Output of the trainable distortion stage between encoder and decoder:
// the edited image and the flow-warped key frames a_0 .. a_{M-1}.
template <class T>
struct DistortionPathOutput {
    Var<T> edited;
    std::vector<Var<T>> warped;          // warped[0] is the reference frame, untouched
    std::vector<TensorT<T>> flows_used;  // estimated flows for frames t >= 1
};

// Runs the watermarked image through the editing branch and the video
// branch, then warps each generated frame back to the reference frame with
// the estimator. Flows are estimated on detached pixels and treated as
// constants in the gradient path.
template <class T>
DistortionPathOutput<T> distortion_forward(const Var<T>& watermarked, const EditProxy<T>& edit,
                                           const VideoProxy<T>& video,
                                           const FlowEstimator<T>& estimator, int frame_count,
                                           RngStream rng, const std::string& item_hint = "") {
    DistortionPathOutput<T> out;
    try {
        out.edited = edit.apply(watermarked, rng.fork("edit"), item_hint);
    } catch (const std::exception& e) {
        throw Error(std::string("distortion_forward: editing branch failed: ") + e.what());
    }

    VideoResult<T> vid;
    try {
        vid = video.generate(watermarked, frame_count, rng.fork("video"), item_hint);
    } catch (const std::exception& e) {
        throw Error(std::string("distortion_forward: video branch failed: ") + e.what());
    }

    out.warped.push_back(vid.frames.front());
    for (std::size_t t = 1; t < vid.frames.size(); ++t) {
        TensorT<T> flow;
        try {
            flow = estimator.estimate(vid.frames.front().val(), vid.frames[t].val());
        } catch (const std::exception& e) {
            throw Error("distortion_forward: flow estimation failed on frame " + std::to_string(t) +
                        ": " + e.what());
        }
        out.warped.push_back(warp_bilinear(vid.frames[t], Var<T>::constant(flow)));
        out.flows_used.push_back(std::move(flow));
    }
    return out;
}

}  // namespace flowmark

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "flowmark/common.hpp"
#include "flowmark/tensor.hpp"

namespace flowmark {

// Value-range contract for image data. The canonical internal range is
// unit_signed [-1,1]; byte [0,255] appears only at I/O boundaries.
enum class Range { unit_signed, byte };

inline const char* range_name(Range r) {
    return r == Range::unit_signed ? "unit_signed" : "byte";
}

// A single C x H x W image with an explicit range tag. C == 3 everywhere on
// watermarking paths.
template <class T>
struct ImagePlaneT {
    TensorT<T> data;  // {C,H,W}
    Range range = Range::unit_signed;

    ImagePlaneT() = default;
    ImagePlaneT(TensorT<T> d, Range r) : data(std::move(d)), range(r) {
        require(data.ndim() == 3, "ImagePlane: expected C x H x W data");
    }

    int channels() const { return data.dim(0); }
    int height() const { return data.dim(1); }
    int width() const { return data.dim(2); }
};

// byte -> unit_signed: out = in / 127.5 - 1.
template <class T>
ImagePlaneT<T> to_unit_signed(const ImagePlaneT<T>& img) {
    require(img.range == Range::byte, "to_unit_signed: input must be byte range");
    ImagePlaneT<T> out;
    out.data = TensorT<T>(img.data.shape);
    out.range = Range::unit_signed;
    for (std::size_t i = 0; i < img.data.numel(); ++i)
        out.data[i] = img.data[i] / T(127.5) - T(1);
    return out;
}

// unit_signed -> byte: out = in * 127.5 + 127.5. No rounding here; rounding
// to integers happens only at the PNG export step.
template <class T>
ImagePlaneT<T> to_byte(const ImagePlaneT<T>& img) {
    require(img.range == Range::unit_signed, "to_byte: input must be unit_signed range");
    ImagePlaneT<T> out;
    out.data = TensorT<T>(img.data.shape);
    out.range = Range::byte;
    for (std::size_t i = 0; i < img.data.numel(); ++i) {
        T v = img.data[i];
        require(v >= T(-1) && v <= T(1),
                "to_byte: value outside [-1,1]; clamp before converting");
        out.data[i] = v * T(127.5) + T(127.5);
    }
    return out;
}

// T frames of identical shape; frames[0] is the reference frame.
template <class T>
struct FrameSequenceT {
    std::vector<TensorT<T>> frames;
    static constexpr int reference_index = 0;

    FrameSequenceT() = default;
    explicit FrameSequenceT(std::vector<TensorT<T>> f) : frames(std::move(f)) {
        require(!frames.empty(), "FrameSequence: needs at least one frame");
        for (const auto& fr : frames)
            require(fr.same_shape(frames.front()), "FrameSequence: frame shape mismatch");
    }

    int count() const { return static_cast<int>(frames.size()); }
    const TensorT<T>& reference() const { return frames.front(); }
};

template <class T>
TensorT<T> clamp_unit(const TensorT<T>& t) {
    TensorT<T> out = t;
    for (auto& v : out.data) v = std::min(T(1), std::max(T(-1), v));
    return out;
}

template <class T>
void check_unit_range(const TensorT<T>& t, const std::string& who) {
    for (auto v : t.data)
        require(v >= T(-1) && v <= T(1), who + ": value outside [-1,1]");
}

}  // namespace flowmark

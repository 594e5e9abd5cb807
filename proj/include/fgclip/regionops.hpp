#pragma once

#include <string>
#include <vector>

#include "fgclip/encoders.hpp"
#include "fgclip/tensor.hpp"

namespace fgclip {

// Axis-aligned box in normalized [0,1] image coordinates.
struct RegionBox {
    double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;
    double confidence = 1.0;
    std::string positive_caption;
    std::vector<std::string> negative_captions;  // at most 10
    std::string difficulty;  // optional eval tag: hard | medium | easy | trivial

    bool valid() const {
        return x1 >= 0.0 && y1 >= 0.0 && x2 <= 1.0 && y2 <= 1.0 && x1 < x2 && y1 < y2 &&
               confidence >= 0.0 && confidence <= 1.0 && negative_captions.size() <= 10;
    }
    std::string describe() const;
};

// Places a G x G grid of sample points inside the box, bilinearly
// interpolates the token grid at each (token centers at ((u+0.5)/W,
// (v+0.5)/W), coordinates clamped to the token-center hull) and returns the
// mean of the G^2 samples. Differentiable w.r.t. the token grid. Samples are
// traversed row-major so the full-image box with G == W reproduces the plain
// token mean bitwise.
TensorPtr roi_align_average(const TensorPtr& token_grid, const RegionBox& box,
                            long samples_per_axis = 3);

// Recomputes the final transformer block over the cached block input with
// token mixing disabled, then applies the final layer norm and projection.
// Returns per-token dense features [W, W, proj_dim], CLS excluded.
TensorPtr dense_tokens(const VisionEncoder& encoder, const EncoderOutput& encoded);

}  // namespace fgclip

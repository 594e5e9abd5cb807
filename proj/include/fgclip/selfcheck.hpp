#pragma once

#include <string>
#include <vector>

#include "fgclip/curation.hpp"
#include "fgclip/encoders.hpp"
#include "fgclip/regionops.hpp"

namespace fgclip {

// Independent oracles: straight-line reimplementations of the quantities the
// main code computes, kept free of Tensor/Tape so they cannot share a bug
// with the path they check. Used by selfcheck, the unit tests and the
// acceptance suite.
namespace oracles {

// Eq. 2 / Eq. 3 style symmetric InfoNCE over raw (unnormalized) embeddings.
double symmetric_infonce(const std::vector<std::vector<double>>& v,
                         const std::vector<std::vector<double>>& t, double tau);

// Eq. 4: per region, -log softmax over that region's caption similarities
// with the positive at index 0, averaged over regions.
double hard_negative(const std::vector<std::vector<double>>& regions,
                     const std::vector<std::vector<std::vector<double>>>& captions_per_region,
                     double tau);

// Standalone bilinear RoI sampler over a [W x W x d] grid.
std::vector<double> roi_bilinear(const std::vector<double>& grid, long w, long d,
                                 const RegionBox& box, long samples_per_axis);

// Fixed-point characterization of greedy NMS: enumerates subsets and returns
// the unique one where a box is kept iff it clears the confidence gate and no
// higher-priority kept box overlaps it beyond the threshold. Feasible for
// n <= ~16.
std::vector<RegionBox> nms_subsets(const std::vector<RegionBox>& boxes, double conf_threshold,
                                   double iou_threshold);

}  // namespace oracles

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct SelfCheckOptions {
    // Negative control: scales one backward rule so the gradient check must
    // detect the fault and fail.
    bool inject_gradient_fault = false;
};

struct PipelineGradCheck {
    double max_rel_err = 0.0;
    long param_count = 0;
    double seconds = 0.0;
};

// Finite differences of the full stage-2 objective (Eqs. 2-5 composed through
// both toy encoders and roi_align_average) over every parameter of a tiny
// model.
PipelineGradCheck gradient_check_full_pipeline();

std::vector<CheckResult> run_selfcheck(const SelfCheckOptions& opts = {});
bool all_passed(const std::vector<CheckResult>& results);

// Tiny configs sized so full finite-difference sweeps finish in seconds.
VisionConfig tiny_vision_config();
TextConfig tiny_text_config();
ClipModel tiny_model(uint64_t seed);

}  // namespace fgclip

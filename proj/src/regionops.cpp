#include "fgclip/regionops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "fgclip/error.hpp"
#include "fgclip/ops.hpp"

namespace fgclip {

std::string RegionBox::describe() const {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "box[%.6f,%.6f,%.6f,%.6f conf=%.3f]", x1, y1, x2, y2, confidence);
    return buf;
}

namespace {

struct Sample {
    long ix0, ix1, iy0, iy1;
    double w00, w01, w10, w11;  // (y,x) corner weights
};

// Continuous token-index coordinate for a normalized position, clamped to the
// token-center hull. Exact-knot snapping keeps samples that analytically land
// on a token center free of 1-ulp bilinear leakage.
void split_coord(double pos, long cells, long& lo, long& hi, double& frac) {
    double f = pos * static_cast<double>(cells) - 0.5;
    if (f < 0.0) f = 0.0;
    const double last = static_cast<double>(cells - 1);
    if (f > last) f = last;
    lo = static_cast<long>(std::floor(f));
    frac = f - static_cast<double>(lo);
    if (frac < 1e-12) {
        frac = 0.0;
    } else if (frac > 1.0 - 1e-12) {
        lo += 1;
        frac = 0.0;
    }
    hi = std::min(lo + 1, cells - 1);
}

}  // namespace

TensorPtr roi_align_average(const TensorPtr& token_grid, const RegionBox& box,
                            long samples_per_axis) {
    if (token_grid->ndim() != 3 || token_grid->dim(0) != token_grid->dim(1))
        throw ShapeError("roi_align_average: token grid must be [W, W, d], got " +
                         shape_str(token_grid->shape));
    if (samples_per_axis < 1)
        throw ConfigError("roi_align_average: samples_per_axis must be >= 1");
    const long w = token_grid->dim(0);
    const long d = token_grid->dim(2);
    const long g = samples_per_axis;

    const double bx1 = std::clamp(box.x1, 0.0, 1.0);
    const double by1 = std::clamp(box.y1, 0.0, 1.0);
    const double bx2 = std::clamp(box.x2, 0.0, 1.0);
    const double by2 = std::clamp(box.y2, 0.0, 1.0);
    if (!(bx2 > bx1) || !(by2 > by1))
        throw DataError("roi_align_average: degenerate box after clamping, " + box.describe());

    std::vector<Sample> samples;
    samples.reserve(g * g);
    for (long sy = 0; sy < g; ++sy) {
        const double py = by1 + (static_cast<double>(sy) + 0.5) / static_cast<double>(g) * (by2 - by1);
        long y0, y1i;
        double fy;
        split_coord(py, w, y0, y1i, fy);
        for (long sx = 0; sx < g; ++sx) {
            const double px = bx1 + (static_cast<double>(sx) + 0.5) / static_cast<double>(g) * (bx2 - bx1);
            long x0, x1i;
            double fx;
            split_coord(px, w, x0, x1i, fx);
            Sample s;
            s.iy0 = y0;
            s.iy1 = y1i;
            s.ix0 = x0;
            s.ix1 = x1i;
            s.w00 = (1.0 - fy) * (1.0 - fx);
            s.w01 = (1.0 - fy) * fx;
            s.w10 = fy * (1.0 - fx);
            s.w11 = fy * fx;
            samples.push_back(s);
        }
    }

    auto out = make_tensor({d});
    const double count = static_cast<double>(g * g);
    const double* grid = token_grid->data.data();
    for (const auto& s : samples) {
        const double* t00 = grid + (s.iy0 * w + s.ix0) * d;
        const double* t01 = grid + (s.iy0 * w + s.ix1) * d;
        const double* t10 = grid + (s.iy1 * w + s.ix0) * d;
        const double* t11 = grid + (s.iy1 * w + s.ix1) * d;
        for (long j = 0; j < d; ++j)
            out->data[j] += s.w00 * t00[j] + s.w01 * t01[j] + s.w10 * t10[j] + s.w11 * t11[j];
    }
    // sum/count, not sum*(1/count): keeps the full-box G==W case bitwise equal
    // to the plain token mean.
    for (long j = 0; j < d; ++j) out->data[j] /= count;

    if (detail::grad_enabled({token_grid})) {
        detail::record("roi_align_average", {token_grid}, out,
                       [token_grid, out, samples, w, d, count] {
                           token_grid->ensure_grad();
                           for (const auto& s : samples) {
                               double* g00 = token_grid->grad.data() + (s.iy0 * w + s.ix0) * d;
                               double* g01 = token_grid->grad.data() + (s.iy0 * w + s.ix1) * d;
                               double* g10 = token_grid->grad.data() + (s.iy1 * w + s.ix0) * d;
                               double* g11 = token_grid->grad.data() + (s.iy1 * w + s.ix1) * d;
                               for (long j = 0; j < d; ++j) {
                                   const double go = out->grad[j] / count;
                                   g00[j] += s.w00 * go;
                                   g01[j] += s.w01 * go;
                                   g10[j] += s.w10 * go;
                                   g11[j] += s.w11 * go;
                               }
                           }
                       });
    }
    return out;
}

TensorPtr dense_tokens(const VisionEncoder& encoder, const EncoderOutput& encoded) {
    if (!encoded.final_block_input)
        throw DataError("dense_tokens: missing final-block cache; run encode_image first");
    const long w = encoder.cfg.grid_side();
    const long p = encoder.cfg.num_patches();
    // CLS cannot influence patch rows once mixing is disabled, so it is
    // dropped before the block runs.
    auto patches = slice_rows(encoded.final_block_input, 1, 1 + p);
    auto x = encoder.blocks.back().forward_self_only(patches);
    auto projected = matmul(layer_norm(x, encoder.final_ln_g, encoder.final_ln_b), encoder.proj);
    return reshape(projected, {w, w, encoder.cfg.proj_dim});
}

}  // namespace fgclip

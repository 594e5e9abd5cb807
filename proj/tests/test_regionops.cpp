#include <cmath>
#include <cstring>

#include <doctest.h>

#include "fgclip/error.hpp"
#include "fgclip/ops.hpp"
#include "fgclip/regionops.hpp"
#include "fgclip/rng.hpp"
#include "fgclip/selfcheck.hpp"

using namespace fgclip;

namespace {

TensorPtr random_grid(Rng& rng, long w, long d) {
    auto g = make_tensor({w, w, d});
    for (auto& v : g->data) v = rng.next_real(-1.0, 1.0);
    return g;
}

RegionBox box_of(double x1, double y1, double x2, double y2) {
    RegionBox b;
    b.x1 = x1;
    b.y1 = y1;
    b.x2 = x2;
    b.y2 = y2;
    return b;
}

}  // namespace

TEST_CASE("full-image box with G == W equals the token mean bitwise") {
    Rng rng(31);
    for (long w : {2L, 3L, 4L, 7L}) {
        auto grid = random_grid(rng, w, 6);
        auto got = roi_align_average(grid, box_of(0, 0, 1, 1), w);
        auto mean = mean_axis(reshape(grid, {w * w, 6}), 0);
        CHECK(std::memcmp(got->data.data(), mean->data.data(), 6 * sizeof(double)) == 0);
    }
}

TEST_CASE("box at one token's center cell with G=1 returns that token exactly") {
    Rng rng(32);
    auto grid = random_grid(rng, 2, 4);
    // Token (row 0, col 1) has center (0.75, 0.25); its cell is x in [0.5,1], y in [0,0.5].
    auto got = roi_align_average(grid, box_of(0.5, 0.0, 1.0, 0.5), 1);
    const double* tok = grid->data.data() + (0 * 2 + 1) * 4;
    CHECK(std::memcmp(got->data.data(), tok, 4 * sizeof(double)) == 0);
}

TEST_CASE("half-image box on a 2x2 grid matches the standalone bilinear oracle") {
    Rng rng(33);
    auto grid = random_grid(rng, 2, 3);
    auto box = box_of(0.0, 0.0, 1.0, 0.5);
    auto got = roi_align_average(grid, box, 2);
    auto want = oracles::roi_bilinear(grid->data, 2, 3, box, 2);
    for (long j = 0; j < 3; ++j) CHECK(got->data[j] == doctest::Approx(want[j]).epsilon(1e-12));
}

TEST_CASE("degenerate boxes are rejected with the box named") {
    Rng rng(34);
    auto grid = random_grid(rng, 3, 2);
    auto degenerate = box_of(1.2, 0.1, 1.4, 0.4);  // clamps to zero width
    CHECK_THROWS_WITH_AS(roi_align_average(grid, degenerate, 2), doctest::Contains("box["),
                         DataError);
}

TEST_CASE("roi_align_average is linear in the token grid") {
    Rng rng(35);
    auto x = random_grid(rng, 4, 5);
    auto y = random_grid(rng, 4, 5);
    const double a = 0.7, b = -1.3;
    auto box = box_of(0.12, 0.3, 0.77, 0.95);
    auto mix = make_tensor({4, 4, 5});
    for (size_t i = 0; i < mix->data.size(); ++i) mix->data[i] = a * x->data[i] + b * y->data[i];
    auto lhs = roi_align_average(mix, box, 3);
    auto rx = roi_align_average(x, box, 3);
    auto ry = roi_align_average(y, box, 3);
    for (long j = 0; j < 5; ++j)
        CHECK(std::fabs(lhs->data[j] - (a * rx->data[j] + b * ry->data[j])) < 1e-9);
}

TEST_CASE("shifting a box by one token pitch on a column-linear grid shifts the pool") {
    const long w = 4, d = 2;
    auto grid = make_tensor({w, w, d});
    for (long y = 0; y < w; ++y)
        for (long x = 0; x < w; ++x) {
            grid->data[(y * w + x) * d + 0] = static_cast<double>(x);
            grid->data[(y * w + x) * d + 1] = 3.0;
        }
    auto r1 = roi_align_average(grid, box_of(0.25, 0.25, 0.50, 0.75), 2);
    auto r2 = roi_align_average(grid, box_of(0.50, 0.25, 0.75, 0.75), 2);
    CHECK(r2->data[0] == doctest::Approx(r1->data[0] + 1.0).epsilon(1e-12));
    CHECK(r2->data[1] == doctest::Approx(r1->data[1]).epsilon(1e-12));
}

TEST_CASE("roi_align gradients pass finite differences") {
    Rng rng(36);
    auto grid = random_grid(rng, 3, 4);
    grid->requires_grad = true;
    auto c = make_tensor({4});
    for (auto& v : c->data) v = rng.next_real(-1.0, 1.0);
    auto box = box_of(0.1, 0.15, 0.85, 0.6);
    const double err = finite_difference_check(
        [&] { return sum_all(mul(roi_align_average(grid, box, 3), c)); }, {grid}, 1e-5);
    CHECK(err < 1e-4);
}

TEST_CASE("dense_tokens shape, locality and missing-cache error") {
    auto model = tiny_model(51);
    auto img = make_tensor({8, 8, 1});
    Rng rng(52);
    for (auto& v : img->data) v = rng.next_real(0.0, 1.0);
    auto enc = model.encode_image(img);
    auto dense = dense_tokens(model.vision, enc);
    CHECK(dense->shape == std::vector<long>{2, 2, 8});

    // Locality: rows 1 and 2 of the cache identical -> identical dense rows;
    // perturbing one token's cache row moves only its own output row.
    const long d = model.vcfg.embed_dim;
    auto cache = make_tensor({5, d});
    for (auto& v : cache->data) v = rng.next_real(-1.0, 1.0);
    for (long j = 0; j < d; ++j) cache->data[2 * d + j] = cache->data[1 * d + j];
    EncoderOutput fake;
    fake.final_block_input = cache;
    auto out1 = dense_tokens(model.vision, fake);
    const long p = model.vcfg.proj_dim;
    CHECK(std::memcmp(out1->data.data() + 0 * p, out1->data.data() + 1 * p,
                      p * sizeof(double)) == 0);

    auto cache2 = make_tensor({5, d}, cache->data);
    cache2->data[3 * d + 1] += 0.25;  // perturb token index 2 (cache row 3)
    EncoderOutput fake2;
    fake2.final_block_input = cache2;
    auto out2 = dense_tokens(model.vision, fake2);
    CHECK(std::memcmp(out1->data.data() + 0 * p, out2->data.data() + 0 * p, p * sizeof(double)) == 0);
    CHECK(std::memcmp(out1->data.data() + 1 * p, out2->data.data() + 1 * p, p * sizeof(double)) == 0);
    CHECK(std::memcmp(out1->data.data() + 2 * p, out2->data.data() + 2 * p, p * sizeof(double)) != 0);
    CHECK(std::memcmp(out1->data.data() + 3 * p, out2->data.data() + 3 * p, p * sizeof(double)) == 0);

    EncoderOutput missing;
    CHECK_THROWS_WITH_AS(dense_tokens(model.vision, missing), doctest::Contains("encode_image"),
                         DataError);
}

TEST_CASE("on a 1-token grid dense_tokens equals the ordinary final block output") {
    VisionConfig cfg = tiny_vision_config();
    cfg.image_size = 4;
    cfg.patch_size = 4;  // single patch
    Rng rng(53);
    auto enc = VisionEncoder::init(cfg, rng);

    auto img = make_tensor({4, 4, 1});
    for (auto& v : img->data) v = rng.next_real(0.0, 1.0);
    auto out = enc.forward(img);
    auto dense = dense_tokens(enc, out);

    // Full attention over the single patch token degenerates to self-only.
    auto token_row = slice_rows(out.final_block_input, 1, 2);
    auto full = enc.blocks.back().forward(token_row);
    auto projected = matmul(layer_norm(full, enc.final_ln_g, enc.final_ln_b), enc.proj);
    for (long j = 0; j < cfg.proj_dim; ++j)
        CHECK(dense->data[j] == doctest::Approx(projected->data[j]).epsilon(1e-12));
}

TEST_CASE("RegionBox validity") {
    CHECK(box_of(0.1, 0.1, 0.5, 0.5).valid());
    CHECK_FALSE(box_of(0.5, 0.1, 0.5, 0.5).valid());   // zero width
    CHECK_FALSE(box_of(-0.1, 0.1, 0.5, 0.5).valid());  // out of range
    RegionBox too_many = box_of(0.1, 0.1, 0.5, 0.5);
    too_many.negative_captions.assign(11, "x");
    CHECK_FALSE(too_many.valid());
}

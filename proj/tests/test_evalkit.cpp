#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <doctest.h>

#include "fgclip/error.hpp"
#include "fgclip/evalkit.hpp"
#include "fgclip/regionops.hpp"
#include "fgclip/rng.hpp"
#include "fgclip/selfcheck.hpp"

using namespace fgclip;

namespace {

TensorPtr rand_embeds(Rng& rng, long n, long d) {
    auto t = make_tensor({n, d});
    for (auto& v : t->data) v = rng.next_real(-1.0, 1.0);
    return t;
}

double cos_between(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Region-toy style record with one box and a caption list.
DatasetRecord region_record(const std::string& id, const std::string& positive,
                            std::vector<std::string> negatives) {
    DatasetRecord rec;
    rec.image_id = id;
    rec.image_source = "synthetic:base=0.4,0.4,0.4;block=0.2,0.2,0.7,0.7,0.9,0.1,0.2;noise=0.02;seed=" +
                       std::to_string(std::hash<std::string>{}(id) % 1000);
    rec.short_caption = positive;
    rec.long_caption = positive;
    RegionBox box;
    box.x1 = 0.2;
    box.y1 = 0.2;
    box.x2 = 0.7;
    box.y2 = 0.7;
    box.positive_caption = positive;
    box.negative_captions = std::move(negatives);
    rec.regions.push_back(box);
    return rec;
}

}  // namespace

TEST_CASE("retrieval recall on identity and swapped structures") {
    Rng rng(91);
    const long n = 8, d = 6;
    auto v = rand_embeds(rng, n, d);
    auto t = make_tensor({n, d}, v->data);
    auto identity = retrieval_recall(v, t);
    CHECK(identity.value_of("all", "i2t_r1") == doctest::Approx(1.0));
    CHECK(identity.value_of("all", "t2i_r1") == doctest::Approx(1.0));

    // Swapping two texts' embeddings breaks exactly those two pairs.
    auto swapped = make_tensor({n, d}, t->data);
    for (long j = 0; j < d; ++j) std::swap(swapped->at(2, j), swapped->at(5, j));
    auto degraded = retrieval_recall(v, swapped);
    CHECK(degraded.value_of("all", "i2t_r1") == doctest::Approx((n - 2.0) / n));
    CHECK(degraded.value_of("all", "t2i_r1") == doctest::Approx((n - 2.0) / n));

    auto one = retrieval_recall(rand_embeds(rng, 1, d), rand_embeds(rng, 1, d));
    CHECK(one.value_of("all", "i2t_r1") == doctest::Approx(1.0));

    CHECK_THROWS_AS(retrieval_recall(v, rand_embeds(rng, 4, d)), ShapeError);
}

TEST_CASE("fgovd accuracy equals the constructed rank layout and the oracle") {
    auto model = tiny_model(101);

    // Candidate caption pool; all in-vocabulary words.
    const std::vector<std::string> pool = {"a red mug",  "a blue mug",  "a green mug",
                                           "a red bucket", "a large table", "a small table"};
    // For 12 regions, measure which caption actually ranks first for the
    // region's pooled dense feature, then label 9 regions with the winner
    // (positive ranks first) and 3 with a loser.
    std::vector<DatasetRecord> records;
    long forced_wrong = 0;
    for (int i = 0; i < 12; ++i) {
        auto rec = region_record("r" + std::to_string(i), pool[0],
                                 {pool[1], pool[2], pool[3], pool[4], pool[5]});
        // Rank candidates with independent straight-line code.
        auto img = render_image(rec.image_source, model.vcfg.image_size, model.vcfg.channels);
        auto enc = model.encode_image(img);
        auto dense = dense_tokens(model.vision, enc);
        auto feat = roi_align_average(dense, rec.regions[0], 3);
        long best = 0;
        double best_sim = -2.0;
        for (size_t c = 0; c < pool.size(); ++c) {
            auto e = model.encode_text(pool[c]).cls_embedding;
            const double s = cos_between(feat->data, e->data);
            if (s > best_sim) {
                best_sim = s;
                best = static_cast<long>(c);
            }
        }
        std::vector<std::string> caps(pool.begin(), pool.end());
        std::string positive;
        if (i < 9) {
            positive = caps[best];  // positive wins
        } else {
            positive = caps[(best + 1) % caps.size()];  // some other caption wins
            ++forced_wrong;
        }
        caps.erase(std::find(caps.begin(), caps.end(), positive));
        rec.regions[0].positive_caption = positive;
        rec.regions[0].negative_captions = caps;
        rec.regions[0].difficulty = "hard";
        records.push_back(rec);
    }
    REQUIRE(forced_wrong == 3);
    auto report = fgovd_accuracy(records, model, 3);
    CHECK(report.value_of("hard", "top1") == doctest::Approx(0.75));
    CHECK(report.value_of("all", "top1") == doctest::Approx(0.75));
}

TEST_CASE("fgovd: positive wins ties (lowest index) and exclusions are counted") {
    auto model = tiny_model(102);
    // Negatives identical to the positive: tie broken toward index 0.
    auto tie = region_record("tie", "a red mug", {"a red mug", "a red mug"});
    // Region without negatives: excluded from scoring but counted.
    auto lonely = region_record("lonely", "a blue mug", {});
    auto report = fgovd_accuracy({tie, lonely}, model, 3);
    CHECK(report.value_of("hard", "top1") == doctest::Approx(1.0));
    CHECK(report.value_of("all", "excluded") == doctest::Approx(1.0));
}

TEST_CASE("bbox classification matches a brute-force nearest-text oracle") {
    auto model = tiny_model(103);
    const std::vector<std::string> pool = {"a red mug",    "a blue mug",   "a green mug",
                                           "a red bucket", "a large table", "a small table",
                                           "a red table",  "a blue bucket", "a green table",
                                           "a small mug"};
    std::vector<DatasetRecord> records;
    for (int i = 0; i < 10; ++i)
        records.push_back(region_record("b" + std::to_string(i), pool[i % pool.size()], {}));

    auto report = bbox_classification(records, model, std::vector<std::string>(pool.begin(), pool.end()), 3);

    // Independent oracle: rank categories for every region feature directly.
    long top1 = 0, top5 = 0;
    std::vector<std::vector<double>> cat_embeds;
    for (const auto& c : pool) cat_embeds.push_back(model.encode_text(c).cls_embedding->data);
    for (const auto& rec : records) {
        auto img = render_image(rec.image_source, model.vcfg.image_size, model.vcfg.channels);
        auto enc = model.encode_image(img);
        auto dense = dense_tokens(model.vision, enc);
        auto feat = roi_align_average(dense, rec.regions[0], 3);
        std::vector<std::pair<double, long>> ranked;
        for (size_t c = 0; c < pool.size(); ++c)
            ranked.push_back({-cos_between(feat->data, cat_embeds[c]), static_cast<long>(c)});
        std::sort(ranked.begin(), ranked.end());
        const long gold = static_cast<long>(
            std::find(pool.begin(), pool.end(), rec.regions[0].positive_caption) - pool.begin());
        if (ranked[0].second == gold) ++top1;
        for (int k = 0; k < 5; ++k)
            if (ranked[k].second == gold) ++top5;
    }
    CHECK(report.value_of("all", "top1") == doctest::Approx(top1 / 10.0));
    CHECK(report.value_of("all", "top5") == doctest::Approx(top5 / 10.0));
}

TEST_CASE("bbox classification: two categories make top-5 trivially 1, duplicates rejected") {
    auto model = tiny_model(104);
    std::vector<DatasetRecord> records = {region_record("x", "a red mug", {}),
                                          region_record("y", "a blue mug", {})};
    auto report = bbox_classification(records, model);
    CHECK(report.value_of("all", "top5") == doctest::Approx(1.0));

    CHECK_THROWS_AS(bbox_classification(records, model, {"a red mug", "a red mug"}, 3), DataError);
    // A gold label absent from the category list is a data error.
    CHECK_THROWS_AS(bbox_classification(records, model, {"a red mug", "a green mug"}, 3),
                    DataError);
}

TEST_CASE("zero-shot classification: single class and oracle agreement") {
    auto model = tiny_model(105);
    std::vector<DatasetRecord> same = {region_record("z0", "a red mug", {}),
                                       region_record("z1", "a red mug", {})};
    CHECK(zero_shot_classification(same, model).value_of("all", "top1") == doctest::Approx(1.0));

    // Random classes: compare against a direct nearest-class computation.
    const std::vector<std::string> caps = {"a red mug", "a blue mug", "a green mug", "a red bucket"};
    std::vector<DatasetRecord> records;
    for (int i = 0; i < 8; ++i)
        records.push_back(region_record("c" + std::to_string(i), caps[i % caps.size()], {}));
    auto report = zero_shot_classification(records, model);

    std::vector<std::string> classes(caps.begin(), caps.end());
    std::sort(classes.begin(), classes.end());
    long hits = 0;
    for (const auto& rec : records) {
        auto img = render_image(rec.image_source, model.vcfg.image_size, model.vcfg.channels);
        auto cls = model.encode_image(img).cls_embedding;
        long best = 0;
        double best_sim = -2.0;
        for (size_t c = 0; c < classes.size(); ++c) {
            const double s =
                cos_between(cls->data, model.encode_text(classes[c]).cls_embedding->data);
            if (s > best_sim) {
                best_sim = s;
                best = static_cast<long>(c);
            }
        }
        if (classes[best] == rec.short_caption) ++hits;
    }
    CHECK(report.value_of("all", "top1") == doctest::Approx(hits / 8.0));
}

TEST_CASE("similarity heatmap outputs") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "fgclip_test_heatmap";
    fs::create_directories(dir);
    const std::string txt = (dir / "h.txt").string();
    const std::string pgm = (dir / "h.pgm").string();

    auto model = tiny_model(106);
    const long w = model.vcfg.grid_side();

    SUBCASE("constant dense grid maps to all 0.5") {
        // Zero positional table + constant image -> identical tokens everywhere.
        std::fill(model.vision.pos_embed->data.begin(), model.vision.pos_embed->data.end(), 0.0);
        auto rec = region_record("flat", "a red mug", {});
        rec.image_source = "synthetic:base=0.3,0.3,0.3";
        emit_similarity_heatmap(rec, "a red mug", model, txt, pgm);

        std::ifstream in(txt);
        double v;
        long count = 0;
        while (in >> v) {
            CHECK(v == doctest::Approx(0.5));
            ++count;
        }
        CHECK(count == w * w);
    }

    SUBCASE("grid matches an independent recomputation; argmax agrees with the graymap") {
        auto rec = region_record("hm", "a red mug", {});
        emit_similarity_heatmap(rec, "a red mug", model, txt, pgm);

        // Independent recomputation.
        auto img = render_image(rec.image_source, model.vcfg.image_size, model.vcfg.channels);
        auto enc = model.encode_image(img);
        auto dense = dense_tokens(model.vision, enc);
        auto q = model.encode_text("a red mug").cls_embedding;
        const long d = model.vcfg.proj_dim;
        std::vector<double> sims(w * w);
        for (long t = 0; t < w * w; ++t)
            sims[t] = cos_between(std::vector<double>(dense->data.begin() + t * d,
                                                      dense->data.begin() + (t + 1) * d),
                                  q->data);
        const double lo = *std::min_element(sims.begin(), sims.end());
        const double hi = *std::max_element(sims.begin(), sims.end());

        std::ifstream in(txt);
        std::vector<double> grid_vals;
        double v;
        while (in >> v) grid_vals.push_back(v);
        REQUIRE(grid_vals.size() == static_cast<size_t>(w * w));
        for (long t = 0; t < w * w; ++t)
            CHECK(grid_vals[t] == doctest::Approx((sims[t] - lo) / (hi - lo)).epsilon(1e-4));

        // PGM header and argmax agreement.
        std::ifstream pin(pgm, std::ios::binary);
        std::string magic;
        long pw, ph, maxv;
        pin >> magic >> pw >> ph >> maxv;
        CHECK(magic == "P5");
        CHECK(pw == w);
        CHECK(ph == w);
        CHECK(maxv == 255);
        pin.get();
        std::vector<unsigned char> pixels(w * w);
        pin.read(reinterpret_cast<char*>(pixels.data()), w * w);
        const long txt_argmax =
            std::max_element(grid_vals.begin(), grid_vals.end()) - grid_vals.begin();
        const long pgm_argmax = std::max_element(pixels.begin(), pixels.end()) - pixels.begin();
        CHECK(pixels[txt_argmax] == pixels[pgm_argmax]);
        CHECK(pixels[txt_argmax] == 255);
    }

    fs::remove_all(dir);
}

TEST_CASE("eval metrics are invariant under common rescaling of embeddings") {
    Rng rng(107);
    auto v = rand_embeds(rng, 6, 5);
    auto t = rand_embeds(rng, 6, 5);
    auto base = retrieval_recall(v, t);
    auto vs = make_tensor({6, 5});
    auto ts = make_tensor({6, 5});
    for (long i = 0; i < 30; ++i) {
        vs->data[i] = v->data[i] * 7.5;
        ts->data[i] = t->data[i] * 0.03;
    }
    auto scaled = retrieval_recall(vs, ts);
    CHECK(base.value_of("all", "i2t_r1") == scaled.value_of("all", "i2t_r1"));
    CHECK(base.value_of("all", "t2i_r1") == scaled.value_of("all", "t2i_r1"));
}

TEST_CASE("report serialization format") {
    EvalReport report;
    report.task = "demo";
    report.rows.push_back({"all", "top1", 0.75, 12});
    const std::string text = report.to_text();
    CHECK(text.find("task,split,metric,value,count\n") == 0);
    CHECK(text.find("demo,all,top1,0.750000,12\n") != std::string::npos);
}

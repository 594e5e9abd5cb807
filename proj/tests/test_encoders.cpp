#include <cmath>
#include <cstring>
#include <set>

#include <doctest.h>

#include "fgclip/encoders.hpp"
#include "fgclip/error.hpp"
#include "fgclip/rng.hpp"
#include "fgclip/selfcheck.hpp"

using namespace fgclip;

namespace {

Vocabulary small_vocab() {
    return Vocabulary::build({"a bird", "a red bucket", "the tree branch"}, 32);
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("tokenize basics") {
    auto vocab = small_vocab();
    const long id_a = vocab.id_of("a");
    const long id_bird = vocab.id_of("bird");
    CHECK(id_a >= Vocabulary::kNumSpecial);
    CHECK(id_bird != Vocabulary::kUnkId);

    auto seq = tokenize(vocab, "a bird", 8);
    CHECK(seq.ids.size() == 8);
    CHECK(seq.ids[0] == Vocabulary::kClsId);
    CHECK(seq.ids[1] == id_a);
    CHECK(seq.ids[2] == id_bird);
    for (size_t i = 3; i < 8; ++i) CHECK(seq.ids[i] == Vocabulary::kPadId);
    CHECK_FALSE(seq.empty_input);

    auto seq2 = tokenize(vocab, "a bird", 8);
    CHECK(seq.ids == seq2.ids);  // determinism

    auto empty = tokenize(vocab, "", 8);
    CHECK(empty.empty_input);
    CHECK(empty.ids[0] == Vocabulary::kClsId);
    for (size_t i = 1; i < 8; ++i) CHECK(empty.ids[i] == Vocabulary::kPadId);

    CHECK(vocab.id_of("zebra") == Vocabulary::kUnkId);
}

TEST_CASE("tokenize truncates a 300-word caption to exactly 248") {
    auto vocab = small_vocab();
    std::string caption;
    for (int i = 0; i < 300; ++i) caption += "bird ";
    auto seq = tokenize(vocab, caption, 248);
    CHECK(seq.ids.size() == 248);
    for (long id : seq.ids) CHECK(id != Vocabulary::kPadId);  // fully occupied
}

TEST_CASE("text config geometry: 20 + 57*4 = 248") {
    TextConfig cfg;
    CHECK(cfg.base_max_len == 77);
    CHECK(cfg.keep_prefix == 20);
    CHECK(cfg.interp_factor == 4);
    CHECK(cfg.extended_max_len() == 248);
    CHECK(cfg.extended_max_len() ==
          cfg.keep_prefix + (cfg.base_max_len - cfg.keep_prefix) * cfg.interp_factor);
}

TEST_CASE("extend_position_embeddings contract on the 77 -> 248 table") {
    Rng rng(21);
    const long d = 16;
    auto table = make_tensor({77, d});
    for (auto& v : table->data) v = rng.next_real(-1.0, 1.0);

    auto out = extend_position_embeddings(table, 20, 4);
    REQUIRE(out->dim(0) == 248);
    REQUIRE(out->dim(1) == d);

    // Prefix rows are copied verbatim (row 7 checked bitwise per the contract).
    for (long i = 0; i < 20; ++i)
        CHECK(std::memcmp(out->data.data() + i * d, table->data.data() + i * d,
                          sizeof(double) * d) == 0);

    // Knots land exactly on source rows: output 20+4 is input row 21.
    CHECK(bitwise_equal(
        std::vector<double>(out->data.begin() + 24 * d, out->data.begin() + 25 * d),
        std::vector<double>(table->data.begin() + 21 * d, table->data.begin() + 22 * d)));

    // Output row 22 sits at source coordinate 20.5.
    for (long j = 0; j < d; ++j) {
        const double want = 0.5 * table->data[20 * d + j] + 0.5 * table->data[21 * d + j];
        CHECK(out->data[22 * d + j] == doctest::Approx(want).epsilon(1e-15));
    }

    // Every interior row is a convex combination of two adjacent source rows.
    for (long i = 20; i < 248; ++i) {
        const long jdx = i - 20;
        const long lo = 20 + jdx / 4;
        const long hi = std::min(lo + 1, 76L);
        const double t = static_cast<double>(jdx % 4) / 4.0;
        for (long j = 0; j < d; ++j) {
            const double want = (1.0 - t) * table->data[lo * d + j] + t * table->data[hi * d + j];
            CHECK(std::fabs(out->data[i * d + j] - want) < 1e-12);
        }
    }

    CHECK_THROWS_AS(extend_position_embeddings(table, 0, 4), ConfigError);
    CHECK_THROWS_AS(extend_position_embeddings(table, 77, 4), ConfigError);
}

TEST_CASE("encode_text determinism, shape and sensitivity") {
    auto model = tiny_model(42);
    auto a = model.encode_text("a red mug").cls_embedding;
    auto b = model.encode_text("a red mug").cls_embedding;
    CHECK(bitwise_equal(a->data, b->data));
    CHECK(a->dim(1) == model.tcfg.proj_dim);

    auto c = model.encode_text("a blue mug").cls_embedding;
    double dist = 0.0;
    for (size_t i = 0; i < a->data.size(); ++i)
        dist += (a->data[i] - c->data[i]) * (a->data[i] - c->data[i]);
    CHECK(dist > 0.0);
}

TEST_CASE("encode_text rejects out-of-range token ids") {
    auto model = tiny_model(42);
    TokenSequence seq;
    seq.ids = {Vocabulary::kClsId, model.tcfg.vocab_size + 5};
    CHECK_THROWS_AS(model.text.forward(seq), DataError);
}

TEST_CASE("encode_image shapes and caching") {
    VisionConfig cfg;
    cfg.image_size = 32;
    cfg.patch_size = 8;
    cfg.channels = 3;
    cfg.embed_dim = 16;
    cfg.num_layers = 2;
    cfg.num_heads = 2;
    cfg.proj_dim = 16;
    Rng rng(11);
    auto enc = VisionEncoder::init(cfg, rng);

    auto img = make_tensor({32, 32, 3});
    for (auto& v : img->data) v = rng.next_real(0.0, 1.0);
    auto out = enc.forward(img);
    CHECK(out.token_grid->shape == std::vector<long>{4, 4, 16});
    CHECK(out.cls_embedding->shape == std::vector<long>{1, 16});
    REQUIRE(out.final_block_input);
    CHECK(out.final_block_input->shape == std::vector<long>{17, 16});

    auto bad = make_tensor({16, 32, 3});
    CHECK_THROWS_AS(enc.forward(bad), DataError);
}

TEST_CASE("constant image with zero projection bias gives identical pre-positional patch tokens") {
    VisionConfig cfg;
    cfg.image_size = 16;
    cfg.patch_size = 8;
    cfg.channels = 1;
    cfg.embed_dim = 8;
    cfg.num_layers = 1;
    cfg.num_heads = 2;
    cfg.proj_dim = 8;
    Rng rng(13);
    auto enc = VisionEncoder::init(cfg, rng);  // bias initialized to zero

    auto img = make_tensor({16, 16, 1});  // all zeros
    auto tokens = enc.patch_tokens(img);
    REQUIRE(tokens->dim(0) == 4);
    for (long p = 1; p < 4; ++p)
        CHECK(bitwise_equal(
            std::vector<double>(tokens->data.begin(), tokens->data.begin() + 8),
            std::vector<double>(tokens->data.begin() + p * 8, tokens->data.begin() + (p + 1) * 8)));
}

TEST_CASE("permuting two input patches permutes the pre-positional patch embeddings") {
    VisionConfig cfg;
    cfg.image_size = 16;
    cfg.patch_size = 8;
    cfg.channels = 2;
    cfg.embed_dim = 8;
    cfg.num_layers = 1;
    cfg.num_heads = 2;
    cfg.proj_dim = 8;
    Rng rng(17);
    auto enc = VisionEncoder::init(cfg, rng);

    auto img = make_tensor({16, 16, 2});
    for (auto& v : img->data) v = rng.next_real(0.0, 1.0);

    // Swap the pixel blocks of patches (0,0) and (0,1).
    auto swapped = make_tensor({16, 16, 2}, img->data);
    for (long y = 0; y < 8; ++y)
        for (long x = 0; x < 8; ++x)
            for (long c = 0; c < 2; ++c)
                std::swap(swapped->data[(y * 16 + x) * 2 + c],
                          swapped->data[(y * 16 + (x + 8)) * 2 + c]);

    auto t1 = enc.patch_tokens(img);
    auto t2 = enc.patch_tokens(swapped);
    auto row = [](const TensorPtr& t, long r) {
        return std::vector<double>(t->data.begin() + r * t->dim(1),
                                   t->data.begin() + (r + 1) * t->dim(1));
    };
    CHECK(bitwise_equal(row(t1, 0), row(t2, 1)));
    CHECK(bitwise_equal(row(t1, 1), row(t2, 0)));
    CHECK(bitwise_equal(row(t1, 2), row(t2, 2)));
    CHECK(bitwise_equal(row(t1, 3), row(t2, 3)));
}

TEST_CASE("encoders are bitwise-stable pure functions") {
    auto model = tiny_model(5);
    auto img = make_tensor({8, 8, 1});
    Rng rng(3);
    for (auto& v : img->data) v = rng.next_real(0.0, 1.0);
    auto a = model.encode_image(img);
    auto b = model.encode_image(img);
    CHECK(bitwise_equal(a.cls_embedding->data, b.cls_embedding->data));
    CHECK(bitwise_equal(a.token_grid->data, b.token_grid->data));
}

TEST_CASE("model init is seed-deterministic and parameter names are unique") {
    auto m1 = tiny_model(9);
    auto m2 = tiny_model(9);
    auto p1 = m1.parameters();
    auto p2 = m2.parameters();
    REQUIRE(p1.size() == p2.size());
    std::set<std::string> names;
    for (size_t i = 0; i < p1.size(); ++i) {
        CHECK(p1[i]->name == p2[i]->name);
        CHECK(bitwise_equal(p1[i]->data, p2[i]->data));
        CHECK(names.insert(p1[i]->name).second);
    }
    auto m3 = tiny_model(10);
    bool any_diff = false;
    auto p3 = m3.parameters();
    for (size_t i = 0; i < p1.size(); ++i)
        if (!bitwise_equal(p1[i]->data, p3[i]->data)) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("extended positional table becomes the trainable parameter") {
    TextConfig cfg = tiny_text_config();
    cfg.use_extended = true;  // 2 + 6*2 = 14 rows
    Rng rng(23);
    auto enc = TextEncoder::init(cfg, rng);
    CHECK(enc.pos_embed->dim(0) == cfg.extended_max_len());
    CHECK(enc.pos_embed->requires_grad);
    CHECK(cfg.max_len() == cfg.extended_max_len());
}

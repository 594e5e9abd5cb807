#include <cmath>
#include <filesystem>
#include <numeric>

#include <doctest.h>

#include "fgclip/error.hpp"
#include "fgclip/losses.hpp"
#include "fgclip/rng.hpp"
#include "fgclip/selfcheck.hpp"
#include "fgclip/toydata.hpp"
#include "fgclip/trainer.hpp"

using namespace fgclip;

namespace {

std::vector<DatasetRecord> tiny_records() {
    std::vector<DatasetRecord> records;
    const char* specs[] = {
        "synthetic:base=0.2,0.2,0.8;block=0.1,0.1,0.5,0.5,0.9,0.1,0.1;noise=0.02;seed=1",
        "synthetic:base=0.8,0.2,0.2;block=0.4,0.4,0.9,0.9,0.1,0.9,0.1;noise=0.02;seed=2",
        "synthetic:base=0.2,0.8,0.2;block=0.2,0.5,0.7,0.9,0.1,0.1,0.9;noise=0.02;seed=3",
        "synthetic:base=0.5,0.5,0.1;block=0.5,0.1,0.9,0.5,0.9,0.9,0.9;noise=0.02;seed=4",
    };
    const char* caps[] = {"a red mug", "a green mug", "a blue mug", "a large table"};
    for (int i = 0; i < 4; ++i) {
        DatasetRecord rec;
        rec.image_id = "t" + std::to_string(i);
        rec.image_source = specs[i];
        rec.short_caption = caps[i];
        rec.long_caption = std::string(caps[i]) + " on a small wooden table";
        RegionBox box;
        box.x1 = 0.1;
        box.y1 = 0.1;
        box.x2 = 0.6;
        box.y2 = 0.6;
        box.positive_caption = caps[i];
        box.negative_captions = {"a purple mug", "a pink mug"};
        rec.regions.push_back(box);
        records.push_back(rec);
    }
    return records;
}

ClipModel tiny_records_model(uint64_t seed) {
    auto records = tiny_records();
    auto vocab = Vocabulary::build(caption_corpus(records), 32);
    return ClipModel::init(tiny_vision_config(), tiny_text_config(), vocab, seed);
}

}  // namespace

TEST_CASE("lr_schedule: linear warmup then constant") {
    TrainConfig cfg = TrainConfig::stage_defaults(1);
    cfg.lr = 1e-4;
    cfg.warmup_iters = 200;
    CHECK(lr_schedule(0, cfg) == 0.0);
    CHECK(lr_schedule(100, cfg) == doctest::Approx(5e-5).epsilon(1e-12));
    CHECK(lr_schedule(200, cfg) == doctest::Approx(1e-4));
    CHECK(lr_schedule(5000, cfg) == doctest::Approx(1e-4));
    cfg.warmup_iters = 0;
    CHECK(lr_schedule(0, cfg) == doctest::Approx(1e-4));
    CHECK_THROWS_AS(lr_schedule(-1, cfg), ConfigError);
}

TEST_CASE("stage defaults mirror the two-stage settings") {
    auto s1 = TrainConfig::stage_defaults(1);
    CHECK(s1.lr == doctest::Approx(1e-4));
    CHECK(s1.weight_decay == doctest::Approx(0.05));
    CHECK(s1.warmup_iters == 200);
    CHECK(s1.beta1 == doctest::Approx(0.9));
    CHECK(s1.beta2 == doctest::Approx(0.98));
    CHECK(s1.use_global);
    CHECK_FALSE(s1.use_regional);
    CHECK_FALSE(s1.use_hard);

    auto s2 = TrainConfig::stage_defaults(2);
    CHECK(s2.lr == doctest::Approx(1e-6));
    CHECK(s2.weight_decay == doctest::Approx(0.001));
    CHECK(s2.warmup_iters == 50);
    CHECK(s2.alpha == doctest::Approx(0.1));
    CHECK(s2.beta == doctest::Approx(0.5));
    CHECK(s2.use_regional);
    CHECK(s2.use_hard);

    // Stage 1 forces the {global only} toggles.
    TrainConfig forced = TrainConfig::stage_defaults(1);
    forced.use_regional = true;
    forced.use_hard = true;
    forced.validate();
    CHECK_FALSE(forced.use_regional);
    CHECK_FALSE(forced.use_hard);

    CHECK_THROWS_AS(TrainConfig::stage_defaults(3), ConfigError);
}

TEST_CASE("adamw single-step closed forms") {
    TrainConfig cfg = TrainConfig::stage_defaults(1);
    cfg.weight_decay = 0.0;

    auto theta = make_tensor({1}, {0.0}, true);
    theta->name = "p";
    theta->ensure_grad();
    theta->grad[0] = 1.0;
    std::vector<TensorPtr> params{theta};
    auto state = OptimizerState::init(params);
    adamw_step(params, state, cfg, 1e-4);
    // Bias corrections cancel at step 1: delta = -lr * g/(|g| + eps).
    CHECK(theta->data[0] == doctest::Approx(-1e-4).epsilon(1e-6));

    // Zero gradient, zero decay: parameters unchanged.
    auto frozen = make_tensor({2}, {0.5, -0.25}, true);
    frozen->name = "q";
    frozen->ensure_grad();
    std::vector<TensorPtr> params2{frozen};
    auto state2 = OptimizerState::init(params2);
    adamw_step(params2, state2, cfg, 1e-4);
    CHECK(frozen->data[0] == 0.5);
    CHECK(frozen->data[1] == -0.25);

    // Decoupled decay: with g = 0 and wd > 0, theta shrinks by lr*wd*theta.
    TrainConfig decay_cfg = cfg;
    decay_cfg.weight_decay = 0.05;
    auto decayed = make_tensor({1}, {2.0}, true);
    decayed->name = "r";
    decayed->ensure_grad();
    std::vector<TensorPtr> params3{decayed};
    auto state3 = OptimizerState::init(params3);
    adamw_step(params3, state3, decay_cfg, 1e-3);
    CHECK(decayed->data[0] == doctest::Approx(2.0 - 1e-3 * 0.05 * 2.0).epsilon(1e-12));

    // Non-finite gradients abort with the parameter named.
    auto broken = make_tensor({1}, {0.0}, true);
    broken->name = "vision.broken";
    broken->ensure_grad();
    broken->grad[0] = std::numeric_limits<double>::quiet_NaN();
    std::vector<TensorPtr> params4{broken};
    auto state4 = OptimizerState::init(params4);
    CHECK_THROWS_WITH_AS(adamw_step(params4, state4, cfg, 1e-4),
                         doctest::Contains("vision.broken"), NumericError);
}

TEST_CASE("temperature is excluded from weight decay") {
    TrainConfig cfg = TrainConfig::stage_defaults(1);
    cfg.weight_decay = 0.5;
    auto tau_param = make_tensor({1}, {2.0}, true);
    tau_param->name = "temperature.log_inv_tau";
    tau_param->ensure_grad();
    std::vector<TensorPtr> params{tau_param};
    auto state = OptimizerState::init(params);
    adamw_step(params, state, cfg, 1e-2);
    CHECK(tau_param->data[0] == 2.0);  // no decay, no gradient -> unchanged
}

TEST_CASE("repeated steps on a frozen batch strictly decrease the loss") {
    auto model = tiny_records_model(13);
    auto records = tiny_records();
    auto params = model.parameters();
    auto opt = OptimizerState::init(params);
    TrainConfig cfg = TrainConfig::stage_defaults(1);
    cfg.lr = 5e-4;
    cfg.weight_decay = 0.0;  // decay pressure is not part of the batch loss
    cfg.warmup_iters = 0;

    auto batch_loss = [&] {
        std::vector<TensorPtr> v_rows, t_rows;
        for (const auto& rec : records) {
            auto img = render_image(rec.image_source, model.vcfg.image_size, model.vcfg.channels);
            v_rows.push_back(model.encode_image(img).cls_embedding);
            t_rows.push_back(model.encode_text(rec.short_caption).cls_embedding);
        }
        return global_contrastive_loss(concat(v_rows, 0), concat(t_rows, 0), model.temperature);
    };

    double prev = 1e300;
    for (int step = 0; step < 10; ++step) {
        model.zero_grads();
        double value;
        {
            TapeScope scope;
            auto loss = batch_loss();
            value = loss->data[0];
            scope.tape().backward(loss);
        }
        CHECK(value < prev);
        prev = value;
        adamw_step(params, opt, cfg, cfg.lr);
    }
}

TEST_CASE("train_stage: descent, determinism, counters, tau bounds") {
    auto records = tiny_records();
    TrainConfig cfg = TrainConfig::stage_defaults(1);
    cfg.batch_size = 4;
    cfg.epochs = 8;
    cfg.lr = 3e-3;
    cfg.warmup_iters = 2;
    cfg.seed = 5;

    reset_loss_counters();
    auto model1 = tiny_records_model(21);
    auto result1 = train_stage(records, cfg, model1);
    CHECK_FALSE(result1.aborted);
    CHECK(result1.final_loss < result1.first_loss);

    // Stage-1 path never evaluates the regional or hard losses.
    auto counters = loss_counters();
    CHECK(counters.global_evals > 0);
    CHECK(counters.regional_evals == 0);
    CHECK(counters.hard_evals == 0);

    // tau stays inside its clamp bounds throughout.
    for (const auto& row : result1.metrics) {
        CHECK(row.tau >= 0.01);
        CHECK(row.tau <= 1.0);
    }

    // Same seed, same data, same config: bitwise-identical checkpoints and logs.
    auto model2 = tiny_records_model(21);
    auto result2 = train_stage(records, cfg, model2);
    CHECK(result1.checkpoint.serialize() == result2.checkpoint.serialize());
    CHECK(metrics_to_csv(result1.metrics) == metrics_to_csv(result2.metrics));

    // A different seed shuffles differently.
    TrainConfig other = cfg;
    other.seed = 6;
    auto model3 = tiny_records_model(21);
    auto result3 = train_stage(records, other, model3);
    CHECK(result1.checkpoint.serialize() != result3.checkpoint.serialize());
}

TEST_CASE("stage-2 with only the global toggle reproduces a direct Eq. 2 evaluation") {
    auto records = tiny_records();
    TrainConfig cfg = TrainConfig::stage_defaults(2);
    cfg.batch_size = 4;
    cfg.epochs = 1;
    cfg.lr = 1e-3;
    cfg.warmup_iters = 0;
    cfg.seed = 9;
    cfg.use_regional = false;
    cfg.use_hard = false;

    auto model = tiny_records_model(33);
    auto reference = tiny_records_model(33);  // identical weights, never updated

    auto result = train_stage(records, cfg, model);
    REQUIRE(result.metrics.size() == 1);
    CHECK(result.metrics[0].loss_regional == 0.0);
    CHECK(result.metrics[0].loss_hard == 0.0);

    // Recompute the first step's global loss on the same seeded batch order.
    std::vector<size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(cfg.seed, "epoch:0"));
    shuffle_rng.shuffle(order);
    std::vector<TensorPtr> v_rows, ts_rows, tl_rows;
    for (size_t idx : order) {
        auto img = render_image(records[idx].image_source, reference.vcfg.image_size,
                                reference.vcfg.channels);
        v_rows.push_back(reference.encode_image(img).cls_embedding);
        ts_rows.push_back(reference.encode_text(records[idx].short_caption).cls_embedding);
        tl_rows.push_back(reference.encode_text(records[idx].long_caption).cls_embedding);
    }
    auto v = concat(v_rows, 0);
    const double direct =
        global_contrastive_loss(v, concat(ts_rows, 0), reference.temperature)->data[0] +
        global_contrastive_loss(v, concat(tl_rows, 0), reference.temperature)->data[0];
    CHECK(result.metrics[0].loss_total == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("stage 2 without regions anywhere is a data error") {
    auto records = tiny_records();
    for (auto& rec : records) rec.regions.clear();
    TrainConfig cfg = TrainConfig::stage_defaults(2);
    auto model = tiny_records_model(3);
    CHECK_THROWS_AS(train_stage(records, cfg, model), DataError);
}

TEST_CASE("checkpoint round trip is exact at 32-bit and rejects corruption") {
    auto model = tiny_model(17);
    TrainConfig cfg = TrainConfig::stage_defaults(1);
    auto ck = make_checkpoint(model, cfg);
    const std::string bytes = ck.serialize();

    auto back = Checkpoint::deserialize(bytes);
    auto restored = restore_model(back);
    auto p1 = model.parameters();
    auto p2 = restored.parameters();
    REQUIRE(p1.size() == p2.size());
    for (size_t i = 0; i < p1.size(); ++i) {
        REQUIRE(p1[i]->shape == p2[i]->shape);
        for (size_t k = 0; k < p1[i]->data.size(); ++k)
            CHECK(static_cast<float>(p1[i]->data[k]) == static_cast<float>(p2[i]->data[k]));
    }
    CHECK(restored.vocab.size() == model.vocab.size());

    // Any corrupted byte must be rejected by the checksum.
    for (size_t pos : {size_t(5), bytes.size() / 2, bytes.size() - 3}) {
        std::string bad = bytes;
        bad[pos] = static_cast<char>(bad[pos] ^ 0x40);
        CHECK_THROWS_AS(Checkpoint::deserialize(bad), DataError);
    }
    // Truncation as well.
    CHECK_THROWS_AS(Checkpoint::deserialize(bytes.substr(0, bytes.size() - 9)), DataError);

    // Loading a stage-1 checkpoint as stage-2 init keeps weights, swaps config.
    auto model2 = restore_model(back);
    TrainConfig s2 = TrainConfig::stage_defaults(2);
    auto ck2 = make_checkpoint(model2, s2);
    CHECK(train_config_from_checkpoint(ck2).stage == 2);
    auto again = restore_model(ck2);
    auto p3 = again.parameters();
    for (size_t i = 0; i < p1.size(); ++i)
        for (size_t k = 0; k < p1[i]->data.size(); ++k)
            CHECK(static_cast<float>(p1[i]->data[k]) == static_cast<float>(p3[i]->data[k]));
}

TEST_CASE("checkpoint file save/load through the filesystem") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "fgclip_test_ck";
    fs::create_directories(dir);
    const std::string path = (dir / "model.bin").string();

    auto model = tiny_model(19);
    auto opt = OptimizerState::init(model.parameters());
    opt.step = 7;
    auto ck = make_checkpoint(model, TrainConfig::stage_defaults(1), &opt);
    ck.save(path);
    auto loaded = Checkpoint::load(path);
    CHECK(loaded.serialize() == ck.serialize());
    CHECK(loaded.opt_step == 7);
    auto opt2 = restore_optimizer(loaded, model.parameters());
    CHECK(opt2.step == 7);
    fs::remove_all(dir);
}

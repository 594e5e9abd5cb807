#include "fgclip/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include <json.hpp>

#include "fgclip/error.hpp"
#include "fgclip/io_util.hpp"
#include "fgclip/losses.hpp"
#include "fgclip/regionops.hpp"
#include "fgclip/rng.hpp"

namespace fgclip {

namespace {

std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

nlohmann::json vision_to_json(const VisionConfig& c) {
    return {{"image_size", c.image_size}, {"patch_size", c.patch_size}, {"channels", c.channels},
            {"embed_dim", c.embed_dim},   {"num_layers", c.num_layers}, {"num_heads", c.num_heads},
            {"mlp_ratio", c.mlp_ratio},   {"proj_dim", c.proj_dim}};
}

VisionConfig vision_from_json(const nlohmann::json& j) {
    VisionConfig c;
    c.image_size = j.at("image_size").get<long>();
    c.patch_size = j.at("patch_size").get<long>();
    c.channels = j.at("channels").get<long>();
    c.embed_dim = j.at("embed_dim").get<long>();
    c.num_layers = j.at("num_layers").get<long>();
    c.num_heads = j.at("num_heads").get<long>();
    c.mlp_ratio = j.at("mlp_ratio").get<double>();
    c.proj_dim = j.at("proj_dim").get<long>();
    return c;
}

nlohmann::json text_to_json(const TextConfig& c) {
    return {{"vocab_size", c.vocab_size},   {"embed_dim", c.embed_dim},
            {"num_layers", c.num_layers},   {"num_heads", c.num_heads},
            {"mlp_ratio", c.mlp_ratio},     {"proj_dim", c.proj_dim},
            {"base_max_len", c.base_max_len}, {"keep_prefix", c.keep_prefix},
            {"interp_factor", c.interp_factor}, {"use_extended", c.use_extended}};
}

TextConfig text_from_json(const nlohmann::json& j) {
    TextConfig c;
    c.vocab_size = j.at("vocab_size").get<long>();
    c.embed_dim = j.at("embed_dim").get<long>();
    c.num_layers = j.at("num_layers").get<long>();
    c.num_heads = j.at("num_heads").get<long>();
    c.mlp_ratio = j.at("mlp_ratio").get<double>();
    c.proj_dim = j.at("proj_dim").get<long>();
    c.base_max_len = j.at("base_max_len").get<long>();
    c.keep_prefix = j.at("keep_prefix").get<long>();
    c.interp_factor = j.at("interp_factor").get<long>();
    c.use_extended = j.at("use_extended").get<bool>();
    return c;
}

nlohmann::json train_to_json(const TrainConfig& c) {
    return {{"stage", c.stage},
            {"batch_size", c.batch_size},
            {"lr", c.lr},
            {"weight_decay", c.weight_decay},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"warmup_iters", c.warmup_iters},
            {"epochs", c.epochs},
            {"alpha", c.alpha},
            {"beta", c.beta},
            {"use_global", c.use_global},
            {"use_regional", c.use_regional},
            {"use_hard", c.use_hard},
            {"seed", c.seed},
            {"max_regions_per_step", c.max_regions_per_step},
            {"roi_samples", c.roi_samples},
            {"grad_clip", c.grad_clip},
            {"grad_clip_norm", c.grad_clip_norm}};
}

TrainConfig train_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.stage = j.at("stage").get<int>();
    c.batch_size = j.at("batch_size").get<long>();
    c.lr = j.at("lr").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.warmup_iters = j.at("warmup_iters").get<long>();
    c.epochs = j.at("epochs").get<long>();
    c.alpha = j.at("alpha").get<double>();
    c.beta = j.at("beta").get<double>();
    c.use_global = j.at("use_global").get<bool>();
    c.use_regional = j.at("use_regional").get<bool>();
    c.use_hard = j.at("use_hard").get<bool>();
    c.seed = j.at("seed").get<uint64_t>();
    c.max_regions_per_step = j.at("max_regions_per_step").get<long>();
    c.roi_samples = j.at("roi_samples").get<long>();
    c.grad_clip = j.at("grad_clip").get<bool>();
    c.grad_clip_norm = j.at("grad_clip_norm").get<double>();
    return c;
}

}  // namespace

TrainConfig TrainConfig::stage_defaults(int stage) {
    TrainConfig c;
    c.stage = stage;
    if (stage == 1) {
        c.lr = 1e-4;
        c.weight_decay = 0.05;
        c.warmup_iters = 200;
        c.use_regional = false;
        c.use_hard = false;
    } else if (stage == 2) {
        c.lr = 1e-6;
        c.weight_decay = 0.001;
        c.warmup_iters = 50;
    } else {
        throw ConfigError("TrainConfig: stage must be 1 or 2");
    }
    return c;
}

void TrainConfig::validate() {
    if (stage != 1 && stage != 2) throw ConfigError("TrainConfig: stage must be 1 or 2");
    if (stage == 1) {
        use_global = true;
        use_regional = false;
        use_hard = false;
    }
    if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
    if (alpha < 0.0 || beta < 0.0) throw ConfigError("TrainConfig: alpha/beta must be >= 0");
    if (lr < 0.0 || weight_decay < 0.0) throw ConfigError("TrainConfig: lr/weight_decay must be >= 0");
    if (warmup_iters < 0) throw ConfigError("TrainConfig: warmup_iters must be >= 0");
    if (max_regions_per_step < 1) throw ConfigError("TrainConfig: max_regions_per_step must be >= 1");
    if (roi_samples < 1) throw ConfigError("TrainConfig: roi_samples must be >= 1");
}

double lr_schedule(long step, const TrainConfig& cfg) {
    if (step < 0) throw ConfigError("lr_schedule: step must be >= 0");
    if (cfg.warmup_iters > 0 && step < cfg.warmup_iters)
        return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_iters);
    return cfg.lr;
}

OptimizerState OptimizerState::init(const std::vector<TensorPtr>& params) {
    OptimizerState s;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const auto& p : params) {
        s.m.emplace_back(p->data.size(), 0.0);
        s.v.emplace_back(p->data.size(), 0.0);
    }
    return s;
}

void adamw_step(const std::vector<TensorPtr>& params, OptimizerState& state,
                const TrainConfig& cfg, double lr_now) {
    if (state.m.size() != params.size())
        throw ConfigError("adamw_step: optimizer state does not match parameter list");
    for (size_t pi = 0; pi < params.size(); ++pi) {
        const auto& p = params[pi];
        if (!p->has_grad()) continue;
        for (double g : p->grad)
            if (!std::isfinite(g))
                throw NumericError("adamw_step: non-finite gradient in parameter \"" + p->name + "\"");
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = *params[pi];
        auto& m = state.m[pi];
        auto& v = state.v[pi];
        // Temperature is excluded from decay.
        const double wd = p.name == "temperature.log_inv_tau" ? 0.0 : cfg.weight_decay;
        const bool has_grad = p.has_grad();
        for (size_t i = 0; i < p.data.size(); ++i) {
            const double g = has_grad ? p.grad[i] : 0.0;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            p.data[i] -= lr_now * (m_hat / (std::sqrt(v_hat) + 1e-8) + wd * p.data[i]);
        }
    }
}

std::string metrics_to_csv(const std::vector<MetricsRow>& rows) {
    std::string out = "step,stage,lr,loss_global,loss_regional,loss_hard,loss_total,tau\n";
    for (const auto& r : rows) {
        out += std::to_string(r.step) + "," + std::to_string(r.stage) + "," + fmt_g(r.lr) + "," +
               fmt_g(r.loss_global) + "," + fmt_g(r.loss_regional) + "," + fmt_g(r.loss_hard) +
               "," + fmt_g(r.loss_total) + "," + fmt_g(r.tau) + "\n";
    }
    return out;
}

TrainResult train_stage(const std::vector<DatasetRecord>& records, TrainConfig cfg,
                        ClipModel& model) {
    cfg.validate();
    if (records.empty()) throw DataError("train_stage: empty dataset");
    if (cfg.stage == 2) {
        bool any_regions = false;
        for (const auto& rec : records)
            for (const auto& box : rec.regions)
                if (box.valid() && !box.positive_caption.empty()) any_regions = true;
        if (!any_regions)
            throw DataError("train_stage: stage 2 requires region annotations, none found");
    }

    auto params = model.parameters();
    auto opt = OptimizerState::init(params);
    TrainResult result;
    long step = 0;

    for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<size_t> order(records.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(derive_seed(cfg.seed, "epoch:" + std::to_string(epoch)));
        shuffle_rng.shuffle(order);

        for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const size_t end = std::min(order.size(), start + cfg.batch_size);
            const double lr_now = lr_schedule(step, cfg);

            TapeScope scope;
            std::vector<TensorPtr> v_rows, ts_rows, tl_rows;
            std::vector<EncoderOutput> vision_outs;
            std::vector<const DatasetRecord*> batch;
            for (size_t bi = start; bi < end; ++bi) batch.push_back(&records[order[bi]]);

            for (const auto* rec : batch) {
                auto img = render_image(rec->image_source, model.vcfg.image_size, model.vcfg.channels);
                auto enc = model.encode_image(img);
                v_rows.push_back(enc.cls_embedding);
                vision_outs.push_back(enc);
                if (cfg.use_global) {
                    ts_rows.push_back(model.encode_text(rec->short_caption).cls_embedding);
                    tl_rows.push_back(model.encode_text(rec->long_caption).cls_embedding);
                }
            }
            auto v = concat(v_rows, 0);

            MetricsRow row;
            row.step = step;
            row.stage = cfg.stage;
            row.lr = lr_now;

            TensorPtr loss;
            // Both caption granularities per step, summed with equal weight.
            TensorPtr l_global = make_scalar(0.0);
            if (cfg.use_global)
                l_global = add(global_contrastive_loss(v, concat(ts_rows, 0), model.temperature),
                               global_contrastive_loss(v, concat(tl_rows, 0), model.temperature));
            row.loss_global = l_global->data[0];

            if (cfg.stage == 1) {
                loss = l_global;
            } else {
                std::vector<TensorPtr> region_rows, text_rows;
                std::vector<TensorPtr> caption_sets;
                long pooled = 0;
                for (size_t bi = 0; bi < batch.size() && pooled < cfg.max_regions_per_step; ++bi) {
                    for (const auto& box : batch[bi]->regions) {
                        if (pooled >= cfg.max_regions_per_step) break;
                        if (!box.valid() || box.positive_caption.empty()) continue;
                        auto feat = roi_align_average(vision_outs[bi].token_grid, box, cfg.roi_samples);
                        region_rows.push_back(reshape(feat, {1, model.vcfg.proj_dim}));
                        auto pos = model.encode_text(box.positive_caption).cls_embedding;
                        text_rows.push_back(pos);
                        if (cfg.use_hard) {
                            std::vector<TensorPtr> caps{pos};
                            for (const auto& neg : box.negative_captions)
                                caps.push_back(model.encode_text(neg).cls_embedding);
                            caption_sets.push_back(concat(caps, 0));
                        }
                        ++pooled;
                    }
                }
                TensorPtr l_regional = make_scalar(0.0);
                TensorPtr l_hard = make_scalar(0.0);
                if (cfg.use_regional && pooled > 0)
                    l_regional = regional_contrastive_loss(concat(region_rows, 0),
                                                           concat(text_rows, 0), model.temperature);
                if (cfg.use_hard && pooled > 0)
                    l_hard = hard_negative_loss(concat(region_rows, 0), caption_sets,
                                                model.temperature);
                row.loss_regional = l_regional->data[0];
                row.loss_hard = l_hard->data[0];
                loss = combined_loss(l_global, l_regional, l_hard, cfg.alpha, cfg.beta);
            }

            row.loss_total = loss->data[0];
            row.tau = model.temperature.tau_value();

            if (!std::isfinite(row.loss_total)) {
                result.aborted = true;
                result.abort_reason = "non-finite loss at step " + std::to_string(step);
                result.checkpoint = make_checkpoint(model, cfg, &opt);
                result.metrics.push_back(row);
                return result;
            }

            model.zero_grads();
            scope.tape().backward(loss);

            if (cfg.grad_clip) {
                double sq = 0.0;
                for (const auto& p : params)
                    if (p->has_grad())
                        for (double g : p->grad) sq += g * g;
                const double norm = std::sqrt(sq);
                if (norm > cfg.grad_clip_norm && norm > 0.0) {
                    const double s = cfg.grad_clip_norm / norm;
                    for (const auto& p : params)
                        if (p->has_grad())
                            for (double& g : p->grad) g *= s;
                }
            }

            try {
                adamw_step(params, opt, cfg, lr_now);
            } catch (const NumericError& e) {
                result.aborted = true;
                result.abort_reason = e.what();
                result.checkpoint = make_checkpoint(model, cfg, &opt);
                result.metrics.push_back(row);
                return result;
            }

            if (step == 0) result.first_loss = row.loss_total;
            result.final_loss = row.loss_total;
            result.metrics.push_back(row);
            ++step;
        }
    }

    result.checkpoint = make_checkpoint(model, cfg, &opt);
    return result;
}

Checkpoint make_checkpoint(const ClipModel& model, const TrainConfig& cfg,
                           const OptimizerState* opt) {
    Checkpoint ck;
    nlohmann::json j;
    j["vision"] = vision_to_json(model.vcfg);
    j["text"] = text_to_json(model.tcfg);
    j["vocab"] = model.vocab.to_line();
    j["train"] = train_to_json(cfg);
    ck.config_json = j.dump();
    const auto params = model.parameters();
    for (const auto& p : params) ck.tensors.push_back(Checkpoint::from_tensor(p));
    if (opt) {
        ck.opt_step = opt->step;
        for (size_t i = 0; i < params.size(); ++i) {
            Checkpoint::NamedTensor m{params[i]->name, params[i]->shape, {}};
            Checkpoint::NamedTensor v{params[i]->name, params[i]->shape, {}};
            m.values.assign(opt->m[i].begin(), opt->m[i].end());
            v.values.assign(opt->v[i].begin(), opt->v[i].end());
            ck.opt_m.push_back(std::move(m));
            ck.opt_v.push_back(std::move(v));
        }
    }
    return ck;
}

ClipModel restore_model(const Checkpoint& ck) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ck.config_json);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint: invalid config snapshot: ") + e.what());
    }
    auto vcfg = vision_from_json(j.at("vision"));
    auto tcfg = text_from_json(j.at("text"));
    auto vocab = Vocabulary::from_line(j.at("vocab").get<std::string>());
    auto model = ClipModel::init(vcfg, tcfg, std::move(vocab), /*seed=*/0);
    for (const auto& p : model.parameters()) {
        const auto* t = ck.find(p->name);
        if (!t) throw DataError("checkpoint: missing tensor \"" + p->name + "\"");
        if (t->shape != p->shape)
            throw DataError("checkpoint: tensor \"" + p->name + "\" has shape " +
                            shape_str(t->shape) + ", expected " + shape_str(p->shape));
        for (size_t i = 0; i < p->data.size(); ++i) p->data[i] = static_cast<double>(t->values[i]);
    }
    return model;
}

OptimizerState restore_optimizer(const Checkpoint& ck, const std::vector<TensorPtr>& params) {
    auto state = OptimizerState::init(params);
    state.step = ck.opt_step;
    auto fill = [&](const std::vector<Checkpoint::NamedTensor>& src,
                    std::vector<std::vector<double>>& dst) {
        for (size_t i = 0; i < params.size(); ++i) {
            for (const auto& t : src) {
                if (t.name != params[i]->name) continue;
                if (t.values.size() != dst[i].size())
                    throw DataError("checkpoint: optimizer buffer for \"" + t.name +
                                    "\" has wrong size");
                for (size_t k = 0; k < t.values.size(); ++k)
                    dst[i][k] = static_cast<double>(t.values[k]);
            }
        }
    };
    fill(ck.opt_m, state.m);
    fill(ck.opt_v, state.v);
    return state;
}

TrainConfig train_config_from_checkpoint(const Checkpoint& ck) {
    nlohmann::json j = nlohmann::json::parse(ck.config_json);
    return train_from_json(j.at("train"));
}

}  // namespace fgclip

#include "fgclip/cli.hpp"

#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fgclip/error.hpp"
#include "fgclip/evalkit.hpp"
#include "fgclip/io_util.hpp"
#include "fgclip/selfcheck.hpp"

namespace fgclip::cli {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw ConfigError("config: unknown key \"" + it.key() + "\" in " + where);
}

void parse_vision(const json& j, VisionConfig& c) {
    reject_unknown(j, {"image_size", "patch_size", "channels", "embed_dim", "num_layers",
                       "num_heads", "mlp_ratio", "proj_dim"}, "model.vision");
    if (j.contains("image_size")) c.image_size = j["image_size"].get<long>();
    if (j.contains("patch_size")) c.patch_size = j["patch_size"].get<long>();
    if (j.contains("channels")) c.channels = j["channels"].get<long>();
    if (j.contains("embed_dim")) c.embed_dim = j["embed_dim"].get<long>();
    if (j.contains("num_layers")) c.num_layers = j["num_layers"].get<long>();
    if (j.contains("num_heads")) c.num_heads = j["num_heads"].get<long>();
    if (j.contains("mlp_ratio")) c.mlp_ratio = j["mlp_ratio"].get<double>();
    if (j.contains("proj_dim")) c.proj_dim = j["proj_dim"].get<long>();
}

void parse_text(const json& j, TextConfig& c) {
    reject_unknown(j, {"vocab_size", "embed_dim", "num_layers", "num_heads", "mlp_ratio",
                       "proj_dim", "base_max_len", "keep_prefix", "interp_factor", "use_extended"},
                   "model.text");
    if (j.contains("vocab_size")) c.vocab_size = j["vocab_size"].get<long>();
    if (j.contains("embed_dim")) c.embed_dim = j["embed_dim"].get<long>();
    if (j.contains("num_layers")) c.num_layers = j["num_layers"].get<long>();
    if (j.contains("num_heads")) c.num_heads = j["num_heads"].get<long>();
    if (j.contains("mlp_ratio")) c.mlp_ratio = j["mlp_ratio"].get<double>();
    if (j.contains("proj_dim")) c.proj_dim = j["proj_dim"].get<long>();
    if (j.contains("base_max_len")) c.base_max_len = j["base_max_len"].get<long>();
    if (j.contains("keep_prefix")) c.keep_prefix = j["keep_prefix"].get<long>();
    if (j.contains("interp_factor")) c.interp_factor = j["interp_factor"].get<long>();
    if (j.contains("use_extended")) c.use_extended = j["use_extended"].get<bool>();
}

void parse_train(const json& j, TrainConfig& c) {
    reject_unknown(j, {"stage", "batch_size", "lr", "weight_decay", "beta1", "beta2",
                       "warmup_iters", "epochs", "alpha", "beta", "use_global", "use_regional",
                       "use_hard", "max_regions_per_step", "roi_samples", "grad_clip",
                       "grad_clip_norm"},
                   "train");
    if (j.contains("stage")) c = TrainConfig::stage_defaults(j["stage"].get<int>());
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<long>();
    if (j.contains("lr")) c.lr = j["lr"].get<double>();
    if (j.contains("weight_decay")) c.weight_decay = j["weight_decay"].get<double>();
    if (j.contains("beta1")) c.beta1 = j["beta1"].get<double>();
    if (j.contains("beta2")) c.beta2 = j["beta2"].get<double>();
    if (j.contains("warmup_iters")) c.warmup_iters = j["warmup_iters"].get<long>();
    if (j.contains("epochs")) c.epochs = j["epochs"].get<long>();
    if (j.contains("alpha")) c.alpha = j["alpha"].get<double>();
    if (j.contains("beta")) c.beta = j["beta"].get<double>();
    if (j.contains("use_global")) c.use_global = j["use_global"].get<bool>();
    if (j.contains("use_regional")) c.use_regional = j["use_regional"].get<bool>();
    if (j.contains("use_hard")) c.use_hard = j["use_hard"].get<bool>();
    if (j.contains("max_regions_per_step"))
        c.max_regions_per_step = j["max_regions_per_step"].get<long>();
    if (j.contains("roi_samples")) c.roi_samples = j["roi_samples"].get<long>();
    if (j.contains("grad_clip")) c.grad_clip = j["grad_clip"].get<bool>();
    if (j.contains("grad_clip_norm")) c.grad_clip_norm = j["grad_clip_norm"].get<double>();
}

void parse_curate(const json& j, CurationConfig& c) {
    reject_unknown(j, {"conf_threshold", "iou_threshold", "negatives_per_region", "difficulty"},
                   "curate");
    if (j.contains("conf_threshold")) c.conf_threshold = j["conf_threshold"].get<double>();
    if (j.contains("iou_threshold")) c.iou_threshold = j["iou_threshold"].get<double>();
    if (j.contains("negatives_per_region"))
        c.negatives_per_region = j["negatives_per_region"].get<long>();
    if (j.contains("difficulty")) c.difficulty = j["difficulty"].get<long>();
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text, int stage_hint) {
    RunConfig cfg;
    cfg.train = TrainConfig::stage_defaults(stage_hint);
    if (text.empty()) return cfg;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    reject_unknown(j, {"seed", "out", "data", "model", "train", "curate", "eval", "heatmap"},
                   "top level");
    if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
    if (j.contains("out")) cfg.out = j["out"].get<std::string>();
    if (j.contains("data")) {
        const auto& d = j["data"];
        reject_unknown(d, {"dataset", "eval_dataset", "init_checkpoint", "lexicon"}, "data");
        if (d.contains("dataset")) cfg.dataset = d["dataset"].get<std::string>();
        if (d.contains("eval_dataset")) cfg.eval_dataset = d["eval_dataset"].get<std::string>();
        if (d.contains("init_checkpoint"))
            cfg.init_checkpoint = d["init_checkpoint"].get<std::string>();
        if (d.contains("lexicon")) cfg.lexicon_path = d["lexicon"].get<std::string>();
    }
    if (j.contains("model")) {
        reject_unknown(j["model"], {"vision", "text"}, "model");
        if (j["model"].contains("vision")) parse_vision(j["model"]["vision"], cfg.vision);
        if (j["model"].contains("text")) parse_text(j["model"]["text"], cfg.text);
    }
    if (j.contains("train")) parse_train(j["train"], cfg.train);
    if (j.contains("curate")) parse_curate(j["curate"], cfg.curate);
    if (j.contains("eval")) {
        reject_unknown(j["eval"], {"tasks", "roi_samples"}, "eval");
        if (j["eval"].contains("tasks"))
            cfg.eval_tasks = j["eval"]["tasks"].get<std::vector<std::string>>();
        if (j["eval"].contains("roi_samples"))
            cfg.eval_roi_samples = j["eval"]["roi_samples"].get<long>();
    }
    if (j.contains("heatmap")) {
        reject_unknown(j["heatmap"], {"query", "image_id"}, "heatmap");
        if (j["heatmap"].contains("query"))
            cfg.heatmap_query = j["heatmap"]["query"].get<std::string>();
        if (j["heatmap"].contains("image_id"))
            cfg.heatmap_image_id = j["heatmap"]["image_id"].get<std::string>();
    }
    return cfg;
}

std::string RunConfig::to_json_text() const {
    json j;
    j["seed"] = seed;
    j["out"] = out;
    j["data"] = {{"dataset", dataset},
                 {"eval_dataset", eval_dataset},
                 {"init_checkpoint", init_checkpoint},
                 {"lexicon", lexicon_path}};
    j["model"]["vision"] = {{"image_size", vision.image_size}, {"patch_size", vision.patch_size},
                            {"channels", vision.channels},     {"embed_dim", vision.embed_dim},
                            {"num_layers", vision.num_layers}, {"num_heads", vision.num_heads},
                            {"mlp_ratio", vision.mlp_ratio},   {"proj_dim", vision.proj_dim}};
    j["model"]["text"] = {{"vocab_size", text.vocab_size},     {"embed_dim", text.embed_dim},
                          {"num_layers", text.num_layers},     {"num_heads", text.num_heads},
                          {"mlp_ratio", text.mlp_ratio},       {"proj_dim", text.proj_dim},
                          {"base_max_len", text.base_max_len}, {"keep_prefix", text.keep_prefix},
                          {"interp_factor", text.interp_factor},
                          {"use_extended", text.use_extended}};
    j["train"] = {{"stage", train.stage},
                  {"batch_size", train.batch_size},
                  {"lr", train.lr},
                  {"weight_decay", train.weight_decay},
                  {"beta1", train.beta1},
                  {"beta2", train.beta2},
                  {"warmup_iters", train.warmup_iters},
                  {"epochs", train.epochs},
                  {"alpha", train.alpha},
                  {"beta", train.beta},
                  {"use_global", train.use_global},
                  {"use_regional", train.use_regional},
                  {"use_hard", train.use_hard},
                  {"max_regions_per_step", train.max_regions_per_step},
                  {"roi_samples", train.roi_samples},
                  {"grad_clip", train.grad_clip},
                  {"grad_clip_norm", train.grad_clip_norm}};
    j["curate"] = {{"conf_threshold", curate.conf_threshold},
                   {"iou_threshold", curate.iou_threshold},
                   {"negatives_per_region", curate.negatives_per_region},
                   {"difficulty", curate.difficulty}};
    j["eval"] = {{"tasks", eval_tasks}, {"roi_samples", eval_roi_samples}};
    j["heatmap"] = {{"query", heatmap_query}, {"image_id", heatmap_image_id}};
    return j.dump(2) + "\n";
}

namespace {

void log_resolved_config(const RunConfig& cfg) {
    atomic_write_file(cfg.out + "/resolved_config.json", cfg.to_json_text());
    log_info("resolved config written to " + cfg.out + "/resolved_config.json");
}

AttributeLexicon load_lexicon(const RunConfig& cfg) {
    return cfg.lexicon_path.empty() ? AttributeLexicon::builtin_default()
                                    : AttributeLexicon::load(cfg.lexicon_path);
}

std::vector<DatasetRecord> load_dataset(const std::string& path) {
    if (path.empty()) throw ConfigError("no dataset path configured (data.dataset)");
    ParseStats stats;
    auto records = read_records_jsonl(path, &stats);
    for (const auto& d : stats.diagnostics) log_info("skipped malformed record: " + d);
    if (records.empty()) log_info("dataset " + path + " contains no records");
    return records;
}

ClipModel fresh_model(const RunConfig& cfg, const std::vector<DatasetRecord>& records) {
    auto vocab = Vocabulary::build(caption_corpus(records), cfg.text.vocab_size);
    return ClipModel::init(cfg.vision, cfg.text, std::move(vocab), cfg.seed);
}

// Image cls embeddings for a record list, record-parallel.
TensorPtr encode_images(const ClipModel& model, const std::vector<DatasetRecord>& records) {
    const long n = static_cast<long>(records.size());
    auto out = make_tensor({n, model.vcfg.proj_dim});
    std::vector<std::string> errors(n);
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < n; ++i) {
        try {
            auto img = render_image(records[i].image_source, model.vcfg.image_size,
                                    model.vcfg.channels);
            auto cls = model.encode_image(img).cls_embedding;
            std::copy(cls->data.begin(), cls->data.end(),
                      out->data.begin() + i * model.vcfg.proj_dim);
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    }
    for (const auto& e : errors)
        if (!e.empty()) throw DataError("encode_images: " + e);
    return out;
}

TensorPtr encode_captions(const ClipModel& model, const std::vector<DatasetRecord>& records,
                          bool long_caption) {
    const long n = static_cast<long>(records.size());
    auto out = make_tensor({n, model.tcfg.proj_dim});
    std::vector<std::string> errors(n);
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < n; ++i) {
        try {
            const auto& cap = long_caption ? records[i].long_caption : records[i].short_caption;
            auto cls = model.encode_text(cap).cls_embedding;
            std::copy(cls->data.begin(), cls->data.end(),
                      out->data.begin() + i * model.tcfg.proj_dim);
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    }
    for (const auto& e : errors)
        if (!e.empty()) throw DataError("encode_captions: " + e);
    return out;
}

const std::set<std::string> kValidTasks = {"retrieval", "zeroshot", "bbox", "fgovd", "all"};

}  // namespace

int cmd_curate(const RunConfig& cfg) {
    log_resolved_config(cfg);
    auto lexicon = load_lexicon(cfg);
    auto records = load_dataset(cfg.dataset);
    CurationConfig ccfg = cfg.curate;
    ccfg.seed = cfg.seed;
    CurationStats stats;
    auto curated = curate_records(std::move(records), lexicon, ccfg, &stats);
    const std::string out_path = cfg.out + "/curated.jsonl";
    write_records_jsonl(curated, out_path);
    std::cout << "curate: records=" << stats.records << " boxes_kept=" << stats.boxes_kept
              << " boxes_dropped=" << stats.boxes_dropped
              << " negatives=" << stats.negatives_generated
              << " regions_without_negatives=" << stats.regions_without_negatives << "\n";
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

int cmd_train(const RunConfig& cfg) {
    log_resolved_config(cfg);
    auto records = load_dataset(cfg.dataset);
    TrainConfig tcfg = cfg.train;
    tcfg.seed = cfg.seed;
    if (tcfg.stage == 2 && cfg.init_checkpoint.empty())
        throw ConfigError("train: stage 2 requires --init <stage-1 checkpoint>");

    ClipModel model = cfg.init_checkpoint.empty()
                          ? fresh_model(cfg, records)
                          : restore_model(Checkpoint::load(cfg.init_checkpoint));

    auto result = train_stage(records, tcfg, model);
    result.checkpoint.save(cfg.out + "/checkpoint.bin");
    atomic_write_file(cfg.out + "/metrics.csv", metrics_to_csv(result.metrics));
    if (result.aborted) {
        std::cerr << "train aborted: " << result.abort_reason << " (last good checkpoint kept)\n";
        return 3;
    }
    std::cout << "train: steps=" << result.metrics.size() << " first_loss=" << result.first_loss
              << " final_loss=" << result.final_loss << "\n";
    std::cout << "wrote " << cfg.out << "/checkpoint.bin and " << cfg.out << "/metrics.csv\n";
    return 0;
}

int cmd_eval(const RunConfig& cfg) {
    log_resolved_config(cfg);
    if (cfg.init_checkpoint.empty())
        throw ConfigError("eval: a checkpoint is required (data.init_checkpoint or --init)");
    auto model = restore_model(Checkpoint::load(cfg.init_checkpoint));
    auto records = load_dataset(cfg.eval_dataset.empty() ? cfg.dataset : cfg.eval_dataset);

    std::set<std::string> tasks;
    for (const auto& t : cfg.eval_tasks) {
        if (!kValidTasks.count(t)) {
            std::string valid;
            for (const auto& v : kValidTasks) valid += (valid.empty() ? "" : ", ") + v;
            throw ConfigError("eval: unknown task \"" + t + "\" (valid: " + valid + ")");
        }
        if (t == "all") {
            tasks.insert({"retrieval", "zeroshot", "bbox", "fgovd"});
        } else {
            tasks.insert(t);
        }
    }

    for (const auto& task : tasks) {
        EvalReport report;
        if (task == "retrieval") {
            auto v = encode_images(model, records);
            auto short_rows = retrieval_recall(v, encode_captions(model, records, false));
            auto long_rows = retrieval_recall(v, encode_captions(model, records, true));
            report.task = "retrieval";
            for (auto r : short_rows.rows) {
                r.split = "short";
                report.rows.push_back(r);
            }
            for (auto r : long_rows.rows) {
                r.split = "long";
                report.rows.push_back(r);
            }
        } else if (task == "zeroshot") {
            report = zero_shot_classification(records, model);
        } else if (task == "bbox") {
            report = bbox_classification(records, model, {}, cfg.eval_roi_samples);
        } else {
            report = fgovd_accuracy(records, model, cfg.eval_roi_samples);
        }
        const std::string path = cfg.out + "/report_" + task + ".csv";
        report.write(path);
        std::cout << report.to_text();
        std::cout << "wrote " << path << "\n";
    }
    return 0;
}

int cmd_heatmap(const RunConfig& cfg) {
    log_resolved_config(cfg);
    if (cfg.heatmap_query.empty()) throw ConfigError("heatmap: heatmap.query must be set");
    auto records = load_dataset(cfg.dataset);
    if (records.empty()) throw DataError("heatmap: dataset is empty");

    const DatasetRecord* record = &records.front();
    if (!cfg.heatmap_image_id.empty()) {
        record = nullptr;
        for (const auto& r : records)
            if (r.image_id == cfg.heatmap_image_id) record = &r;
        if (!record)
            throw DataError("heatmap: image_id \"" + cfg.heatmap_image_id + "\" not in dataset");
    }

    ClipModel model = cfg.init_checkpoint.empty()
                          ? fresh_model(cfg, records)
                          : restore_model(Checkpoint::load(cfg.init_checkpoint));
    emit_similarity_heatmap(*record, cfg.heatmap_query, model, cfg.out + "/heatmap.txt",
                            cfg.out + "/heatmap.pgm");
    std::cout << "wrote " << cfg.out << "/heatmap.txt and " << cfg.out << "/heatmap.pgm\n";
    return 0;
}

int cmd_selfcheck() {
    const auto results = run_selfcheck();
    for (const auto& r : results)
        std::cout << (r.pass ? "PASS" : "FAIL") << "  " << r.name << "  (" << r.detail << ")\n";
    if (!all_passed(results)) {
        std::cout << "selfcheck: FAILURES PRESENT\n";
        return 3;
    }
    std::cout << "selfcheck: all checks passed\n";
    return 0;
}

int run(int argc, char** argv) {
    CLI::App app{"desk-scale fine-grained contrastive vision-language toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_flag, init_flag, tasks_flag;
    int64_t seed_flag = -1;
    int stage_flag = 0;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file");
        sub->add_option("--seed", seed_flag, "seed override");
        sub->add_option("--out", out_flag, "output directory override");
    };
    auto* curate = app.add_subcommand("curate", "run the data-curation pipeline");
    add_common(curate);
    auto* train = app.add_subcommand("train", "train stage 1 or stage 2");
    add_common(train);
    train->add_option("--stage", stage_flag, "training stage")->check(CLI::IsMember({1, 2}));
    train->add_option("--init", init_flag, "initial checkpoint (required for stage 2)");
    auto* eval = app.add_subcommand("eval", "run evaluation harnesses");
    add_common(eval);
    eval->add_option("--tasks", tasks_flag, "comma-separated: retrieval,zeroshot,bbox,fgovd,all");
    eval->add_option("--init", init_flag, "checkpoint to evaluate");
    auto* heatmap = app.add_subcommand("heatmap", "emit a similarity heatmap");
    add_common(heatmap);
    heatmap->add_option("--init", init_flag, "checkpoint (random weights when omitted)");
    auto* selfcheck = app.add_subcommand("selfcheck", "run gradient and oracle checks");
    add_common(selfcheck);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (selfcheck->parsed()) return cmd_selfcheck();

        std::string config_text = config_path.empty() ? "" : read_file(config_path);
        // --stage wins over the config file's stage key; the stage's defaults
        // seed the train section before the remaining config keys apply.
        if (stage_flag > 0 && !config_text.empty()) {
            try {
                auto j = nlohmann::json::parse(config_text);
                if (j.contains("train") && j["train"].contains("stage")) j["train"].erase("stage");
                config_text = j.dump();
            } catch (const nlohmann::json::exception& e) {
                throw ConfigError(std::string("config: invalid JSON: ") + e.what());
            }
        }
        RunConfig cfg = RunConfig::from_json_text(config_text, stage_flag > 0 ? stage_flag : 1);
        if (seed_flag >= 0) cfg.seed = static_cast<uint64_t>(seed_flag);
        if (!out_flag.empty()) cfg.out = out_flag;
        if (!init_flag.empty()) cfg.init_checkpoint = init_flag;
        if (stage_flag > 0) cfg.train.stage = stage_flag;
        if (!tasks_flag.empty()) {
            cfg.eval_tasks.clear();
            std::string item;
            std::istringstream is(tasks_flag);
            while (std::getline(is, item, ','))
                if (!item.empty()) cfg.eval_tasks.push_back(item);
        }

        if (curate->parsed()) return cmd_curate(cfg);
        if (train->parsed()) return cmd_train(cfg);
        if (eval->parsed()) return cmd_eval(cfg);
        if (heatmap->parsed()) return cmd_heatmap(cfg);
        throw ConfigError("no subcommand");
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace fgclip::cli

#include <filesystem>
#include <fstream>

#include <doctest.h>

#include "fgclip/cli.hpp"
#include "fgclip/error.hpp"
#include "fgclip/io_util.hpp"
#include "fgclip/selfcheck.hpp"
#include "fgclip/toydata.hpp"

using namespace fgclip;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str(const std::string& child = "") const {
        return child.empty() ? path.string() : (path / child).string();
    }
};

std::vector<DatasetRecord> mini_dataset() {
    auto lexicon = AttributeLexicon::builtin_default();
    return make_region_toy(3, lexicon, 2, 1, 1).eval;  // small but fully structured
}

}  // namespace

TEST_CASE("config parsing rejects unknown keys by name") {
    CHECK_THROWS_WITH_AS(cli::RunConfig::from_json_text("{\"bogus_key\": 1}", 1),
                         doctest::Contains("bogus_key"), ConfigError);
    CHECK_THROWS_WITH_AS(cli::RunConfig::from_json_text("{\"train\": {\"lr2\": 0.1}}", 1),
                         doctest::Contains("lr2"), ConfigError);
    CHECK_THROWS_AS(cli::RunConfig::from_json_text("{not json", 1), ConfigError);

    auto cfg = cli::RunConfig::from_json_text(
        "{\"seed\": 7, \"train\": {\"stage\": 2, \"lr\": 0.001}}", 1);
    CHECK(cfg.seed == 7);
    CHECK(cfg.train.stage == 2);
    CHECK(cfg.train.lr == doctest::Approx(0.001));
    CHECK(cfg.train.weight_decay == doctest::Approx(0.001));  // stage-2 default retained
}

TEST_CASE("cmd_curate writes a deterministic curated dataset and drops gated boxes") {
    TempDir dir("fgclip_cli_curate");
    // Input with an uncaptioned box below the confidence gate.
    std::vector<DatasetRecord> records;
    DatasetRecord rec;
    rec.image_id = "c0";
    rec.image_source = "synthetic:base=0.5,0.5,0.5";
    rec.short_caption = "a red bucket";
    rec.long_caption = "a red bucket on a small table";
    RegionBox low;
    low.x1 = 0.1;
    low.y1 = 0.1;
    low.x2 = 0.4;
    low.y2 = 0.4;
    low.confidence = 0.35;
    RegionBox ok = low;
    ok.confidence = 0.9;
    ok.x1 = 0.5;
    ok.x2 = 0.9;
    rec.regions = {low, ok};
    records.push_back(rec);
    write_records_jsonl(records, dir.str("input.jsonl"));

    cli::RunConfig cfg;
    cfg.seed = 5;
    cfg.out = dir.str("run1");
    cfg.dataset = dir.str("input.jsonl");
    CHECK(cli::cmd_curate(cfg) == 0);

    auto curated = read_records_jsonl(dir.str("run1") + "/curated.jsonl");
    REQUIRE(curated.size() == 1);
    REQUIRE(curated[0].regions.size() == 1);  // 0.35 box dropped by the gate
    CHECK(curated[0].regions[0].confidence == doctest::Approx(0.9));
    CHECK_FALSE(curated[0].regions[0].positive_caption.empty());

    cfg.out = dir.str("run2");
    CHECK(cli::cmd_curate(cfg) == 0);
    CHECK(read_file(dir.str("run1") + "/curated.jsonl") ==
          read_file(dir.str("run2") + "/curated.jsonl"));

    // Empty input: empty output, no error.
    atomic_write_file(dir.str("empty.jsonl"), "");
    cfg.dataset = dir.str("empty.jsonl");
    cfg.out = dir.str("run3");
    CHECK(cli::cmd_curate(cfg) == 0);
    CHECK(read_file(dir.str("run3") + "/curated.jsonl").empty());
}

TEST_CASE("cmd_train then cmd_eval end to end on a tiny dataset") {
    TempDir dir("fgclip_cli_train");
    auto records = mini_dataset();
    write_records_jsonl(records, dir.str("train.jsonl"));

    cli::RunConfig cfg;
    cfg.seed = 1;
    cfg.out = dir.str("s1");
    cfg.dataset = dir.str("train.jsonl");
    cfg.vision = toy_vision_config();
    cfg.text = toy_text_config();
    cfg.train = TrainConfig::stage_defaults(1);
    cfg.train.batch_size = 8;
    cfg.train.epochs = 1;
    cfg.train.warmup_iters = 2;
    cfg.train.lr = 1e-3;

    CHECK(cli::cmd_train(cfg) == 0);
    CHECK(fs::exists(dir.str("s1") + "/checkpoint.bin"));
    CHECK(fs::exists(dir.str("s1") + "/metrics.csv"));
    CHECK(fs::exists(dir.str("s1") + "/resolved_config.json"));
    // No leftover temp files from atomic writes.
    for (const auto& entry : fs::directory_iterator(dir.str("s1")))
        CHECK(entry.path().extension() != ".tmp");

    const std::string metrics = read_file(dir.str("s1") + "/metrics.csv");
    CHECK(metrics.find("step,stage,lr,loss_global,loss_regional,loss_hard,loss_total,tau") == 0);

    // Stage 2 without an init checkpoint is a usage error.
    cli::RunConfig bad = cfg;
    bad.train = TrainConfig::stage_defaults(2);
    CHECK_THROWS_AS(cli::cmd_train(bad), ConfigError);

    // Stage 2 with hard loss disabled: the loss_hard column stays zero.
    cli::RunConfig s2 = cfg;
    s2.out = dir.str("s2");
    s2.train = TrainConfig::stage_defaults(2);
    s2.train.batch_size = 8;
    s2.train.epochs = 1;
    s2.train.lr = 1e-4;
    s2.train.warmup_iters = 0;
    s2.train.use_hard = false;
    s2.init_checkpoint = dir.str("s1") + "/checkpoint.bin";
    CHECK(cli::cmd_train(s2) == 0);
    {
        std::ifstream in(dir.str("s2") + "/metrics.csv");
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
            // loss_hard is the 6th comma-separated column
            size_t pos = 0;
            for (int c = 0; c < 5; ++c) pos = line.find(',', pos) + 1;
            const std::string hard = line.substr(pos, line.find(',', pos) - pos);
            CHECK(hard == "0");
        }
    }

    // Evaluation on the trained checkpoint.
    cli::RunConfig ev = cfg;
    ev.out = dir.str("eval");
    ev.init_checkpoint = dir.str("s1") + "/checkpoint.bin";
    ev.eval_tasks = {"retrieval", "zeroshot", "bbox", "fgovd"};
    CHECK(cli::cmd_eval(ev) == 0);
    for (const char* task : {"retrieval", "zeroshot", "bbox", "fgovd"}) {
        const std::string path = ev.out + "/report_" + std::string(task) + ".csv";
        REQUIRE(fs::exists(path));
        const std::string text = read_file(path);
        CHECK(text.find("task,split,metric,value,count") == 0);
    }

    // Unknown task name lists the valid ones.
    cli::RunConfig bad_task = ev;
    bad_task.eval_tasks = {"nonsense"};
    CHECK_THROWS_WITH_AS(cli::cmd_eval(bad_task), doctest::Contains("retrieval"), ConfigError);

    // Corrupted checkpoint: checksum failure surfaces as a data error.
    {
        std::string bytes = read_file(dir.str("s1") + "/checkpoint.bin");
        bytes[bytes.size() / 2] = static_cast<char>(bytes[bytes.size() / 2] ^ 0x11);
        atomic_write_file(dir.str("corrupt.bin"), bytes);
        cli::RunConfig corrupt = ev;
        corrupt.init_checkpoint = dir.str("corrupt.bin");
        CHECK_THROWS_AS(cli::cmd_eval(corrupt), DataError);
    }

    // Heatmap from the trained checkpoint.
    cli::RunConfig hm = cfg;
    hm.out = dir.str("hm");
    hm.init_checkpoint = dir.str("s1") + "/checkpoint.bin";
    hm.heatmap_query = records[0].regions[0].positive_caption;
    CHECK(cli::cmd_heatmap(hm) == 0);
    CHECK(fs::exists(dir.str("hm") + "/heatmap.txt"));
    CHECK(fs::exists(dir.str("hm") + "/heatmap.pgm"));
}

TEST_CASE("selfcheck negative control: an injected backward fault is detected") {
    SelfCheckOptions opts;
    opts.inject_gradient_fault = true;
    auto results = run_selfcheck(opts);
    bool kernel_check_failed = false;
    for (const auto& r : results)
        if (r.name == "grad/kernels" && !r.pass) kernel_check_failed = true;
    CHECK(kernel_check_failed);
    CHECK_FALSE(all_passed(results));

    // And the hook resets: a clean run passes again.
    auto clean = run_selfcheck();
    CHECK(all_passed(clean));
}

TEST_CASE("cli argv entry point: exit codes") {
    {
        const char* argv[] = {"fgclip", "definitely-not-a-command"};
        CHECK(cli::run(2, const_cast<char**>(argv)) == 1);
    }
    {
        TempDir dir("fgclip_cli_argv");
        atomic_write_file(dir.str("cfg.json"), "{\"unknown_section\": {}}");
        const std::string cfg_flag = dir.str("cfg.json");
        const char* argv[] = {"fgclip", "curate", "--config", cfg_flag.c_str()};
        CHECK(cli::run(4, const_cast<char**>(argv)) == 1);
    }
    {
        // Missing dataset: config error (exit 1).
        const char* argv[] = {"fgclip", "curate"};
        CHECK(cli::run(2, const_cast<char**>(argv)) == 1);
    }
}

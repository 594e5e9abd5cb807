#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fgclip/curation.hpp"
#include "fgclip/encoders.hpp"
#include "fgclip/trainer.hpp"

namespace fgclip::cli {

// Fully resolved run configuration: defaults, then config file, then flag
// overrides (flags win). Unknown keys in the config file are rejected with
// the offending key named.
struct RunConfig {
    uint64_t seed = 0;
    std::string out = "out";

    std::string dataset;
    std::string eval_dataset;
    std::string init_checkpoint;
    std::string lexicon_path;

    VisionConfig vision;
    TextConfig text;
    TrainConfig train;
    CurationConfig curate;

    std::vector<std::string> eval_tasks = {"retrieval", "zeroshot"};
    long eval_roi_samples = 3;

    std::string heatmap_query;
    std::string heatmap_image_id;

    static RunConfig from_json_text(const std::string& text, int stage_hint);
    std::string to_json_text() const;
};

int cmd_curate(const RunConfig& cfg);
int cmd_train(const RunConfig& cfg);
int cmd_eval(const RunConfig& cfg);
int cmd_heatmap(const RunConfig& cfg);
int cmd_selfcheck();

// Entry point used by the fgclip binary; maps errors to exit codes
// (1 usage/config, 2 data, 3 numerical).
int run(int argc, char** argv);

}  // namespace fgclip::cli

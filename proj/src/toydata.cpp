#include "fgclip/toydata.hpp"

#include <array>
#include <cstdio>

#include "fgclip/curation.hpp"
#include "fgclip/error.hpp"
#include "fgclip/io_util.hpp"
#include "fgclip/rng.hpp"

namespace fgclip {

namespace {

struct Color {
    const char* word;
    double r, g, b;
};

constexpr std::array<Color, 11> kColors = {{
    {"red", 0.90, 0.10, 0.10},
    {"green", 0.10, 0.80, 0.15},
    {"blue", 0.10, 0.20, 0.90},
    {"yellow", 0.95, 0.90, 0.10},
    {"purple", 0.60, 0.10, 0.80},
    {"orange", 0.95, 0.55, 0.10},
    {"pink", 0.95, 0.60, 0.75},
    {"brown", 0.55, 0.35, 0.15},
    {"black", 0.05, 0.05, 0.05},
    {"white", 0.95, 0.95, 0.95},
    {"grey", 0.70, 0.70, 0.70},
}};

constexpr std::array<const char*, 8> kNouns = {"bucket", "table", "chair", "lamp",
                                               "vase",   "bottle", "plate", "mug"};

// Marker colors identifying each noun; distinct from every kColors entry.
constexpr std::array<std::array<double, 3>, 8> kNounMarkers = {{
    {0.05, 0.95, 0.95},
    {0.95, 0.05, 0.95},
    {0.35, 0.95, 0.55},
    {0.95, 0.35, 0.40},
    {0.25, 0.45, 0.95},
    {0.75, 0.95, 0.15},
    {0.50, 0.05, 0.45},
    {0.05, 0.45, 0.30},
}};

std::string block_field(double x1, double y1, double x2, double y2, double r, double g, double b) {
    return "block=" + format6(x1) + "," + format6(y1) + "," + format6(x2) + "," + format6(y2) +
           "," + format6(r) + "," + format6(g) + "," + format6(b);
}

}  // namespace

VisionConfig toy_vision_config() {
    VisionConfig c;
    c.image_size = 32;
    c.patch_size = 8;
    c.channels = 3;
    c.embed_dim = 32;
    c.num_layers = 2;
    c.num_heads = 4;
    c.mlp_ratio = 4.0;
    c.proj_dim = 32;
    return c;
}

TextConfig toy_text_config() {
    TextConfig c;
    c.vocab_size = 256;
    c.embed_dim = 32;
    c.num_layers = 2;
    c.num_heads = 4;
    c.mlp_ratio = 4.0;
    c.proj_dim = 32;
    c.base_max_len = 16;
    c.keep_prefix = 4;
    c.interp_factor = 4;
    c.use_extended = false;
    return c;
}

ToySplit make_global_toy(uint64_t seed, long concepts, long images_per_concept,
                         long eval_per_concept) {
    if (concepts < 2 || concepts > static_cast<long>(kColors.size()))
        throw ConfigError("make_global_toy: concepts must be in [2, 11]");
    if (eval_per_concept < 1 || eval_per_concept >= images_per_concept)
        throw ConfigError("make_global_toy: eval_per_concept must be in [1, images_per_concept)");

    ToySplit split;
    for (long c = 0; c < concepts; ++c) {
        const auto& base = kColors[c];
        // Marker block in one of eight slots, color shifted from a second
        // palette entry so both position and hue separate the concepts.
        const auto& mark = kColors[(c + 3) % kColors.size()];
        const double sx = 0.25 * static_cast<double>(c % 4);
        const double sy = 0.5 * static_cast<double>(c / 4);
        const std::string noun = kNouns[c % kNouns.size()];
        const std::string color_word = base.word;
        const std::string short_caption = "a photo of a " + color_word + " " + noun;
        const std::string long_caption = "the image shows a large " + color_word + " " + noun +
                                         " scene with a " + std::string(mark.word) +
                                         " marker block inside the frame";
        for (long i = 0; i < images_per_concept; ++i) {
            DatasetRecord rec;
            char idbuf[64];
            std::snprintf(idbuf, sizeof(idbuf), "global-%02ld-%04ld", c, i);
            rec.image_id = idbuf;
            const uint64_t img_seed = derive_seed(seed, rec.image_id);
            rec.image_source = "synthetic:base=" + format6(base.r) + "," + format6(base.g) + "," +
                               format6(base.b) + ";" +
                               block_field(sx + 0.03125, sy + 0.0625, sx + 0.21875, sy + 0.4375,
                                           mark.r, mark.g, mark.b) +
                               ";noise=0.030;seed=" + std::to_string(img_seed % 100000);
            rec.short_caption = short_caption;
            rec.long_caption = long_caption;
            if (i < eval_per_concept)
                split.eval.push_back(std::move(rec));
            else
                split.train.push_back(std::move(rec));
        }
    }
    return split;
}

ToySplit make_region_toy(uint64_t seed, const AttributeLexicon& lexicon, long images_per_combo,
                         long eval_per_combo, long difficulty) {
    if (eval_per_combo < 1 || eval_per_combo >= images_per_combo)
        throw ConfigError("make_region_toy: eval_per_combo must be in [1, images_per_combo)");
    const char* difficulty_tag = difficulty == 1 ? "hard" : (difficulty == 2 ? "medium" : "easy");

    // Object slots; the block position varies per image so the model cannot
    // key on location.
    constexpr std::array<std::array<double, 2>, 4> kSlots = {{{0.0625, 0.0625},
                                                              {0.5625, 0.0625},
                                                              {0.0625, 0.5625},
                                                              {0.5625, 0.5625}}};
    ToySplit split;
    for (size_t ni = 0; ni < kNouns.size(); ++ni) {
        for (size_t ci = 0; ci < kColors.size(); ++ci) {
            const auto& color = kColors[ci];
            const auto& marker = kNounMarkers[ni];
            // Higher difficulties need more attribute slots to swap; the extra
            // words are constant so only color and noun carry pixel signal.
            std::string positive = "a ";
            if (difficulty >= 2) positive += "small ";
            positive += std::string(color.word) + " ";
            if (difficulty >= 3) positive += "plastic ";
            positive += kNouns[ni];
            for (long i = 0; i < images_per_combo; ++i) {
                DatasetRecord rec;
                char idbuf[96];
                std::snprintf(idbuf, sizeof(idbuf), "region-%s-%s-%03ld", kNouns[ni], color.word, i);
                rec.image_id = idbuf;
                const uint64_t img_seed = derive_seed(seed, rec.image_id);
                const auto& slot = kSlots[img_seed % kSlots.size()];
                const double x1 = slot[0], y1 = slot[1];
                const double x2 = x1 + 0.375, y2 = y1 + 0.375;
                // Inner marker: center of the object block.
                const double mx1 = x1 + 0.125, my1 = y1 + 0.125;
                const double mx2 = x2 - 0.125, my2 = y2 - 0.125;
                rec.image_source =
                    "synthetic:base=0.400000,0.400000,0.400000;" +
                    block_field(x1, y1, x2, y2, color.r, color.g, color.b) + ";" +
                    block_field(mx1, my1, mx2, my2, marker[0], marker[1], marker[2]) +
                    ";noise=0.030;seed=" + std::to_string(img_seed % 100000);
                rec.short_caption = "a photo of " + positive;
                rec.long_caption =
                    "the picture contains " + positive + " placed on a plain grey background";

                RegionBox box;
                box.x1 = x1;
                box.y1 = y1;
                box.x2 = x2;
                box.y2 = y2;
                box.confidence = 0.9;
                box.positive_caption = positive;
                auto negs = generate_hard_negatives(positive, lexicon, 10, difficulty,
                                                    derive_seed(img_seed, "negatives"));
                box.negative_captions = std::move(negs.negatives);
                box.difficulty = difficulty_tag;
                rec.regions.push_back(std::move(box));

                if (i < eval_per_combo)
                    split.eval.push_back(std::move(rec));
                else
                    split.train.push_back(std::move(rec));
            }
        }
    }
    return split;
}

}  // namespace fgclip

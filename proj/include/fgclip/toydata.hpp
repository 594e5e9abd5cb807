#pragma once

#include <cstdint>
#include <vector>

#include "fgclip/dataset.hpp"
#include "fgclip/encoders.hpp"
#include "fgclip/lexicon.hpp"

namespace fgclip {

// Synthetic benchmark generators. Images are "synthetic:" specs rendered by
// render_image, so datasets are plain JSONL with no binary assets.

struct ToySplit {
    std::vector<DatasetRecord> train;
    std::vector<DatasetRecord> eval;
};

// Stage-1 dataset: `concepts` visual concepts (distinct background color +
// marker block), each with its own short and long caption, images_per_concept
// images each. eval_per_concept images per concept are held out; they form a
// bijective retrieval set when eval_per_concept == 1.
ToySplit make_global_toy(uint64_t seed, long concepts = 8, long images_per_concept = 64,
                         long eval_per_concept = 1);

// Stage-2 dataset: color x noun object grid. Every image carries one region
// whose block color encodes the color word and whose inner marker encodes the
// noun. Region captions are "a <color> <noun>"; negatives are generated with
// the given FG-OVD difficulty (1 = hard: one attribute swapped) from the
// attribute lexicon and tagged accordingly.
ToySplit make_region_toy(uint64_t seed, const AttributeLexicon& lexicon, long images_per_combo = 6,
                         long eval_per_combo = 2, long difficulty = 1);

// Model geometry suited to the toy datasets (32x32 images, 4x4 token grid).
VisionConfig toy_vision_config();
TextConfig toy_text_config();

}  // namespace fgclip

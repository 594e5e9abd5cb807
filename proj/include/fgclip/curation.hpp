#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fgclip/dataset.hpp"
#include "fgclip/lexicon.hpp"

namespace fgclip {

// Replaces semicolons, commas and line breaks with spaces, collapses runs of
// whitespace and trims. Idempotent.
std::string sanitize_caption(const std::string& text);

// Maximal noun-phrase spans: optional determiner + modifiers (attribute
// phrases, hyphenated words, nouns) + head noun, with "of"-attachment.
// Order of appearance preserved, duplicates removed.
std::vector<std::string> extract_referring_expressions(const std::string& sanitized_caption,
                                                       const AttributeLexicon& lexicon);

double box_iou(const RegionBox& a, const RegionBox& b);

// Drops boxes with confidence <= conf_threshold, then greedy NMS: keep the
// highest-confidence box, discard remaining boxes with IoU > iou_threshold
// against any kept box. Ties broken by (confidence desc, x1 asc, y1 asc).
std::vector<RegionBox> nms_filter(const std::vector<RegionBox>& boxes,
                                  double conf_threshold = 0.4, double iou_threshold = 0.5);

struct NegativesResult {
    std::vector<std::string> negatives;
    bool shortfall = false;  // fewer than `count` distinct substitutions exist
};

// Each negative replaces exactly `difficulty` attribute segments with
// different same-class values; the rest of the caption, the head noun
// included, is untouched. Deterministic under `seed`; throws DataError when
// the caption has fewer than `difficulty` attribute segments.
NegativesResult generate_hard_negatives(const std::string& positive_caption,
                                        const AttributeLexicon& lexicon, long count,
                                        long difficulty, uint64_t seed);

struct CurationConfig {
    double conf_threshold = 0.4;
    double iou_threshold = 0.5;
    long negatives_per_region = 10;
    long difficulty = 1;
    uint64_t seed = 0;
};

struct CurationStats {
    long records = 0;
    long boxes_in = 0;
    long boxes_kept = 0;
    long boxes_dropped = 0;
    long regions_without_negatives = 0;
    long negatives_generated = 0;
};

// Full per-record pipeline: sanitize captions, assign referring expressions
// to caption-less boxes, NMS, generate negatives. Records are processed in
// parallel with per-record seeds derived from (seed, image_id) and merged in
// image_id order, so the output is independent of scheduling.
std::vector<DatasetRecord> curate_records(std::vector<DatasetRecord> records,
                                          const AttributeLexicon& lexicon,
                                          const CurationConfig& cfg, CurationStats* stats = nullptr);

}  // namespace fgclip

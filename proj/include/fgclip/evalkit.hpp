#pragma once

#include <string>
#include <vector>

#include "fgclip/dataset.hpp"
#include "fgclip/encoders.hpp"

namespace fgclip {

struct EvalReport {
    struct Row {
        std::string split;
        std::string metric;
        double value = 0.0;
        long count = 0;
    };
    std::string task;
    std::vector<Row> rows;

    // "task,split,metric,value,count" lines, values with 6 decimals.
    std::string to_text() const;
    void write(const std::string& path) const;
    double value_of(const std::string& split, const std::string& metric) const;
};

// FG-OVD protocol: per region, rank the positive caption against its own
// negatives by cosine similarity to the RoIAligned dense region feature;
// Top-1 is correct iff the positive ranks first (ties go to the lowest
// index, which is the positive). Accuracy reported per difficulty split plus
// an "all" aggregate; regions without negatives are excluded and counted.
EvalReport fgovd_accuracy(const std::vector<DatasetRecord>& records, const ClipModel& model,
                          long roi_samples = 3);

// Zero-shot box classification over dense region features. Categories are
// the sorted unique region captions unless an explicit list is given; the
// gold label is the region's own caption. Reports Top-1 and Top-5.
EvalReport bbox_classification(const std::vector<DatasetRecord>& records, const ClipModel& model,
                               std::vector<std::string> categories = {}, long roi_samples = 3);

// Recall@1 in both directions for a bijective pairing (row i of images pairs
// with row i of texts).
EvalReport retrieval_recall(const TensorPtr& image_embeddings, const TensorPtr& text_embeddings);

// Whole-image zero-shot classification; class names are the sorted unique
// short captions, the gold label each record's own short caption.
EvalReport zero_shot_classification(const std::vector<DatasetRecord>& records,
                                    const ClipModel& model);

// Dense-token cosine similarity against a text query, min-max normalized to
// [0,1] (constant maps to 0.5). Writes a plain-text grid (6-decimal floats)
// and a binary PGM of the same W x W layout.
void emit_similarity_heatmap(const DatasetRecord& record, const std::string& query,
                             const ClipModel& model, const std::string& txt_path,
                             const std::string& pgm_path);

}  // namespace fgclip

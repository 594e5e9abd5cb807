#pragma once

#include <string>
#include <vector>

#include "fgclip/regionops.hpp"
#include "fgclip/tensor.hpp"

namespace fgclip {

// One image with a short and a long caption plus region annotations.
struct DatasetRecord {
    std::string image_id;
    std::string image_source;  // file path or "synthetic:..." spec
    std::string short_caption;
    std::string long_caption;
    std::vector<RegionBox> regions;
};

struct ParseStats {
    long lines = 0;
    long parsed = 0;
    long malformed = 0;
    std::vector<std::string> diagnostics;  // "line N: reason"
};

// Line-delimited JSON records. Reading skips malformed lines with a
// line-numbered diagnostic and throws DataError when more than 10% of
// non-empty lines are malformed. Writing emits box coordinates and
// confidences as fixed 6-decimal floats and is byte-stable.
std::vector<DatasetRecord> read_records_jsonl(const std::string& path, ParseStats* stats = nullptr);
std::vector<DatasetRecord> parse_records_jsonl(const std::string& text, ParseStats* stats = nullptr);
std::string records_to_jsonl(const std::vector<DatasetRecord>& records);
void write_records_jsonl(const std::vector<DatasetRecord>& records, const std::string& path);

// Collects every caption in the records (short, long, region positives and
// negatives); the tokenizer vocabulary is built from this.
std::vector<std::string> caption_corpus(const std::vector<DatasetRecord>& records);

// Materializes an image tensor [H, W, C] in [0,1] from an image_source.
// "synthetic:..." specs are rendered deterministically; anything else is
// treated as a binary PPM (P6) / PGM (P5) file path. Spec grammar,
// semicolon-separated after the "synthetic:" prefix:
//   base=r,g,b            background fill
//   block=x1,y1,x2,y2,r,g,b   rectangle fill, repeatable, applied in order
//   noise=a               uniform +-a/2 pixel noise
//   seed=n                noise seed
// Coordinates are normalized; channels beyond 3 repeat the rgb triple.
TensorPtr render_image(const std::string& image_source, long image_size, long channels);

}  // namespace fgclip

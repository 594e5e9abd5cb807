#pragma once

#include <string>
#include <vector>

namespace fgclip {

// Attribute lexicon backing referring-expression extraction and hard-negative
// generation. Attribute values may be multiword phrases ("dark brown");
// caption segmentation treats each phrase as a single segment. Object nouns
// live in their own list and are never attribute values.
struct AttributeLexicon {
    struct AttributeClass {
        std::string name;
        std::vector<std::string> values;  // lowercase, unique within and across classes
    };

    std::vector<AttributeClass> classes;
    std::vector<std::string> nouns;

    static AttributeLexicon builtin_default();
    static AttributeLexicon load(const std::string& path);
    static AttributeLexicon from_json_text(const std::string& text);
    std::string to_json_text() const;
    void save(const std::string& path) const;

    // Throws ConfigError on duplicate values, nouns listed as attributes,
    // or classes with fewer than two values (no substitution possible).
    void validate() const;

    bool is_noun(const std::string& lowered) const;
    // (class index, value index) for a lowercase phrase, or (-1, -1).
    std::pair<int, int> find_attribute(const std::string& lowered_phrase) const;
    int max_phrase_words() const;
};

// One whitespace-level segment of a caption; attribute phrases collapse into
// a single segment carrying their class/value identity.
struct CaptionSegment {
    std::string text;    // original spelling
    int class_idx = -1;  // -1: not an attribute
    int value_idx = -1;
};

std::vector<CaptionSegment> segment_caption(const AttributeLexicon& lexicon,
                                            const std::string& caption);

// Number of attribute segments in a caption.
long count_attribute_words(const AttributeLexicon& lexicon, const std::string& caption);

}  // namespace fgclip

#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace fgclip {

// Word-level tokenizer: lowercase, split on anything that is not a letter,
// digit or apostrophe. Deliberately simple; determinism and a small
// vocabulary matter more here than subword coverage.
std::vector<std::string> split_words(const std::string& text);

struct Vocabulary {
    static constexpr long kPadId = 0;
    static constexpr long kClsId = 1;
    static constexpr long kUnkId = 2;
    static constexpr long kNumSpecial = 3;

    std::vector<std::string> words;  // id = kNumSpecial + index

    // Builds from a corpus: words ordered by (frequency desc, word asc),
    // truncated to max_size total ids.
    static Vocabulary build(const std::vector<std::string>& corpus, long max_size);

    long size() const { return kNumSpecial + static_cast<long>(words.size()); }
    long id_of(const std::string& word) const;

    // Checkpoint round-trip.
    std::string to_line() const;
    static Vocabulary from_line(const std::string& line);

  private:
    std::unordered_map<std::string, long> index_;
    void rebuild_index();
};

struct TokenSequence {
    std::vector<long> ids;  // [CLS] + word ids, padded with PAD to max_len
    bool empty_input = false;
};

// [CLS] + word ids truncated to max_len, then PAD-filled to exactly max_len.
TokenSequence tokenize(const Vocabulary& vocab, const std::string& text, long max_len);

}  // namespace fgclip

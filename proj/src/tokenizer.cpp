#include "fgclip/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>

#include "fgclip/error.hpp"

namespace fgclip {

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isalnum(c) || c == '\'') {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus, long max_size) {
    if (max_size <= kNumSpecial)
        throw ConfigError("Vocabulary::build: max_size must exceed the " +
                          std::to_string(kNumSpecial) + " special ids");
    std::map<std::string, long> counts;  // ordered map keeps ties deterministic
    for (const auto& text : corpus)
        for (auto& w : split_words(text)) ++counts[w];

    std::vector<std::pair<std::string, long>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocabulary vocab;
    const size_t keep = static_cast<size_t>(max_size - kNumSpecial);
    for (size_t i = 0; i < ranked.size() && i < keep; ++i) vocab.words.push_back(ranked[i].first);
    vocab.rebuild_index();
    return vocab;
}

long Vocabulary::id_of(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnkId : it->second;
}

std::string Vocabulary::to_line() const {
    std::ostringstream os;
    for (size_t i = 0; i < words.size(); ++i) {
        if (i) os << ' ';
        os << words[i];
    }
    return os.str();
}

Vocabulary Vocabulary::from_line(const std::string& line) {
    Vocabulary vocab;
    std::istringstream is(line);
    std::string w;
    while (is >> w) vocab.words.push_back(w);
    vocab.rebuild_index();
    return vocab;
}

void Vocabulary::rebuild_index() {
    index_.clear();
    for (size_t i = 0; i < words.size(); ++i)
        index_[words[i]] = kNumSpecial + static_cast<long>(i);
}

TokenSequence tokenize(const Vocabulary& vocab, const std::string& text, long max_len) {
    if (max_len < 1) throw ConfigError("tokenize: max_len must be >= 1");
    TokenSequence seq;
    const auto words = split_words(text);
    seq.empty_input = words.empty();
    seq.ids.reserve(max_len);
    seq.ids.push_back(Vocabulary::kClsId);
    for (const auto& w : words) {
        if (static_cast<long>(seq.ids.size()) >= max_len) break;
        seq.ids.push_back(vocab.id_of(w));
    }
    while (static_cast<long>(seq.ids.size()) < max_len) seq.ids.push_back(Vocabulary::kPadId);
    return seq;
}

}  // namespace fgclip

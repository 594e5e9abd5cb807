#include "fgclip/lexicon.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fgclip/error.hpp"
#include "fgclip/io_util.hpp"

namespace fgclip {

namespace {

std::string lower(const std::string& s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

// Strips punctuation from token edges; keeps interior hyphens/apostrophes.
std::string trim_token(const std::string& tok) {
    size_t b = 0, e = tok.size();
    while (b < e && !std::isalnum(static_cast<unsigned char>(tok[b]))) ++b;
    while (e > b && !std::isalnum(static_cast<unsigned char>(tok[e - 1]))) --e;
    return tok.substr(b, e - b);
}

std::vector<std::string> whitespace_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream is(text);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

}  // namespace

AttributeLexicon AttributeLexicon::builtin_default() {
    AttributeLexicon lx;
    lx.classes.push_back({"color",
                          {"black", "blue", "brown", "dark brown", "dark green", "dark grey",
                           "dark orange", "dark purple", "dark red", "dark yellow", "green", "grey",
                           "light blue", "light green", "light grey", "light orange", "light red",
                           "light yellow", "orange", "pink", "purple", "red", "white", "yellow"}});
    lx.classes.push_back({"material",
                          {"ceramic", "crochet", "fabric", "glass", "leather", "metal", "paper",
                           "plastic", "rattan", "stone", "velvet", "wood", "wooden", "wool"}});
    lx.classes.push_back({"pattern",
                          {"checkered", "dotted", "floral", "plaid", "plain", "spotted", "striped"}});
    lx.classes.push_back({"size", {"big", "huge", "large", "little", "small", "tiny"}});
    lx.nouns = {"ball",   "bench",    "bird",   "blackbird", "block",  "boat",   "bottle",
                "bowl",   "box",      "branch", "bucket",    "bus",    "can",    "car",
                "cat",    "chair",    "cone",   "cube",      "cup",    "disk",   "dog",
                "door",   "fence",    "flower", "gemstone",  "handbag", "hat",   "house",
                "lamp",   "man",      "mug",    "nose",      "park",   "person", "plate",
                "ring",   "road",     "roof",   "shirt",     "sign",   "sofa",   "star",
                "table",  "tree",     "truck",  "vase",      "wall",   "window", "woman"};
    lx.validate();
    return lx;
}

AttributeLexicon AttributeLexicon::from_json_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("lexicon: invalid JSON: ") + e.what());
    }
    AttributeLexicon lx;
    if (!j.contains("attributes") || !j["attributes"].is_object())
        throw DataError("lexicon: missing \"attributes\" object");
    for (auto it = j["attributes"].begin(); it != j["attributes"].end(); ++it) {
        AttributeClass cls;
        cls.name = it.key();
        for (const auto& v : it.value()) cls.values.push_back(lower(v.get<std::string>()));
        lx.classes.push_back(std::move(cls));
    }
    std::sort(lx.classes.begin(), lx.classes.end(),
              [](const auto& a, const auto& b) { return a.name < b.name; });
    if (j.contains("nouns"))
        for (const auto& v : j["nouns"]) lx.nouns.push_back(lower(v.get<std::string>()));
    lx.validate();
    return lx;
}

AttributeLexicon AttributeLexicon::load(const std::string& path) {
    return from_json_text(read_file(path));
}

std::string AttributeLexicon::to_json_text() const {
    nlohmann::json j;
    j["attributes"] = nlohmann::json::object();
    for (const auto& cls : classes) j["attributes"][cls.name] = cls.values;
    j["nouns"] = nouns;
    return j.dump(2) + "\n";
}

void AttributeLexicon::save(const std::string& path) const {
    atomic_write_file(path, to_json_text());
}

void AttributeLexicon::validate() const {
    std::set<std::string> seen;
    for (const auto& cls : classes) {
        if (cls.values.size() < 2)
            throw ConfigError("lexicon: class \"" + cls.name + "\" needs at least two values");
        for (const auto& v : cls.values) {
            if (v.empty()) throw ConfigError("lexicon: empty value in class \"" + cls.name + "\"");
            if (!seen.insert(v).second)
                throw ConfigError("lexicon: value \"" + v + "\" appears in more than one class");
        }
    }
    for (const auto& n : nouns)
        if (seen.count(n))
            throw ConfigError("lexicon: noun \"" + n + "\" is also an attribute value");
}

bool AttributeLexicon::is_noun(const std::string& lowered) const {
    return std::find(nouns.begin(), nouns.end(), lowered) != nouns.end();
}

std::pair<int, int> AttributeLexicon::find_attribute(const std::string& lowered_phrase) const {
    for (size_t c = 0; c < classes.size(); ++c) {
        const auto& vals = classes[c].values;
        auto it = std::find(vals.begin(), vals.end(), lowered_phrase);
        if (it != vals.end())
            return {static_cast<int>(c), static_cast<int>(it - vals.begin())};
    }
    return {-1, -1};
}

int AttributeLexicon::max_phrase_words() const {
    int mx = 1;
    for (const auto& cls : classes)
        for (const auto& v : cls.values)
            mx = std::max(mx, 1 + static_cast<int>(std::count(v.begin(), v.end(), ' ')));
    return mx;
}

std::vector<CaptionSegment> segment_caption(const AttributeLexicon& lexicon,
                                            const std::string& caption) {
    const auto tokens = whitespace_tokens(caption);
    const int max_words = lexicon.max_phrase_words();
    std::vector<CaptionSegment> segments;
    size_t i = 0;
    while (i < tokens.size()) {
        bool matched = false;
        for (int len = std::min<int>(max_words, static_cast<int>(tokens.size() - i)); len >= 1; --len) {
            std::string phrase;
            for (int k = 0; k < len; ++k) {
                if (k) phrase += ' ';
                phrase += lower(trim_token(tokens[i + k]));
            }
            const auto [ci, vi] = lexicon.find_attribute(phrase);
            if (ci >= 0) {
                std::string original;
                for (int k = 0; k < len; ++k) {
                    if (k) original += ' ';
                    original += tokens[i + k];
                }
                segments.push_back({original, ci, vi});
                i += static_cast<size_t>(len);
                matched = true;
                break;
            }
        }
        if (!matched) {
            segments.push_back({tokens[i], -1, -1});
            ++i;
        }
    }
    return segments;
}

long count_attribute_words(const AttributeLexicon& lexicon, const std::string& caption) {
    long n = 0;
    for (const auto& seg : segment_caption(lexicon, caption))
        if (seg.class_idx >= 0) ++n;
    return n;
}

}  // namespace fgclip

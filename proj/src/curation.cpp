#include "fgclip/curation.hpp"

#include <algorithm>
#include <cctype>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>

#include "fgclip/error.hpp"
#include "fgclip/rng.hpp"

namespace fgclip {

namespace {

std::string lower(const std::string& s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string strip_edges(const std::string& tok) {
    size_t b = 0, e = tok.size();
    while (b < e && !std::isalnum(static_cast<unsigned char>(tok[b]))) ++b;
    while (e > b && !std::isalnum(static_cast<unsigned char>(tok[e - 1]))) --e;
    return tok.substr(b, e - b);
}

bool is_determiner(const std::string& lowered) {
    return lowered == "a" || lowered == "an" || lowered == "the";
}

bool is_hyphenated(const std::string& word) {
    return word.find('-') != std::string::npos && word.size() > 1;
}

}  // namespace

std::string sanitize_caption(const std::string& text) {
    std::string spaced;
    spaced.reserve(text.size());
    for (char c : text) {
        if (c == ';' || c == ',' || c == '\n' || c == '\r')
            spaced += ' ';
        else
            spaced += c;
    }
    std::string out;
    out.reserve(spaced.size());
    bool in_space = true;  // trims leading whitespace
    for (char c : spaced) {
        if (c == ' ' || c == '\t') {
            if (!in_space) out += ' ';
            in_space = true;
        } else {
            out += c;
            in_space = false;
        }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

std::vector<std::string> extract_referring_expressions(const std::string& sanitized_caption,
                                                       const AttributeLexicon& lexicon) {
    const auto segments = segment_caption(lexicon, sanitized_caption);
    const long n = static_cast<long>(segments.size());

    auto is_noun_at = [&](long i) {
        return segments[i].class_idx < 0 && lexicon.is_noun(lower(strip_edges(segments[i].text)));
    };
    auto is_modifier_at = [&](long i) {
        if (segments[i].class_idx >= 0) return true;  // attribute phrase
        const std::string w = lower(strip_edges(segments[i].text));
        return is_hyphenated(segments[i].text) || lexicon.is_noun(w);
    };

    // Matches det? modifier* noun at position i; returns one past the head
    // noun, or -1 when no noun terminates the run.
    auto match_np = [&](long i) -> long {
        long j = i;
        if (j < n && segments[j].class_idx < 0 && is_determiner(lower(strip_edges(segments[j].text))))
            ++j;
        long last_noun = -1;
        while (j < n && is_modifier_at(j)) {
            if (is_noun_at(j)) last_noun = j;
            ++j;
        }
        return last_noun < 0 ? -1 : last_noun + 1;
    };

    std::vector<std::string> expressions;
    std::set<std::string> seen;
    long i = 0;
    while (i < n) {
        long end = match_np(i);
        if (end < 0) {
            ++i;
            continue;
        }
        // "of"-attachment: extend across "<np> of <np>" chains.
        while (end < n && lower(strip_edges(segments[end].text)) == "of") {
            const long next = match_np(end + 1);
            if (next < 0) break;
            end = next;
        }
        std::string span;
        for (long k = i; k < end; ++k) {
            if (k > i) span += ' ';
            span += segments[k].text;
        }
        if (seen.insert(span).second) expressions.push_back(span);
        i = end;
    }
    return expressions;
}

double box_iou(const RegionBox& a, const RegionBox& b) {
    const double ix1 = std::max(a.x1, b.x1);
    const double iy1 = std::max(a.y1, b.y1);
    const double ix2 = std::min(a.x2, b.x2);
    const double iy2 = std::min(a.y2, b.y2);
    const double iw = std::max(0.0, ix2 - ix1);
    const double ih = std::max(0.0, iy2 - iy1);
    const double inter = iw * ih;
    const double area_a = (a.x2 - a.x1) * (a.y2 - a.y1);
    const double area_b = (b.x2 - b.x1) * (b.y2 - b.y1);
    const double uni = area_a + area_b - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<RegionBox> nms_filter(const std::vector<RegionBox>& boxes, double conf_threshold,
                                  double iou_threshold) {
    std::vector<const RegionBox*> candidates;
    for (const auto& b : boxes)
        if (b.confidence > conf_threshold) candidates.push_back(&b);
    std::stable_sort(candidates.begin(), candidates.end(), [](const RegionBox* a, const RegionBox* b) {
        if (a->confidence != b->confidence) return a->confidence > b->confidence;
        if (a->x1 != b->x1) return a->x1 < b->x1;
        return a->y1 < b->y1;
    });
    std::vector<RegionBox> kept;
    for (const auto* cand : candidates) {
        bool suppressed = false;
        for (const auto& k : kept) {
            if (box_iou(*cand, k) > iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(*cand);
    }
    return kept;
}

NegativesResult generate_hard_negatives(const std::string& positive_caption,
                                        const AttributeLexicon& lexicon, long count,
                                        long difficulty, uint64_t seed) {
    if (difficulty < 1 || difficulty > 3)
        throw ConfigError("generate_hard_negatives: difficulty must be 1, 2 or 3");
    if (count < 1) throw ConfigError("generate_hard_negatives: count must be >= 1");

    auto segments = segment_caption(lexicon, positive_caption);
    std::vector<long> attr_positions;
    for (long i = 0; i < static_cast<long>(segments.size()); ++i)
        if (segments[i].class_idx >= 0) attr_positions.push_back(i);
    if (static_cast<long>(attr_positions.size()) < difficulty)
        throw DataError("generate_hard_negatives: caption \"" + positive_caption + "\" has " +
                        std::to_string(attr_positions.size()) + " attribute words, need " +
                        std::to_string(difficulty));

    // A replacement keeps any punctuation that clung to the original segment.
    auto replace_text = [](const std::string& original, const std::string& value) {
        size_t b = 0, e = original.size();
        while (b < e && !std::isalnum(static_cast<unsigned char>(original[b]))) ++b;
        while (e > b && !std::isalnum(static_cast<unsigned char>(original[e - 1]))) --e;
        return original.substr(0, b) + value + original.substr(e);
    };

    auto render = [&](const std::vector<std::pair<long, int>>& subs) {
        std::string out;
        for (long i = 0; i < static_cast<long>(segments.size()); ++i) {
            if (i) out += ' ';
            const auto it = std::find_if(subs.begin(), subs.end(),
                                         [i](const auto& s) { return s.first == i; });
            if (it == subs.end()) {
                out += segments[i].text;
            } else {
                const auto& cls = lexicon.classes[segments[i].class_idx];
                out += replace_text(segments[i].text, cls.values[it->second]);
            }
        }
        return out;
    };

    // Enumerate every (position combination, value assignment) in a fixed
    // order, then sample by seeded shuffle.
    std::vector<std::vector<std::pair<long, int>>> combos;
    std::vector<long> pick(difficulty);
    std::function<void(long, long)> choose = [&](long start, long depth) {
        if (depth == difficulty) {
            std::vector<std::pair<long, int>> base;
            for (long p : pick) base.push_back({attr_positions[p], -1});
            std::function<void(size_t)> assign = [&](size_t idx) {
                if (idx == base.size()) {
                    combos.push_back(base);
                    return;
                }
                const auto& seg = segments[base[idx].first];
                const auto& vals = lexicon.classes[seg.class_idx].values;
                for (int v = 0; v < static_cast<int>(vals.size()); ++v) {
                    if (v == seg.value_idx) continue;  // never map a word to itself
                    base[idx].second = v;
                    assign(idx + 1);
                }
            };
            assign(0);
            return;
        }
        for (long p = start; p < static_cast<long>(attr_positions.size()); ++p) {
            pick[depth] = p;
            choose(p + 1, depth + 1);
        }
    };
    choose(0, 0);

    std::vector<long> order(combos.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order);

    NegativesResult result;
    std::set<std::string> seen;
    seen.insert(render({}));  // the positive itself
    for (long idx : order) {
        if (static_cast<long>(result.negatives.size()) >= count) break;
        std::string neg = render(combos[idx]);
        if (seen.insert(neg).second) result.negatives.push_back(std::move(neg));
    }
    result.shortfall = static_cast<long>(result.negatives.size()) < count;
    return result;
}

std::vector<DatasetRecord> curate_records(std::vector<DatasetRecord> records,
                                          const AttributeLexicon& lexicon,
                                          const CurationConfig& cfg, CurationStats* stats) {
    std::stable_sort(records.begin(), records.end(),
                     [](const DatasetRecord& a, const DatasetRecord& b) {
                         return a.image_id < b.image_id;
                     });

    CurationStats local;
    CurationStats& st = stats ? *stats : local;
    st.records = static_cast<long>(records.size());

    std::vector<CurationStats> per_record(records.size());

    const long n = static_cast<long>(records.size());
#pragma omp parallel for schedule(static)
    for (long i = 0; i < n; ++i) {
        auto& rec = records[i];
        auto& rst = per_record[i];
        rec.short_caption = sanitize_caption(rec.short_caption);
        rec.long_caption = sanitize_caption(rec.long_caption);
        for (auto& box : rec.regions) box.positive_caption = sanitize_caption(box.positive_caption);

        // Boxes that came without captions get referring expressions from the
        // long caption, assigned in order; leftover boxes are dropped.
        bool all_uncaptioned = !rec.regions.empty();
        for (const auto& box : rec.regions)
            if (!box.positive_caption.empty()) all_uncaptioned = false;
        if (all_uncaptioned) {
            const auto exprs = extract_referring_expressions(rec.long_caption, lexicon);
            std::vector<RegionBox> with_captions;
            for (size_t b = 0; b < rec.regions.size() && b < exprs.size(); ++b) {
                rec.regions[b].positive_caption = exprs[b];
                with_captions.push_back(rec.regions[b]);
            }
            rec.regions = std::move(with_captions);
        }

        rst.boxes_in = static_cast<long>(rec.regions.size());
        rec.regions = nms_filter(rec.regions, cfg.conf_threshold, cfg.iou_threshold);
        rst.boxes_kept = static_cast<long>(rec.regions.size());
        rst.boxes_dropped = rst.boxes_in - rst.boxes_kept;

        const uint64_t rec_seed = derive_seed(cfg.seed, rec.image_id);
        long box_idx = 0;
        for (auto& box : rec.regions) {
            const uint64_t box_seed = derive_seed(rec_seed, std::to_string(box_idx++));
            if (count_attribute_words(lexicon, box.positive_caption) < cfg.difficulty) {
                ++rst.regions_without_negatives;
                continue;
            }
            auto negs = generate_hard_negatives(box.positive_caption, lexicon,
                                                cfg.negatives_per_region, cfg.difficulty, box_seed);
            rst.negatives_generated += static_cast<long>(negs.negatives.size());
            box.negative_captions = std::move(negs.negatives);
        }
    }

    for (const auto& rst : per_record) {
        st.boxes_in += rst.boxes_in;
        st.boxes_kept += rst.boxes_kept;
        st.boxes_dropped += rst.boxes_dropped;
        st.regions_without_negatives += rst.regions_without_negatives;
        st.negatives_generated += rst.negatives_generated;
    }
    return records;
}

}  // namespace fgclip

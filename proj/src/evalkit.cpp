#include "fgclip/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "fgclip/error.hpp"
#include "fgclip/io_util.hpp"
#include "fgclip/losses.hpp"
#include "fgclip/regionops.hpp"

namespace fgclip {

namespace {

// Cosine of one feature row against a set of rows; no tape involved.
std::vector<double> cosine_row(const std::vector<double>& feat, const TensorPtr& rows) {
    const long n = rows->dim(0), d = rows->dim(1);
    double fn = 0.0;
    for (double v : feat) fn += v * v;
    fn = std::sqrt(fn);
    std::vector<double> out(n, 0.0);
    for (long i = 0; i < n; ++i) {
        double dot = 0.0, rn = 0.0;
        for (long j = 0; j < d; ++j) {
            dot += feat[j] * rows->data[i * d + j];
            rn += rows->data[i * d + j] * rows->data[i * d + j];
        }
        rn = std::sqrt(rn);
        out[i] = (fn < 1e-12 || rn < 1e-12) ? 0.0 : dot / (fn * rn);
    }
    return out;
}

// Lowest index wins ties.
long argmax_index(const std::vector<double>& v) {
    long best = 0;
    for (long i = 1; i < static_cast<long>(v.size()); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

bool in_top_k(const std::vector<double>& sims, long gold, long k) {
    // Rank by (similarity desc, index asc); gold is in the top k iff fewer
    // than k entries strictly beat it or tie with a lower index.
    long better = 0;
    for (long i = 0; i < static_cast<long>(sims.size()); ++i) {
        if (i == gold) continue;
        if (sims[i] > sims[gold] || (sims[i] == sims[gold] && i < gold)) ++better;
    }
    return better < k;
}

TensorPtr encode_texts(const ClipModel& model, const std::vector<std::string>& texts) {
    const long n = static_cast<long>(texts.size());
    auto out = make_tensor({n, model.tcfg.proj_dim});
    std::vector<std::string> errors(n);
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < n; ++i) {
        try {
            auto cls = model.encode_text(texts[i]).cls_embedding;
            std::copy(cls->data.begin(), cls->data.end(), out->data.begin() + i * model.tcfg.proj_dim);
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    }
    for (const auto& e : errors)
        if (!e.empty()) throw DataError("encode_texts: " + e);
    return out;
}

struct RegionFeature {
    std::vector<double> feat;
    const RegionBox* box = nullptr;
};

// Dense features for every valid region, computed record-parallel.
std::vector<RegionFeature> dense_region_features(const std::vector<DatasetRecord>& records,
                                                 const ClipModel& model, long roi_samples) {
    std::vector<std::pair<long, long>> index;  // (record, region)
    for (long r = 0; r < static_cast<long>(records.size()); ++r)
        for (long b = 0; b < static_cast<long>(records[r].regions.size()); ++b)
            if (records[r].regions[b].valid() && !records[r].regions[b].positive_caption.empty())
                index.push_back({r, b});

    std::vector<RegionFeature> feats(index.size());
    std::vector<std::string> errors(records.size());
#pragma omp parallel for schedule(dynamic)
    for (long r = 0; r < static_cast<long>(records.size()); ++r) {
        try {
            bool any = false;
            for (const auto& ib : index)
                if (ib.first == r) any = true;
            if (!any) continue;
            auto img = render_image(records[r].image_source, model.vcfg.image_size,
                                    model.vcfg.channels);
            auto enc = model.encode_image(img);
            auto dense = dense_tokens(model.vision, enc);
            for (long k = 0; k < static_cast<long>(index.size()); ++k) {
                if (index[k].first != r) continue;
                const auto& box = records[r].regions[index[k].second];
                auto f = roi_align_average(dense, box, roi_samples);
                feats[k].feat = f->data;
                feats[k].box = &box;
            }
        } catch (const std::exception& e) {
            errors[r] = e.what();
        }
    }
    for (const auto& e : errors)
        if (!e.empty()) throw DataError("dense_region_features: " + e);
    return feats;
}

}  // namespace

std::string EvalReport::to_text() const {
    std::string out = "task,split,metric,value,count\n";
    for (const auto& r : rows)
        out += task + "," + r.split + "," + r.metric + "," + format6(r.value) + "," +
               std::to_string(r.count) + "\n";
    return out;
}

void EvalReport::write(const std::string& path) const { atomic_write_file(path, to_text()); }

double EvalReport::value_of(const std::string& split, const std::string& metric) const {
    for (const auto& r : rows)
        if (r.split == split && r.metric == metric) return r.value;
    throw DataError("EvalReport: no row for split=" + split + " metric=" + metric);
}

EvalReport fgovd_accuracy(const std::vector<DatasetRecord>& records, const ClipModel& model,
                          long roi_samples) {
    auto feats = dense_region_features(records, model, roi_samples);

    long excluded = 0;
    std::map<std::string, std::pair<long, long>> split_counts;  // split -> (correct, total)
    long all_correct = 0, all_total = 0;
    for (const auto& rf : feats) {
        if (!rf.box) continue;
        if (rf.box->negative_captions.empty()) {
            ++excluded;
            continue;
        }
        std::vector<std::string> captions{rf.box->positive_caption};
        for (const auto& n : rf.box->negative_captions) captions.push_back(n);
        auto embeds = encode_texts(model, captions);
        const auto sims = cosine_row(rf.feat, embeds);
        const bool correct = argmax_index(sims) == 0;
        const std::string split = rf.box->difficulty.empty() ? "hard" : rf.box->difficulty;
        auto& sc = split_counts[split];
        sc.first += correct ? 1 : 0;
        sc.second += 1;
        all_correct += correct ? 1 : 0;
        all_total += 1;
    }
    if (all_total == 0) throw DataError("fgovd_accuracy: no usable regions in dataset");

    EvalReport report;
    report.task = "fgovd";
    for (const auto& [split, sc] : split_counts)
        report.rows.push_back({split, "top1",
                               static_cast<double>(sc.first) / static_cast<double>(sc.second),
                               sc.second});
    report.rows.push_back(
        {"all", "top1", static_cast<double>(all_correct) / static_cast<double>(all_total), all_total});
    report.rows.push_back({"all", "excluded", static_cast<double>(excluded), excluded});
    return report;
}

EvalReport bbox_classification(const std::vector<DatasetRecord>& records, const ClipModel& model,
                               std::vector<std::string> categories, long roi_samples) {
    if (categories.empty()) {
        std::set<std::string> uniq;
        for (const auto& rec : records)
            for (const auto& box : rec.regions)
                if (box.valid() && !box.positive_caption.empty()) uniq.insert(box.positive_caption);
        categories.assign(uniq.begin(), uniq.end());
    } else {
        std::set<std::string> uniq(categories.begin(), categories.end());
        if (uniq.size() != categories.size())
            throw DataError("bbox_classification: duplicate category names");
    }
    if (categories.size() < 2) throw DataError("bbox_classification: need at least 2 categories");

    auto cat_embeds = encode_texts(model, categories);
    std::map<std::string, long> cat_index;
    for (long i = 0; i < static_cast<long>(categories.size()); ++i) cat_index[categories[i]] = i;

    auto feats = dense_region_features(records, model, roi_samples);
    long top1 = 0, top5 = 0, total = 0;
    for (const auto& rf : feats) {
        if (!rf.box) continue;
        auto it = cat_index.find(rf.box->positive_caption);
        if (it == cat_index.end())
            throw DataError("bbox_classification: gold label \"" + rf.box->positive_caption +
                            "\" not among categories");
        const auto sims = cosine_row(rf.feat, cat_embeds);
        if (argmax_index(sims) == it->second) ++top1;
        if (in_top_k(sims, it->second, std::min<long>(5, sims.size()))) ++top5;
        ++total;
    }
    if (total == 0) throw DataError("bbox_classification: no usable regions in dataset");

    EvalReport report;
    report.task = "bbox_classification";
    report.rows.push_back({"all", "top1", static_cast<double>(top1) / total, total});
    report.rows.push_back({"all", "top5", static_cast<double>(top5) / total, total});
    return report;
}

EvalReport retrieval_recall(const TensorPtr& image_embeddings, const TensorPtr& text_embeddings) {
    if (image_embeddings->ndim() != 2 || text_embeddings->ndim() != 2 ||
        image_embeddings->shape != text_embeddings->shape)
        throw ShapeError("retrieval_recall: embedding sets must match, " +
                         shape_str(image_embeddings->shape) + " vs " +
                         shape_str(text_embeddings->shape));
    const long n = image_embeddings->dim(0), d = image_embeddings->dim(1);
    long i2t = 0, t2i = 0;
    for (long i = 0; i < n; ++i) {
        std::vector<double> feat(image_embeddings->data.begin() + i * d,
                                 image_embeddings->data.begin() + (i + 1) * d);
        if (argmax_index(cosine_row(feat, text_embeddings)) == i) ++i2t;
    }
    for (long i = 0; i < n; ++i) {
        std::vector<double> feat(text_embeddings->data.begin() + i * d,
                                 text_embeddings->data.begin() + (i + 1) * d);
        if (argmax_index(cosine_row(feat, image_embeddings)) == i) ++t2i;
    }
    EvalReport report;
    report.task = "retrieval";
    report.rows.push_back({"all", "i2t_r1", static_cast<double>(i2t) / n, n});
    report.rows.push_back({"all", "t2i_r1", static_cast<double>(t2i) / n, n});
    return report;
}

EvalReport zero_shot_classification(const std::vector<DatasetRecord>& records,
                                    const ClipModel& model) {
    std::set<std::string> uniq;
    for (const auto& rec : records) uniq.insert(rec.short_caption);
    std::vector<std::string> classes(uniq.begin(), uniq.end());
    if (classes.size() < 1) throw DataError("zero_shot_classification: no classes");
    auto class_embeds = encode_texts(model, classes);
    std::map<std::string, long> class_index;
    for (long i = 0; i < static_cast<long>(classes.size()); ++i) class_index[classes[i]] = i;

    const long n = static_cast<long>(records.size());
    std::vector<int> correct(n, 0);
    std::vector<std::string> errors(n);
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < n; ++i) {
        try {
            auto img = render_image(records[i].image_source, model.vcfg.image_size,
                                    model.vcfg.channels);
            auto cls = model.encode_image(img).cls_embedding;
            const auto sims = cosine_row(cls->data, class_embeds);
            correct[i] = argmax_index(sims) == class_index.at(records[i].short_caption) ? 1 : 0;
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    }
    for (const auto& e : errors)
        if (!e.empty()) throw DataError("zero_shot_classification: " + e);

    long hits = 0;
    for (int c : correct) hits += c;
    EvalReport report;
    report.task = "zeroshot";
    report.rows.push_back({"all", "top1", static_cast<double>(hits) / n, n});
    return report;
}

void emit_similarity_heatmap(const DatasetRecord& record, const std::string& query,
                             const ClipModel& model, const std::string& txt_path,
                             const std::string& pgm_path) {
    auto img = render_image(record.image_source, model.vcfg.image_size, model.vcfg.channels);
    auto enc = model.encode_image(img);
    auto dense = dense_tokens(model.vision, enc);
    auto qembed = model.encode_text(query).cls_embedding;

    const long w = model.vcfg.grid_side();
    const long d = model.vcfg.proj_dim;
    std::vector<double> sims(w * w, 0.0);
    for (long t = 0; t < w * w; ++t) {
        std::vector<double> tok(dense->data.begin() + t * d, dense->data.begin() + (t + 1) * d);
        sims[t] = cosine_row(tok, reshape(qembed, {1, d}))[0];
    }
    const double lo = *std::min_element(sims.begin(), sims.end());
    const double hi = *std::max_element(sims.begin(), sims.end());
    std::vector<double> norm(sims.size());
    if (hi - lo < 1e-15) {
        std::fill(norm.begin(), norm.end(), 0.5);  // constant map
    } else {
        for (size_t i = 0; i < sims.size(); ++i) norm[i] = (sims[i] - lo) / (hi - lo);
    }

    std::string txt;
    for (long y = 0; y < w; ++y) {
        for (long x = 0; x < w; ++x) {
            if (x) txt += ' ';
            txt += format6(norm[y * w + x]);
        }
        txt += '\n';
    }
    atomic_write_file(txt_path, txt);

    std::string pgm = "P5\n" + std::to_string(w) + " " + std::to_string(w) + "\n255\n";
    for (double v : norm)
        pgm.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    atomic_write_file(pgm_path, pgm);
}

}  // namespace fgclip

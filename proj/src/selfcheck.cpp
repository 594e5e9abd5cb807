#include "fgclip/selfcheck.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <sstream>

#include "fgclip/error.hpp"
#include "fgclip/losses.hpp"
#include "fgclip/rng.hpp"
#include "fgclip/toydata.hpp"

namespace fgclip {

namespace oracles {

double symmetric_infonce(const std::vector<std::vector<double>>& v,
                         const std::vector<std::vector<double>>& t, double tau) {
    const size_t n = v.size();
    auto cos = [](const std::vector<double>& a, const std::vector<double>& b) {
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (size_t i = 0; i < a.size(); ++i) {
            dot += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        na = std::sqrt(na);
        nb = std::sqrt(nb);
        return (na < 1e-12 || nb < 1e-12) ? 0.0 : dot / (na * nb);
    };
    std::vector<std::vector<double>> sim(n, std::vector<double>(n));
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) sim[i][j] = cos(v[i], t[j]);

    auto row_term = [&](size_t i, bool image_to_text) {
        double mx = -1e300;
        for (size_t j = 0; j < n; ++j) {
            const double s = (image_to_text ? sim[i][j] : sim[j][i]) / tau;
            mx = std::max(mx, s);
        }
        double denom = 0.0;
        for (size_t j = 0; j < n; ++j)
            denom += std::exp((image_to_text ? sim[i][j] : sim[j][i]) / tau - mx);
        const double pos = sim[i][i] / tau - mx;
        return pos - std::log(denom);
    };

    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += row_term(i, true) + row_term(i, false);
    return -acc / (2.0 * static_cast<double>(n));
}

double hard_negative(const std::vector<std::vector<double>>& regions,
                     const std::vector<std::vector<std::vector<double>>>& captions_per_region,
                     double tau) {
    auto cos = [](const std::vector<double>& a, const std::vector<double>& b) {
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (size_t i = 0; i < a.size(); ++i) {
            dot += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        na = std::sqrt(na);
        nb = std::sqrt(nb);
        return (na < 1e-12 || nb < 1e-12) ? 0.0 : dot / (na * nb);
    };
    double acc = 0.0;
    for (size_t k = 0; k < regions.size(); ++k) {
        const auto& caps = captions_per_region[k];
        double mx = -1e300;
        std::vector<double> s(caps.size());
        for (size_t j = 0; j < caps.size(); ++j) {
            s[j] = cos(regions[k], caps[j]) / tau;
            mx = std::max(mx, s[j]);
        }
        double denom = 0.0;
        for (double sj : s) denom += std::exp(sj - mx);
        acc += (s[0] - mx) - std::log(denom);
    }
    return -acc / static_cast<double>(regions.size());
}

std::vector<double> roi_bilinear(const std::vector<double>& grid, long w, long d,
                                 const RegionBox& box, long samples_per_axis) {
    const long g = samples_per_axis;
    std::vector<double> acc(d, 0.0);
    auto sample = [&](double px, double py, std::vector<double>& into) {
        auto axis = [&](double p) {
            double f = p * static_cast<double>(w) - 0.5;
            f = std::max(0.0, std::min(f, static_cast<double>(w - 1)));
            long lo = static_cast<long>(std::floor(f));
            double frac = f - static_cast<double>(lo);
            return std::pair<long, double>(lo, frac);
        };
        auto [x0, fx] = axis(px);
        auto [y0, fy] = axis(py);
        const long x1 = std::min(x0 + 1, w - 1);
        const long y1 = std::min(y0 + 1, w - 1);
        for (long j = 0; j < d; ++j) {
            const double top = (1.0 - fx) * grid[(y0 * w + x0) * d + j] + fx * grid[(y0 * w + x1) * d + j];
            const double bot = (1.0 - fx) * grid[(y1 * w + x0) * d + j] + fx * grid[(y1 * w + x1) * d + j];
            into[j] += (1.0 - fy) * top + fy * bot;
        }
    };
    for (long sy = 0; sy < g; ++sy)
        for (long sx = 0; sx < g; ++sx) {
            const double px = box.x1 + (sx + 0.5) / static_cast<double>(g) * (box.x2 - box.x1);
            const double py = box.y1 + (sy + 0.5) / static_cast<double>(g) * (box.y2 - box.y1);
            sample(px, py, acc);
        }
    for (long j = 0; j < d; ++j) acc[j] /= static_cast<double>(g * g);
    return acc;
}

std::vector<RegionBox> nms_subsets(const std::vector<RegionBox>& boxes, double conf_threshold,
                                   double iou_threshold) {
    const size_t n = boxes.size();
    if (n > 16) throw ConfigError("nms_subsets: oracle limited to 16 boxes");
    auto precedes = [](const RegionBox& a, const RegionBox& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        if (a.x1 != b.x1) return a.x1 < b.x1;
        return a.y1 < b.y1;
    };
    std::vector<size_t> found;
    size_t found_mask = 0;
    for (size_t mask = 0; mask < (size_t(1) << n); ++mask) {
        bool consistent = true;
        for (size_t b = 0; b < n && consistent; ++b) {
            bool should_keep = boxes[b].confidence > conf_threshold;
            if (should_keep) {
                for (size_t a = 0; a < n; ++a) {
                    if (a == b || !(mask & (size_t(1) << a))) continue;
                    if (precedes(boxes[a], boxes[b]) && box_iou(boxes[a], boxes[b]) > iou_threshold) {
                        should_keep = false;
                        break;
                    }
                }
            }
            if (should_keep != static_cast<bool>(mask & (size_t(1) << b))) consistent = false;
        }
        if (consistent) {
            found.push_back(mask);
            found_mask = mask;
        }
    }
    if (found.size() != 1)
        throw NumericError("nms_subsets: expected exactly one consistent subset, got " +
                           std::to_string(found.size()));
    std::vector<RegionBox> kept;
    for (size_t b = 0; b < n; ++b)
        if (found_mask & (size_t(1) << b)) kept.push_back(boxes[b]);
    std::sort(kept.begin(), kept.end(), precedes);
    return kept;
}

}  // namespace oracles

VisionConfig tiny_vision_config() {
    VisionConfig c;
    c.image_size = 8;
    c.patch_size = 4;
    c.channels = 1;
    c.embed_dim = 8;
    c.num_layers = 2;
    c.num_heads = 2;
    c.mlp_ratio = 2.0;
    c.proj_dim = 8;
    return c;
}

TextConfig tiny_text_config() {
    TextConfig c;
    c.vocab_size = 32;
    c.embed_dim = 8;
    c.num_layers = 2;
    c.num_heads = 2;
    c.mlp_ratio = 2.0;
    c.proj_dim = 8;
    c.base_max_len = 8;
    c.keep_prefix = 2;
    c.interp_factor = 2;
    c.use_extended = false;
    return c;
}

ClipModel tiny_model(uint64_t seed) {
    const std::vector<std::string> corpus = {
        "a red mug on a table", "a blue mug", "a green mug", "a small wooden table",
        "a large table",        "a photo of a red bucket"};
    auto vocab = Vocabulary::build(corpus, 32);
    return ClipModel::init(tiny_vision_config(), tiny_text_config(), vocab, seed);
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

TensorPtr rand_tensor(Rng& rng, std::vector<long> shape, bool requires_grad, double lo = -1.0,
                      double hi = 1.0) {
    auto t = make_tensor(std::move(shape), requires_grad);
    for (auto& v : t->data) v = rng.next_real(lo, hi);
    return t;
}

// Scalar probe: sum(y * c) with a fixed random weighting c so every output
// element contributes to the gradient.
TensorPtr probe(const TensorPtr& y, const TensorPtr& c) { return sum_all(mul(y, c)); }

struct KernelCase {
    std::string name;
    double err;
};

std::vector<KernelCase> kernel_grad_cases() {
    std::vector<KernelCase> cases;
    auto run = [&cases](const std::string& name, const std::function<TensorPtr()>& fn,
                        const std::vector<TensorPtr>& params) {
        cases.push_back({name, finite_difference_check(fn, params, 1e-5)});
    };

    Rng rng(1234);
    {
        auto x = rand_tensor(rng, {3, 4}, true);
        auto y = rand_tensor(rng, {3, 4}, true);
        auto c = rand_tensor(rng, {3, 4}, false);
        run("add", [&] { return probe(add(x, y), c); }, {x, y});
        run("multiply", [&] { return probe(mul(x, y), c); }, {x, y});
    }
    {
        auto x = rand_tensor(rng, {3, 4}, true);
        auto b = rand_tensor(rng, {4}, true);
        auto c = rand_tensor(rng, {3, 4}, false);
        run("add_rowvec", [&] { return probe(add_rowvec(x, b), c); }, {x, b});
    }
    {
        auto x = rand_tensor(rng, {3, 4}, true);
        auto y = rand_tensor(rng, {4, 5}, true);
        auto c = rand_tensor(rng, {3, 5}, false);
        run("matmul", [&] { return probe(matmul(x, y), c); }, {x, y});
    }
    {
        auto x = rand_tensor(rng, {3, 4}, true);
        auto c = rand_tensor(rng, {4, 3}, false);
        run("transpose", [&] { return probe(transpose(x), c); }, {x});
    }
    {
        auto x = rand_tensor(rng, {3, 4}, true);
        auto c = rand_tensor(rng, {2, 6}, false);
        run("reshape", [&] { return probe(reshape(x, {2, 6}), c); }, {x});
    }
    {
        auto x = rand_tensor(rng, {2, 3}, true);
        auto y = rand_tensor(rng, {2, 3}, true);
        auto c0 = rand_tensor(rng, {4, 3}, false);
        auto c1 = rand_tensor(rng, {2, 6}, false);
        run("concat_axis0", [&] { return probe(concat({x, y}, 0), c0); }, {x, y});
        run("concat_axis1", [&] { return probe(concat({x, y}, 1), c1); }, {x, y});
    }
    {
        auto x = rand_tensor(rng, {4, 5}, true);
        auto cr = rand_tensor(rng, {2, 5}, false);
        auto cc = rand_tensor(rng, {4, 2}, false);
        run("slice_rows", [&] { return probe(slice_rows(x, 1, 3), cr); }, {x});
        run("slice_cols", [&] { return probe(slice_cols(x, 2, 4), cc); }, {x});
    }
    {
        auto a = rand_tensor(rng, {4}, true);
        auto b = rand_tensor(rng, {1, 4}, true);
        auto c = rand_tensor(rng, {2, 4}, false);
        run("stack_rows", [&] { return probe(stack_rows({a, b}), c); }, {a, b});
    }
    {
        auto x = rand_tensor(rng, {3, 4}, true);
        auto c0 = rand_tensor(rng, {4}, false);
        auto c1 = rand_tensor(rng, {3}, false);
        run("mean_axis0", [&] { return probe(mean_axis(x, 0), c0); }, {x});
        run("mean_axis1", [&] { return probe(mean_axis(x, 1), c1); }, {x});
        run("mean_all", [&] { return scale(mean_all(x), 1.7); }, {x});
        run("sum_all", [&] { return scale(sum_all(x), 0.3); }, {x});
    }
    {
        auto x = rand_tensor(rng, {3, 4}, true);
        auto c = rand_tensor(rng, {3, 4}, false);
        run("gelu", [&] { return probe(gelu(x), c); }, {x});
        run("exp", [&] { return probe(exp_op(x), c); }, {x});
        run("scale", [&] { return probe(scale(x, -2.5), c); }, {x});
    }
    {
        auto x = rand_tensor(rng, {3, 4}, true, 0.5, 1.5);  // away from the pole
        auto c = rand_tensor(rng, {3, 4}, false);
        run("reciprocal", [&] { return probe(reciprocal(x), c); }, {x});
    }
    {
        auto x = rand_tensor(rng, {3, 4}, true, -0.8, 0.8);  // interior of the clamp
        auto c = rand_tensor(rng, {3, 4}, false);
        run("clamp", [&] { return probe(clamp(x, -0.9, 0.9), c); }, {x});
    }
    {
        auto s = rand_tensor(rng, {1}, true, 0.5, 1.5);
        auto x = rand_tensor(rng, {3, 4}, true);
        auto c = rand_tensor(rng, {3, 4}, false);
        run("mul_scalar", [&] { return probe(mul_scalar(x, s), c); }, {x, s});
    }
    {
        auto x = rand_tensor(rng, {3, 4}, true);
        auto g = rand_tensor(rng, {4}, true, 0.5, 1.5);
        auto b = rand_tensor(rng, {4}, true);
        auto c = rand_tensor(rng, {3, 4}, false);
        run("layer_norm", [&] { return probe(layer_norm(x, g, b), c); }, {x, g, b});
    }
    {
        auto table = rand_tensor(rng, {6, 4}, true);
        auto c = rand_tensor(rng, {3, 4}, false);
        const std::vector<long> ids = {1, 4, 1};  // repeated id exercises accumulation
        run("embedding", [&] { return probe(embedding(table, ids), c); }, {table});
    }
    {
        auto x = rand_tensor(rng, {3, 5}, true);
        auto c = rand_tensor(rng, {3, 5}, false);
        run("softmax_rowwise", [&] { return probe(softmax_rowwise(x), c); }, {x});
        run("log_softmax_rowwise", [&] { return probe(log_softmax_rowwise(x), c); }, {x});
        run("l2_normalize", [&] { return probe(l2_normalize(x, 1), c); }, {x});
    }
    {
        auto x = rand_tensor(rng, {4, 4}, true);
        auto c = rand_tensor(rng, {4}, false);
        run("gather_diag", [&] { return probe(gather_diag(x), c); }, {x});
    }
    {
        auto grid = rand_tensor(rng, {4, 4, 3}, true);
        auto c = rand_tensor(rng, {3}, false);
        RegionBox box;
        box.x1 = 0.1;
        box.y1 = 0.2;
        box.x2 = 0.8;
        box.y2 = 0.7;
        run("roi_align_average", [&] { return probe(roi_align_average(grid, box, 3), c); }, {grid});
    }
    return cases;
}

struct PipelineFixture {
    ClipModel model = tiny_model(7);
    std::vector<DatasetRecord> records;

    PipelineFixture() {
        DatasetRecord r0;
        r0.image_id = "fd-0";
        r0.image_source = "synthetic:base=0.2,0.3,0.4;block=0.1,0.1,0.6,0.6,0.9,0.2,0.1;noise=0.02;seed=5";
        r0.short_caption = "a red mug";
        r0.long_caption = "a red mug on a table";
        RegionBox b0;
        b0.x1 = 0.1;
        b0.y1 = 0.1;
        b0.x2 = 0.6;
        b0.y2 = 0.6;
        b0.positive_caption = "a red mug";
        b0.negative_captions = {"a blue mug", "a green mug"};
        r0.regions.push_back(b0);
        records.push_back(r0);

        DatasetRecord r1;
        r1.image_id = "fd-1";
        r1.image_source = "synthetic:base=0.6,0.5,0.2;block=0.4,0.3,0.9,0.9,0.1,0.3,0.8;noise=0.02;seed=9";
        r1.short_caption = "a large table";
        r1.long_caption = "a small wooden table";
        RegionBox b1;
        b1.x1 = 0.4;
        b1.y1 = 0.3;
        b1.x2 = 0.9;
        b1.y2 = 0.9;
        b1.positive_caption = "a large table";
        b1.negative_captions = {"a small wooden table"};
        r1.regions.push_back(b1);
        records.push_back(r1);
    }

    // Full stage-2 objective: Eq. 5 over Eq. 2 (short + long), Eq. 3 and
    // Eq. 4, everything composed through both encoders and RoIAlign.
    TensorPtr loss() const {
        std::vector<TensorPtr> v_rows, ts_rows, tl_rows, region_rows, text_rows;
        std::vector<TensorPtr> caption_sets;
        for (const auto& rec : records) {
            auto img = render_image(rec.image_source, model.vcfg.image_size, model.vcfg.channels);
            auto enc = model.encode_image(img);
            v_rows.push_back(enc.cls_embedding);
            ts_rows.push_back(model.encode_text(rec.short_caption).cls_embedding);
            tl_rows.push_back(model.encode_text(rec.long_caption).cls_embedding);
            for (const auto& box : rec.regions) {
                auto feat = roi_align_average(enc.token_grid, box, 3);
                region_rows.push_back(reshape(feat, {1, model.vcfg.proj_dim}));
                auto pos = model.encode_text(box.positive_caption).cls_embedding;
                text_rows.push_back(pos);
                std::vector<TensorPtr> caps{pos};
                for (const auto& neg : box.negative_captions)
                    caps.push_back(model.encode_text(neg).cls_embedding);
                caption_sets.push_back(concat(caps, 0));
            }
        }
        auto v = concat(v_rows, 0);
        auto l_global = add(global_contrastive_loss(v, concat(ts_rows, 0), model.temperature),
                            global_contrastive_loss(v, concat(tl_rows, 0), model.temperature));
        auto r = concat(region_rows, 0);
        auto l_regional = regional_contrastive_loss(r, concat(text_rows, 0), model.temperature);
        auto l_hard = hard_negative_loss(r, caption_sets, model.temperature);
        return combined_loss(l_global, l_regional, l_hard, 0.1, 0.5);
    }
};

std::string fmt_err(double err) {
    std::ostringstream os;
    os.precision(3);
    os << std::scientific << err;
    return os.str();
}

}  // namespace

PipelineGradCheck gradient_check_full_pipeline() {
    const auto t0 = Clock::now();
    PipelineFixture fx;
    auto params = fx.model.parameters();
    PipelineGradCheck out;
    for (const auto& p : params) out.param_count += p->numel();
    out.max_rel_err =
        finite_difference_check([&fx] { return fx.loss(); }, params, 1e-5);
    out.seconds = seconds_since(t0);
    return out;
}

std::vector<CheckResult> run_selfcheck(const SelfCheckOptions& opts) {
    std::vector<CheckResult> results;
    testing::backward_fault_scale = opts.inject_gradient_fault ? 1.05 : 1.0;

    // 1. Per-kernel gradients against central finite differences.
    {
        CheckResult r;
        r.name = "grad/kernels";
        double worst = 0.0;
        std::string worst_name = "-";
        for (const auto& c : kernel_grad_cases()) {
            if (c.err > worst) {
                worst = c.err;
                worst_name = c.name;
            }
        }
        r.pass = worst < 1e-4;
        r.detail = "max rel err " + fmt_err(worst) + " (" + worst_name + ")";
        results.push_back(r);
    }

    // 2. Gradient flow through one full 2-layer encoder pair.
    {
        CheckResult r;
        r.name = "grad/encoders";
        auto model = tiny_model(3);
        auto params = model.parameters();
        Rng rng(11);
        auto img = rand_tensor(rng, {8, 8, 1}, false, 0.0, 1.0);
        auto c = rand_tensor(rng, {2, 8}, false);
        auto fn = [&] {
            auto v = model.encode_image(img).cls_embedding;
            auto t = model.encode_text("a red mug on a table").cls_embedding;
            return probe(concat({v, t}, 0), c);
        };
        const double err = finite_difference_check(fn, params, 1e-5);
        r.pass = err < 1e-4;
        r.detail = "max rel err " + fmt_err(err);
        results.push_back(r);
    }

    // 3. Full combined objective through encoders + RoIAlign.
    {
        CheckResult r;
        r.name = "grad/full-objective";
        auto pg = gradient_check_full_pipeline();
        r.pass = pg.max_rel_err < 1e-4 && pg.seconds < 60.0;
        std::ostringstream os;
        os << "max rel err " << fmt_err(pg.max_rel_err) << " over " << pg.param_count
           << " params in " << pg.seconds << "s";
        r.detail = os.str();
        results.push_back(r);
    }

    testing::backward_fault_scale = 1.0;

    // 4./5. Global and regional losses against the independent oracle.
    {
        CheckResult r;
        r.name = "oracle/contrastive-loss";
        Rng rng(77);
        double worst = 0.0;
        for (int it = 0; it < 100; ++it) {
            const long n = 1 + static_cast<long>(rng.next_below(16));
            const long d = 2 + static_cast<long>(rng.next_below(6));
            auto v = rand_tensor(rng, {n, d}, false);
            auto t = rand_tensor(rng, {n, d}, false);
            const double tau = 0.05 + rng.next_real() * 0.9;
            std::vector<std::vector<double>> vv(n), tt(n);
            for (long i = 0; i < n; ++i) {
                vv[i].assign(v->data.begin() + i * d, v->data.begin() + (i + 1) * d);
                tt[i].assign(t->data.begin() + i * d, t->data.begin() + (i + 1) * d);
            }
            TemperatureParam temp = TemperatureParam::init(tau);
            const double got_g = global_contrastive_loss(v, t, temp)->data[0];
            const double got_r = regional_contrastive_loss(v, t, temp)->data[0];
            const double want = oracles::symmetric_infonce(vv, tt, temp.tau_value());
            worst = std::max({worst, std::fabs(got_g - want), std::fabs(got_r - want)});
        }
        // Closed form: N=2 orthonormal pairs at tau=1 -> -ln(e/(e+1)).
        {
            auto v = make_tensor({2, 2}, {1.0, 0.0, 0.0, 1.0});
            TemperatureParam temp = TemperatureParam::init(1.0);
            const double got = global_contrastive_loss(v, v, temp)->data[0];
            const double want = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
            if (std::fabs(got - want) > 1e-3) worst = std::max(worst, std::fabs(got - want));
        }
        r.pass = worst < 1e-10;
        r.detail = "max abs err " + fmt_err(worst) + " on 100 random instances";
        results.push_back(r);
    }

    // 6. Hard-negative loss against a direct evaluation.
    {
        CheckResult r;
        r.name = "oracle/hard-loss";
        Rng rng(78);
        double worst = 0.0;
        for (int it = 0; it < 100; ++it) {
            const long k = 1 + static_cast<long>(rng.next_below(8));
            const long d = 2 + static_cast<long>(rng.next_below(6));
            auto regions = rand_tensor(rng, {k, d}, false);
            std::vector<std::vector<double>> rr(k);
            std::vector<std::vector<std::vector<double>>> caps(k);
            std::vector<TensorPtr> cap_tensors;
            for (long i = 0; i < k; ++i) {
                rr[i].assign(regions->data.begin() + i * d, regions->data.begin() + (i + 1) * d);
                const long m = 1 + static_cast<long>(rng.next_below(11));
                auto ct = rand_tensor(rng, {m, d}, false);
                cap_tensors.push_back(ct);
                for (long j = 0; j < m; ++j)
                    caps[i].push_back(std::vector<double>(ct->data.begin() + j * d,
                                                          ct->data.begin() + (j + 1) * d));
            }
            TemperatureParam temp = TemperatureParam::init(0.05 + rng.next_real() * 0.9);
            const double got = hard_negative_loss(regions, cap_tensors, temp)->data[0];
            const double want = oracles::hard_negative(rr, caps, temp.tau_value());
            worst = std::max(worst, std::fabs(got - want));
        }
        // Closed form: positive at sim 1, ten orthogonal negatives, tau=1.
        {
            const long d = 12;
            auto region = make_tensor({1, d});
            region->data[0] = 1.0;
            auto caps = make_tensor({11, d});
            caps->data[0] = 1.0;  // identical to the region
            for (long j = 1; j < 11; ++j) caps->data[j * d + j] = 1.0;  // orthogonal
            TemperatureParam temp = TemperatureParam::init(1.0);
            const double got = hard_negative_loss(region, {caps}, temp)->data[0];
            const double want = -std::log(std::exp(1.0) / (std::exp(1.0) + 10.0));
            if (std::fabs(got - want) > 1e-3) worst = std::max(worst, std::fabs(got - want));
        }
        r.pass = worst < 1e-10;
        r.detail = "max abs err " + fmt_err(worst);
        results.push_back(r);
    }

    // 7. RoIAlign against the standalone bilinear oracle.
    {
        CheckResult r;
        r.name = "oracle/roi-align";
        Rng rng(79);
        double worst = 0.0;
        for (int it = 0; it < 1000; ++it) {
            const long w = 1 + static_cast<long>(rng.next_below(8));
            const long d = 1 + static_cast<long>(rng.next_below(4));
            const long g = 1 + static_cast<long>(rng.next_below(4));
            auto grid = rand_tensor(rng, {w, w, d}, false);
            RegionBox box;
            box.x1 = rng.next_real() * 0.7;
            box.y1 = rng.next_real() * 0.7;
            box.x2 = box.x1 + 0.05 + rng.next_real() * (1.0 - box.x1 - 0.05);
            box.y2 = box.y1 + 0.05 + rng.next_real() * (1.0 - box.y1 - 0.05);
            auto got = roi_align_average(grid, box, g);
            auto want = oracles::roi_bilinear(grid->data, w, d, box, g);
            for (long j = 0; j < d; ++j) worst = std::max(worst, std::fabs(got->data[j] - want[j]));
        }
        bool exact_ok = true;
        {
            // Full-image box with G == W must equal the token mean bitwise.
            const long w = 3, d = 5;
            auto grid = rand_tensor(rng, {w, w, d}, false);
            RegionBox box;
            box.x1 = 0.0;
            box.y1 = 0.0;
            box.x2 = 1.0;
            box.y2 = 1.0;
            auto got = roi_align_average(grid, box, w);
            auto mean = mean_axis(reshape(grid, {w * w, d}), 0);
            for (long j = 0; j < d; ++j)
                if (std::memcmp(&got->data[j], &mean->data[j], sizeof(double)) != 0) exact_ok = false;
        }
        r.pass = worst < 1e-9 && exact_ok;
        r.detail = "max abs err " + fmt_err(worst) + ", full-box identity " +
                   (exact_ok ? "exact" : "BROKEN");
        results.push_back(r);
    }

    // 8. NMS against the subset oracle.
    {
        CheckResult r;
        r.name = "oracle/nms";
        Rng rng(80);
        long mismatches = 0;
        bool gate_ok = true;
        for (int it = 0; it < 10000; ++it) {
            const long n = static_cast<long>(rng.next_below(9));
            std::vector<RegionBox> boxes;
            for (long i = 0; i < n; ++i) {
                RegionBox b;
                b.x1 = rng.next_real() * 0.7;
                b.y1 = rng.next_real() * 0.7;
                b.x2 = b.x1 + 0.05 + rng.next_real() * 0.25;
                b.y2 = b.y1 + 0.05 + rng.next_real() * 0.25;
                b.x2 = std::min(b.x2, 1.0);
                b.y2 = std::min(b.y2, 1.0);
                b.confidence = rng.next_real();
                boxes.push_back(b);
            }
            const double iou_thr = 0.2 + rng.next_real() * 0.6;
            auto got = nms_filter(boxes, 0.4, iou_thr);
            auto want = oracles::nms_subsets(boxes, 0.4, iou_thr);
            if (got.size() != want.size()) {
                ++mismatches;
                continue;
            }
            for (size_t i = 0; i < got.size(); ++i)
                if (got[i].x1 != want[i].x1 || got[i].y1 != want[i].y1 ||
                    got[i].confidence != want[i].confidence)
                    ++mismatches;
            for (const auto& b : got)
                if (b.confidence <= 0.4) gate_ok = false;
        }
        r.pass = mismatches == 0 && gate_ok;
        r.detail = std::to_string(mismatches) + " mismatches over 10000 cases, confidence gate " +
                   (gate_ok ? "enforced" : "BROKEN");
        results.push_back(r);
    }

    return results;
}

bool all_passed(const std::vector<CheckResult>& results) {
    for (const auto& r : results)
        if (!r.pass) return false;
    return true;
}

}  // namespace fgclip

#include "fgclip/losses.hpp"

#include <atomic>
#include <cmath>

#include "fgclip/error.hpp"

namespace fgclip {

namespace {
std::atomic<long> g_global_evals{0};
std::atomic<long> g_regional_evals{0};
std::atomic<long> g_hard_evals{0};

constexpr double kTauMin = 0.01;
constexpr double kTauMax = 1.0;

// S / tau as tape ops: multiply by the clamped reciprocal so gradients reach
// log_inv_tau.
TensorPtr apply_temperature(const TensorPtr& sim, const TemperatureParam& temp) {
    return mul_scalar(sim, reciprocal(temp.tau()));
}

// Symmetric InfoNCE used by both the global and the regional loss:
// -1/(2N) * sum_i [log softmax_row(S/tau)_ii + log softmax_row(S^T/tau)_ii].
TensorPtr symmetric_infonce(const TensorPtr& a, const TensorPtr& b, const TemperatureParam& temp) {
    auto sim = cosine_similarity(a, b);
    auto logits = apply_temperature(sim, temp);
    auto fwd = gather_diag(log_softmax_rowwise(logits));
    auto bwd = gather_diag(log_softmax_rowwise(transpose(logits)));
    const double n = static_cast<double>(a->dim(0));
    return scale(add(sum_all(fwd), sum_all(bwd)), -1.0 / (2.0 * n));
}

}  // namespace

TemperatureParam TemperatureParam::init(double tau0) {
    if (tau0 <= 0.0) throw ConfigError("TemperatureParam: initial tau must be positive");
    TemperatureParam t;
    t.log_inv_tau = make_scalar(-std::log(tau0), /*requires_grad=*/true);
    t.log_inv_tau->name = "temperature.log_inv_tau";
    return t;
}

TensorPtr TemperatureParam::tau() const {
    return clamp(exp_op(scale(log_inv_tau, -1.0)), kTauMin, kTauMax);
}

double TemperatureParam::tau_value() const {
    const double t = std::exp(-log_inv_tau->data[0]);
    return t < kTauMin ? kTauMin : (t > kTauMax ? kTauMax : t);
}

TensorPtr cosine_similarity(const TensorPtr& a, const TensorPtr& b, std::vector<long>* zero_slices) {
    if (a->ndim() != 2 || b->ndim() != 2 || a->dim(1) != b->dim(1))
        throw ShapeError("cosine_similarity: embedding dims disagree, " + shape_str(a->shape) +
                         " vs " + shape_str(b->shape));
    auto an = l2_normalize(a, 1, zero_slices);
    auto bn = l2_normalize(b, 1, zero_slices);
    return matmul(an, transpose(bn));
}

TensorPtr global_contrastive_loss(const TensorPtr& v, const TensorPtr& t,
                                  const TemperatureParam& temp) {
    if (v->ndim() != 2 || v->dim(0) < 1) throw DataError("global_contrastive_loss: empty batch");
    if (v->shape != t->shape)
        throw ShapeError("global_contrastive_loss: image/text shapes disagree, " +
                         shape_str(v->shape) + " vs " + shape_str(t->shape));
    ++g_global_evals;
    return symmetric_infonce(v, t, temp);
}

TensorPtr regional_contrastive_loss(const TensorPtr& r, const TensorPtr& l,
                                    const TemperatureParam& temp, bool* empty_batch) {
    if (empty_batch) *empty_batch = false;
    if (!r || r->numel() == 0) {
        if (empty_batch) *empty_batch = true;
        return make_scalar(0.0);
    }
    if (r->ndim() != 2 || l->ndim() != 2 || r->shape != l->shape)
        throw ShapeError("regional_contrastive_loss: region/text shapes disagree, " +
                         shape_str(r->shape) + " vs " + shape_str(l->shape));
    ++g_regional_evals;
    return symmetric_infonce(r, l, temp);
}

TensorPtr hard_negative_loss(const TensorPtr& r, const std::vector<TensorPtr>& captions_per_region,
                             const TemperatureParam& temp) {
    if (!r || r->ndim() != 2)
        throw ShapeError("hard_negative_loss: regions must be [K x d]");
    const long k = r->dim(0);
    if (k != static_cast<long>(captions_per_region.size()))
        throw ShapeError("hard_negative_loss: " + std::to_string(k) + " regions but " +
                         std::to_string(captions_per_region.size()) + " caption sets");
    ++g_hard_evals;
    std::vector<TensorPtr> terms;
    terms.reserve(k);
    for (long i = 0; i < k; ++i) {
        const auto& caps = captions_per_region[i];
        if (!caps || caps->numel() == 0 || caps->ndim() != 2)
            throw DataError("hard_negative_loss: region " + std::to_string(i) + " has no captions");
        auto ri = slice_rows(r, i, i + 1);                     // [1 x d]
        auto sims = cosine_similarity(ri, caps);               // [1 x M]
        auto logits = apply_temperature(sims, temp);
        auto lsm = log_softmax_rowwise(logits);
        terms.push_back(slice_cols(lsm, 0, 1));                // positive sits at index 0
    }
    return scale(sum_all(stack_rows(terms)), -1.0 / static_cast<double>(k));
}

TensorPtr combined_loss(const TensorPtr& l_global, const TensorPtr& l_regional,
                        const TensorPtr& l_hard, double alpha, double beta) {
    if (alpha < 0.0 || beta < 0.0)
        throw ConfigError("combined_loss: alpha and beta must be non-negative");
    return add(l_global, add(scale(l_regional, alpha), scale(l_hard, beta)));
}

LossCounters loss_counters() {
    return LossCounters{g_global_evals.load(), g_regional_evals.load(), g_hard_evals.load()};
}

void reset_loss_counters() {
    g_global_evals = 0;
    g_regional_evals = 0;
    g_hard_evals = 0;
}

}  // namespace fgclip

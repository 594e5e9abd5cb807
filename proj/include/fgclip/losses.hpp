#pragma once

#include <vector>

#include "fgclip/ops.hpp"
#include "fgclip/tensor.hpp"

namespace fgclip {

// Learnable temperature, parameterized as log(1/tau) and clamped to
// tau in [0.01, 1.0] wherever it divides logits. One instance is shared by
// all three losses.
struct TemperatureParam {
    TensorPtr log_inv_tau;  // [1]

    static TemperatureParam init(double tau0 = 0.07);

    // exp(-log_inv_tau) clamped to [0.01, 1.0]; built from tape ops so the
    // parameter receives gradients.
    TensorPtr tau() const;
    double tau_value() const;
};

// Entry (i,j) = a_i . b_j / (|a_i||b_j|). Rows with zero norm are flagged by
// l2_normalize and produce zero similarities.
TensorPtr cosine_similarity(const TensorPtr& a, const TensorPtr& b,
                            std::vector<long>* zero_slices = nullptr);

// Symmetric InfoNCE over N matched image/text rows, averaged over the 2N
// log-softmax terms.
TensorPtr global_contrastive_loss(const TensorPtr& v, const TensorPtr& t,
                                  const TemperatureParam& temp);

// Same objective over K region/text rows pooled across a batch. K = 0 is not
// an error: the loss contributes 0 and *empty_batch is set when provided.
TensorPtr regional_contrastive_loss(const TensorPtr& r, const TensorPtr& l,
                                    const TemperatureParam& temp, bool* empty_batch = nullptr);

// One-directional cross-entropy per region over that region's own captions
// (index 0 = positive, rest negatives), averaged over regions. A region with
// a single caption contributes 0.
TensorPtr hard_negative_loss(const TensorPtr& r, const std::vector<TensorPtr>& captions_per_region,
                             const TemperatureParam& temp);

// L = L_global + alpha * L_regional + beta * L_hard.
TensorPtr combined_loss(const TensorPtr& l_global, const TensorPtr& l_regional,
                        const TensorPtr& l_hard, double alpha = 0.1, double beta = 0.5);

// Evaluation counters used to assert that the stage-1 path never touches the
// regional or hard losses.
struct LossCounters {
    long global_evals = 0;
    long regional_evals = 0;
    long hard_evals = 0;
};
LossCounters loss_counters();
void reset_loss_counters();

}  // namespace fgclip

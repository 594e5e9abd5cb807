#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fgclip/checkpoint.hpp"
#include "fgclip/dataset.hpp"
#include "fgclip/encoders.hpp"

namespace fgclip {

struct TrainConfig {
    int stage = 1;
    long batch_size = 16;
    double lr = 1e-4;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.98;
    long warmup_iters = 200;
    long epochs = 1;
    double alpha = 0.1;
    double beta = 0.5;
    bool use_global = true;
    bool use_regional = true;
    bool use_hard = true;
    uint64_t seed = 0;
    long max_regions_per_step = 64;
    long roi_samples = 3;
    bool grad_clip = true;
    double grad_clip_norm = 1.0;

    // Stage-consistent paper defaults: stage 1 = lr 1e-4 / wd 0.05 / warmup
    // 200, global loss only; stage 2 = lr 1e-6 / wd 0.001 / warmup 50, all
    // three losses.
    static TrainConfig stage_defaults(int stage);
    // Enforces invariants; stage 1 forces the {global only} toggles.
    void validate();
};

// Linear ramp 0 -> lr over warmup_iters, then constant.
double lr_schedule(long step, const TrainConfig& cfg);

struct OptimizerState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    long step = 0;

    static OptimizerState init(const std::vector<TensorPtr>& params);
};

// Decoupled-weight-decay Adam update from the accumulated gradients:
//   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
//   theta <- theta - lr (m_hat / (sqrt(v_hat) + 1e-8) + wd theta)
// The temperature parameter is excluded from weight decay. Throws
// NumericError naming the parameter on any non-finite gradient.
void adamw_step(const std::vector<TensorPtr>& params, OptimizerState& state,
                const TrainConfig& cfg, double lr_now);

struct MetricsRow {
    long step = 0;
    int stage = 1;
    double lr = 0.0;
    double loss_global = 0.0;
    double loss_regional = 0.0;
    double loss_hard = 0.0;
    double loss_total = 0.0;
    double tau = 0.0;
};

std::string metrics_to_csv(const std::vector<MetricsRow>& rows);

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<MetricsRow> metrics;
    bool aborted = false;
    std::string abort_reason;
    double first_loss = 0.0;
    double final_loss = 0.0;
};

// One pass over the seed-shuffled dataset per epoch. Stage 1 evaluates the
// global loss on short and long captions only; stage 2 additionally pools up
// to max_regions_per_step regions per batch for the regional and hard terms.
// On a non-finite loss or gradient the last good weights are returned with
// aborted set.
TrainResult train_stage(const std::vector<DatasetRecord>& records, TrainConfig cfg,
                        ClipModel& model);

// Checkpoint conversion. make_checkpoint snapshots weights, optimizer state
// and the config (model geometry + vocabulary + train config). restore_model
// rebuilds the model from the embedded config and loads the weights;
// restore_optimizer additionally recovers AdamW state.
Checkpoint make_checkpoint(const ClipModel& model, const TrainConfig& cfg,
                           const OptimizerState* opt = nullptr);
ClipModel restore_model(const Checkpoint& ck);
OptimizerState restore_optimizer(const Checkpoint& ck, const std::vector<TensorPtr>& params);
TrainConfig train_config_from_checkpoint(const Checkpoint& ck);

}  // namespace fgclip

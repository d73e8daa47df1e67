// Copyright (c) 2026 The iterflow Authors
// SPDX-License-Identifier: Apache-2.0
//
// Optimization loop: batch assembly, sequence loss over all refinement
// iterations, adaptive-moment updates with global-norm clipping,
// checkpointing, periodic evaluation, and the ablation harness.

#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "iterflow/datagen.hpp"
#include "iterflow/loss.hpp"
#include "iterflow/metrics.hpp"
#include "iterflow/model.hpp"

namespace iterflow {

enum class LrSchedule { Constant, OneCycle };

enum class DataMode { Affine, Rigid };

struct DataGenConfig {
    DataMode mode = DataMode::Affine;
    int count = 20;
    int width = 64;
    int height = 64;
    double max_disp = 6.0;      // affine pairs
    double motion_scale = 1.0;  // rigid scenes
    uint64_t seed = 1;
};

std::vector<SamplePair> generate_dataset(const DataGenConfig& cfg);

struct TrainConfig {
    int steps = 2000;
    int batch = 8;
    double lr = 2e-4;
    LrSchedule schedule = LrSchedule::OneCycle;
    double clip_norm = 1.0;
    double weight_decay = 1e-5;
    uint64_t seed = 0;
    int eval_every = 250;
    LossConfig loss;
    ModelConfig model;
    DataGenConfig data;
    std::optional<DataGenConfig> holdout;
};

// One adaptive-moment update for a single tensor:
//   m <- 0.9 m + 0.1 g,  v <- 0.999 v + 0.001 g^2, bias-corrected by
//   applied-update count t, then w <- w - lr * mhat / (sqrt(vhat) + 1e-8),
// with decoupled weight decay w <- w - lr * wd * w.
struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

void optimizer_step(Tensor4f& w, const Tensor4f& g, Tensor4f& m, Tensor4f& v, long t,
                    const AdamConfig& cfg);

struct StepLog {
    uint64_t step = 0;
    double lr = 0;
    double loss = 0;        // full sequence loss
    double final_loss = 0;  // last-iteration term alone
};

struct EvalLog {
    uint64_t step = 0;
    MetricReport train;
    std::optional<MetricReport> holdout;
};

struct TrainResult {
    std::vector<StepLog> steps;
    std::vector<EvalLog> evals;
    long skipped_updates = 0;
    bool diverged = false;
    std::string divergence_note;
};

double schedule_lr(const TrainConfig& cfg, uint64_t step);

class Trainer {
public:
    explicit Trainer(const TrainConfig& cfg);

    // Runs until cfg.steps, continuing from the current step after a resume.
    // per_step, when set, observes every logged step (for live CSV logging).
    TrainResult train(const std::function<void(const StepLog&)>& per_step = nullptr,
                      const std::function<void(const EvalLog&)>& per_eval = nullptr);

    Model& model() { return model_; }
    ParamStore& store() { return store_; }
    const TrainConfig& config() const { return cfg_; }
    uint64_t step() const { return step_; }
    const std::vector<SamplePair>& train_set() const { return train_set_; }
    const std::vector<SamplePair>* holdout_set() const {
        return holdout_set_.empty() ? nullptr : &holdout_set_;
    }

    // Full-resolution evaluation of the current weights over a sample list.
    MetricReport evaluate_samples(const std::vector<SamplePair>& samples, int iters) const;
    // Per-iteration EPE over a sample list (index 0 = direct regression).
    std::vector<double> per_iteration_epe(const std::vector<SamplePair>& samples,
                                          int iters) const;
    // Mean beta2 per iteration (confidence trace; MoL/MoG heads only).
    std::vector<double> per_iteration_mean_beta2(const std::vector<SamplePair>& samples,
                                                 int iters) const;

    void save_checkpoint_file(const std::string& path, const std::string& config_hash) const;
    void resume_from(const std::string& path);        // weights + moments + step
    void init_weights_from(const std::string& path);  // weights only, fresh moments

    // Dead-parameter detector: parameter tensors that received no nonzero
    // gradient element over the first `probe_steps` batches.
    std::vector<std::string> gradient_flow_audit(int probe_steps = 10);

    // Builds the per-iteration tape losses for one batch; exposed for the
    // step-0 cross-check against the loss module.
    double compute_batch_loss(const std::vector<size_t>& indices) const;

private:
    TrainConfig cfg_;
    ParamStore store_;
    Model model_;
    std::vector<SamplePair> train_set_;
    std::vector<SamplePair> holdout_set_;
    uint64_t step_ = 0;
    long applied_updates_ = 0;
    long skipped_updates_ = 0;

    struct Batch {
        Tensor4f i1, i2, gt, valid;
    };
    Batch make_batch(const std::vector<size_t>& indices) const;
    std::vector<size_t> batch_indices(uint64_t step) const;

    // forward + per-iteration losses on one tape; returns (sequence, final)
    std::pair<Var, Var> build_loss(Tape& tape, typename Model::Bound& bound,
                                   const Batch& batch) const;
};

// --- ablation harness ---------------------------------------------------------

// A named single-field change relative to the base config (controlled-variable
// design: each arm differs from the base in exactly one axis).
struct ConfigDelta {
    std::string name;
    std::optional<LossKind> loss_kind;
    std::optional<bool> direct_init;
    std::optional<int> rnn_blocks;
};

struct AblationRow {
    std::string name;
    LossKind loss_kind = LossKind::MoL;
    bool direct_init = true;
    int rnn_blocks = 2;
    double train_epe = 0;
    double holdout_epe = 0;
    double final_loss = 0;
    uint64_t steps = 0;
    std::vector<double> final_loss_curve;
};

TrainConfig apply_delta(const TrainConfig& base, const ConfigDelta& delta);

// Trains base + one arm per delta over the same seed and data stream.
std::vector<AblationRow> ablate(const TrainConfig& base, const std::vector<ConfigDelta>& axes,
                                const std::function<void(const std::string&)>& log = nullptr);

// Table 5-style rendering: loss design, init on/off, block count, EPE.
std::string format_ablation_table(const std::vector<AblationRow>& rows);

}  // namespace iterflow

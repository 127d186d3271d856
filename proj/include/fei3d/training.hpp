#pragma once

#include "fei3d/gradcheck.hpp"
#include "fei3d/losses.hpp"
#include "fei3d/matrix.hpp"
#include "fei3d/nn.hpp"
#include "fei3d/rng.hpp"

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fei3d::training {

/// Defaults: batch 64, weight decay 1e-5, 100 epochs, patience 3,
/// triangular CyclicLR 1e-6 → 1e-4 with step size half the number of
/// batches per epoch.
struct TrainConfig {
    std::size_t batch_size = 64;
    double weight_decay = 1e-5;
    std::size_t max_epochs = 100;
    std::size_t patience = 3;
    double base_lr = 1e-6;
    double max_lr = 1e-4;
    std::size_t step_size = 0;  // 0 resolves to batches_per_epoch / 2 at run start
    std::uint64_t seed = 0;
    unsigned threads = 1;

    void validate() const;
};

/// Triangular wave: base_lr at step 0, max_lr at step_size, back to base_lr
/// at 2·step_size. Integer phase arithmetic makes lr(t) == lr(t + 2·step_size)
/// hold exactly.
double cyclic_lr(double base_lr, double max_lr, std::size_t step_size, std::size_t global_step);
double cyclic_lr(const TrainConfig &cfg, std::size_t global_step);

/// Batches per epoch with the short tail dropped; a dataset smaller than one
/// batch trains on its single partial batch.
std::size_t batches_per_epoch(std::size_t samples, std::size_t batch_size);
std::size_t resolve_step_size(const TrainConfig &cfg, std::size_t samples);

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct OptimizerState {
    AdamOptions options;
    std::vector<Matrix> first_moment;
    std::vector<Matrix> second_moment;
    std::size_t step = 0;
};

/// Bias-corrected Adam with decoupled weight decay: θ ← θ·(1 − lr·wd), then
/// θ ← θ − lr·m̂/(√v̂ + ε). Moments are allocated on the first call.
void adam_step(std::span<const nn::ParamRef> params, OptimizerState &state, double lr, double weight_decay);

struct EarlyStopDecision {
    bool stop = false;
    double best = 0.0;
    std::size_t stale = 0;
    bool improved = false;
};

/// An epoch improves when current < best − 1e-12; stop once stale ≥ patience.
EarlyStopDecision early_stop_update(double best, double current_val_loss, std::size_t stale_epochs,
                                    std::size_t patience);

struct Targets {
    std::vector<int> labels;
    Matrix va;  // N x 2 or empty

    [[nodiscard]] bool has_labels() const noexcept { return !labels.empty(); }
    [[nodiscard]] bool has_va() const noexcept { return !va.empty(); }
    [[nodiscard]] Targets subset(std::span<const std::size_t> rows) const;
};

struct TrainingData {
    std::vector<std::string> ids;
    Matrix features;
    Targets targets;

    [[nodiscard]] std::size_t size() const noexcept { return features.rows(); }
};

enum class LossKind {
    cross_entropy,
    weighted_cross_entropy,
    affectnet_combined,  // CE + random-share MSE / (1−CCC) / (1−PCC)
    stage1_combined,     // weighted CE + w1·MSE
    stage2_va,           // (1 − CCC) + w2·MSE
    mse,
};

LossKind parse_loss_kind(std::string_view name);
std::string_view to_string(LossKind kind);
/// CE for class-only heads, the combined loss for the 8+VA head, stage-2 VA loss for VA heads.
LossKind default_loss_for(const nn::HeadKind &head);

/// Binds a loss to a head layout. The model output is split into logits
/// (first class_count columns) and valence/arousal (the last two) as needed.
class Objective {
public:
    Objective(LossKind kind, nn::HeadKind head, losses::ClassWeights class_weights = {},
              losses::VaLossConfig va_config = {});

    [[nodiscard]] LossKind kind() const noexcept { return kind_; }
    [[nodiscard]] const nn::HeadKind &head() const noexcept { return head_; }

    /// With `weight_rng` the combined loss draws fresh α, β, γ; without it
    /// (validation) the three shares are equal.
    [[nodiscard]] nn::LossEval evaluate(const Matrix &output, const Targets &targets, Rng *weight_rng) const;

    /// Summary metrics for history records: accuracy and/or per-dimension CCC.
    [[nodiscard]] std::map<std::string, double> summary(const Matrix &output, const Targets &targets) const;

private:
    LossKind kind_;
    nn::HeadKind head_;
    losses::ClassWeights class_weights_;
    losses::VaLossConfig va_config_;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double lr_min = 0.0;
    double lr_max = 0.0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    std::map<std::string, double> val_metrics;
};

struct FitResult {
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_val_loss = 0.0;
    bool stopped_early = false;
    std::size_t global_steps = 0;
    std::size_t step_size = 0;
};

/// Mini-batch training with per-epoch shuffling, cyclic LR per batch, Adam
/// with decoupled weight decay, validation after every epoch and early
/// stopping on validation loss. On return the model holds the parameters of
/// the best validation epoch. Batch order, dropout masks and loss-weight draws
/// all come from streams derived from cfg.seed.
FitResult fit(nn::Trainable &model, const TrainingData &train, const TrainingData &val, const Objective &objective,
              const TrainConfig &cfg);

struct TwoStageResult {
    FitResult stage1;
    FitResult stage2;
};

/// Stage 1 trains the 8-class + VA head with weighted CE + w1·MSE (class
/// weights from train frequencies). Stage 2 replaces the head with a fresh
/// 2-wide valence/arousal head on the same trunk and trains with the stage-2
/// VA loss. `stage2_epochs` overrides cfg.max_epochs for the second stage.
TwoStageResult fit_two_stage_va(nn::MlpModel &model, const TrainingData &train, const TrainingData &val,
                                const TrainConfig &cfg, const losses::VaLossConfig &va_cfg,
                                std::optional<std::size_t> stage2_epochs = std::nullopt);

/// Independent seed for a named sub-stream of `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept;

std::string history_jsonl(const std::vector<EpochRecord> &history);

}  // namespace fei3d::training

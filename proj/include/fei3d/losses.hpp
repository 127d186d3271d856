#pragma once

#include "fei3d/matrix.hpp"
#include "fei3d/rng.hpp"

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace fei3d::losses {

/// Random mixing weights for the multi-term classification loss; drawn
/// afresh from U(0,1) for every training batch.
struct LossWeights {
    double alpha = 1.0;
    double beta = 1.0;
    double gamma = 1.0;

    /// Resamples until every weight is strictly positive.
    static LossWeights sample(Rng &rng);
    /// alpha, beta, gamma divided by their sum.
    [[nodiscard]] std::array<double, 3> shares() const;
};

class ClassWeights {
public:
    ClassWeights() = default;
    explicit ClassWeights(std::vector<double> values);
    static ClassWeights uniform(std::size_t classes) { return ClassWeights(std::vector<double>(classes, 1.0)); }

    [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
    [[nodiscard]] double operator[](std::size_t c) const noexcept { return values_[c]; }
    [[nodiscard]] const std::vector<double> &values() const noexcept { return values_; }

private:
    std::vector<double> values_;
};

struct VaLossConfig {
    double w1 = 1.0;
    double w2 = 1.0;
    /// Read the stage-2 CCC term as (1 − CCC); false keeps the literal CCC + w2·MSE.
    bool ccc_as_one_minus = true;
};

enum class CeReduction {
    batch_mean,     // Σ w_y·ℓ / N
    weighted_mean,  // Σ w_y·ℓ / Σ w_y
};

struct LossGrad {
    double loss = 0.0;
    Matrix grad;
};

struct CorrelationResult {
    double value = 0.0;
    std::vector<double> grad;  // d value / d pred
    bool degenerate = false;
};

struct HeadLoss {
    double loss = 0.0;
    Matrix grad_logits;  // N x C
    Matrix grad_va;      // N x 2
};

/// Row-wise softmax with max subtraction.
Matrix softmax(const Matrix &logits);

/// Mean negative log-likelihood; grad = (softmax − onehot) / N.
LossGrad softmax_cross_entropy(const Matrix &logits, std::span<const int> labels);

LossGrad weighted_cross_entropy(const Matrix &logits, std::span<const int> labels, const ClassWeights &weights,
                                CeReduction reduction = CeReduction::batch_mean);

/// Inverse-frequency weights w_c = N / (C·n_c). Every class must be present.
ClassWeights class_weights_from_counts(std::span<const std::size_t> counts);

/// Mean of (pred − target)² over every entry.
LossGrad mse_loss(const Matrix &pred, const Matrix &target);

/// Pearson correlation with centered sums. Zero variance in either argument
/// yields value 0, zero gradient and `degenerate`.
CorrelationResult pcc(std::span<const double> pred, std::span<const double> target);

/// Concordance correlation 2·cov / (σx² + σy² + (μx − μy)²) with population
/// moments. Two equal constant sequences give 1; unequal constants give 0.
CorrelationResult ccc(std::span<const double> pred, std::span<const double> target);

/// CE + a·MSE + b·(1 − CCC) + c·(1 − PCC) with (a, b, c) the normalized shares
/// of `w`. The VA terms are computed per dimension and averaged over valence
/// and arousal.
HeadLoss combined_affectnet_loss(const Matrix &logits, const Matrix &va_pred, std::span<const int> labels,
                                 const Matrix &va_target, const LossWeights &w);

/// Weighted CE + w1·MSE over valence/arousal.
HeadLoss stage1_combined_loss(const Matrix &logits, const Matrix &va_pred, std::span<const int> labels,
                              const Matrix &va_target, const ClassWeights &class_weights, const VaLossConfig &cfg);

/// (1 − mean CCC) + w2·MSE, or the literal mean CCC + w2·MSE when
/// cfg.ccc_as_one_minus is false.
LossGrad stage2_va_loss(const Matrix &va_pred, const Matrix &va_target, const VaLossConfig &cfg);

/// Column `dim` of an N×2 valence/arousal matrix.
std::vector<double> va_column(const Matrix &va, std::size_t dim);

}  // namespace fei3d::losses

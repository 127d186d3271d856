#pragma once

#include "fei3d/matrix.hpp"

#include "json.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace fei3d::metrics {

/// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
public:
    ConfusionMatrix() = default;
    explicit ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {}

    [[nodiscard]] std::size_t classes() const noexcept { return classes_; }
    [[nodiscard]] std::size_t at(std::size_t truth, std::size_t pred) const noexcept {
        return counts_[truth * classes_ + pred];
    }
    void add(std::size_t truth, std::size_t pred) noexcept { ++counts_[truth * classes_ + pred]; }
    /// Element-wise sum; lets parallel evaluators combine partial results.
    void merge(const ConfusionMatrix &other);

    [[nodiscard]] std::size_t total() const noexcept;
    [[nodiscard]] std::size_t trace() const noexcept;
    [[nodiscard]] std::size_t support(std::size_t truth) const noexcept;    // row sum
    [[nodiscard]] std::size_t predicted(std::size_t pred) const noexcept;   // column sum

    friend bool operator==(const ConfusionMatrix &, const ConfusionMatrix &) = default;

private:
    std::size_t classes_ = 0;
    std::vector<std::size_t> counts_;
};

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> pred, std::size_t classes);

struct ClassScores {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
};

struct Averages {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct ClassificationOptions {
    /// Leave classes that are neither true nor predicted out of the macro mean
    /// instead of counting them as zeros.
    bool macro_exclude_absent = false;
};

struct ClassificationReport {
    std::size_t samples = 0;
    double accuracy = 0.0;
    std::vector<ClassScores> per_class;
    Averages weighted;
    Averages macro;
    ConfusionMatrix confusion;

    [[nodiscard]] bool balanced() const noexcept;
};

/// Per-class P = TP/(TP+FP), R = TP/(TP+FN), F1 = 2PR/(P+R), with 0 for any
/// zero denominator; macro is the plain class mean and weighted the
/// support-weighted mean. All averaging is done in exact rational arithmetic
/// on the counts and rounded once, so identities such as weighted recall ==
/// accuracy hold exactly.
ClassificationReport classification_report(const ConfusionMatrix &cm, const ClassificationOptions &options = {});
ClassificationReport classification_report(std::span<const int> truth, std::span<const int> pred,
                                           std::size_t classes, const ClassificationOptions &options = {});

struct DimensionScores {
    double mse = 0.0;
    double mae = 0.0;
    double rmse = 0.0;
    double ccc = 0.0;
};

struct RegressionReport {
    std::size_t samples = 0;
    DimensionScores valence;
    DimensionScores arousal;
    DimensionScores mean;  // average of the two dimensions, metric by metric
};

/// pred and target are N×2 (valence, arousal), N ≥ 2.
RegressionReport regression_report(const Matrix &pred, const Matrix &target);

/// Row-wise argmax; ties go to the lowest index.
std::vector<int> argmax_rows(const Matrix &scores);

nlohmann::json to_json(const ClassificationReport &report);
nlohmann::json to_json(const RegressionReport &report);

/// Aligned text tables. The classification layout is Acc | weighted F1 P R |
/// macro F1 P R, collapsing to Accuracy | F1 | Precision | Recall when every
/// report has balanced supports.
std::string format_classification_table(const std::vector<std::pair<std::string, ClassificationReport>> &rows);
/// MSE | MAE | RMSE | CCC (dimension means) followed by the per-dimension
/// RMSE/CCC benchmark layout.
std::string format_regression_table(const std::vector<std::pair<std::string, RegressionReport>> &rows);

}  // namespace fei3d::metrics

#pragma once

#include "fei3d/checkpoint.hpp"
#include "fei3d/data.hpp"
#include "fei3d/matrix.hpp"
#include "fei3d/nn.hpp"
#include "fei3d/rng.hpp"
#include "fei3d/training.hpp"

#include "json.hpp"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fei3d::fusion {

enum class FusionKind { max, min, mean, weighted };

/// `weight` is the 3D share and is set exactly when kind is weighted.
struct FusionStrategy {
    FusionKind kind = FusionKind::mean;
    std::optional<double> weight;

    static FusionStrategy max() { return {FusionKind::max, std::nullopt}; }
    static FusionStrategy min() { return {FusionKind::min, std::nullopt}; }
    static FusionStrategy mean() { return {FusionKind::mean, std::nullopt}; }
    static FusionStrategy weighted(double w);
    static FusionStrategy parse(std::string_view name, std::optional<double> weight);

    void validate() const;
    [[nodiscard]] std::string name() const;
};

/// Rows of both inputs must be distributions within 1e-9. Max/min take the
/// elementwise extremum and renormalize; a min row with no common support
/// (all zeros) falls back to the mean of the two rows.
Matrix late_fuse_class(const Matrix &p2d, const Matrix &p3d, const FusionStrategy &s);
/// Values must lie in [-1, 1]; weighted uses one weight for both dimensions.
Matrix late_fuse_va(const Matrix &va2d, const Matrix &va3d, const FusionStrategy &s);

struct LateFusionResult {
    data::PredictionSet fused;
    data::AlignResult alignment;
};

/// Joins on id (a's order) and fuses every payload both sets carry.
LateFusionResult late_fuse(const data::PredictionSet &p2d, const data::PredictionSet &p3d, const FusionStrategy &s);

enum class SweepObjective { accuracy, ccc, rmse };

SweepObjective parse_sweep_objective(std::string_view name);
std::string_view to_string(SweepObjective objective) noexcept;
[[nodiscard]] bool maximizes(SweepObjective objective) noexcept;

struct SweepPoint {
    double weight = 0.0;
    double value = 0.0;
};

struct SweepResult {
    SweepObjective objective = SweepObjective::accuracy;
    double best_weight = 0.0;
    double best_value = 0.0;
    std::vector<SweepPoint> table;
};

/// "start:stop:step" (inclusive of stop up to rounding) or "w1,w2,...".
std::vector<double> parse_grid(std::string_view text);

/// Accuracy of weighted class fusion at each grid point.
SweepResult sweep_fusion_weight(const Matrix &p2d, const Matrix &p3d, std::span<const int> labels,
                                std::span<const double> grid);
/// Mean CCC (maximized) or mean RMSE (minimized) over valence and arousal.
SweepResult sweep_fusion_weight_va(const Matrix &va2d, const Matrix &va3d, const Matrix &targets,
                                   std::span<const double> grid, SweepObjective objective);

/// [feat2d ‖ feat3d] rows go in; the 3D part passes through a learned
/// linear map to proj_dim before the classifier sees [feat2d ‖ proj(feat3d)].
class IntermediateFusionModel final : public nn::Trainable {
public:
    IntermediateFusionModel() = default;
    IntermediateFusionModel(std::size_t dim_2d, std::size_t dim_3d, std::size_t proj_dim, nn::HeadKind head,
                            const nn::MlpOptions &options, Rng &rng);

    [[nodiscard]] std::size_t dim_2d() const noexcept { return dim_2d_; }
    [[nodiscard]] std::size_t dim_3d() const noexcept { return dim_3d_; }
    [[nodiscard]] std::size_t proj_dim() const noexcept { return projection.out_features(); }

    [[nodiscard]] std::size_t input_dim() const override { return dim_2d_ + dim_3d_; }
    [[nodiscard]] std::size_t output_width() const override { return classifier.output_width(); }

    Matrix forward(const Matrix &batch, nn::Mode mode, Rng &rng) override;
    Matrix backward(const Matrix &grad_output) override;
    [[nodiscard]] Matrix predict(const Matrix &batch) const override;

    std::vector<nn::ParamRef> parameters() override;
    std::vector<nn::StateRef> state() override;
    [[nodiscard]] std::vector<nn::ConstStateRef> state() const override;

    nn::LinearLayer projection;  // proj_dim x dim_3d
    nn::MlpModel classifier;     // input dim_2d + proj_dim

private:
    std::size_t dim_2d_ = 0;
    std::size_t dim_3d_ = 0;
};

/// Ids must match row for row; the first mismatch is reported.
Matrix intermediate_forward(IntermediateFusionModel &model, std::span<const std::string> ids_2d, const Matrix &feat2d,
                            std::span<const std::string> ids_3d, const Matrix &feat3d, nn::Mode mode, Rng &rng);

/// Features for every dataset sample, in dataset order, as [feat2d ‖ params].
/// A dataset id without 2D features is an alignment error.
training::TrainingData join_features(const data::FeatureSet &features, const data::ParamDataset &ds);

nlohmann::json describe(const IntermediateFusionModel &model);
IntermediateFusionModel fusion_from_description(const nlohmann::json &architecture);

void save_checkpoint(const IntermediateFusionModel &model, const training::CheckpointMeta &meta,
                     const std::filesystem::path &path);

struct LoadedFusion {
    IntermediateFusionModel model;
    training::CheckpointMeta meta;
};

LoadedFusion load_fusion_checkpoint(const std::filesystem::path &path);

}  // namespace fei3d::fusion

#pragma once

#include "fei3d/data.hpp"
#include "fei3d/metrics.hpp"
#include "fei3d/nn.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace fei3d::cli {

/// Fills options that were not given on the command line from a flat JSON
/// object keyed by long flag name ("max-lr" or "max_lr"). Unknown keys are a
/// usage error.
void apply_config_file(CLI::App &command, const std::filesystem::path &path);

/// Every option of `command` with its resolved value, for config.json.
nlohmann::json resolved_options(const CLI::App &command);

/// --threads if given, else FEI3D_THREADS, else 1.
unsigned resolve_threads(const CLI::Option &flag, unsigned flag_value);

void write_json(const std::filesystem::path &path, const nlohmann::json &j);

struct Evaluation {
    std::optional<metrics::ClassificationReport> classification;
    std::optional<metrics::RegressionReport> regression;
    data::AlignResult alignment;

    [[nodiscard]] nlohmann::json to_json() const;
};

/// Scores predictions against the labelled samples they share ids with.
Evaluation evaluate(const data::PredictionSet &predictions, const data::ParamDataset &truth);

std::string report_tables(const std::vector<std::pair<std::string, const Evaluation *>> &rows);

/// Softmax over the logit columns and clipped valence/arousal columns.
data::PredictionSet predictions_from_outputs(const Matrix &outputs, const nn::HeadKind &head,
                                             std::vector<std::string> ids, std::string source);

}  // namespace fei3d::cli

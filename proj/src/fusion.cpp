#include "fei3d/fusion.hpp"

#include "fei3d/error.hpp"
#include "fei3d/metrics.hpp"
#include "fei3d/text_io.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace fei3d::fusion {

namespace {

constexpr double distribution_tolerance = 1e-9;

void require_aligned(const Matrix &a, const Matrix &b, const char *what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw Error(ErrorKind::shape, std::string(what) + ": sources are " + a.shape_string() + " and " +
                                          b.shape_string());
    }
}

void require_distributions(const Matrix &p, const char *which) {
    for (std::size_t r = 0; r < p.rows(); ++r) {
        double sum = 0.0;
        for (double v : p.row(r)) {
            if (!(v >= 0.0)) {
                throw Error(ErrorKind::data, std::string(which) + " row " + std::to_string(r) +
                                                 " has a negative or non-finite probability");
            }
            sum += v;
        }
        if (std::abs(sum - 1.0) > distribution_tolerance) {
            throw Error(ErrorKind::data, std::string(which) + " row " + std::to_string(r) + " sums to " +
                                             text::format_double(sum) +
                                             "; late fusion needs probabilities, not logits");
        }
    }
}

void require_va_range(const Matrix &va, const char *which) {
    if (va.cols() != 2) {
        throw Error(ErrorKind::shape, std::string(which) + " VA block is " + va.shape_string() + ", expected Nx2");
    }
    for (std::size_t r = 0; r < va.rows(); ++r) {
        for (double v : va.row(r)) {
            if (!(v >= -1.0 && v <= 1.0)) {
                throw Error(ErrorKind::data, std::string(which) + " row " + std::to_string(r) + " value " +
                                                 text::format_double(v) + " outside [-1, 1]");
            }
        }
    }
}

double combine(double a, double b, const FusionStrategy &s) {
    switch (s.kind) {
        case FusionKind::max: return std::max(a, b);
        case FusionKind::min: return std::min(a, b);
        case FusionKind::mean: return (a + b) / 2.0;
        case FusionKind::weighted: {
            const double w = *s.weight;
            return (1.0 - w) * a + w * b;
        }
    }
    return a;
}

}  // namespace

// ---------------------------------------------------------------- strategy

FusionStrategy FusionStrategy::weighted(double w) {
    FusionStrategy s{FusionKind::weighted, w};
    s.validate();
    return s;
}

FusionStrategy FusionStrategy::parse(std::string_view name, std::optional<double> weight) {
    FusionStrategy s;
    if (name == "max") {
        s.kind = FusionKind::max;
    } else if (name == "min") {
        s.kind = FusionKind::min;
    } else if (name == "mean") {
        s.kind = FusionKind::mean;
    } else if (name == "weighted") {
        s.kind = FusionKind::weighted;
    } else {
        throw Error(ErrorKind::config,
                    "unknown fusion strategy '" + std::string(name) + "' (expected max, min, mean or weighted)");
    }
    s.weight = weight;
    s.validate();
    return s;
}

void FusionStrategy::validate() const {
    if (kind == FusionKind::weighted) {
        if (!weight) {
            throw Error(ErrorKind::config, "weighted fusion needs a weight");
        }
        if (!(*weight >= 0.0 && *weight <= 1.0)) {
            throw Error(ErrorKind::config, "fusion weight " + text::format_double(*weight) + " outside [0, 1]");
        }
    } else if (weight) {
        throw Error(ErrorKind::config, "a fusion weight only applies to the weighted strategy");
    }
}

std::string FusionStrategy::name() const {
    switch (kind) {
        case FusionKind::max: return "max";
        case FusionKind::min: return "min";
        case FusionKind::mean: return "mean";
        case FusionKind::weighted: return "weighted";
    }
    return "unknown";
}

// ---------------------------------------------------------------- late fusion

Matrix late_fuse_class(const Matrix &p2d, const Matrix &p3d, const FusionStrategy &s) {
    s.validate();
    require_aligned(p2d, p3d, "late_fuse_class");
    require_distributions(p2d, "2D probabilities");
    require_distributions(p3d, "3D probabilities");
    Matrix out(p2d.rows(), p2d.cols());
    const bool extremum = s.kind == FusionKind::max || s.kind == FusionKind::min;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        const auto a = p2d.row(r);
        const auto b = p3d.row(r);
        auto o = out.row(r);
        double sum = 0.0;
        for (std::size_t c = 0; c < o.size(); ++c) {
            o[c] = combine(a[c], b[c], s);
            sum += o[c];
        }
        if (!extremum) {
            continue;
        }
        if (sum > 0.0) {
            for (double &v : o) {
                v /= sum;
            }
        } else {
            for (std::size_t c = 0; c < o.size(); ++c) {
                o[c] = (a[c] + b[c]) / 2.0;
            }
        }
    }
    return out;
}

Matrix late_fuse_va(const Matrix &va2d, const Matrix &va3d, const FusionStrategy &s) {
    s.validate();
    require_aligned(va2d, va3d, "late_fuse_va");
    require_va_range(va2d, "2D valence/arousal");
    require_va_range(va3d, "3D valence/arousal");
    Matrix out(va2d.rows(), 2);
    const auto a = va2d.values();
    const auto b = va3d.values();
    auto o = out.values();
    for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] = combine(a[i], b[i], s);
    }
    return out;
}

LateFusionResult late_fuse(const data::PredictionSet &p2d, const data::PredictionSet &p3d, const FusionStrategy &s) {
    const bool probs = p2d.has_probs() && p3d.has_probs();
    const bool va = p2d.has_va() && p3d.has_va();
    if (!probs && !va) {
        throw Error(ErrorKind::data, "prediction sets '" + p2d.source + "' and '" + p3d.source +
                                         "' share no payload (class probabilities or valence/arousal)");
    }
    if (probs && p2d.probs.cols() != p3d.probs.cols()) {
        throw Error(ErrorKind::shape, "prediction sets disagree on class count: " + std::to_string(p2d.probs.cols()) +
                                          " vs " + std::to_string(p3d.probs.cols()));
    }
    LateFusionResult result;
    result.alignment = data::align(p2d.ids, p3d.ids);
    std::vector<std::size_t> rows_a;
    std::vector<std::size_t> rows_b;
    std::vector<std::string> ids;
    for (const auto &[i, j] : result.alignment.pairs) {
        rows_a.push_back(i);
        rows_b.push_back(j);
        ids.push_back(p2d.ids[i]);
    }
    Matrix fused_probs;
    Matrix fused_va;
    if (probs) {
        fused_probs = late_fuse_class(gather_rows(p2d.probs, rows_a), gather_rows(p3d.probs, rows_b), s);
    }
    if (va) {
        fused_va = late_fuse_va(gather_rows(p2d.va, rows_a), gather_rows(p3d.va, rows_b), s);
    }
    std::string source = s.name();
    if (s.weight) {
        source += ":" + text::format_double(*s.weight);
    }
    result.fused = data::make_prediction_set("fused-" + source, std::move(ids), std::move(fused_probs),
                                             std::move(fused_va));
    return result;
}

// ---------------------------------------------------------------- sweep

SweepObjective parse_sweep_objective(std::string_view name) {
    if (name == "accuracy") return SweepObjective::accuracy;
    if (name == "ccc") return SweepObjective::ccc;
    if (name == "rmse") return SweepObjective::rmse;
    throw Error(ErrorKind::config, "unknown sweep objective '" + std::string(name) + "' (expected accuracy, ccc or rmse)");
}

std::string_view to_string(SweepObjective objective) noexcept {
    switch (objective) {
        case SweepObjective::accuracy: return "accuracy";
        case SweepObjective::ccc: return "ccc";
        case SweepObjective::rmse: return "rmse";
    }
    return "unknown";
}

bool maximizes(SweepObjective objective) noexcept { return objective != SweepObjective::rmse; }

std::vector<double> parse_grid(std::string_view spec) {
    std::vector<double> grid;
    if (spec.find(':') != std::string_view::npos) {
        const auto parts = text::split(spec, ':');
        if (parts.size() != 3) {
            throw Error(ErrorKind::config, "grid '" + std::string(spec) + "' must be start:stop:step");
        }
        const double start = text::parse_double(parts[0], "grid start");
        const double stop = text::parse_double(parts[1], "grid stop");
        const double step = text::parse_double(parts[2], "grid step");
        if (!(step > 0.0) || stop < start) {
            throw Error(ErrorKind::config, "grid '" + std::string(spec) + "' needs step > 0 and stop >= start");
        }
        const auto count = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9)) + 1;
        for (std::size_t i = 0; i < count; ++i) {
            grid.push_back(std::min(start + static_cast<double>(i) * step, stop));
        }
    } else {
        for (const auto part : text::split(spec, ',')) {
            grid.push_back(text::parse_double(part, "grid value"));
        }
    }
    if (grid.empty()) {
        throw Error(ErrorKind::config, "empty fusion-weight grid");
    }
    for (double w : grid) {
        if (!(w >= 0.0 && w <= 1.0)) {
            throw Error(ErrorKind::config, "grid weight " + text::format_double(w) + " outside [0, 1]");
        }
    }
    return grid;
}

namespace {

SweepResult pick_best(SweepObjective objective, std::vector<SweepPoint> table) {
    SweepResult result;
    result.objective = objective;
    bool have = false;
    for (const auto &p : table) {
        const bool better = !have || (maximizes(objective) ? p.value > result.best_value : p.value < result.best_value) ||
                            (p.value == result.best_value && p.weight < result.best_weight);
        if (better) {
            result.best_value = p.value;
            result.best_weight = p.weight;
            have = true;
        }
    }
    result.table = std::move(table);
    return result;
}

void require_grid(std::span<const double> grid) {
    if (grid.empty()) {
        throw Error(ErrorKind::config, "empty fusion-weight grid");
    }
}

}  // namespace

SweepResult sweep_fusion_weight(const Matrix &p2d, const Matrix &p3d, std::span<const int> labels,
                                std::span<const double> grid) {
    require_grid(grid);
    if (labels.size() != p2d.rows()) {
        throw Error(ErrorKind::shape, "sweep: " + std::to_string(labels.size()) + " labels for " +
                                          std::to_string(p2d.rows()) + " prediction rows");
    }
    if (labels.empty()) {
        throw Error(ErrorKind::data, "sweep: no samples");
    }
    std::vector<SweepPoint> table;
    for (double w : grid) {
        const auto pred = metrics::argmax_rows(late_fuse_class(p2d, p3d, FusionStrategy::weighted(w)));
        std::size_t correct = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            correct += pred[i] == labels[i] ? 1 : 0;
        }
        table.push_back({w, static_cast<double>(correct) / static_cast<double>(labels.size())});
    }
    return pick_best(SweepObjective::accuracy, std::move(table));
}

SweepResult sweep_fusion_weight_va(const Matrix &va2d, const Matrix &va3d, const Matrix &targets,
                                   std::span<const double> grid, SweepObjective objective) {
    require_grid(grid);
    if (objective == SweepObjective::accuracy) {
        throw Error(ErrorKind::config, "valence/arousal sweeps use the ccc or rmse objective");
    }
    std::vector<SweepPoint> table;
    for (double w : grid) {
        const auto report = metrics::regression_report(late_fuse_va(va2d, va3d, FusionStrategy::weighted(w)), targets);
        const double value = objective == SweepObjective::ccc ? (report.valence.ccc + report.arousal.ccc) / 2.0
                                                              : (report.valence.rmse + report.arousal.rmse) / 2.0;
        table.push_back({w, value});
    }
    return pick_best(objective, std::move(table));
}

// ---------------------------------------------------------------- intermediate fusion

IntermediateFusionModel::IntermediateFusionModel(std::size_t dim_2d, std::size_t dim_3d, std::size_t proj_dim,
                                                 nn::HeadKind head, const nn::MlpOptions &options, Rng &rng)
    : projection(dim_3d, proj_dim, rng, options.leaky_slope),
      classifier(dim_2d + proj_dim, head, options, rng),
      dim_2d_(dim_2d),
      dim_3d_(dim_3d) {
    if (dim_2d == 0 || dim_3d == 0 || proj_dim == 0) {
        throw Error(ErrorKind::config, "intermediate fusion needs non-zero 2D, 3D and projection widths");
    }
}

Matrix IntermediateFusionModel::forward(const Matrix &batch, nn::Mode mode, Rng &rng) {
    if (batch.cols() != input_dim()) {
        throw Error(ErrorKind::shape, "intermediate fusion expects " + std::to_string(input_dim()) +
                                          " input columns, got " + batch.shape_string());
    }
    const Matrix projected = projection.forward(slice_cols(batch, dim_2d_, dim_3d_), mode);
    return classifier.forward(hconcat(slice_cols(batch, 0, dim_2d_), projected), mode, rng);
}

Matrix IntermediateFusionModel::backward(const Matrix &grad_output) {
    const Matrix g = classifier.backward(grad_output);
    const Matrix g3d = projection.backward(slice_cols(g, dim_2d_, proj_dim()));
    return hconcat(slice_cols(g, 0, dim_2d_), g3d);
}

Matrix IntermediateFusionModel::predict(const Matrix &batch) const {
    if (batch.cols() != input_dim()) {
        throw Error(ErrorKind::shape, "intermediate fusion expects " + std::to_string(input_dim()) +
                                          " input columns, got " + batch.shape_string());
    }
    const Matrix projected = projection.infer(slice_cols(batch, dim_2d_, dim_3d_));
    return classifier.predict(hconcat(slice_cols(batch, 0, dim_2d_), projected));
}

std::vector<nn::ParamRef> IntermediateFusionModel::parameters() {
    std::vector<nn::ParamRef> out{{"proj.weight", &projection.weights, &projection.grad_weights},
                                  {"proj.bias", &projection.bias, &projection.grad_bias}};
    for (auto &p : classifier.parameters()) {
        out.push_back({"cls." + p.name, p.value, p.grad});
    }
    return out;
}

std::vector<nn::StateRef> IntermediateFusionModel::state() {
    std::vector<nn::StateRef> out{{"proj.weight", &projection.weights}, {"proj.bias", &projection.bias}};
    for (auto &s : classifier.state()) {
        out.push_back({"cls." + s.name, s.value});
    }
    return out;
}

std::vector<nn::ConstStateRef> IntermediateFusionModel::state() const {
    std::vector<nn::ConstStateRef> out{{"proj.weight", &projection.weights}, {"proj.bias", &projection.bias}};
    for (const auto &s : classifier.state()) {
        out.push_back({"cls." + s.name, s.value});
    }
    return out;
}

Matrix intermediate_forward(IntermediateFusionModel &model, std::span<const std::string> ids_2d, const Matrix &feat2d,
                            std::span<const std::string> ids_3d, const Matrix &feat3d, nn::Mode mode, Rng &rng) {
    if (ids_2d.size() != feat2d.rows() || ids_3d.size() != feat3d.rows()) {
        throw Error(ErrorKind::shape, "intermediate_forward: id lists do not match feature rows");
    }
    const std::size_t n = std::min(ids_2d.size(), ids_3d.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (ids_2d[i] != ids_3d[i]) {
            throw Error(ErrorKind::alignment, "row " + std::to_string(i) + ": 2D id '" + ids_2d[i] +
                                                  "' does not match 3D id '" + ids_3d[i] + "'");
        }
    }
    if (ids_2d.size() != ids_3d.size()) {
        const auto &longer = ids_2d.size() > ids_3d.size() ? ids_2d : ids_3d;
        throw Error(ErrorKind::alignment, "row count mismatch (" + std::to_string(ids_2d.size()) + " vs " +
                                              std::to_string(ids_3d.size()) + "); first unmatched id '" + longer[n] +
                                              "'");
    }
    const Matrix batch = hconcat(feat2d, feat3d);
    if (mode == nn::Mode::eval) {
        return model.predict(batch);
    }
    return model.forward(batch, mode, rng);
}

training::TrainingData join_features(const data::FeatureSet &features, const data::ParamDataset &ds) {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < features.ids.size(); ++i) {
        index.emplace(features.ids[i], i);
    }
    std::vector<std::size_t> rows;
    rows.reserve(ds.size());
    for (const auto &id : ds.ids) {
        const auto it = index.find(id);
        if (it == index.end()) {
            throw Error(ErrorKind::alignment, "sample '" + id + "' has no 2D features in '" + features.source + "'");
        }
        rows.push_back(it->second);
    }
    training::TrainingData out = data::to_training_data(ds);
    out.features = hconcat(gather_rows(features.features, rows), ds.params);
    return out;
}

nlohmann::json describe(const IntermediateFusionModel &model) {
    return {{"model", "intermediate_fusion"},
            {"dim_2d", model.dim_2d()},
            {"dim_3d", model.dim_3d()},
            {"proj_dim", model.proj_dim()},
            {"classifier", training::describe(model.classifier)}};
}

IntermediateFusionModel fusion_from_description(const nlohmann::json &a) {
    try {
        if (a.at("model").get<std::string>() != "intermediate_fusion") {
            throw Error(ErrorKind::format, "checkpoint architecture is '" + a.at("model").get<std::string>() +
                                               "', expected 'intermediate_fusion'");
        }
        const nn::MlpModel cls = training::mlp_from_description(a.at("classifier"));
        Rng placeholder(0);
        return IntermediateFusionModel(a.at("dim_2d").get<std::size_t>(), a.at("dim_3d").get<std::size_t>(),
                                       a.at("proj_dim").get<std::size_t>(), cls.head_kind(), cls.options(),
                                       placeholder);
    } catch (const nlohmann::json::exception &e) {
        throw Error(ErrorKind::format, std::string("malformed fusion architecture: ") + e.what());
    }
}

void save_checkpoint(const IntermediateFusionModel &model, const training::CheckpointMeta &meta,
                     const std::filesystem::path &path) {
    training::write_file_bytes(path, training::encode_checkpoint(describe(model), meta, model));
}

LoadedFusion load_fusion_checkpoint(const std::filesystem::path &path) {
    const auto raw = training::decode_checkpoint(training::read_file_bytes(path));
    LoadedFusion out{fusion_from_description(raw.architecture), raw.meta};
    training::load_state(out.model, raw.blocks);
    return out;
}

}  // namespace fei3d::fusion

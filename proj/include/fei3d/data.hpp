#pragma once

#include "fei3d/matrix.hpp"
#include "fei3d/rng.hpp"
#include "fei3d/training.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace fei3d::data {

enum class LabelSpace { raf7, affect8 };

std::size_t class_count(LabelSpace space) noexcept;
std::string_view to_string(LabelSpace space) noexcept;
LabelSpace parse_label_space(std::string_view name);

/// Which 3D parameter grouping a vector holds, fixing its dimension:
/// EMOCA short 156 / full 334, SMIRK short 353 / full 358, or custom(d).
class ParamKind {
public:
    enum class Kind { emoca_short, emoca_full, smirk_short, smirk_full, custom };

    static ParamKind emoca_short() { return {Kind::emoca_short, 156}; }
    static ParamKind emoca_full() { return {Kind::emoca_full, 334}; }
    static ParamKind smirk_short() { return {Kind::smirk_short, 353}; }
    static ParamKind smirk_full() { return {Kind::smirk_full, 358}; }
    static ParamKind custom(std::size_t dim);
    /// Named kinds plus "custom:<d>".
    static ParamKind parse(std::string_view name);

    [[nodiscard]] Kind kind() const noexcept { return kind_; }
    [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
    [[nodiscard]] std::string name() const;

    friend bool operator==(const ParamKind &, const ParamKind &) = default;

private:
    ParamKind(Kind kind, std::size_t dim) : kind_(kind), dim_(dim) {}

    Kind kind_;
    std::size_t dim_;
};

/// Parameter vectors with class labels and, for every sample or for none,
/// valence/arousal in [-1, 1].
struct ParamDataset {
    ParamKind kind = ParamKind::custom(1);
    LabelSpace label_space = LabelSpace::affect8;
    std::vector<std::string> ids;
    Matrix params;  // N x dim
    std::vector<int> labels;
    Matrix va;  // N x 2, or empty when the set carries no VA

    [[nodiscard]] std::size_t size() const noexcept { return ids.size(); }
    [[nodiscard]] std::size_t dim() const noexcept { return params.cols(); }
    [[nodiscard]] bool has_va() const noexcept { return !va.empty(); }

    /// Throws on any violated invariant (dimension, label range, VA range, duplicate ids).
    void validate() const;
};

/// CSV with a "# fei3d-dataset label_space=<raf7|affect8>" line, then
/// "id,label,valence,arousal,p000..p{d-1}"; valence/arousal may be empty.
/// Binary files (magic "FEIDS\0") are detected by content. Without an
/// expected kind any width is accepted as custom(d).
ParamDataset load_param_dataset(const std::filesystem::path &path, const std::optional<ParamKind> &expected_kind);
ParamDataset parse_param_dataset_csv(const std::string &content, const std::optional<ParamKind> &expected_kind,
                                     const std::string &source_name = "dataset");
std::string param_dataset_csv(const ParamDataset &ds);
std::vector<std::uint8_t> param_dataset_binary(const ParamDataset &ds);
ParamDataset parse_param_dataset_binary(const std::vector<std::uint8_t> &bytes,
                                        const std::optional<ParamKind> &expected_kind);
/// Format chosen by extension: ".bin" writes binary, anything else CSV.
void save_param_dataset(const ParamDataset &ds, const std::filesystem::path &path);

std::vector<std::size_t> class_frequencies(const ParamDataset &ds);
training::TrainingData to_training_data(const ParamDataset &ds);

/// Per-sample outputs from one model: class probabilities and/or VA pairs.
struct PredictionSet {
    std::string source = "unknown";
    std::vector<std::string> ids;
    Matrix probs;  // N x C or empty
    Matrix va;     // N x 2 or empty

    [[nodiscard]] std::size_t size() const noexcept { return ids.size(); }
    [[nodiscard]] bool has_probs() const noexcept { return !probs.empty(); }
    [[nodiscard]] bool has_va() const noexcept { return !va.empty(); }
    [[nodiscard]] std::optional<std::size_t> find(const std::string &id) const;

    void build_index();

private:
    std::unordered_map<std::string, std::size_t> index_;
};

/// CSV "id,p0..p{C-1}[,valence,arousal]" (or "id,valence,arousal"), with an
/// optional "# fei3d-predictions source=<tag>" line; ".jsonl" files hold
/// {"id", "probs", "valence", "arousal"} objects. Rows must sum to 1 within
/// 1e-6 and are then renormalized exactly; `from_logits` applies a softmax
/// first.
PredictionSet load_predictions(const std::filesystem::path &path, bool from_logits = false);
PredictionSet parse_predictions_csv(const std::string &content, bool from_logits, const std::string &source_name);
PredictionSet parse_predictions_jsonl(const std::string &content, bool from_logits, const std::string &source_name);
std::string predictions_csv(const PredictionSet &ps);
PredictionSet make_prediction_set(std::string source, std::vector<std::string> ids, Matrix probs, Matrix va);

/// 2D image features keyed by id: "# fei3d-features source=<tag>" then "id,f000..".
struct FeatureSet {
    std::string source = "2d";
    std::vector<std::string> ids;
    Matrix features;
};

FeatureSet load_features(const std::filesystem::path &path);
FeatureSet parse_features_csv(const std::string &content, const std::string &source_name);
std::string features_csv(const FeatureSet &fs);

struct AlignResult {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (index in a, index in b), in a's order
    std::size_t dropped_a = 0;
    std::size_t dropped_b = 0;
};

/// Inner join on ids. An empty intersection is an alignment error.
AlignResult align(std::span<const std::string> a, std::span<const std::string> b);

struct SynthSpec {
    std::size_t classes = 8;
    std::size_t dim = 156;
    double margin = 6.0;      // distance from each center to the boundary with any other class
    double noise = 1.0;       // per-coordinate Gaussian σ around each center
    bool with_va = false;
    double va_scale = 0.4;   // std of the noiseless linear VA signal
    double va_noise = 0.05;  // additive Gaussian σ on VA before clipping
    LabelSpace label_space = LabelSpace::affect8;

    void validate() const;
};

/// Class centers (orthogonal, pairwise 2·margin apart) and the linear VA map.
struct SynthModel {
    SynthSpec spec;
    Matrix centers;     // classes x dim
    Matrix va_weights;  // 2 x dim
    std::vector<double> va_bias;
};

SynthModel make_synth_model(const SynthSpec &spec, Rng &rng);
/// Labels cycle through the classes so every class is present.
ParamDataset sample_synth(const SynthModel &model, std::size_t samples, Rng &rng, const std::string &id_prefix);
ParamDataset synth_generate(const SynthSpec &spec, std::size_t samples, Rng &rng);

/// Stand-in for an external model: confidence c ~ U(2·accuracy − 1, 1), the
/// true class is predicted with probability c, and the row puts c on the
/// predicted class with the rest spread evenly, so confidence is calibrated.
/// VA, when present, is the target plus N(0, va_noise) clipped to [-1, 1].
PredictionSet simulate_predictor(const ParamDataset &ds, double accuracy, double va_noise, Rng &rng,
                                 const std::string &source);

}  // namespace fei3d::data

#pragma once

#include "fei3d/matrix.hpp"
#include "fei3d/rng.hpp"

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace fei3d::nn {

enum class Mode { train, eval };

struct ParamRef {
    std::string name;
    Matrix *value;
    Matrix *grad;
};

struct StateRef {
    std::string name;
    Matrix *value;
};

struct ConstStateRef {
    std::string name;
    const Matrix *value;
};

/// Interface shared by every model the trainer can optimize.
///
/// forward(train) caches what backward needs; backward overwrites (never
/// accumulates) every parameter gradient, so calling it twice on the same
/// cache yields identical gradients. predict() is const and cache-free, which
/// makes an eval-mode model safe to share across threads.
class Trainable {
public:
    virtual ~Trainable() = default;

    [[nodiscard]] virtual std::size_t input_dim() const = 0;
    [[nodiscard]] virtual std::size_t output_width() const = 0;

    virtual Matrix forward(const Matrix &batch, Mode mode, Rng &rng) = 0;
    virtual Matrix backward(const Matrix &grad_output) = 0;
    [[nodiscard]] virtual Matrix predict(const Matrix &batch) const = 0;

    virtual std::vector<ParamRef> parameters() = 0;
    /// Parameters then buffers (batch-norm running statistics), in checkpoint order.
    virtual std::vector<StateRef> state() = 0;
    [[nodiscard]] virtual std::vector<ConstStateRef> state() const = 0;
};

std::vector<Matrix> snapshot(const Trainable &model);
void restore(Trainable &model, const std::vector<Matrix> &snap);

/// Eval-mode prediction fanned out over row chunks. Each row's output is
/// independent of chunking, so the result does not depend on `threads`.
Matrix predict_parallel(const Trainable &model, const Matrix &batch, unsigned threads);

class LinearLayer {
public:
    LinearLayer() = default;
    LinearLayer(std::size_t in_features, std::size_t out_features, Rng &rng, double negative_slope = 0.01);

    [[nodiscard]] std::size_t in_features() const noexcept { return weights.cols(); }
    [[nodiscard]] std::size_t out_features() const noexcept { return weights.rows(); }

    [[nodiscard]] Matrix infer(const Matrix &x) const;
    Matrix forward(const Matrix &x, Mode mode);
    Matrix backward(const Matrix &grad_out);

    Matrix weights;  // out x in
    Matrix bias;     // out x 1
    Matrix grad_weights;
    Matrix grad_bias;

private:
    Matrix input_;
    bool cached_ = false;
};

class BatchNormLayer {
public:
    BatchNormLayer() = default;
    explicit BatchNormLayer(std::size_t features, double momentum = 0.1, double epsilon = 1e-5);

    [[nodiscard]] std::size_t features() const noexcept { return gamma.rows(); }
    [[nodiscard]] double momentum() const noexcept { return momentum_; }
    [[nodiscard]] double epsilon() const noexcept { return epsilon_; }

    /// Uses running statistics only.
    [[nodiscard]] Matrix infer(const Matrix &x) const;
    /// Train mode normalizes with the biased batch variance and folds the
    /// unbiased one into running_var. Needs at least two rows.
    Matrix forward(const Matrix &x, Mode mode);
    Matrix backward(const Matrix &grad_out);

    Matrix gamma;  // features x 1
    Matrix beta;
    Matrix running_mean;
    Matrix running_var;
    Matrix grad_gamma;
    Matrix grad_beta;

private:
    double momentum_ = 0.1;
    double epsilon_ = 1e-5;
    Matrix normalized_;
    std::vector<double> inv_std_;
    bool cached_ = false;
};

class DropoutLayer {
public:
    DropoutLayer() = default;
    explicit DropoutLayer(double rate);

    [[nodiscard]] double rate() const noexcept { return rate_; }

    /// Inverted dropout: kept activations are scaled by 1/(1-rate) so the
    /// expectation matches eval mode, which is the identity.
    Matrix forward(const Matrix &x, Mode mode, Rng &rng);
    Matrix backward(const Matrix &grad_out) const;

private:
    double rate_ = 0.0;
    Matrix mask_;
    bool active_ = false;
};

[[nodiscard]] double leaky_relu(double x, double slope) noexcept;

/// Output layer layout. Widths: raf_db_7 → 7, affectnet_8_va → 8 logits
/// followed by valence and arousal, va_only_2 → 2, custom → n.
class HeadKind {
public:
    enum class Kind { raf_db_7, affectnet_8_va, va_only_2, custom };

    HeadKind() = default;
    static HeadKind raf_db_7() { return HeadKind(Kind::raf_db_7, 7); }
    static HeadKind affectnet_8_va() { return HeadKind(Kind::affectnet_8_va, 10); }
    static HeadKind va_only_2() { return HeadKind(Kind::va_only_2, 2); }
    static HeadKind custom(std::size_t width);
    /// Accepts the names above and "custom:<n>"; anything else is a config error.
    static HeadKind parse(std::string_view name);

    [[nodiscard]] Kind kind() const noexcept { return kind_; }
    [[nodiscard]] std::size_t width() const noexcept { return width_; }
    [[nodiscard]] std::size_t class_count() const noexcept;
    [[nodiscard]] bool has_va() const noexcept { return kind_ == Kind::affectnet_8_va || kind_ == Kind::va_only_2; }
    [[nodiscard]] std::string name() const;

    friend bool operator==(const HeadKind &, const HeadKind &) = default;

private:
    HeadKind(Kind kind, std::size_t width) : kind_(kind), width_(width) {}

    Kind kind_ = Kind::raf_db_7;
    std::size_t width_ = 7;
};

struct MlpOptions {
    std::size_t hidden_width = 2048;
    std::size_t hidden_layers = 4;
    /// Per hidden layer; missing entries mean no dropout.
    std::vector<double> dropout = {0.5, 0.4};
    bool batch_norm = true;
    double leaky_slope = 0.01;
    double bn_momentum = 0.1;
    double bn_epsilon = 1e-5;

    [[nodiscard]] double dropout_at(std::size_t layer) const noexcept {
        return layer < dropout.size() ? dropout[layer] : 0.0;
    }
};

/// Linear → BatchNorm → LeakyReLU → Dropout.
struct HiddenBlock {
    LinearLayer linear;
    bool use_batch_norm = true;
    BatchNormLayer batch_norm;
    double slope = 0.01;
    DropoutLayer dropout;

    Matrix activation_input;  // cached pre-activation for the leaky-ReLU backward step
};

class MlpModel final : public Trainable {
public:
    MlpModel() = default;
    MlpModel(std::size_t input_dim, HeadKind head, const MlpOptions &options, Rng &rng);

    [[nodiscard]] std::size_t input_dim() const override { return input_dim_; }
    [[nodiscard]] std::size_t output_width() const override { return head_kind_.width(); }
    [[nodiscard]] const HeadKind &head_kind() const noexcept { return head_kind_; }
    [[nodiscard]] const MlpOptions &options() const noexcept { return options_; }
    [[nodiscard]] std::size_t trunk_width() const noexcept;

    Matrix forward(const Matrix &batch, Mode mode, Rng &rng) override;
    Matrix backward(const Matrix &grad_output) override;
    [[nodiscard]] Matrix predict(const Matrix &batch) const override;

    std::vector<ParamRef> parameters() override;
    std::vector<StateRef> state() override;
    [[nodiscard]] std::vector<ConstStateRef> state() const override;

    /// Swaps the output layer for a freshly initialized one of the new kind;
    /// the trunk is untouched.
    void replace_head(HeadKind head, Rng &rng);

    /// Smallest |pre-activation| seen by any leaky ReLU on a train-mode pass
    /// over `batch` (computed on a copy; dropout must be off). Used to keep
    /// finite-difference probes away from the kink.
    [[nodiscard]] double min_abs_preactivation(const Matrix &batch) const;

    [[nodiscard]] const std::vector<HiddenBlock> &blocks() const noexcept { return blocks_; }
    [[nodiscard]] std::vector<HiddenBlock> &blocks() noexcept { return blocks_; }
    [[nodiscard]] const LinearLayer &head() const noexcept { return head_; }
    [[nodiscard]] LinearLayer &head() noexcept { return head_; }

private:
    std::size_t input_dim_ = 0;
    HeadKind head_kind_;
    MlpOptions options_;
    std::vector<HiddenBlock> blocks_;
    LinearLayer head_;
    bool cached_ = false;
};

/// Input → [Linear(2048), BN, LeakyReLU, Dropout(0.5)] → [.., Dropout(0.4)]
/// → two more blocks without dropout → Linear(head width). Widths and
/// dropout come from `options` so tests can build tiny instances.
MlpModel build_classifier(std::size_t input_dim, HeadKind head, Rng &rng, const MlpOptions &options = {});

}  // namespace fei3d::nn

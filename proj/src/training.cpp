#include "fei3d/training.hpp"

#include "fei3d/error.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace fei3d::training {

void TrainConfig::validate() const {
    if (batch_size < 2) {
        throw Error(ErrorKind::config, "batch size must be at least 2 (batch norm), got " + std::to_string(batch_size));
    }
    if (!(base_lr > 0.0 && base_lr < max_lr)) {
        throw Error(ErrorKind::config, "cyclic LR needs 0 < base_lr < max_lr");
    }
    if (patience < 1) {
        throw Error(ErrorKind::config, "early-stopping patience must be at least 1");
    }
    if (!(weight_decay >= 0.0)) {
        throw Error(ErrorKind::config, "weight decay must be non-negative");
    }
}

double cyclic_lr(double base_lr, double max_lr, std::size_t step_size, std::size_t global_step) {
    if (step_size == 0) {
        throw Error(ErrorKind::config, "cyclic LR step size must be at least 1");
    }
    const std::size_t phase = global_step % (2 * step_size);
    const std::size_t distance = phase <= step_size ? phase : 2 * step_size - phase;
    const double frac = static_cast<double>(distance) / static_cast<double>(step_size);
    return base_lr * (1.0 - frac) + max_lr * frac;
}

double cyclic_lr(const TrainConfig &cfg, std::size_t global_step) {
    return cyclic_lr(cfg.base_lr, cfg.max_lr, cfg.step_size, global_step);
}

std::size_t batches_per_epoch(std::size_t samples, std::size_t batch_size) {
    return std::max<std::size_t>(1, samples / batch_size);
}

std::size_t resolve_step_size(const TrainConfig &cfg, std::size_t samples) {
    if (cfg.step_size > 0) {
        return cfg.step_size;
    }
    return std::max<std::size_t>(1, batches_per_epoch(samples, cfg.batch_size) / 2);
}

void adam_step(std::span<const nn::ParamRef> params, OptimizerState &state, double lr, double weight_decay) {
    if (state.first_moment.empty()) {
        for (const auto &p : params) {
            state.first_moment.emplace_back(p.value->rows(), p.value->cols());
            state.second_moment.emplace_back(p.value->rows(), p.value->cols());
        }
    }
    if (state.first_moment.size() != params.size()) {
        throw Error(ErrorKind::shape, "optimizer state tracks " + std::to_string(state.first_moment.size()) +
                                          " parameters, got " + std::to_string(params.size()));
    }
    ++state.step;
    const auto &o = state.options;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(o.beta1, t);
    const double correction2 = 1.0 - std::pow(o.beta2, t);
    const double decay = 1.0 - lr * weight_decay;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto &value = *params[i].value;
        const auto &grad = *params[i].grad;
        require_same_shape(value, grad, params[i].name.c_str());
        require_same_shape(value, state.first_moment[i], params[i].name.c_str());
        auto theta = value.values();
        auto g = grad.values();
        auto m = state.first_moment[i].values();
        auto v = state.second_moment[i].values();
        for (std::size_t k = 0; k < theta.size(); ++k) {
            theta[k] *= decay;
            m[k] = o.beta1 * m[k] + (1.0 - o.beta1) * g[k];
            v[k] = o.beta2 * v[k] + (1.0 - o.beta2) * g[k] * g[k];
            const double m_hat = m[k] / correction1;
            const double v_hat = v[k] / correction2;
            theta[k] -= lr * m_hat / (std::sqrt(v_hat) + o.epsilon);
        }
    }
}

EarlyStopDecision early_stop_update(double best, double current_val_loss, std::size_t stale_epochs,
                                    std::size_t patience) {
    if (patience < 1) {
        throw Error(ErrorKind::config, "early-stopping patience must be at least 1");
    }
    EarlyStopDecision d;
    if (current_val_loss < best - 1e-12) {
        d.best = current_val_loss;
        d.stale = 0;
        d.improved = true;
    } else {
        d.best = best;
        d.stale = stale_epochs + 1;
    }
    d.stop = d.stale >= patience;
    return d;
}

Targets Targets::subset(std::span<const std::size_t> rows) const {
    Targets out;
    if (has_labels()) {
        out.labels.reserve(rows.size());
        for (auto r : rows) {
            out.labels.push_back(labels[r]);
        }
    }
    if (has_va()) {
        out.va = gather_rows(va, rows);
    }
    return out;
}

LossKind parse_loss_kind(std::string_view name) {
    if (name == "ce") return LossKind::cross_entropy;
    if (name == "wce") return LossKind::weighted_cross_entropy;
    if (name == "combined") return LossKind::affectnet_combined;
    if (name == "stage1") return LossKind::stage1_combined;
    if (name == "stage2") return LossKind::stage2_va;
    if (name == "mse") return LossKind::mse;
    throw Error(ErrorKind::config,
                "unknown loss '" + std::string(name) + "' (expected ce, wce, combined, stage1, stage2 or mse)");
}

std::string_view to_string(LossKind kind) {
    switch (kind) {
        case LossKind::cross_entropy: return "ce";
        case LossKind::weighted_cross_entropy: return "wce";
        case LossKind::affectnet_combined: return "combined";
        case LossKind::stage1_combined: return "stage1";
        case LossKind::stage2_va: return "stage2";
        case LossKind::mse: return "mse";
    }
    return "unknown";
}

LossKind default_loss_for(const nn::HeadKind &head) {
    switch (head.kind()) {
        case nn::HeadKind::Kind::affectnet_8_va: return LossKind::affectnet_combined;
        case nn::HeadKind::Kind::va_only_2: return LossKind::stage2_va;
        default: return LossKind::cross_entropy;
    }
}

Objective::Objective(LossKind kind, nn::HeadKind head, losses::ClassWeights class_weights,
                     losses::VaLossConfig va_config)
    : kind_(kind), head_(head), class_weights_(std::move(class_weights)), va_config_(va_config) {
    const bool needs_classes = kind == LossKind::cross_entropy || kind == LossKind::weighted_cross_entropy ||
                               kind == LossKind::affectnet_combined || kind == LossKind::stage1_combined;
    const bool needs_va = kind == LossKind::affectnet_combined || kind == LossKind::stage1_combined ||
                          kind == LossKind::stage2_va || kind == LossKind::mse;
    if (needs_classes && head.class_count() == 0) {
        throw Error(ErrorKind::config, "loss '" + std::string(to_string(kind)) + "' needs class logits but head " +
                                           head.name() + " has none");
    }
    if (needs_va && !head.has_va()) {
        throw Error(ErrorKind::config, "loss '" + std::string(to_string(kind)) +
                                           "' needs valence/arousal outputs but head " + head.name() + " has none");
    }
    const bool weighted = kind == LossKind::weighted_cross_entropy || kind == LossKind::stage1_combined;
    if (weighted && class_weights_.size() != head.class_count()) {
        throw Error(ErrorKind::config, "loss '" + std::string(to_string(kind)) + "' needs " +
                                           std::to_string(head.class_count()) + " class weights, got " +
                                           std::to_string(class_weights_.size()));
    }
}

namespace {

void write_cols(Matrix &dst, const Matrix &src, std::size_t first) {
    for (std::size_t r = 0; r < src.rows(); ++r) {
        for (std::size_t c = 0; c < src.cols(); ++c) {
            dst(r, first + c) = src(r, c);
        }
    }
}

}  // namespace

nn::LossEval Objective::evaluate(const Matrix &output, const Targets &targets, Rng *weight_rng) const {
    if (output.cols() != head_.width()) {
        throw Error(ErrorKind::shape, "objective expects " + std::to_string(head_.width()) + " output columns, got " +
                                          output.shape_string());
    }
    const std::size_t classes = head_.class_count();
    const std::size_t va_first = head_.width() - 2;
    const bool uses_labels = kind_ != LossKind::stage2_va && kind_ != LossKind::mse;
    const bool uses_va = kind_ != LossKind::cross_entropy && kind_ != LossKind::weighted_cross_entropy;
    if (uses_labels && targets.labels.size() != output.rows()) {
        throw Error(ErrorKind::data, "objective: " + std::to_string(targets.labels.size()) + " labels for " +
                                         std::to_string(output.rows()) + " outputs");
    }
    if (uses_va && targets.va.rows() != output.rows()) {
        throw Error(ErrorKind::data, "objective: missing or misaligned valence/arousal targets");
    }

    nn::LossEval out{0.0, Matrix(output.rows(), output.cols())};
    switch (kind_) {
        case LossKind::cross_entropy: {
            auto r = losses::softmax_cross_entropy(slice_cols(output, 0, classes), targets.labels);
            out.loss = r.loss;
            write_cols(out.grad, r.grad, 0);
            break;
        }
        case LossKind::weighted_cross_entropy: {
            auto r = losses::weighted_cross_entropy(slice_cols(output, 0, classes), targets.labels, class_weights_);
            out.loss = r.loss;
            write_cols(out.grad, r.grad, 0);
            break;
        }
        case LossKind::affectnet_combined: {
            const auto w = weight_rng ? losses::LossWeights::sample(*weight_rng) : losses::LossWeights{};
            auto r = losses::combined_affectnet_loss(slice_cols(output, 0, classes), slice_cols(output, va_first, 2),
                                                     targets.labels, targets.va, w);
            out.loss = r.loss;
            write_cols(out.grad, r.grad_logits, 0);
            write_cols(out.grad, r.grad_va, va_first);
            break;
        }
        case LossKind::stage1_combined: {
            auto r = losses::stage1_combined_loss(slice_cols(output, 0, classes), slice_cols(output, va_first, 2),
                                                  targets.labels, targets.va, class_weights_, va_config_);
            out.loss = r.loss;
            write_cols(out.grad, r.grad_logits, 0);
            write_cols(out.grad, r.grad_va, va_first);
            break;
        }
        case LossKind::stage2_va: {
            auto r = losses::stage2_va_loss(slice_cols(output, va_first, 2), targets.va, va_config_);
            out.loss = r.loss;
            write_cols(out.grad, r.grad, va_first);
            break;
        }
        case LossKind::mse: {
            auto r = losses::mse_loss(slice_cols(output, va_first, 2), targets.va);
            out.loss = r.loss;
            write_cols(out.grad, r.grad, va_first);
            break;
        }
    }
    if (!std::isfinite(out.loss)) {
        throw Error(ErrorKind::numeric, "loss '" + std::string(to_string(kind_)) + "' is not finite");
    }
    return out;
}

std::map<std::string, double> Objective::summary(const Matrix &output, const Targets &targets) const {
    std::map<std::string, double> m;
    const std::size_t classes = head_.class_count();
    if (classes > 0 && targets.labels.size() == output.rows() && output.rows() > 0) {
        std::size_t correct = 0;
        for (std::size_t r = 0; r < output.rows(); ++r) {
            auto row = output.row(r).subspan(0, classes);
            const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
            correct += best == targets.labels[r] ? 1 : 0;
        }
        m["accuracy"] = static_cast<double>(correct) / static_cast<double>(output.rows());
    }
    if (head_.has_va() && targets.va.rows() == output.rows() && output.rows() >= 2) {
        const Matrix va = slice_cols(output, head_.width() - 2, 2);
        m["ccc_valence"] = losses::ccc(losses::va_column(va, 0), losses::va_column(targets.va, 0)).value;
        m["ccc_arousal"] = losses::ccc(losses::va_column(va, 1), losses::va_column(targets.va, 1)).value;
        m["mse"] = losses::mse_loss(va, targets.va).loss;
    }
    return m;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
    std::uint64_t z = seed + (stream + 1) * 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

FitResult fit(nn::Trainable &model, const TrainingData &train, const TrainingData &val, const Objective &objective,
              const TrainConfig &cfg) {
    cfg.validate();
    if (train.size() == 0) {
        throw Error(ErrorKind::data, "training split is empty");
    }
    if (val.size() == 0) {
        throw Error(ErrorKind::data, "validation split is empty");
    }
    if (train.size() < 2) {
        throw Error(ErrorKind::data, "training split needs at least 2 samples for batch norm");
    }
    if (train.features.cols() != model.input_dim() || val.features.cols() != model.input_dim()) {
        throw Error(ErrorKind::shape, "feature width does not match model input dimension " +
                                          std::to_string(model.input_dim()));
    }

    Rng shuffle_rng(derive_seed(cfg.seed, 1));
    Rng dropout_rng(derive_seed(cfg.seed, 2));
    Rng weight_rng(derive_seed(cfg.seed, 3));

    const std::size_t n = train.size();
    const std::size_t batches = batches_per_epoch(n, cfg.batch_size);
    const std::size_t batch_rows = std::min(cfg.batch_size, n);

    FitResult result;
    result.step_size = resolve_step_size(cfg, n);

    auto validate_now = [&] {
        const Matrix out = nn::predict_parallel(model, val.features, cfg.threads);
        return std::pair{objective.evaluate(out, val.targets, nullptr).loss, objective.summary(out, val.targets)};
    };

    OptimizerState optimizer;
    std::vector<Matrix> best_state = nn::snapshot(model);
    double best = std::numeric_limits<double>::infinity();
    std::size_t stale = 0;
    std::vector<std::size_t> order(n);

    if (cfg.max_epochs == 0) {
        result.best_val_loss = validate_now().first;
        return result;
    }

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffle_rng.shuffle(order);

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr_min = std::numeric_limits<double>::infinity();
        rec.lr_max = 0.0;
        double loss_sum = 0.0;
        for (std::size_t b = 0; b < batches; ++b) {
            const std::span<const std::size_t> rows(order.data() + b * batch_rows, batch_rows);
            const Matrix x = gather_rows(train.features, rows);
            const Targets t = train.targets.subset(rows);

            const Matrix out = model.forward(x, nn::Mode::train, dropout_rng);
            const nn::LossEval le = objective.evaluate(out, t, &weight_rng);
            model.backward(le.grad);

            const double lr = cyclic_lr(cfg.base_lr, cfg.max_lr, result.step_size, result.global_steps);
            adam_step(model.parameters(), optimizer, lr, cfg.weight_decay);
            ++result.global_steps;

            loss_sum += le.loss;
            rec.lr_min = std::min(rec.lr_min, lr);
            rec.lr_max = std::max(rec.lr_max, lr);
        }
        rec.train_loss = loss_sum / static_cast<double>(batches);
        auto [val_loss, metrics] = validate_now();
        rec.val_loss = val_loss;
        rec.val_metrics = std::move(metrics);

        const auto decision = early_stop_update(best, val_loss, stale, cfg.patience);
        best = decision.best;
        stale = decision.stale;
        if (decision.improved) {
            best_state = nn::snapshot(model);
            result.best_epoch = epoch;
        }
        result.history.push_back(std::move(rec));
        if (decision.stop) {
            result.stopped_early = true;
            break;
        }
    }
    result.best_val_loss = best;
    nn::restore(model, best_state);
    return result;
}

TwoStageResult fit_two_stage_va(nn::MlpModel &model, const TrainingData &train, const TrainingData &val,
                                const TrainConfig &cfg, const losses::VaLossConfig &va_cfg,
                                std::optional<std::size_t> stage2_epochs) {
    if (model.head_kind() != nn::HeadKind::affectnet_8_va()) {
        throw Error(ErrorKind::config, "two-stage VA training starts from an affectnet_8_va head, got " +
                                           model.head_kind().name());
    }
    if (!train.targets.has_va() || !val.targets.has_va()) {
        throw Error(ErrorKind::data, "two-stage VA training needs valence/arousal targets in both splits");
    }
    if (!train.targets.has_labels() || !val.targets.has_labels()) {
        throw Error(ErrorKind::data, "two-stage VA training needs class labels for stage 1");
    }
    const std::size_t classes = model.head_kind().class_count();
    std::vector<std::size_t> counts(classes, 0);
    for (int y : train.targets.labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= classes) {
            throw Error(ErrorKind::data, "label " + std::to_string(y) + " outside the 8-class label space");
        }
        ++counts[static_cast<std::size_t>(y)];
    }

    TwoStageResult result;
    const Objective stage1(LossKind::stage1_combined, model.head_kind(), losses::class_weights_from_counts(counts),
                           va_cfg);
    result.stage1 = fit(model, train, val, stage1, cfg);

    Rng head_rng(derive_seed(cfg.seed, 17));
    model.replace_head(nn::HeadKind::va_only_2(), head_rng);

    TrainConfig cfg2 = cfg;
    cfg2.max_epochs = stage2_epochs.value_or(cfg.max_epochs);
    cfg2.seed = derive_seed(cfg.seed, 18);
    const Objective stage2(LossKind::stage2_va, nn::HeadKind::va_only_2(), {}, va_cfg);
    result.stage2 = fit(model, train, val, stage2, cfg2);
    return result;
}

std::string history_jsonl(const std::vector<EpochRecord> &history) {
    std::string out;
    for (const auto &rec : history) {
        nlohmann::json j;
        j["epoch"] = rec.epoch;
        j["lr_min"] = rec.lr_min;
        j["lr_max"] = rec.lr_max;
        j["train_loss"] = rec.train_loss;
        j["val_loss"] = rec.val_loss;
        j["val_metrics"] = rec.val_metrics;
        out += j.dump();
        out += '\n';
    }
    return out;
}

}  // namespace fei3d::training

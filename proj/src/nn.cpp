#include "fei3d/nn.hpp"

#include "fei3d/error.hpp"
#include "fei3d/init.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <thread>

namespace fei3d::nn {

// ---------------------------------------------------------------- snapshots

std::vector<Matrix> snapshot(const Trainable &model) {
    std::vector<Matrix> snap;
    for (const auto &entry : model.state()) {
        snap.push_back(*entry.value);
    }
    return snap;
}

void restore(Trainable &model, const std::vector<Matrix> &snap) {
    auto refs = model.state();
    if (refs.size() != snap.size()) {
        throw Error(ErrorKind::shape, "restore: snapshot has " + std::to_string(snap.size()) + " blocks, model has " +
                                          std::to_string(refs.size()));
    }
    for (std::size_t i = 0; i < refs.size(); ++i) {
        require_same_shape(*refs[i].value, snap[i], refs[i].name.c_str());
        *refs[i].value = snap[i];
    }
}

Matrix predict_parallel(const Trainable &model, const Matrix &batch, unsigned threads) {
    constexpr std::size_t min_rows_per_worker = 64;
    const std::size_t n = batch.rows();
    const std::size_t workers =
        std::max<std::size_t>(1, std::min<std::size_t>(threads, (n + min_rows_per_worker - 1) / min_rows_per_worker));
    if (workers <= 1) {
        return model.predict(batch);
    }
    Matrix out(n, model.output_width());
    const std::size_t chunk = (n + workers - 1) / workers;
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t first = w * chunk;
        const std::size_t last = std::min(n, first + chunk);
        if (first >= last) {
            break;
        }
        pool.emplace_back([&, first, last] {
            std::vector<std::size_t> idx(last - first);
            for (std::size_t i = 0; i < idx.size(); ++i) {
                idx[i] = first + i;
            }
            const Matrix part = model.predict(gather_rows(batch, idx));
            for (std::size_t r = 0; r < part.rows(); ++r) {
                std::copy(part.row(r).begin(), part.row(r).end(), out.row(first + r).begin());
            }
        });
    }
    pool.clear();
    return out;
}

// ---------------------------------------------------------------- linear

LinearLayer::LinearLayer(std::size_t in_features, std::size_t out_features, Rng &rng, double negative_slope) {
    auto params = init_linear_params(in_features, out_features, rng, negative_slope);
    weights = std::move(params.weights);
    bias = std::move(params.bias);
    grad_weights = Matrix(weights.rows(), weights.cols());
    grad_bias = Matrix(bias.rows(), 1);
}

Matrix LinearLayer::infer(const Matrix &x) const {
    if (x.cols() != in_features()) {
        throw Error(ErrorKind::shape, "linear layer expects " + std::to_string(in_features()) +
                                          " input columns, got " + x.shape_string());
    }
    Matrix y = matmul_bt(x, weights);
    for (std::size_t r = 0; r < y.rows(); ++r) {
        auto row = y.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) {
            row[c] += bias(c, 0);
        }
    }
    return y;
}

Matrix LinearLayer::forward(const Matrix &x, Mode mode) {
    Matrix y = infer(x);
    if (mode == Mode::train) {
        input_ = x;
        cached_ = true;
    }
    return y;
}

Matrix LinearLayer::backward(const Matrix &grad_out) {
    if (!cached_) {
        throw Error(ErrorKind::protocol, "linear backward called without a train-mode forward");
    }
    if (grad_out.rows() != input_.rows() || grad_out.cols() != out_features()) {
        throw Error(ErrorKind::shape, "linear backward: gradient " + grad_out.shape_string() + " does not match output " +
                                          std::to_string(input_.rows()) + "x" + std::to_string(out_features()));
    }
    grad_weights = matmul_at(grad_out, input_);
    grad_bias = Matrix(out_features(), 1);
    for (std::size_t r = 0; r < grad_out.rows(); ++r) {
        auto row = grad_out.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) {
            grad_bias(c, 0) += row[c];
        }
    }
    return matmul(grad_out, weights);
}

// ---------------------------------------------------------------- batch norm

BatchNormLayer::BatchNormLayer(std::size_t features, double momentum, double epsilon)
    : gamma(features, 1, 1.0),
      beta(features, 1, 0.0),
      running_mean(features, 1, 0.0),
      running_var(features, 1, 1.0),
      grad_gamma(features, 1),
      grad_beta(features, 1),
      momentum_(momentum),
      epsilon_(epsilon) {
    if (!(momentum > 0.0 && momentum < 1.0) || !(epsilon > 0.0)) {
        throw Error(ErrorKind::config, "batch norm needs momentum in (0,1) and epsilon > 0");
    }
}

Matrix BatchNormLayer::infer(const Matrix &x) const {
    if (x.cols() != features()) {
        throw Error(ErrorKind::shape, "batch norm expects " + std::to_string(features()) + " columns, got " +
                                          x.shape_string());
    }
    Matrix y(x.rows(), x.cols());
    for (std::size_t c = 0; c < x.cols(); ++c) {
        const double scale = gamma(c, 0) / std::sqrt(running_var(c, 0) + epsilon_);
        const double shift = beta(c, 0) - running_mean(c, 0) * scale;
        for (std::size_t r = 0; r < x.rows(); ++r) {
            y(r, c) = x(r, c) * scale + shift;
        }
    }
    return y;
}

Matrix BatchNormLayer::forward(const Matrix &x, Mode mode) {
    if (mode == Mode::eval) {
        return infer(x);
    }
    if (x.cols() != features()) {
        throw Error(ErrorKind::shape, "batch norm expects " + std::to_string(features()) + " columns, got " +
                                          x.shape_string());
    }
    const std::size_t n = x.rows();
    if (n < 2) {
        throw Error(ErrorKind::domain, "batch norm is degenerate for a train-mode batch of " + std::to_string(n) +
                                           " row(s); need at least 2");
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    normalized_ = Matrix(n, x.cols());
    inv_std_.assign(x.cols(), 0.0);
    Matrix y(n, x.cols());
    for (std::size_t c = 0; c < x.cols(); ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            mean += x(r, c);
        }
        mean *= inv_n;
        double sq = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            const double d = x(r, c) - mean;
            sq += d * d;
        }
        const double var = sq * inv_n;
        const double inv_std = 1.0 / std::sqrt(var + epsilon_);
        inv_std_[c] = inv_std;
        for (std::size_t r = 0; r < n; ++r) {
            const double xhat = (x(r, c) - mean) * inv_std;
            normalized_(r, c) = xhat;
            y(r, c) = gamma(c, 0) * xhat + beta(c, 0);
        }
        const double unbiased = sq / static_cast<double>(n - 1);
        running_mean(c, 0) = (1.0 - momentum_) * running_mean(c, 0) + momentum_ * mean;
        running_var(c, 0) = (1.0 - momentum_) * running_var(c, 0) + momentum_ * unbiased;
    }
    cached_ = true;
    return y;
}

Matrix BatchNormLayer::backward(const Matrix &grad_out) {
    if (!cached_) {
        throw Error(ErrorKind::protocol, "batch norm backward called without a train-mode forward");
    }
    require_same_shape(grad_out, normalized_, "batch norm backward");
    const std::size_t n = grad_out.rows();
    const double inv_n = 1.0 / static_cast<double>(n);
    Matrix dx(n, grad_out.cols());
    for (std::size_t c = 0; c < grad_out.cols(); ++c) {
        double sum_dy = 0.0;
        double sum_dy_xhat = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            sum_dy += grad_out(r, c);
            sum_dy_xhat += grad_out(r, c) * normalized_(r, c);
        }
        grad_beta(c, 0) = sum_dy;
        grad_gamma(c, 0) = sum_dy_xhat;
        const double g = gamma(c, 0);
        // dx = g·inv_std/N · (N·dy − Σdy − x̂·Σ(dy·x̂))
        const double coef = g * inv_std_[c] * inv_n;
        for (std::size_t r = 0; r < n; ++r) {
            dx(r, c) = coef * (static_cast<double>(n) * grad_out(r, c) - sum_dy - normalized_(r, c) * sum_dy_xhat);
        }
    }
    return dx;
}

// ---------------------------------------------------------------- dropout

DropoutLayer::DropoutLayer(double rate) : rate_(rate) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw Error(ErrorKind::config, "dropout rate must be in [0,1), got " + std::to_string(rate));
    }
}

Matrix DropoutLayer::forward(const Matrix &x, Mode mode, Rng &rng) {
    active_ = mode == Mode::train && rate_ > 0.0;
    if (!active_) {
        return x;
    }
    const double keep_scale = 1.0 / (1.0 - rate_);
    mask_ = Matrix(x.rows(), x.cols());
    Matrix y(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double m = rng.uniform01() >= rate_ ? keep_scale : 0.0;
        mask_.values()[i] = m;
        y.values()[i] = x.values()[i] * m;
    }
    return y;
}

Matrix DropoutLayer::backward(const Matrix &grad_out) const {
    if (!active_) {
        return grad_out;
    }
    require_same_shape(grad_out, mask_, "dropout backward");
    Matrix dx(grad_out.rows(), grad_out.cols());
    for (std::size_t i = 0; i < grad_out.size(); ++i) {
        dx.values()[i] = grad_out.values()[i] * mask_.values()[i];
    }
    return dx;
}

double leaky_relu(double x, double slope) noexcept { return x >= 0.0 ? x : slope * x; }

// ---------------------------------------------------------------- head kind

HeadKind HeadKind::custom(std::size_t width) {
    if (width == 0) {
        throw Error(ErrorKind::config, "custom head width must be at least 1");
    }
    return HeadKind(Kind::custom, width);
}

HeadKind HeadKind::parse(std::string_view name) {
    if (name == "raf_db_7") {
        return raf_db_7();
    }
    if (name == "affectnet_8_va") {
        return affectnet_8_va();
    }
    if (name == "va_only_2") {
        return va_only_2();
    }
    constexpr std::string_view prefix = "custom:";
    if (name.starts_with(prefix)) {
        const auto digits = name.substr(prefix.size());
        std::size_t width = 0;
        const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), width);
        if (ec == std::errc{} && ptr == digits.data() + digits.size()) {
            return custom(width);
        }
    }
    throw Error(ErrorKind::config, "unknown head kind '" + std::string(name) +
                                       "' (expected raf_db_7, affectnet_8_va, va_only_2 or custom:<n>)");
}

std::size_t HeadKind::class_count() const noexcept {
    switch (kind_) {
        case Kind::raf_db_7: return 7;
        case Kind::affectnet_8_va: return 8;
        case Kind::va_only_2: return 0;
        case Kind::custom: return width_;
    }
    return 0;
}

std::string HeadKind::name() const {
    switch (kind_) {
        case Kind::raf_db_7: return "raf_db_7";
        case Kind::affectnet_8_va: return "affectnet_8_va";
        case Kind::va_only_2: return "va_only_2";
        case Kind::custom: return "custom:" + std::to_string(width_);
    }
    return "unknown";
}

// ---------------------------------------------------------------- mlp

MlpModel::MlpModel(std::size_t input_dim, HeadKind head, const MlpOptions &options, Rng &rng)
    : input_dim_(input_dim), head_kind_(head), options_(options) {
    if (input_dim == 0) {
        throw Error(ErrorKind::config, "classifier input dimension must be at least 1");
    }
    if (options.hidden_width == 0) {
        throw Error(ErrorKind::config, "hidden width must be at least 1");
    }
    std::size_t fan_in = input_dim;
    for (std::size_t i = 0; i < options.hidden_layers; ++i) {
        HiddenBlock block;
        block.linear = LinearLayer(fan_in, options.hidden_width, rng, options.leaky_slope);
        block.use_batch_norm = options.batch_norm;
        if (options.batch_norm) {
            block.batch_norm = BatchNormLayer(options.hidden_width, options.bn_momentum, options.bn_epsilon);
        }
        block.slope = options.leaky_slope;
        block.dropout = DropoutLayer(options.dropout_at(i));
        blocks_.push_back(std::move(block));
        fan_in = options.hidden_width;
    }
    head_ = LinearLayer(fan_in, head.width(), rng, options.leaky_slope);
}

std::size_t MlpModel::trunk_width() const noexcept {
    return blocks_.empty() ? input_dim_ : options_.hidden_width;
}

Matrix MlpModel::forward(const Matrix &batch, Mode mode, Rng &rng) {
    if (batch.cols() != input_dim_) {
        throw Error(ErrorKind::shape, "classifier expects " + std::to_string(input_dim_) + " input columns, got " +
                                          batch.shape_string());
    }
    if (mode == Mode::eval) {
        return predict(batch);
    }
    Matrix h = batch;
    for (auto &block : blocks_) {
        h = block.linear.forward(h, mode);
        if (block.use_batch_norm) {
            h = block.batch_norm.forward(h, mode);
        }
        block.activation_input = h;
        for (double &v : h.values()) {
            v = leaky_relu(v, block.slope);
        }
        h = block.dropout.forward(h, mode, rng);
    }
    Matrix out = head_.forward(h, mode);
    out.require_finite("classifier output");
    cached_ = true;
    return out;
}

Matrix MlpModel::backward(const Matrix &grad_output) {
    if (!cached_) {
        throw Error(ErrorKind::protocol, "backprop requested before any train-mode forward pass");
    }
    Matrix g = head_.backward(grad_output);
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
        g = it->dropout.backward(g);
        const auto pre = it->activation_input.values();
        auto gv = g.values();
        for (std::size_t i = 0; i < gv.size(); ++i) {
            if (pre[i] < 0.0) {
                gv[i] *= it->slope;
            }
        }
        if (it->use_batch_norm) {
            g = it->batch_norm.backward(g);
        }
        g = it->linear.backward(g);
    }
    return g;
}

Matrix MlpModel::predict(const Matrix &batch) const {
    if (batch.cols() != input_dim_) {
        throw Error(ErrorKind::shape, "classifier expects " + std::to_string(input_dim_) + " input columns, got " +
                                          batch.shape_string());
    }
    Matrix h = batch;
    for (const auto &block : blocks_) {
        h = block.linear.infer(h);
        if (block.use_batch_norm) {
            h = block.batch_norm.infer(h);
        }
        for (double &v : h.values()) {
            v = leaky_relu(v, block.slope);
        }
    }
    Matrix out = head_.infer(h);
    out.require_finite("classifier output");
    return out;
}

std::vector<ParamRef> MlpModel::parameters() {
    std::vector<ParamRef> refs;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        auto &b = blocks_[i];
        const std::string p = "block" + std::to_string(i) + ".";
        refs.push_back({p + "linear.weight", &b.linear.weights, &b.linear.grad_weights});
        refs.push_back({p + "linear.bias", &b.linear.bias, &b.linear.grad_bias});
        if (b.use_batch_norm) {
            refs.push_back({p + "bn.gamma", &b.batch_norm.gamma, &b.batch_norm.grad_gamma});
            refs.push_back({p + "bn.beta", &b.batch_norm.beta, &b.batch_norm.grad_beta});
        }
    }
    refs.push_back({"head.weight", &head_.weights, &head_.grad_weights});
    refs.push_back({"head.bias", &head_.bias, &head_.grad_bias});
    return refs;
}

std::vector<StateRef> MlpModel::state() {
    std::vector<StateRef> refs;
    for (auto &p : parameters()) {
        refs.push_back({p.name, p.value});
    }
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        if (blocks_[i].use_batch_norm) {
            const std::string p = "block" + std::to_string(i) + ".bn.";
            refs.push_back({p + "running_mean", &blocks_[i].batch_norm.running_mean});
            refs.push_back({p + "running_var", &blocks_[i].batch_norm.running_var});
        }
    }
    return refs;
}

std::vector<ConstStateRef> MlpModel::state() const {
    std::vector<ConstStateRef> out;
    for (const auto &r : const_cast<MlpModel *>(this)->state()) {
        out.push_back({r.name, r.value});
    }
    return out;
}

void MlpModel::replace_head(HeadKind head, Rng &rng) {
    head_ = LinearLayer(trunk_width(), head.width(), rng, options_.leaky_slope);
    head_kind_ = head;
    cached_ = false;
}

double MlpModel::min_abs_preactivation(const Matrix &batch) const {
    MlpModel probe = *this;
    for (const auto &b : probe.blocks_) {
        if (b.dropout.rate() > 0.0) {
            throw Error(ErrorKind::config, "min_abs_preactivation requires dropout disabled");
        }
    }
    Rng unused(0);
    probe.forward(batch, Mode::train, unused);
    double smallest = std::numeric_limits<double>::infinity();
    for (const auto &b : probe.blocks_) {
        for (double v : b.activation_input.values()) {
            smallest = std::min(smallest, std::abs(v));
        }
    }
    return smallest;
}

MlpModel build_classifier(std::size_t input_dim, HeadKind head, Rng &rng, const MlpOptions &options) {
    return MlpModel(input_dim, head, options, rng);
}

}  // namespace fei3d::nn

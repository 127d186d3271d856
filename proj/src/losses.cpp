#include "fei3d/losses.hpp"

#include "fei3d/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace fei3d::losses {

namespace {

void check_labels(const Matrix &logits, std::span<const int> labels) {
    if (labels.size() != logits.rows()) {
        throw Error(ErrorKind::shape, "cross entropy: " + std::to_string(labels.size()) + " labels for " +
                                          std::to_string(logits.rows()) + " rows");
    }
    if (logits.rows() == 0) {
        throw Error(ErrorKind::data, "cross entropy: empty batch");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= logits.cols()) {
            throw Error(ErrorKind::data, "label " + std::to_string(labels[i]) + " at sample " + std::to_string(i) +
                                             " is outside [0, " + std::to_string(logits.cols()) + ")");
        }
    }
}

// Shared by the plain and weighted variants so unit weights reproduce the
// plain loss bit-for-bit.
LossGrad cross_entropy_core(const Matrix &logits, std::span<const int> labels, const ClassWeights *weights,
                            CeReduction reduction) {
    check_labels(logits, labels);
    const std::size_t n = logits.rows();
    LossGrad out{0.0, softmax(logits)};
    double total = 0.0;
    double weight_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto y = static_cast<std::size_t>(labels[i]);
        const double w = weights ? (*weights)[y] : 1.0;
        auto row = logits.row(i);
        const double m = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (double v : row) {
            sum += std::exp(v - m);
        }
        const double nll = m + std::log(sum) - row[y];
        total += w * nll;
        weight_sum += w;
    }
    double denom = static_cast<double>(n);
    if (reduction == CeReduction::weighted_mean) {
        denom = weight_sum;
    }
    if (denom == 0.0) {
        out.grad.fill(0.0);
        return out;
    }
    out.loss = total / denom;
    for (std::size_t i = 0; i < n; ++i) {
        const auto y = static_cast<std::size_t>(labels[i]);
        const double w = weights ? (*weights)[y] : 1.0;
        auto g = out.grad.row(i);
        g[y] -= 1.0;
        for (double &v : g) {
            v = w * v / denom;
        }
    }
    return out;
}

void require_va(const Matrix &pred, const Matrix &target, const char *what) {
    require_same_shape(pred, target, what);
    if (pred.cols() != 2) {
        throw Error(ErrorKind::shape, std::string(what) + ": valence/arousal matrices must have 2 columns, got " +
                                          pred.shape_string());
    }
    if (pred.rows() < 2) {
        throw Error(ErrorKind::domain, std::string(what) + ": CCC/PCC need a batch of at least 2 samples, got " +
                                           std::to_string(pred.rows()));
    }
}

struct Moments {
    double mean_x = 0.0;
    double mean_y = 0.0;
    double sxx = 0.0;  // Σ (x − μx)²
    double syy = 0.0;
    double sxy = 0.0;
};

Moments centered(std::span<const double> x, std::span<const double> y, const char *what) {
    if (x.size() != y.size()) {
        throw Error(ErrorKind::shape, std::string(what) + ": length mismatch " + std::to_string(x.size()) + " vs " +
                                          std::to_string(y.size()));
    }
    if (x.size() < 2) {
        throw Error(ErrorKind::domain, std::string(what) + " needs at least 2 samples, got " +
                                           std::to_string(x.size()));
    }
    Moments m;
    const double n = static_cast<double>(x.size());
    m.mean_x = std::accumulate(x.begin(), x.end(), 0.0) / n;
    m.mean_y = std::accumulate(y.begin(), y.end(), 0.0) / n;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - m.mean_x;
        const double dy = y[i] - m.mean_y;
        m.sxx += dx * dx;
        m.syy += dy * dy;
        m.sxy += dx * dy;
    }
    return m;
}

// Scatters per-dimension correlation gradients into an N×2 matrix.
void add_column_grad(Matrix &grad, std::size_t dim, const std::vector<double> &g, double scale) {
    for (std::size_t i = 0; i < g.size(); ++i) {
        grad(i, dim) += scale * g[i];
    }
}

}  // namespace

LossWeights LossWeights::sample(Rng &rng) {
    auto draw = [&] {
        double v = rng.uniform01();
        while (v <= 0.0) {
            v = rng.uniform01();
        }
        return v;
    };
    LossWeights w;
    w.alpha = draw();
    w.beta = draw();
    w.gamma = draw();
    return w;
}

std::array<double, 3> LossWeights::shares() const {
    if (!(alpha > 0.0 && beta > 0.0 && gamma > 0.0)) {
        throw Error(ErrorKind::domain, "loss weights must be strictly positive");
    }
    const double total = alpha + beta + gamma;
    return {alpha / total, beta / total, gamma / total};
}

ClassWeights::ClassWeights(std::vector<double> values) : values_(std::move(values)) {
    for (std::size_t c = 0; c < values_.size(); ++c) {
        if (!(values_[c] >= 0.0) || !std::isfinite(values_[c])) {
            throw Error(ErrorKind::config, "class weight " + std::to_string(c) + " must be finite and non-negative");
        }
    }
}

Matrix softmax(const Matrix &logits) {
    Matrix p(logits.rows(), logits.cols());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        auto in = logits.row(r);
        auto out = p.row(r);
        const double m = *std::max_element(in.begin(), in.end());
        double sum = 0.0;
        for (std::size_t c = 0; c < in.size(); ++c) {
            out[c] = std::exp(in[c] - m);
            sum += out[c];
        }
        for (double &v : out) {
            v /= sum;
        }
    }
    return p;
}

LossGrad softmax_cross_entropy(const Matrix &logits, std::span<const int> labels) {
    return cross_entropy_core(logits, labels, nullptr, CeReduction::batch_mean);
}

LossGrad weighted_cross_entropy(const Matrix &logits, std::span<const int> labels, const ClassWeights &weights,
                                CeReduction reduction) {
    if (weights.size() != logits.cols()) {
        throw Error(ErrorKind::shape, "weighted cross entropy: " + std::to_string(weights.size()) +
                                          " class weights for " + std::to_string(logits.cols()) + " classes");
    }
    return cross_entropy_core(logits, labels, &weights, reduction);
}

ClassWeights class_weights_from_counts(std::span<const std::size_t> counts) {
    if (counts.empty()) {
        throw Error(ErrorKind::config, "class weights: no classes");
    }
    std::size_t total = 0;
    for (std::size_t c = 0; c < counts.size(); ++c) {
        if (counts[c] == 0) {
            throw Error(ErrorKind::config, "class " + std::to_string(c) +
                                               " is absent from the training split; cannot derive its weight");
        }
        total += counts[c];
    }
    std::vector<double> w(counts.size());
    const double classes = static_cast<double>(counts.size());
    for (std::size_t c = 0; c < counts.size(); ++c) {
        w[c] = static_cast<double>(total) / (classes * static_cast<double>(counts[c]));
    }
    return ClassWeights(std::move(w));
}

LossGrad mse_loss(const Matrix &pred, const Matrix &target) {
    require_same_shape(pred, target, "mse");
    if (pred.empty()) {
        throw Error(ErrorKind::data, "mse: empty input");
    }
    const double count = static_cast<double>(pred.size());
    LossGrad out{0.0, Matrix(pred.rows(), pred.cols())};
    double total = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred.values()[i] - target.values()[i];
        total += d * d;
        out.grad.values()[i] = 2.0 * d / count;
    }
    out.loss = total / count;
    return out;
}

CorrelationResult pcc(std::span<const double> pred, std::span<const double> target) {
    const Moments m = centered(pred, target, "pcc");
    CorrelationResult out;
    out.grad.assign(pred.size(), 0.0);
    if (m.sxx <= 0.0 || m.syy <= 0.0) {
        out.degenerate = true;
        return out;
    }
    const double root = std::sqrt(m.sxx * m.syy);
    const double r = m.sxy / root;
    out.value = std::clamp(r, -1.0, 1.0);
    // dr/dx_i = (y_i − μy)/√(SxxSyy) − r·(x_i − μx)/Sxx
    for (std::size_t i = 0; i < pred.size(); ++i) {
        out.grad[i] = (target[i] - m.mean_y) / root - r * (pred[i] - m.mean_x) / m.sxx;
    }
    return out;
}

CorrelationResult ccc(std::span<const double> pred, std::span<const double> target) {
    const Moments m = centered(pred, target, "ccc");
    const double n = static_cast<double>(pred.size());
    CorrelationResult out;
    out.grad.assign(pred.size(), 0.0);
    const double bias = m.mean_x - m.mean_y;
    const double num = 2.0 * m.sxy / n;
    const double den = m.sxx / n + m.syy / n + bias * bias;
    if (den <= 0.0) {
        // both constant and equal
        out.value = 1.0;
        out.degenerate = true;
        return out;
    }
    out.value = std::clamp(num / den, -1.0, 1.0);
    if (m.sxx <= 0.0 && m.syy <= 0.0) {
        out.degenerate = true;
    }
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double dnum = 2.0 * (target[i] - m.mean_y) / n;
        const double dden = 2.0 * (pred[i] - m.mean_x) / n + 2.0 * bias / n;
        out.grad[i] = (dnum * den - num * dden) / (den * den);
    }
    return out;
}

std::vector<double> va_column(const Matrix &va, std::size_t dim) {
    std::vector<double> col(va.rows());
    for (std::size_t i = 0; i < va.rows(); ++i) {
        col[i] = va(i, dim);
    }
    return col;
}

HeadLoss combined_affectnet_loss(const Matrix &logits, const Matrix &va_pred, std::span<const int> labels,
                                 const Matrix &va_target, const LossWeights &w) {
    require_va(va_pred, va_target, "combined loss");
    if (logits.rows() != va_pred.rows()) {
        throw Error(ErrorKind::shape, "combined loss: logits " + logits.shape_string() + " vs VA " +
                                          va_pred.shape_string());
    }
    const auto [a, b, c] = w.shares();
    const LossGrad ce = softmax_cross_entropy(logits, labels);
    const LossGrad mse = mse_loss(va_pred, va_target);

    HeadLoss out{ce.loss + a * mse.loss, ce.grad, mse.grad * a};
    for (std::size_t d = 0; d < 2; ++d) {
        const auto p = va_column(va_pred, d);
        const auto t = va_column(va_target, d);
        const auto conc = ccc(p, t);
        const auto corr = pcc(p, t);
        out.loss += b * (1.0 - conc.value) / 2.0 + c * (1.0 - corr.value) / 2.0;
        add_column_grad(out.grad_va, d, conc.grad, -b / 2.0);
        add_column_grad(out.grad_va, d, corr.grad, -c / 2.0);
    }
    return out;
}

HeadLoss stage1_combined_loss(const Matrix &logits, const Matrix &va_pred, std::span<const int> labels,
                              const Matrix &va_target, const ClassWeights &class_weights, const VaLossConfig &cfg) {
    require_same_shape(va_pred, va_target, "stage-1 loss");
    if (logits.rows() != va_pred.rows()) {
        throw Error(ErrorKind::shape, "stage-1 loss: logits " + logits.shape_string() + " vs VA " +
                                          va_pred.shape_string());
    }
    const LossGrad ce = weighted_cross_entropy(logits, labels, class_weights);
    const LossGrad mse = mse_loss(va_pred, va_target);
    return {ce.loss + cfg.w1 * mse.loss, ce.grad, mse.grad * cfg.w1};
}

LossGrad stage2_va_loss(const Matrix &va_pred, const Matrix &va_target, const VaLossConfig &cfg) {
    require_va(va_pred, va_target, "stage-2 loss");
    const LossGrad mse = mse_loss(va_pred, va_target);
    LossGrad out{cfg.w2 * mse.loss, mse.grad * cfg.w2};
    const double sign = cfg.ccc_as_one_minus ? -1.0 : 1.0;
    double mean_ccc = 0.0;
    for (std::size_t d = 0; d < 2; ++d) {
        const auto conc = ccc(va_column(va_pred, d), va_column(va_target, d));
        mean_ccc += conc.value / 2.0;
        add_column_grad(out.grad, d, conc.grad, sign / 2.0);
    }
    out.loss += cfg.ccc_as_one_minus ? 1.0 - mean_ccc : mean_ccc;
    return out;
}

}  // namespace fei3d::losses

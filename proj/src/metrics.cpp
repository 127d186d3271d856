#include "fei3d/metrics.hpp"

#include "fei3d/error.hpp"
#include "fei3d/losses.hpp"

#include <boost/multiprecision/cpp_int.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace fei3d::metrics {

namespace {

using Rational = boost::multiprecision::cpp_rational;

Rational ratio(std::size_t num, std::size_t den) {
    if (den == 0) {
        return Rational(0);
    }
    return Rational(boost::multiprecision::cpp_int(num), boost::multiprecision::cpp_int(den));
}

double to_double(const Rational &r) { return r.convert_to<double>(); }

}  // namespace

void ConfusionMatrix::merge(const ConfusionMatrix &other) {
    if (other.classes_ != classes_) {
        throw Error(ErrorKind::shape, "cannot merge confusion matrices over " + std::to_string(classes_) + " and " +
                                          std::to_string(other.classes_) + " classes");
    }
    for (std::size_t i = 0; i < counts_.size(); ++i) {
        counts_[i] += other.counts_[i];
    }
}

std::size_t ConfusionMatrix::total() const noexcept {
    std::size_t t = 0;
    for (auto c : counts_) {
        t += c;
    }
    return t;
}

std::size_t ConfusionMatrix::trace() const noexcept {
    std::size_t t = 0;
    for (std::size_t c = 0; c < classes_; ++c) {
        t += at(c, c);
    }
    return t;
}

std::size_t ConfusionMatrix::support(std::size_t truth) const noexcept {
    std::size_t s = 0;
    for (std::size_t p = 0; p < classes_; ++p) {
        s += at(truth, p);
    }
    return s;
}

std::size_t ConfusionMatrix::predicted(std::size_t pred) const noexcept {
    std::size_t s = 0;
    for (std::size_t t = 0; t < classes_; ++t) {
        s += at(t, pred);
    }
    return s;
}

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> pred, std::size_t classes) {
    if (truth.size() != pred.size()) {
        throw Error(ErrorKind::shape, "confusion: " + std::to_string(truth.size()) + " true labels vs " +
                                          std::to_string(pred.size()) + " predictions");
    }
    if (classes == 0) {
        throw Error(ErrorKind::config, "confusion: need at least one class");
    }
    ConfusionMatrix cm(classes);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        for (int v : {truth[i], pred[i]}) {
            if (v < 0 || static_cast<std::size_t>(v) >= classes) {
                throw Error(ErrorKind::data, "label " + std::to_string(v) + " at sample " + std::to_string(i) +
                                                 " is outside [0, " + std::to_string(classes) + ")");
            }
        }
        cm.add(static_cast<std::size_t>(truth[i]), static_cast<std::size_t>(pred[i]));
    }
    return cm;
}

bool ClassificationReport::balanced() const noexcept {
    if (per_class.empty()) {
        return false;
    }
    return std::all_of(per_class.begin(), per_class.end(),
                       [&](const ClassScores &s) { return s.support == per_class.front().support; });
}

ClassificationReport classification_report(const ConfusionMatrix &cm, const ClassificationOptions &options) {
    const std::size_t classes = cm.classes();
    const std::size_t n = cm.total();
    ClassificationReport report;
    report.samples = n;
    report.confusion = cm;
    report.accuracy = to_double(ratio(cm.trace(), n));

    Rational macro_p, macro_r, macro_f;
    Rational weighted_p, weighted_r, weighted_f;
    std::size_t macro_count = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        const std::size_t tp = cm.at(c, c);
        const std::size_t support = cm.support(c);
        const std::size_t predicted = cm.predicted(c);
        const Rational p = ratio(tp, predicted);
        const Rational r = ratio(tp, support);
        // 2PR/(P+R) reduces to 2TP/(support + predicted) on the counts
        const Rational f = ratio(2 * tp, support + predicted);
        report.per_class.push_back({to_double(p), to_double(r), to_double(f), support});

        if (!options.macro_exclude_absent || support > 0 || predicted > 0) {
            macro_p += p;
            macro_r += r;
            macro_f += f;
            ++macro_count;
        }
        const Rational w{boost::multiprecision::cpp_int(support)};
        weighted_p += p * w;
        weighted_r += r * w;
        weighted_f += f * w;
    }
    if (macro_count > 0) {
        const Rational k{boost::multiprecision::cpp_int(macro_count)};
        report.macro = {to_double(macro_p / k), to_double(macro_r / k), to_double(macro_f / k)};
    }
    if (n > 0) {
        const Rational total{boost::multiprecision::cpp_int(n)};
        report.weighted = {to_double(weighted_p / total), to_double(weighted_r / total), to_double(weighted_f / total)};
    }
    return report;
}

ClassificationReport classification_report(std::span<const int> truth, std::span<const int> pred,
                                           std::size_t classes, const ClassificationOptions &options) {
    return classification_report(confusion(truth, pred, classes), options);
}

RegressionReport regression_report(const Matrix &pred, const Matrix &target) {
    require_same_shape(pred, target, "regression report");
    if (pred.cols() != 2) {
        throw Error(ErrorKind::shape, "regression report expects N x 2 valence/arousal, got " + pred.shape_string());
    }
    if (pred.rows() < 2) {
        throw Error(ErrorKind::data, "regression report needs at least 2 samples for CCC, got " +
                                         std::to_string(pred.rows()));
    }
    const double n = static_cast<double>(pred.rows());
    RegressionReport report;
    report.samples = pred.rows();
    DimensionScores *dims[2] = {&report.valence, &report.arousal};
    for (std::size_t d = 0; d < 2; ++d) {
        double sq = 0.0;
        double ab = 0.0;
        for (std::size_t i = 0; i < pred.rows(); ++i) {
            const double e = pred(i, d) - target(i, d);
            sq += e * e;
            ab += std::abs(e);
        }
        DimensionScores &s = *dims[d];
        s.mse = sq / n;
        s.mae = ab / n;
        s.rmse = std::sqrt(s.mse);
        s.ccc = losses::ccc(losses::va_column(pred, d), losses::va_column(target, d)).value;
    }
    report.mean = {(report.valence.mse + report.arousal.mse) / 2.0, (report.valence.mae + report.arousal.mae) / 2.0,
                   (report.valence.rmse + report.arousal.rmse) / 2.0, (report.valence.ccc + report.arousal.ccc) / 2.0};
    return report;
}

std::vector<int> argmax_rows(const Matrix &scores) {
    std::vector<int> out(scores.rows());
    for (std::size_t r = 0; r < scores.rows(); ++r) {
        auto row = scores.row(r);
        out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
}

namespace {

nlohmann::json averages_json(const Averages &a) {
    return {{"precision", a.precision}, {"recall", a.recall}, {"f1", a.f1}};
}

nlohmann::json dimension_json(const DimensionScores &d) {
    return {{"mse", d.mse}, {"mae", d.mae}, {"rmse", d.rmse}, {"ccc", d.ccc}};
}

}  // namespace

nlohmann::json to_json(const ClassificationReport &report) {
    nlohmann::json j;
    j["samples"] = report.samples;
    j["accuracy"] = report.accuracy;
    j["weighted_avg"] = averages_json(report.weighted);
    j["macro_avg"] = averages_json(report.macro);
    j["balanced"] = report.balanced();
    auto &per = j["per_class"] = nlohmann::json::array();
    for (std::size_t c = 0; c < report.per_class.size(); ++c) {
        const auto &s = report.per_class[c];
        per.push_back({{"class", c}, {"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1},
                       {"support", s.support}});
    }
    auto &cm = j["confusion"] = nlohmann::json::array();
    for (std::size_t t = 0; t < report.confusion.classes(); ++t) {
        std::vector<std::size_t> row;
        for (std::size_t p = 0; p < report.confusion.classes(); ++p) {
            row.push_back(report.confusion.at(t, p));
        }
        cm.push_back(row);
    }
    return j;
}

nlohmann::json to_json(const RegressionReport &report) {
    return {{"samples", report.samples},
            {"valence", dimension_json(report.valence)},
            {"arousal", dimension_json(report.arousal)},
            {"mean", dimension_json(report.mean)}};
}

std::string format_classification_table(const std::vector<std::pair<std::string, ClassificationReport>> &rows) {
    std::size_t name_width = 9;  // "Framework"
    bool all_balanced = !rows.empty();
    for (const auto &[name, report] : rows) {
        name_width = std::max(name_width, name.size());
        all_balanced = all_balanced && report.balanced();
    }
    std::string out;
    if (all_balanced) {
        out += fmt::format("{:<{}}  {:>8}  {:>8}  {:>9}  {:>8}\n", "Framework", name_width, "Accuracy", "F1",
                           "Precision", "Recall");
        for (const auto &[name, r] : rows) {
            out += fmt::format("{:<{}}  {:>8.4f}  {:>8.4f}  {:>9.4f}  {:>8.4f}\n", name, name_width, r.accuracy,
                               r.weighted.f1, r.weighted.precision, r.weighted.recall);
        }
        return out;
    }
    out += fmt::format("{:<{}}  {:>6}  {:>24}  {:>24}\n", "", name_width, "", "Weighted Avg", "Macro Avg");
    out += fmt::format("{:<{}}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}\n", "Framework", name_width, "Acc",
                       "F1", "P", "R", "F1", "P", "R");
    for (const auto &[name, r] : rows) {
        out += fmt::format("{:<{}}  {:>6.4f}  {:>6.4f}  {:>6.4f}  {:>6.4f}  {:>6.4f}  {:>6.4f}  {:>6.4f}\n", name,
                           name_width, r.accuracy, r.weighted.f1, r.weighted.precision, r.weighted.recall, r.macro.f1,
                           r.macro.precision, r.macro.recall);
    }
    return out;
}

std::string format_regression_table(const std::vector<std::pair<std::string, RegressionReport>> &rows) {
    std::size_t name_width = 9;
    for (const auto &[name, report] : rows) {
        name_width = std::max(name_width, name.size());
    }
    std::string out;
    out += fmt::format("{:<{}}  {:>6}  {:>6}  {:>6}  {:>6}\n", "Framework", name_width, "MSE", "MAE", "RMSE", "CCC");
    for (const auto &[name, r] : rows) {
        out += fmt::format("{:<{}}  {:>6.4f}  {:>6.4f}  {:>6.4f}  {:>6.4f}\n", name, name_width, r.mean.mse, r.mean.mae,
                           r.mean.rmse, r.mean.ccc);
    }
    out += '\n';
    out += fmt::format("{:<{}}  {:>8}  {:>8}  {:>7}  {:>7}\n", "Framework", name_width, "RMSE_val", "RMSE_aro",
                       "CCC_val", "CCC_aro");
    for (const auto &[name, r] : rows) {
        out += fmt::format("{:<{}}  {:>8.3f}  {:>8.3f}  {:>7.3f}  {:>7.3f}\n", name, name_width, r.valence.rmse,
                           r.arousal.rmse, r.valence.ccc, r.arousal.ccc);
    }
    return out;
}

}  // namespace fei3d::metrics

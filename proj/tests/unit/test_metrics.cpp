#include "doctest.h"

#include "fei3d/error.hpp"
#include "fei3d/metrics.hpp"
#include "fei3d/rng.hpp"

#include <cmath>
#include <vector>

using namespace fei3d;
using namespace fei3d::metrics;

namespace {

struct Brute {
    double accuracy = 0;
    std::vector<double> p, r, f1;
    std::vector<std::size_t> support;
    long double wp = 0, wr = 0, wf = 0, mp = 0, mr = 0, mf = 0;
};

// Counts straight from the label lists, no confusion matrix.
Brute brute_force(const std::vector<int> &truth, const std::vector<int> &pred, std::size_t classes) {
    Brute b;
    const std::size_t n = truth.size();
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) correct += truth[i] == pred[i];
    b.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    for (std::size_t c = 0; c < classes; ++c) {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const bool t = truth[i] == static_cast<int>(c);
            const bool p = pred[i] == static_cast<int>(c);
            tp += t && p;
            fp += !t && p;
            fn += t && !p;
        }
        const double prec = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        const double rec = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
        const double f = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
        b.p.push_back(prec);
        b.r.push_back(rec);
        b.f1.push_back(f);
        b.support.push_back(tp + fn);
        const long double w = static_cast<long double>(tp + fn) / n;
        b.wp += w * prec;
        b.wr += w * rec;
        b.wf += w * f;
        b.mp += static_cast<long double>(prec) / classes;
        b.mr += static_cast<long double>(rec) / classes;
        b.mf += static_cast<long double>(f) / classes;
    }
    return b;
}

}  // namespace

TEST_CASE("hand-computed three-class example") {
    const std::vector<int> truth{0, 0, 1, 1, 2, 2};
    const std::vector<int> pred{0, 1, 1, 1, 0, 2};
    const auto r = classification_report(truth, pred, 3);
    CHECK(r.samples == 6);
    CHECK(r.accuracy == doctest::Approx(4.0 / 6));
    CHECK(r.per_class[0].precision == 0.5);
    CHECK(r.per_class[0].recall == 0.5);
    CHECK(r.per_class[1].precision == doctest::Approx(2.0 / 3));
    CHECK(r.per_class[1].recall == 1.0);
    CHECK(r.per_class[1].f1 == doctest::Approx(0.8));
    CHECK(r.per_class[2].precision == 1.0);
    CHECK(r.per_class[2].recall == 0.5);
    CHECK(r.per_class[2].f1 == doctest::Approx(2.0 / 3));
    CHECK(r.macro.f1 == doctest::Approx((0.5 + 0.8 + 2.0 / 3) / 3));
    CHECK(r.balanced());
    CHECK(r.confusion.at(2, 0) == 1);
    CHECK(r.confusion.trace() == 4);
}

TEST_CASE("zero denominators score zero") {
    const std::vector<int> truth{0, 0, 0};
    const std::vector<int> pred{0, 0, 0};
    const auto r = classification_report(truth, pred, 3);
    CHECK(r.per_class[1].precision == 0.0);
    CHECK(r.per_class[1].recall == 0.0);
    CHECK(r.per_class[1].f1 == 0.0);
    CHECK(r.macro.recall == doctest::Approx(1.0 / 3));
    const auto ex = classification_report(truth, pred, 3, {true});
    CHECK(ex.macro.recall == 1.0);
    CHECK_FALSE(r.balanced());
}

TEST_CASE("randomized reports agree with brute force") {
    Rng rng(11);
    const std::size_t class_options[] = {2, 7, 8};
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t classes = class_options[rng.below(3)];
        const std::size_t n = 1 + rng.below(200);
        std::vector<int> truth(n), pred(n);
        for (std::size_t i = 0; i < n; ++i) {
            truth[i] = static_cast<int>(rng.below(classes));
            pred[i] = rng.uniform01() < 0.5 ? truth[i] : static_cast<int>(rng.below(classes));
        }
        const auto r = classification_report(truth, pred, classes);
        const auto b = brute_force(truth, pred, classes);
        CHECK(r.accuracy == b.accuracy);
        for (std::size_t c = 0; c < classes; ++c) {
            CHECK(std::abs(r.per_class[c].precision - b.p[c]) <= 1e-12);
            CHECK(std::abs(r.per_class[c].recall - b.r[c]) <= 1e-12);
            CHECK(std::abs(r.per_class[c].f1 - b.f1[c]) <= 1e-12);
            CHECK(r.per_class[c].support == b.support[c]);
        }
        CHECK(std::abs(r.weighted.precision - static_cast<double>(b.wp)) <= 1e-12);
        CHECK(std::abs(r.weighted.recall - static_cast<double>(b.wr)) <= 1e-12);
        CHECK(std::abs(r.weighted.f1 - static_cast<double>(b.wf)) <= 1e-12);
        CHECK(std::abs(r.macro.precision - static_cast<double>(b.mp)) <= 1e-12);
        CHECK(std::abs(r.macro.recall - static_cast<double>(b.mr)) <= 1e-12);
        CHECK(std::abs(r.macro.f1 - static_cast<double>(b.mf)) <= 1e-12);

        // exact identities
        CHECK(r.weighted.recall == r.accuracy);
        if (r.balanced()) CHECK(r.macro.recall == r.accuracy);
    }
}

TEST_CASE("confusion matrix bookkeeping") {
    const std::vector<int> truth{0, 1, 1, 2};
    const std::vector<int> pred{1, 1, 2, 2};
    auto cm = confusion(truth, pred, 3);
    CHECK(cm.total() == 4);
    CHECK(cm.support(1) == 2);
    CHECK(cm.predicted(1) == 2);
    const auto copy = cm;
    cm.merge(copy);
    CHECK(cm.at(1, 2) == 2);
    CHECK(classification_report(cm).accuracy == 0.5);
    CHECK_THROWS_AS(confusion(truth, std::vector<int>{0, 1, 3, 0}, 3), Error);
    CHECK_THROWS_AS(confusion(truth, std::vector<int>{0}, 3), Error);
}

TEST_CASE("regression report against direct formulas") {
    Rng rng(12);
    const std::size_t n = 50;
    Matrix pred(n, 2), target(n, 2);
    for (double &v : pred.values()) v = rng.uniform(-1, 1);
    for (double &v : target.values()) v = rng.uniform(-1, 1);
    const auto r = regression_report(pred, target);
    CHECK(r.samples == n);
    for (std::size_t d = 0; d < 2; ++d) {
        double se = 0, ae = 0, mp = 0, mt = 0;
        for (std::size_t i = 0; i < n; ++i) {
            se += (pred(i, d) - target(i, d)) * (pred(i, d) - target(i, d));
            ae += std::abs(pred(i, d) - target(i, d));
            mp += pred(i, d) / n;
            mt += target(i, d) / n;
        }
        double cov = 0, vp = 0, vt = 0;
        for (std::size_t i = 0; i < n; ++i) {
            cov += (pred(i, d) - mp) * (target(i, d) - mt) / n;
            vp += (pred(i, d) - mp) * (pred(i, d) - mp) / n;
            vt += (target(i, d) - mt) * (target(i, d) - mt) / n;
        }
        const auto &s = d == 0 ? r.valence : r.arousal;
        CHECK(s.mse == doctest::Approx(se / n).epsilon(1e-13));
        CHECK(s.mae == doctest::Approx(ae / n).epsilon(1e-13));
        CHECK(s.rmse == doctest::Approx(std::sqrt(se / n)).epsilon(1e-13));
        CHECK(s.ccc == doctest::Approx(2 * cov / (vp + vt + (mp - mt) * (mp - mt))).epsilon(1e-12));
    }
    CHECK(r.mean.rmse == doctest::Approx((r.valence.rmse + r.arousal.rmse) / 2));
    CHECK(r.mean.ccc == doctest::Approx((r.valence.ccc + r.arousal.ccc) / 2));
    const auto perfect = regression_report(target, target);
    CHECK(perfect.mean.mse == 0.0);
    CHECK(perfect.mean.ccc == doctest::Approx(1.0));
    CHECK_THROWS_AS(regression_report(Matrix(1, 2), Matrix(1, 2)), Error);
}

TEST_CASE("argmax prefers the lowest index on ties") {
    const auto a = argmax_rows(Matrix::from_rows({{0.2, 0.4, 0.4}, {0.5, 0.5, 0.0}, {0, 0, 1}}));
    CHECK(a == std::vector<int>{1, 0, 2});
}

TEST_CASE("table layouts") {
    const std::vector<int> truth{0, 1, 1, 2};
    const std::vector<int> pred{0, 1, 2, 2};
    const auto unbalanced = classification_report(truth, pred, 3);
    const auto wide = format_classification_table({{"Classifier_3d", unbalanced}});
    CHECK(wide.find("Weighted Avg") != std::string::npos);
    CHECK(wide.find("Macro Avg") != std::string::npos);
    CHECK(wide.find("Classifier_3d") != std::string::npos);

    const auto balanced = classification_report(std::vector<int>{0, 1}, std::vector<int>{0, 0}, 2);
    const auto narrow = format_classification_table({{"x", balanced}});
    CHECK(narrow.find("Accuracy") != std::string::npos);
    CHECK(narrow.find("Macro Avg") == std::string::npos);
    CHECK(narrow.find("0.5000") != std::string::npos);

    Matrix p = Matrix::from_rows({{0.1, 0.2}, {0.3, 0.4}});
    const auto reg = format_regression_table({{"Regressor_3d", regression_report(p, p)}});
    CHECK(reg.find("RMSE_val") != std::string::npos);
    CHECK(reg.find("CCC_aro") != std::string::npos);

    const auto j = to_json(unbalanced);
    CHECK(j.at("samples") == 4);
    CHECK(j.at("balanced") == false);
    CHECK(j.at("per_class").size() == 3);
}

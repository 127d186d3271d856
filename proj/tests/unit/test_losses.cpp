#include "doctest.h"

#include "fei3d/error.hpp"
#include "fei3d/losses.hpp"

#include <cmath>
#include <functional>
#include <vector>

using namespace fei3d;
using namespace fei3d::losses;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng &rng, double lo = -1.0, double hi = 1.0) {
    Matrix m(r, c);
    for (double &v : m.values()) v = rng.uniform(lo, hi);
    return m;
}

std::vector<int> random_labels(std::size_t n, std::size_t classes, Rng &rng) {
    std::vector<int> y(n);
    for (auto &v : y) v = static_cast<int>(rng.below(classes));
    return y;
}

// Central differences of a scalar function of a matrix.
Matrix numeric_grad(const std::function<double(const Matrix &)> &f, Matrix x, double h = 1e-6) {
    Matrix g(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x.values()[i];
        x.values()[i] = keep + h;
        const double up = f(x);
        x.values()[i] = keep - h;
        const double down = f(x);
        x.values()[i] = keep;
        g.values()[i] = (up - down) / (2 * h);
    }
    return g;
}

double mean(const std::vector<double> &v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double ccc_oracle(const std::vector<double> &x, const std::vector<double> &y) {
    const double mx = mean(x);
    const double my = mean(y);
    double sxy = 0;
    double sxx = 0;
    double syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    const double n = static_cast<double>(x.size());
    return 2 * sxy / n / (sxx / n + syy / n + (mx - my) * (mx - my));
}

double pcc_oracle(const std::vector<double> &x, const std::vector<double> &y) {
    const double mx = mean(x);
    const double my = mean(y);
    double sxy = 0;
    double sxx = 0;
    double syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST_CASE("softmax rows are stable distributions") {
    const Matrix s = softmax(Matrix::from_rows({{1000, 1000, 999}, {0, 0, 0}}));
    for (std::size_t r = 0; r < 2; ++r) {
        double sum = 0;
        for (double v : s.row(r)) sum += v;
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-15));
    }
    CHECK(s(1, 0) == doctest::Approx(1.0 / 3));
    CHECK(s(0, 0) == doctest::Approx(1.0 / (2 + std::exp(-1.0))));
}

TEST_CASE("cross entropy value and gradient") {
    Rng rng(1);
    const Matrix logits = random_matrix(6, 4, rng, -3, 3);
    const auto y = random_labels(6, 4, rng);
    const auto ce = softmax_cross_entropy(logits, y);
    double oracle = 0;
    for (std::size_t r = 0; r < 6; ++r) {
        double z = 0;
        for (double v : logits.row(r)) z += std::exp(v);
        oracle += -(logits(r, static_cast<std::size_t>(y[r])) - std::log(z));
    }
    CHECK(ce.loss == doctest::Approx(oracle / 6).epsilon(1e-13));
    const auto g = numeric_grad([&](const Matrix &m) { return softmax_cross_entropy(m, y).loss; }, logits);
    CHECK(max_abs_diff(g, ce.grad) < 1e-8);
    CHECK_THROWS_AS(softmax_cross_entropy(logits, std::vector<int>{0, 1}), Error);
    CHECK_THROWS_AS(softmax_cross_entropy(logits, std::vector<int>{0, 1, 2, 3, 4, 0}), Error);
}

TEST_CASE("weighted cross entropy") {
    Rng rng(2);
    const Matrix logits = random_matrix(8, 3, rng, -2, 2);
    const auto y = random_labels(8, 3, rng);
    const auto unit = weighted_cross_entropy(logits, y, ClassWeights::uniform(3));
    const auto ce = softmax_cross_entropy(logits, y);
    CHECK(unit.loss == ce.loss);
    CHECK(unit.grad == ce.grad);

    const ClassWeights w({0.5, 2.0, 1.5});
    for (auto reduction : {CeReduction::batch_mean, CeReduction::weighted_mean}) {
        const auto wce = weighted_cross_entropy(logits, y, w, reduction);
        double num = 0;
        double den = 0;
        for (std::size_t r = 0; r < 8; ++r) {
            double z = 0;
            for (double v : logits.row(r)) z += std::exp(v);
            const double wy = w[static_cast<std::size_t>(y[r])];
            num += wy * -(logits(r, static_cast<std::size_t>(y[r])) - std::log(z));
            den += wy;
        }
        const double expected = reduction == CeReduction::batch_mean ? num / 8 : num / den;
        CHECK(wce.loss == doctest::Approx(expected).epsilon(1e-13));
        const auto g = numeric_grad(
            [&](const Matrix &m) { return weighted_cross_entropy(m, y, w, reduction).loss; }, logits);
        CHECK(max_abs_diff(g, wce.grad) < 1e-8);
    }
}

TEST_CASE("inverse-frequency class weights") {
    const std::vector<std::size_t> counts{2, 1, 1};
    const auto w = class_weights_from_counts(counts);
    CHECK(w[0] == doctest::Approx(4.0 / 6.0));
    CHECK(w[1] == doctest::Approx(4.0 / 3.0));
    CHECK(w[2] == doctest::Approx(4.0 / 3.0));
    // weighted class mass is the same for every class
    CHECK(w[0] * 2 == doctest::Approx(w[1] * 1));
    const std::vector<std::size_t> missing{3, 0, 1};
    try {
        class_weights_from_counts(missing);
        FAIL("expected config error");
    } catch (const Error &e) {
        CHECK(e.kind() == ErrorKind::config);
    }
    CHECK_THROWS_AS(ClassWeights({1.0, -1.0}), Error);
}

TEST_CASE("mse") {
    const Matrix p = Matrix::from_rows({{1, 2}, {3, 4}});
    const Matrix t = Matrix::from_rows({{0, 2}, {5, 4}});
    const auto m = mse_loss(p, t);
    CHECK(m.loss == doctest::Approx(5.0 / 4.0));
    CHECK(m.grad == Matrix::from_rows({{0.5, 0}, {-1, 0}}));
    CHECK_THROWS_AS(mse_loss(p, Matrix(2, 3)), Error);
}

TEST_CASE("correlation fixed points") {
    const std::vector<double> x{0.1, -0.4, 0.7, 0.2, -0.9};
    std::vector<double> lin;
    for (double v : x) lin.push_back(2 * v + 5);
    CHECK(ccc(x, x).value == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(pcc(x, lin).value == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(ccc(std::vector<double>{1, 2, 3}, std::vector<double>{3, 2, 1}).value == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(ccc(x, lin).value < 1.0);
}

TEST_CASE("correlation values match the moment definitions and stay bounded") {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.below(40);
        std::vector<double> a(n);
        std::vector<double> b(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = rng.uniform(-1, 1);
            b[i] = 0.5 * a[i] + rng.uniform(-1, 1);
        }
        const double c = ccc(a, b).value;
        const double p = pcc(a, b).value;
        CHECK(c == doctest::Approx(ccc_oracle(a, b)).epsilon(1e-12));
        CHECK(p == doctest::Approx(pcc_oracle(a, b)).epsilon(1e-12));
        CHECK(std::abs(c) <= 1.0);
        CHECK(std::abs(p) <= 1.0);
        CHECK(std::abs(c) <= std::abs(p) + 1e-15);
    }
}

TEST_CASE("correlation gradients") {
    Rng rng(4);
    std::vector<double> a(7);
    std::vector<double> b(7);
    for (std::size_t i = 0; i < 7; ++i) {
        a[i] = rng.uniform(-1, 1);
        b[i] = rng.uniform(-1, 1);
    }
    for (auto fn : {&ccc, &pcc}) {
        const auto r = fn(a, b);
        for (std::size_t i = 0; i < 7; ++i) {
            auto up = a;
            auto down = a;
            up[i] += 1e-6;
            down[i] -= 1e-6;
            const double numeric = (fn(up, b).value - fn(down, b).value) / 2e-6;
            CHECK(r.grad[i] == doctest::Approx(numeric).epsilon(1e-6));
        }
    }
}

TEST_CASE("zero-variance sentinels") {
    const std::vector<double> flat{0.3, 0.3, 0.3};
    const std::vector<double> other{0.1, 0.5, -0.2};
    const auto p = pcc(flat, other);
    CHECK(p.degenerate);
    CHECK(p.value == 0.0);
    for (double g : p.grad) CHECK(g == 0.0);
    const auto same = ccc(flat, flat);
    CHECK(same.value == 1.0);
    const auto different = ccc(flat, std::vector<double>{0.2, 0.2, 0.2});
    CHECK(different.value == 0.0);
    CHECK_THROWS_AS(ccc(std::vector<double>{1.0}, std::vector<double>{1.0}), Error);
    CHECK_THROWS_AS(pcc(std::vector<double>{1.0}, std::vector<double>{1.0}), Error);
}

TEST_CASE("combined loss matches its term-by-term definition") {
    Rng rng(5);
    const Matrix logits = random_matrix(10, 8, rng, -2, 2);
    const auto y = random_labels(10, 8, rng);
    const Matrix va = random_matrix(10, 2, rng);
    const Matrix target = random_matrix(10, 2, rng);
    const LossWeights w{0.2, 0.5, 0.3};
    const auto r = combined_affectnet_loss(logits, va, y, target, w);
    const auto s = w.shares();
    double ccc_mean = 0;
    double pcc_mean = 0;
    for (std::size_t d = 0; d < 2; ++d) {
        ccc_mean += ccc_oracle(va_column(va, d), va_column(target, d)) / 2;
        pcc_mean += pcc_oracle(va_column(va, d), va_column(target, d)) / 2;
    }
    const double expected = softmax_cross_entropy(logits, y).loss + s[0] * mse_loss(va, target).loss +
                            s[1] * (1 - ccc_mean) + s[2] * (1 - pcc_mean);
    CHECK(r.loss == doctest::Approx(expected).epsilon(1e-13));
    const auto g = numeric_grad([&](const Matrix &m) { return combined_affectnet_loss(logits, m, y, target, w).loss; }, va);
    CHECK(max_abs_diff(g, r.grad_va) < 1e-8);
}

TEST_CASE("combined loss is invariant to positive rescaling of its weights") {
    Rng rng(6);
    const Matrix logits = random_matrix(12, 8, rng, -2, 2);
    const auto y = random_labels(12, 8, rng);
    const Matrix va = random_matrix(12, 2, rng);
    const Matrix target = random_matrix(12, 2, rng);
    for (int i = 0; i < 50; ++i) {
        const auto w = LossWeights::sample(rng);
        CHECK(w.alpha > 0.0);
        CHECK(w.beta > 0.0);
        CHECK(w.gamma > 0.0);
        const double k = rng.uniform(0.01, 100.0);
        const auto a = combined_affectnet_loss(logits, va, y, target, w);
        const auto b = combined_affectnet_loss(logits, va, y, target, {k * w.alpha, k * w.beta, k * w.gamma});
        CHECK(std::abs(a.loss - b.loss) <= 1e-12);
        CHECK(max_abs_diff(a.grad_va, b.grad_va) <= 1e-12);
    }
}

TEST_CASE("two-stage losses") {
    Rng rng(7);
    const Matrix logits = random_matrix(9, 8, rng, -2, 2);
    const auto y = random_labels(9, 8, rng);
    const Matrix va = random_matrix(9, 2, rng);
    const Matrix target = random_matrix(9, 2, rng);
    const ClassWeights cw({1, 2, 3, 4, 1, 2, 3, 4});
    const VaLossConfig cfg{0.7, 1.3, true};
    const auto s1 = stage1_combined_loss(logits, va, y, target, cw, cfg);
    CHECK(s1.loss == doctest::Approx(weighted_cross_entropy(logits, y, cw).loss + 0.7 * mse_loss(va, target).loss)
                         .epsilon(1e-14));

    const double ccc_mean =
        (ccc_oracle(va_column(va, 0), va_column(target, 0)) + ccc_oracle(va_column(va, 1), va_column(target, 1))) / 2;
    const auto s2 = stage2_va_loss(va, target, cfg);
    CHECK(s2.loss == doctest::Approx(1 - ccc_mean + 1.3 * mse_loss(va, target).loss).epsilon(1e-13));
    const auto literal = stage2_va_loss(va, target, {0.7, 1.3, false});
    CHECK(literal.loss == doctest::Approx(ccc_mean + 1.3 * mse_loss(va, target).loss).epsilon(1e-13));
    const auto g = numeric_grad([&](const Matrix &m) { return stage2_va_loss(m, target, cfg).loss; }, va);
    CHECK(max_abs_diff(g, s2.grad) < 1e-8);
}

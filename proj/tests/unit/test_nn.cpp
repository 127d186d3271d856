#include "doctest.h"

#include "fei3d/error.hpp"
#include "fei3d/gradcheck.hpp"
#include "fei3d/losses.hpp"
#include "fei3d/nn.hpp"

#include <cmath>

using namespace fei3d;
using namespace fei3d::nn;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng &rng) {
    Matrix m(r, c);
    for (double &v : m.values()) v = rng.normal();
    return m;
}

MlpOptions tiny(std::size_t width = 6, std::size_t layers = 2) {
    MlpOptions o;
    o.hidden_width = width;
    o.hidden_layers = layers;
    o.dropout = {};
    return o;
}

LossFn half_sum_of_squares() {
    return [](const Matrix &out) {
        LossEval e;
        e.grad = out;
        for (double v : out.values()) e.loss += 0.5 * v * v;
        return e;
    };
}

}  // namespace

TEST_CASE("linear layer computes x·Wᵀ + b") {
    Rng rng(1);
    LinearLayer layer(3, 2, rng);
    layer.weights = Matrix::from_rows({{1, 2, 3}, {-1, 0, 1}});
    layer.bias = Matrix::from_rows({{0.5}, {-0.5}});
    const Matrix x = Matrix::from_rows({{1, 1, 1}, {2, 0, -1}});
    const Matrix expected = Matrix::from_rows({{6.5, -0.5}, {-0.5, -3.5}});
    CHECK(layer.infer(x) == expected);
    CHECK(layer.forward(x, Mode::train) == expected);
    const Matrix g = Matrix::from_rows({{1, 0}, {0, 1}});
    const Matrix gx = layer.backward(g);
    CHECK(gx == Matrix::from_rows({{1, 2, 3}, {-1, 0, 1}}));
    CHECK(layer.grad_weights == Matrix::from_rows({{1, 1, 1}, {2, 0, -1}}));
    CHECK(layer.grad_bias == Matrix::from_rows({{1}, {1}}));
}

TEST_CASE("backward without a cached forward is a protocol error") {
    Rng rng(1);
    LinearLayer layer(3, 2, rng);
    CHECK_THROWS_AS(layer.backward(Matrix(1, 2)), Error);
    MlpModel model(4, HeadKind::custom(3), tiny(), rng);
    try {
        model.backward(Matrix(2, 3));
        FAIL("expected protocol error");
    } catch (const Error &e) {
        CHECK(e.kind() == ErrorKind::protocol);
    }
}

TEST_CASE("batch norm normalizes with batch statistics and tracks running ones") {
    BatchNormLayer bn(2, 0.1, 1e-5);
    const Matrix x = Matrix::from_rows({{1, 10}, {2, 20}, {3, 30}, {6, 0}});
    const Matrix y = bn.forward(x, Mode::train);
    for (std::size_t c = 0; c < 2; ++c) {
        double mean = 0;
        double sq = 0;
        for (std::size_t r = 0; r < 4; ++r) mean += x(r, c);
        mean /= 4;
        for (std::size_t r = 0; r < 4; ++r) sq += (x(r, c) - mean) * (x(r, c) - mean);
        const double biased = sq / 4;
        const double unbiased = sq / 3;
        for (std::size_t r = 0; r < 4; ++r) {
            CHECK(y(r, c) == doctest::Approx((x(r, c) - mean) / std::sqrt(biased + 1e-5)).epsilon(1e-12));
        }
        CHECK(bn.running_mean(c, 0) == doctest::Approx(0.1 * mean).epsilon(1e-14));
        CHECK(bn.running_var(c, 0) == doctest::Approx(0.9 + 0.1 * unbiased).epsilon(1e-14));
    }
    const Matrix e = bn.infer(x);
    CHECK(e(0, 0) == doctest::Approx((1 - bn.running_mean(0, 0)) / std::sqrt(bn.running_var(0, 0) + 1e-5)));
    CHECK_THROWS_AS(bn.forward(Matrix(1, 2), Mode::train), Error);
}

TEST_CASE("dropout masks and rescales in training only") {
    DropoutLayer d(0.5);
    Rng rng(4);
    const Matrix x(50, 40, 1.0);
    CHECK(d.forward(x, Mode::eval, rng) == x);
    const Matrix y = d.forward(x, Mode::train, rng);
    std::size_t zeros = 0;
    for (double v : y.values()) {
        CHECK((v == 0.0 || v == 2.0));
        zeros += v == 0.0 ? 1 : 0;
    }
    CHECK(std::abs(static_cast<double>(zeros) / 2000.0 - 0.5) < 0.05);
    const Matrix g = d.backward(Matrix(50, 40, 1.0));
    CHECK(g == y);
    CHECK_THROWS_AS(DropoutLayer(1.0), Error);
    CHECK_THROWS_AS(DropoutLayer(-0.1), Error);
}

TEST_CASE("leaky relu") {
    CHECK(leaky_relu(2.0, 0.01) == 2.0);
    CHECK(leaky_relu(-2.0, 0.01) == -0.02);
    CHECK(leaky_relu(0.0, 0.01) == 0.0);
}

TEST_CASE("head kinds") {
    CHECK(HeadKind::raf_db_7().width() == 7);
    CHECK(HeadKind::affectnet_8_va().width() == 10);
    CHECK(HeadKind::affectnet_8_va().class_count() == 8);
    CHECK(HeadKind::va_only_2().class_count() == 0);
    CHECK(HeadKind::parse("custom:5").width() == 5);
    CHECK(HeadKind::parse("affectnet_8_va") == HeadKind::affectnet_8_va());
    CHECK_THROWS_AS(HeadKind::parse("custom:0"), Error);
    CHECK_THROWS_AS(HeadKind::parse("softmax"), Error);
}

TEST_CASE("default classifier layout") {
    Rng rng(2);
    MlpOptions o;
    o.hidden_width = 32;  // keep the test light; depth and dropout stay at the defaults
    const MlpModel m = build_classifier(156, HeadKind::raf_db_7(), rng, o);
    REQUIRE(m.blocks().size() == 4);
    CHECK(m.blocks()[0].linear.in_features() == 156);
    CHECK(m.blocks()[0].dropout.rate() == 0.5);
    CHECK(m.blocks()[1].dropout.rate() == 0.4);
    CHECK(m.blocks()[2].dropout.rate() == 0.0);
    CHECK(m.blocks()[3].dropout.rate() == 0.0);
    CHECK(m.head().out_features() == 7);
    CHECK(MlpOptions{}.hidden_width == 2048);
}

TEST_CASE("predict matches an eval-mode forward and is thread-count independent") {
    Rng rng(3);
    MlpModel m(5, HeadKind::custom(3), tiny(8, 3), rng);
    const Matrix x = random_matrix(300, 5, rng);
    Matrix warm = random_matrix(20, 5, rng);
    m.forward(warm, Mode::train, rng);  // move running statistics off their defaults
    const Matrix p = m.predict(x);
    CHECK(m.forward(x, Mode::eval, rng) == p);
    CHECK(predict_parallel(m, x, 1) == p);
    CHECK(predict_parallel(m, x, 3) == p);
    CHECK_THROWS_AS(m.predict(Matrix(2, 4)), Error);
}

TEST_CASE("backward overwrites gradients") {
    Rng rng(5);
    MlpModel m(4, HeadKind::custom(2), tiny(), rng);
    const Matrix x = random_matrix(6, 4, rng);
    const Matrix out = m.forward(x, Mode::train, rng);
    m.backward(out);
    std::vector<Matrix> first;
    for (auto &p : m.parameters()) first.push_back(*p.grad);
    m.backward(out);
    const auto params = m.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) CHECK(*params[i].grad == first[i]);
}

TEST_CASE("analytic gradients match finite differences") {
    Rng rng(6);
    for (bool bn : {true, false}) {
        MlpOptions o = tiny(7, 3);
        o.batch_norm = bn;
        MlpModel m(5, HeadKind::custom(3), o, rng);
        Matrix x = random_matrix(9, 5, rng);
        for (int i = 0; i < 50 && m.min_abs_preactivation(x) < 1e-3; ++i) x = random_matrix(9, 5, rng);
        const auto before = snapshot(m);
        const auto r = grad_check(m, half_sum_of_squares(), x);
        CHECK(r.max_relative_error < 1e-5);
        CHECK(r.checked == [&] {
            std::size_t n = 0;
            for (auto &p : m.parameters()) n += p.value->size();
            return n;
        }());
        CHECK(snapshot(m) == before);
    }
}

TEST_CASE("gradient check refuses active dropout") {
    Rng rng(7);
    MlpOptions o = tiny();
    o.dropout = {0.3};
    MlpModel m(4, HeadKind::custom(2), o, rng);
    CHECK_THROWS_AS(grad_check(m, half_sum_of_squares(), random_matrix(4, 4, rng)), Error);
}

TEST_CASE("replace_head swaps only the output layer") {
    Rng rng(8);
    MlpModel m(4, HeadKind::affectnet_8_va(), tiny(), rng);
    const Matrix w0 = m.blocks()[0].linear.weights;
    m.replace_head(HeadKind::va_only_2(), rng);
    CHECK(m.output_width() == 2);
    CHECK(m.head().out_features() == 2);
    CHECK(m.blocks()[0].linear.weights == w0);
}

TEST_CASE("snapshot and restore") {
    Rng rng(9);
    MlpModel m(3, HeadKind::custom(2), tiny(), rng);
    const auto snap = snapshot(m);
    m.blocks()[0].linear.weights.fill(0.0);
    m.blocks()[0].batch_norm.running_var.fill(5.0);
    restore(m, snap);
    CHECK(snapshot(m) == snap);
    const auto names = m.state();
    CHECK(names.front().name == "block0.linear.weight");
    bool has_buffer = false;
    for (const auto &s : names) has_buffer = has_buffer || s.name == "block1.bn.running_var";
    CHECK(has_buffer);
}

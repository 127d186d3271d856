#include "doctest.h"

#include "fei3d/error.hpp"
#include "fei3d/fusion.hpp"
#include "fei3d/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

using namespace fei3d;
using namespace fei3d::fusion;

namespace {

Matrix random_distributions(std::size_t n, std::size_t c, Rng &rng) {
    Matrix m(n, c);
    for (std::size_t r = 0; r < n; ++r) {
        double s = 0;
        for (double &v : m.row(r)) s += (v = rng.uniform(0.01, 1.0));
        for (double &v : m.row(r)) v /= s;
    }
    return m;
}

Matrix permute_cols(const Matrix &m, const std::vector<std::size_t> &perm) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) out(r, perm[c]) = m(r, c);
    return out;
}

double accuracy(const Matrix &probs, const std::vector<int> &labels) {
    const auto p = metrics::argmax_rows(probs);
    double hit = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hit += p[i] == labels[i];
    return hit / static_cast<double>(labels.size());
}

ErrorKind kind_of(const auto &fn) {
    try {
        fn();
    } catch (const Error &e) {
        return e.kind();
    }
    FAIL("no error thrown");
    return ErrorKind::usage;
}

nn::MlpOptions tiny(std::size_t width) {
    nn::MlpOptions o;
    o.hidden_width = width;
    o.hidden_layers = 2;
    o.dropout = {};
    return o;
}

}  // namespace

TEST_CASE("weighted fusion worked example") {
    const Matrix a = Matrix::from_rows({{0.6, 0.4}});
    const Matrix b = Matrix::from_rows({{0.2, 0.8}});
    const auto f = late_fuse_class(a, b, FusionStrategy::weighted(0.2));
    CHECK(f(0, 0) == doctest::Approx(0.52).epsilon(1e-15));
    CHECK(f(0, 1) == doctest::Approx(0.48).epsilon(1e-15));
    const auto mean = late_fuse_class(a, b, FusionStrategy::mean());
    CHECK(mean(0, 0) == doctest::Approx(0.4));
    const auto mx = late_fuse_class(a, b, FusionStrategy::max());
    CHECK(mx(0, 0) == doctest::Approx(0.6 / 1.4));
    CHECK(mx(0, 1) == doctest::Approx(0.8 / 1.4));
    const auto mn = late_fuse_class(a, b, FusionStrategy::min());
    CHECK(mn(0, 0) == doctest::Approx(0.2 / 0.6));

    const auto va = late_fuse_va(Matrix::from_rows({{0.5, 0.0}}), Matrix::from_rows({{-0.5, 1.0}}),
                                 FusionStrategy::weighted(0.2));
    CHECK(va(0, 0) == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(va(0, 1) == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("fusion invariants on random inputs") {
    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t c = 2 + rng.below(7);
        const auto a = random_distributions(20, c, rng);
        const auto b = random_distributions(20, c, rng);
        CHECK(late_fuse_class(a, b, FusionStrategy::weighted(0.0)) == a);
        CHECK(late_fuse_class(a, b, FusionStrategy::weighted(1.0)) == b);
        for (auto s : {FusionStrategy::max(), FusionStrategy::min(), FusionStrategy::mean()}) {
            const auto fused = late_fuse_class(a, b, s);
            CHECK(max_abs_diff(late_fuse_class(a, a, s), a) <= 1e-15);
            CHECK(late_fuse_class(b, a, s) == fused);
            for (std::size_t r = 0; r < 20; ++r) {
                double sum = 0;
                for (double v : fused.row(r)) {
                    CHECK(v >= 0.0);
                    sum += v;
                }
                CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
            }
        }
        // swap symmetry holds exactly for dyadic weights
        const double w = static_cast<double>(rng.below(17)) / 16.0;
        CHECK(late_fuse_class(a, b, FusionStrategy::weighted(w)) ==
              late_fuse_class(b, a, FusionStrategy::weighted(1.0 - w)));

        // relabelling classes commutes with fusion
        std::vector<std::size_t> perm(c);
        for (std::size_t i = 0; i < c; ++i) perm[i] = i;
        rng.shuffle(perm);
        const auto s = FusionStrategy::weighted(rng.uniform01());
        const auto direct = metrics::argmax_rows(late_fuse_class(a, b, s));
        const auto permuted = metrics::argmax_rows(late_fuse_class(permute_cols(a, perm), permute_cols(b, perm), s));
        for (std::size_t r = 0; r < 20; ++r) CHECK(permuted[r] == static_cast<int>(perm[direct[r]]));
    }
}

TEST_CASE("min fusion without common support falls back to the mean") {
    const Matrix a = Matrix::from_rows({{1.0, 0.0}});
    const Matrix b = Matrix::from_rows({{0.0, 1.0}});
    const auto f = late_fuse_class(a, b, FusionStrategy::min());
    CHECK(f == Matrix::from_rows({{0.5, 0.5}}));
}

TEST_CASE("fusion input errors") {
    const Matrix a = Matrix::from_rows({{0.6, 0.4}});
    CHECK(kind_of([&] { late_fuse_class(a, Matrix::from_rows({{0.6, 0.5}}), FusionStrategy::mean()); }) ==
          ErrorKind::data);
    CHECK(kind_of([&] { late_fuse_class(a, Matrix::from_rows({{0.2, 0.3, 0.5}}), FusionStrategy::mean()); }) ==
          ErrorKind::shape);
    CHECK(kind_of([&] {
              late_fuse_va(Matrix::from_rows({{1.5, 0}}), Matrix::from_rows({{0, 0}}), FusionStrategy::mean());
          }) == ErrorKind::data);
    CHECK(kind_of([] { FusionStrategy::weighted(1.2); }) == ErrorKind::config);
    CHECK(kind_of([] { FusionStrategy::parse("weighted", std::nullopt); }) == ErrorKind::config);
    CHECK(kind_of([] { FusionStrategy::parse("product", std::nullopt); }) == ErrorKind::config);
    CHECK(FusionStrategy::parse("max", std::nullopt).kind == FusionKind::max);
    CHECK(FusionStrategy::parse("weighted", 0.3).weight == 0.3);
}

TEST_CASE("late_fuse joins on ids") {
    auto a = data::make_prediction_set("2d", {"x", "y", "z"}, Matrix::from_rows({{1, 0}, {0.5, 0.5}, {0, 1}}), {});
    auto b = data::make_prediction_set("3d", {"z", "q", "x"}, Matrix::from_rows({{0.5, 0.5}, {1, 0}, {0, 1}}), {});
    const auto r = late_fuse(a, b, FusionStrategy::weighted(0.5));
    CHECK(r.fused.ids == std::vector<std::string>{"x", "z"});
    CHECK(r.fused.probs == Matrix::from_rows({{0.5, 0.5}, {0.25, 0.75}}));
    CHECK(r.alignment.dropped_a == 1);
    CHECK(r.alignment.dropped_b == 1);
    CHECK(r.fused.source.find("weighted") != std::string::npos);
}

TEST_CASE("grid parsing") {
    const auto g = parse_grid("0:1:0.05");
    REQUIRE(g.size() == 21);
    CHECK(g.front() == 0.0);
    CHECK(g.back() == 1.0);
    CHECK(g[3] == doctest::Approx(0.15));
    CHECK(parse_grid("0.1,0.5,0.9") == std::vector<double>{0.1, 0.5, 0.9});
    CHECK(parse_grid("0:1:0.5") == std::vector<double>{0, 0.5, 1});
    CHECK_THROWS_AS(parse_grid("0:2:0.5"), Error);
    CHECK_THROWS_AS(parse_grid("0:1:0"), Error);
    CHECK_THROWS_AS(parse_grid("a,b"), Error);
}

TEST_CASE("weight sweep matches brute force") {
    Rng rng(2);
    const std::size_t n = 150;
    const auto a = random_distributions(n, 7, rng);
    const auto b = random_distributions(n, 7, rng);
    std::vector<int> labels(n);
    for (auto &y : labels) y = static_cast<int>(rng.below(7));
    const auto grid = parse_grid("0:1:0.05");
    const auto r = sweep_fusion_weight(a, b, labels, grid);
    REQUIRE(r.table.size() == grid.size());
    double best = -1;
    double best_w = -1;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double acc = accuracy(late_fuse_class(a, b, FusionStrategy::weighted(grid[i])), labels);
        CHECK(r.table[i].weight == grid[i]);
        CHECK(r.table[i].value == acc);
        if (acc > best) {
            best = acc;
            best_w = grid[i];
        }
    }
    CHECK(r.best_value == best);
    CHECK(r.best_weight == best_w);
    // the best point never loses to either endpoint
    CHECK(r.best_value >= accuracy(a, labels));
    CHECK(r.best_value >= accuracy(b, labels));
}

TEST_CASE("sweep ties go to the smaller weight") {
    const Matrix a = Matrix::from_rows({{0.9, 0.1}, {0.2, 0.8}});
    const std::vector<int> labels{0, 1};
    const auto r = sweep_fusion_weight(a, a, labels, std::vector<double>{0.0, 0.5, 1.0});
    CHECK(r.best_weight == 0.0);
    CHECK(r.best_value == 1.0);
}

TEST_CASE("valence/arousal sweep") {
    Rng rng(3);
    const std::size_t n = 100;
    Matrix t(n, 2), a(n, 2), b(n, 2);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t d = 0; d < 2; ++d) {
            t(i, d) = rng.uniform(-0.8, 0.8);
            a(i, d) = std::clamp(t(i, d) + 0.2 * rng.normal(), -1.0, 1.0);
            b(i, d) = std::clamp(t(i, d) + 0.2 * rng.normal(), -1.0, 1.0);
        }
    }
    const auto grid = parse_grid("0:1:0.1");
    const auto rmse = sweep_fusion_weight_va(a, b, t, grid, SweepObjective::rmse);
    const auto ccc = sweep_fusion_weight_va(a, b, t, grid, SweepObjective::ccc);
    CHECK_FALSE(maximizes(SweepObjective::rmse));
    CHECK(maximizes(SweepObjective::ccc));
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const auto rep = metrics::regression_report(late_fuse_va(a, b, FusionStrategy::weighted(grid[i])), t);
        CHECK(rmse.table[i].value == rep.mean.rmse);
        CHECK(ccc.table[i].value == rep.mean.ccc);
        CHECK(rmse.best_value <= rep.mean.rmse);
        CHECK(ccc.best_value >= rep.mean.ccc);
    }
    // two equally noisy sources average best near the middle
    CHECK(rmse.best_weight > 0.0);
    CHECK(rmse.best_weight < 1.0);
    CHECK(parse_sweep_objective("rmse") == SweepObjective::rmse);
    CHECK_THROWS_AS(parse_sweep_objective("f1"), Error);
}

TEST_CASE("intermediate model with a zero projection ignores the 3D input") {
    Rng rng(4);
    IntermediateFusionModel m(3, 5, 4, nn::HeadKind::custom(2), tiny(6), rng);
    m.projection.weights.fill(0.0);
    m.projection.bias.fill(0.0);
    Matrix x(6, 8);
    for (double &v : x.values()) v = rng.normal();
    Matrix y = x;
    for (std::size_t r = 0; r < 6; ++r)
        for (std::size_t c = 3; c < 8; ++c) y(r, c) = rng.normal();
    CHECK(m.predict(x) == m.predict(y));
    // and equals the classifier on [feat2d ‖ 0]
    Matrix padded(6, 7, 0.0);
    for (std::size_t r = 0; r < 6; ++r)
        for (std::size_t c = 0; c < 3; ++c) padded(r, c) = x(r, c);
    CHECK(m.predict(x) == m.classifier.predict(padded));
}

TEST_CASE("intermediate model with an identity projection is the plain classifier") {
    Rng rng(5);
    IntermediateFusionModel m(2, 3, 3, nn::HeadKind::custom(3), tiny(5), rng);
    m.projection.weights = Matrix::identity(3);
    m.projection.bias.fill(0.0);
    Matrix x(4, 5);
    for (double &v : x.values()) v = rng.normal();
    CHECK(max_abs_diff(m.predict(x), m.classifier.predict(x)) <= 1e-15);
    CHECK(m.input_dim() == 5);
    CHECK(m.output_width() == 3);
    CHECK(m.parameters().front().name == "proj.weight");
}

TEST_CASE("intermediate forward rejects misaligned ids") {
    Rng rng(6);
    IntermediateFusionModel m(2, 2, 2, nn::HeadKind::custom(2), tiny(4), rng);
    const std::vector<std::string> a{"s1", "s2"};
    const std::vector<std::string> b{"s1", "s3"};
    try {
        intermediate_forward(m, a, Matrix(2, 2), b, Matrix(2, 2), nn::Mode::eval, rng);
        FAIL("expected alignment error");
    } catch (const Error &e) {
        CHECK(e.kind() == ErrorKind::alignment);
        const std::string msg = e.what();
        CHECK(msg.find("s2") != std::string::npos);
        CHECK(msg.find("s3") != std::string::npos);
    }
    const auto ok = intermediate_forward(m, a, Matrix(2, 2, 0.5), a, Matrix(2, 2, 0.1), nn::Mode::eval, rng);
    CHECK(ok.rows() == 2);
}

TEST_CASE("intermediate model gradients") {
    Rng rng(7);
    IntermediateFusionModel m(3, 4, 3, nn::HeadKind::custom(2), tiny(5), rng);
    Matrix x(8, 7);
    for (double &v : x.values()) v = rng.normal();
    const auto r = nn::grad_check(
        m,
        [](const Matrix &out) {
            nn::LossEval e;
            e.grad = out;
            for (double v : out.values()) e.loss += 0.5 * v * v;
            return e;
        },
        x);
    CHECK(r.max_relative_error < 1e-5);
    CHECK(r.checked > 0);
}

TEST_CASE("fusion learns a signal split across the two sources") {
    // label = xor of the signs of one 2D and one 3D feature
    auto make = [](std::size_t n, std::uint64_t seed) {
        Rng rng(seed);
        training::TrainingData d;
        d.features = Matrix(n, 4);
        for (std::size_t i = 0; i < n; ++i) {
            for (double &v : d.features.row(i)) v = rng.uniform(-1, 1);
            d.targets.labels.push_back((d.features(i, 0) > 0) != (d.features(i, 2) > 0) ? 1 : 0);
            d.ids.push_back(std::to_string(i));
        }
        return d;
    };
    const auto train = make(600, 1);
    const auto val = make(300, 2);
    training::TrainConfig cfg;
    cfg.batch_size = 32;
    cfg.max_epochs = 60;
    cfg.patience = 10;
    cfg.base_lr = 1e-3;
    cfg.max_lr = 2e-2;
    const training::Objective obj(training::LossKind::cross_entropy, nn::HeadKind::custom(2));

    Rng rng(8);
    IntermediateFusionModel fused(2, 2, 4, nn::HeadKind::custom(2), tiny(16), rng);
    training::fit(fused, train, val, obj, cfg);
    const double fused_acc = accuracy(fused.predict(val.features), val.targets.labels);

    auto only_2d = [](const training::TrainingData &d) {
        auto out = d;
        out.features = slice_cols(d.features, 0, 2);
        return out;
    };
    nn::MlpModel single(2, nn::HeadKind::custom(2), tiny(16), rng);
    training::fit(single, only_2d(train), only_2d(val), obj, cfg);
    const double single_acc = accuracy(single.predict(only_2d(val).features), val.targets.labels);

    CHECK(fused_acc > 0.85);
    CHECK(single_acc < 0.65);
}

TEST_CASE("fusion checkpoint round trip") {
    Rng rng(9);
    IntermediateFusionModel m(3, 4, 2, nn::HeadKind::raf_db_7(), tiny(5), rng);
    const auto path = std::filesystem::temp_directory_path() / "fei3d_fusion.ckpt";
    training::CheckpointMeta meta;
    meta.epoch = 2;
    save_checkpoint(m, meta, path);
    const auto loaded = load_fusion_checkpoint(path);
    CHECK(nn::snapshot(loaded.model) == nn::snapshot(m));
    CHECK(loaded.model.proj_dim() == 2);
    CHECK(loaded.model.dim_2d() == 3);
    CHECK(loaded.meta.epoch == 2);
    CHECK(describe(loaded.model) == describe(m));
    CHECK_THROWS_AS(training::load_checkpoint(path), Error);
    std::filesystem::remove(path);
}

TEST_CASE("joining 2D features onto a dataset") {
    data::FeatureSet fs;
    fs.ids = {"b", "a"};
    fs.features = Matrix::from_rows({{2, 2}, {1, 1}});
    data::ParamDataset ds;
    ds.kind = data::ParamKind::custom(1);
    ds.ids = {"a", "b"};
    ds.params = Matrix::from_rows({{10}, {20}});
    ds.labels = {0, 1};
    const auto t = join_features(fs, ds);
    CHECK(t.features == Matrix::from_rows({{1, 1, 10}, {2, 2, 20}}));
    CHECK(t.targets.labels == ds.labels);
    ds.ids = {"a", "c"};
    CHECK(kind_of([&] { join_features(fs, ds); }) == ErrorKind::alignment);
}

#include "doctest.h"

#include "fei3d/data.hpp"
#include "fei3d/error.hpp"
#include "fei3d/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>

using namespace fei3d;
using namespace fei3d::data;

namespace {

ParamDataset small_dataset(bool with_va) {
    ParamDataset ds;
    ds.kind = ParamKind::custom(3);
    ds.label_space = LabelSpace::raf7;
    ds.ids = {"a", "b", "c"};
    ds.params = Matrix::from_rows({{0.1, -2.5, 1e-17}, {3.0, 0.0, -0.0}, {1.0 / 3, 2.0 / 3, 1e300}});
    ds.labels = {0, 6, 3};
    if (with_va) ds.va = Matrix::from_rows({{0.5, -0.25}, {-1.0, 1.0}, {0.125, 1.0 / 7}});
    return ds;
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

std::string message_of(const auto &fn) {
    try {
        fn();
    } catch (const Error &e) {
        return e.what();
    }
    return {};
}

const std::string header = "# fei3d-dataset label_space=affect8\nid,label,valence,arousal,p000,p001\n";

}  // namespace

TEST_CASE("parameter kinds") {
    CHECK(ParamKind::parse("emoca_short").dim() == 156);
    CHECK(ParamKind::parse("emoca_full").dim() == 334);
    CHECK(ParamKind::parse("smirk_short").dim() == 353);
    CHECK(ParamKind::parse("smirk_full").dim() == 358);
    CHECK(ParamKind::parse("custom:12") == ParamKind::custom(12));
    CHECK(ParamKind::parse(ParamKind::smirk_full().name()) == ParamKind::smirk_full());
    CHECK(kind_of([] { ParamKind::parse("flame"); }) == ErrorKind::config);
    CHECK(class_count(LabelSpace::raf7) == 7);
    CHECK(class_count(LabelSpace::affect8) == 8);
}

TEST_CASE("dataset csv and binary round trips are exact") {
    for (bool va : {false, true}) {
        const auto ds = small_dataset(va);
        const auto csv = param_dataset_csv(ds);
        const auto back = parse_param_dataset_csv(csv, ParamKind::custom(3));
        CHECK(back.ids == ds.ids);
        CHECK(back.labels == ds.labels);
        CHECK(back.va == ds.va);
        CHECK(back.label_space == ds.label_space);
        for (std::size_t i = 0; i < ds.params.size(); ++i)
            CHECK(back.params.values()[i] == ds.params.values()[i]);
        CHECK(param_dataset_csv(back) == csv);

        const auto bin = parse_param_dataset_binary(param_dataset_binary(ds), std::nullopt);
        CHECK(bin.params == ds.params);
        CHECK(bin.va == ds.va);
        CHECK(bin.ids == ds.ids);
    }
    const auto dir = std::filesystem::temp_directory_path();
    const auto ds = small_dataset(true);
    save_param_dataset(ds, dir / "fei3d_ds.bin");
    save_param_dataset(ds, dir / "fei3d_ds.csv");
    CHECK(load_param_dataset(dir / "fei3d_ds.bin", std::nullopt).params == ds.params);
    CHECK(load_param_dataset(dir / "fei3d_ds.csv", std::nullopt).va == ds.va);
    std::filesystem::remove(dir / "fei3d_ds.bin");
    std::filesystem::remove(dir / "fei3d_ds.csv");
}

TEST_CASE("dataset parse errors") {
    const auto csv = param_dataset_csv(small_dataset(false));
    CHECK(kind_of([&] { parse_param_dataset_csv(csv, ParamKind::emoca_short()); }) == ErrorKind::data);
    CHECK(message_of([&] { parse_param_dataset_csv(csv, ParamKind::emoca_short()); }).find("156") !=
          std::string::npos);

    const auto out_of_range = header + "x,1,0.2,0.1,0,0\ny,2,1.5,0.0,0,0\n";
    const auto msg = message_of([&] { parse_param_dataset_csv(out_of_range, std::nullopt); });
    CHECK(msg.find("line 4") != std::string::npos);
    CHECK(msg.find("valence") != std::string::npos);

    CHECK(kind_of([&] { parse_param_dataset_csv(header + "x,1,,,0,0\nx,2,,,0,0\n", std::nullopt); }) ==
          ErrorKind::data);
    CHECK(kind_of([&] { parse_param_dataset_csv(header + "x,1,0.1,0.1,0,0\ny,2,,,0,0\n", std::nullopt); }) ==
          ErrorKind::data);
    CHECK(kind_of([&] { parse_param_dataset_csv(header + "x,8,,,0,0\n", std::nullopt); }) == ErrorKind::data);
    CHECK(message_of([&] { parse_param_dataset_csv(header + "x,1,,,0,zz\n", std::nullopt); }).find("line 3") !=
          std::string::npos);
    CHECK(kind_of([&] { parse_param_dataset_csv(header + "x,1,,,0\n", std::nullopt); }) == ErrorKind::format);

    auto bytes = param_dataset_binary(small_dataset(true));
    bytes.pop_back();
    CHECK(kind_of([&] { parse_param_dataset_binary(bytes, std::nullopt); }) == ErrorKind::format);
}

TEST_CASE("class frequencies and training conversion") {
    const auto ds = small_dataset(true);
    const auto f = class_frequencies(ds);
    CHECK(f.size() == 7);
    CHECK(f[0] == 1);
    CHECK(f[6] == 1);
    CHECK(f[1] == 0);
    const auto t = to_training_data(ds);
    CHECK(t.features == ds.params);
    CHECK(t.targets.labels == ds.labels);
    CHECK(t.targets.va == ds.va);
}

TEST_CASE("prediction files") {
    const auto ps = parse_predictions_csv("# fei3d-predictions source=2d\nid,p0,p1\na,0.5,0.5\nb,0.25,0.75\n", false, "p");
    CHECK(ps.source == "2d");
    CHECK(ps.probs == Matrix::from_rows({{0.5, 0.5}, {0.25, 0.75}}));
    CHECK(*ps.find("b") == 1);
    CHECK_FALSE(ps.find("z").has_value());

    const auto bad = message_of([] { parse_predictions_csv("id,p0,p1\na,0.8,0.1\n", false, "p"); });
    CHECK(bad.find("sum") != std::string::npos);
    CHECK(bad.find("line 2") != std::string::npos);

    const auto logits = parse_predictions_csv("id,p0,p1\na,0,0\nb,2,1\n", true, "p");
    CHECK(logits.probs(0, 0) == 0.5);
    CHECK(logits.probs(1, 0) == doctest::Approx(1 / (1 + std::exp(-1.0))));

    const auto tiny_off = parse_predictions_csv("id,p0,p1\na,0.5000004,0.5\n", false, "p");
    CHECK(tiny_off.probs(0, 0) + tiny_off.probs(0, 1) == doctest::Approx(1.0).epsilon(1e-15));

    const auto va = parse_predictions_csv("id,valence,arousal\na,0.1,-0.2\n", false, "p");
    CHECK_FALSE(va.has_probs());
    CHECK(va.va(0, 1) == -0.2);
    CHECK(kind_of([] { parse_predictions_csv("id,score\na,1\n", false, "p"); }) == ErrorKind::format);

    const auto j = parse_predictions_jsonl(
        "{\"id\":\"a\",\"probs\":[0.2,0.8],\"valence\":0.1,\"arousal\":0.3}\n"
        "{\"id\":\"b\",\"probs\":[1,0],\"valence\":0,\"arousal\":0}\n",
        false, "j");
    CHECK(j.size() == 2);
    CHECK(j.probs(0, 1) == 0.8);
    CHECK(j.va(0, 1) == 0.3);

    const auto round = parse_predictions_csv(predictions_csv(j), false, "r");
    CHECK(round.probs == j.probs);
    CHECK(round.va == j.va);
    CHECK(round.ids == j.ids);
}

TEST_CASE("alignment") {
    const std::vector<std::string> a{"x", "y", "z", "w"};
    const std::vector<std::string> b{"w", "q", "x"};
    const auto r = align(a, b);
    REQUIRE(r.pairs.size() == 2);
    CHECK(r.pairs[0] == std::pair<std::size_t, std::size_t>{0, 2});
    CHECK(r.pairs[1] == std::pair<std::size_t, std::size_t>{3, 0});
    CHECK(r.dropped_a == 2);
    CHECK(r.dropped_b == 1);
    CHECK(kind_of([&] { align(a, std::vector<std::string>{"n"}); }) == ErrorKind::alignment);
}

TEST_CASE("features csv round trip") {
    FeatureSet fs;
    fs.source = "vit";
    fs.ids = {"a", "b"};
    fs.features = Matrix::from_rows({{0.1, 2}, {-3, 1e-9}});
    const auto back = parse_features_csv(features_csv(fs), "f");
    CHECK(back.source == "vit");
    CHECK(back.ids == fs.ids);
    CHECK(back.features == fs.features);
}

TEST_CASE("synthetic centers are orthogonal and 2·margin apart") {
    SynthSpec spec;
    spec.classes = 5;
    spec.dim = 20;
    spec.margin = 3.0;
    Rng rng(1);
    const auto m = make_synth_model(spec, rng);
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = i + 1; j < 5; ++j) {
            double d2 = 0;
            double dot = 0;
            for (std::size_t k = 0; k < 20; ++k) {
                d2 += (m.centers(i, k) - m.centers(j, k)) * (m.centers(i, k) - m.centers(j, k));
                dot += m.centers(i, k) * m.centers(j, k);
            }
            CHECK(std::sqrt(d2) == doctest::Approx(6.0).epsilon(1e-12));
            CHECK(std::abs(dot) < 1e-10);
        }
    }
    spec.classes = 30;
    CHECK_THROWS_AS(spec.validate(), Error);
}

TEST_CASE("noise-free synthetic data is nearest-centroid separable") {
    SynthSpec spec;
    spec.classes = 8;
    spec.dim = 16;
    spec.noise = 0.0;
    Rng rng(2);
    const auto m = make_synth_model(spec, rng);
    const auto ds = sample_synth(m, 80, rng, "t");
    CHECK(ds.ids.front() == "t000000");
    for (std::size_t i = 0; i < ds.size(); ++i) {
        CHECK(ds.labels[i] == static_cast<int>(i % 8));
        std::size_t best = 0;
        double best_d = 1e300;
        for (std::size_t c = 0; c < 8; ++c) {
            double d = 0;
            for (std::size_t k = 0; k < 16; ++k) d += std::pow(ds.params(i, k) - m.centers(c, k), 2);
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        CHECK(static_cast<int>(best) == ds.labels[i]);
    }
}

TEST_CASE("synthetic generation is deterministic") {
    SynthSpec spec;
    spec.dim = 10;
    spec.with_va = true;
    Rng a(5), b(5);
    CHECK(param_dataset_csv(synth_generate(spec, 50, a)) == param_dataset_csv(synth_generate(spec, 50, b)));
    Rng c(6);
    Rng d(5);
    CHECK(param_dataset_csv(synth_generate(spec, 50, c)) != param_dataset_csv(synth_generate(spec, 50, d)));
}

TEST_CASE("synthetic valence/arousal is a linear function of the parameters") {
    SynthSpec spec;
    spec.classes = 4;
    spec.dim = 6;
    spec.with_va = true;
    spec.va_noise = 0.0;
    Rng rng(7);
    const auto m = make_synth_model(spec, rng);
    const auto ds = sample_synth(m, 2000, rng, "v");
    REQUIRE(ds.has_va());

    // Least-squares fit of each VA column on [x, 1] via normal equations.
    const std::size_t p = 7;
    for (std::size_t d = 0; d < 2; ++d) {
        std::vector<std::vector<double>> a(p, std::vector<double>(p + 1, 0.0));
        for (std::size_t i = 0; i < ds.size(); ++i) {
            std::vector<double> x(ds.params.row(i).begin(), ds.params.row(i).end());
            x.push_back(1.0);
            for (std::size_t r = 0; r < p; ++r) {
                for (std::size_t c = 0; c < p; ++c) a[r][c] += x[r] * x[c];
                a[r][p] += x[r] * ds.va(i, d);
            }
        }
        for (std::size_t col = 0; col < p; ++col) {
            std::size_t piv = col;
            for (std::size_t r = col + 1; r < p; ++r)
                if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
            std::swap(a[col], a[piv]);
            for (std::size_t r = 0; r < p; ++r) {
                if (r == col) continue;
                const double f = a[r][col] / a[col][col];
                for (std::size_t c = col; c <= p; ++c) a[r][c] -= f * a[col][c];
            }
        }
        std::vector<double> truth;
        std::vector<double> pred;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            double y = a[p - 1][p] / a[p - 1][p - 1];
            for (std::size_t k = 0; k < 6; ++k) y += ds.params(i, k) * a[k][p] / a[k][k];
            pred.push_back(y);
            truth.push_back(ds.va(i, d));
        }
        Matrix pm(ds.size(), 2), tm(ds.size(), 2);
        for (std::size_t i = 0; i < ds.size(); ++i) {
            pm(i, 0) = pm(i, 1) = pred[i];
            tm(i, 0) = tm(i, 1) = truth[i];
        }
        CHECK(metrics::regression_report(pm, tm).mean.ccc > 0.99);
    }
}

TEST_CASE("simulated predictors hit their accuracy and are calibrated") {
    SynthSpec spec;
    spec.dim = 8;
    spec.with_va = true;
    Rng rng(8);
    const auto ds = synth_generate(spec, 20000, rng);
    const auto ps = simulate_predictor(ds, 0.8, 0.1, rng, "sim");
    CHECK(ps.source == "sim");
    CHECK(ps.ids == ds.ids);
    const auto pred = metrics::argmax_rows(ps.probs);
    double correct = 0;
    double confidence = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        correct += pred[i] == ds.labels[i];
        confidence += ps.probs(i, static_cast<std::size_t>(pred[i]));
        double s = 0;
        for (double v : ps.probs.row(i)) s += v;
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(std::abs(ps.va(i, 0)) <= 1.0);
    }
    CHECK(correct / 20000 == doctest::Approx(0.8).epsilon(0.02));
    CHECK(confidence / 20000 == doctest::Approx(correct / 20000).epsilon(0.02));
}

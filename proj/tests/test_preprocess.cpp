#include "fixtures.hpp"

#include "ecgr/pipeline.hpp"
#include "ecgr/preprocess.hpp"

#include <doctest.h>

using namespace ecgr;

namespace {

Record synth_prepared(ClassLabel c, std::uint64_t seed, double dur = 20.0) {
    return prepare_record(synth_record(c, seed, dur));
}

}  // namespace

TEST_CASE("baseline_filter examples") {
    Record c;
    c.samples.assign(900, 0.37);
    for (double v : baseline_filter(c).samples) CHECK(v == 0.0);

    Record one;
    one.samples = {0.25};
    CHECK(baseline_filter(one).samples == one.samples);
}

TEST_CASE("baseline_filter removes linear drift") {
    const auto r = synth_record(ClassLabel::Normal, 21, 20.0);
    Record drift = r;
    for (std::size_t i = 0; i < drift.samples.size(); ++i) drift.samples[i] += 0.5 * static_cast<double>(i) / r.fs;
    const auto a = baseline_filter(r), b = baseline_filter(drift);
    double worst = 0.0;
    for (std::size_t i = static_cast<std::size_t>(r.fs); i + static_cast<std::size_t>(r.fs) < r.samples.size(); ++i)
        worst = std::max(worst, std::fabs(a.samples[i] - b.samples[i]));
    // Measured envelope; waves shift the 600 ms median off the window centre.
    CHECK(worst <= 0.2);
}

TEST_CASE("baseline_filter is close to idempotent") {
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
        const auto once = baseline_filter(synth_record(kAllClasses[seed % 3], seed, 15.0));
        const auto twice = baseline_filter(once);
        double worst = 0.0;
        for (std::size_t i = 0; i < once.samples.size(); ++i)
            worst = std::max(worst, std::fabs(once.samples[i] - twice.samples[i]));
        // Measured envelope of the residual a second pass removes.
        CHECK(worst <= 0.3);
    }
}

TEST_CASE("inversion features of upright synthetic N") {
    const auto r = synth_prepared(ClassLabel::Normal, 5);
    const auto beats = conduction_evidence(r);
    REQUIRE(beats.size() > 10);
    const auto f = inversion_features(r, beats);
    CHECK(f.v[0] == 0.0);
    CHECK(f.v[1] == 0.0);
    const auto g = inversion_features(negate(r), beats);
    CHECK(g.v[0] == 1.0);
    CHECK_THROWS_AS(inversion_features(r, {}), EvidenceError);
}

TEST_CASE("inversion features under negation follow the documented map") {
    for (std::uint64_t seed = 1; seed <= 12; ++seed) {
        const auto r = synth_prepared(kAllClasses[seed % 4], seed);
        const auto beats = conduction_evidence(r);
        if (beats.empty()) continue;
        const auto f = inversion_features(r, beats).v;
        const auto g = inversion_features(negate(r), beats).v;
        CAPTURE(seed);
        const double tol = 1e-9;
        CHECK(g[0] == doctest::Approx(1 - f[0]).epsilon(tol));
        CHECK(g[1] == doctest::Approx(1 - f[1]).epsilon(tol));
        CHECK(g[2] == doctest::Approx(1 - f[2]).epsilon(tol));
        CHECK(g[3] == doctest::Approx(-f[3]).epsilon(tol));
        CHECK(g[4] == doctest::Approx(-f[4]).epsilon(tol));
        CHECK(g[5] == doctest::Approx(-f[5]).epsilon(tol));
        CHECK(g[6] == doctest::Approx(-f[6]).epsilon(tol));
        CHECK(g[7] == doctest::Approx(-f[7]).epsilon(tol));
        CHECK(g[8] == doctest::Approx(f[8]).epsilon(tol));
        CHECK(g[9] == doctest::Approx(-f[10]).epsilon(tol));
        CHECK(g[10] == doctest::Approx(-f[9]).epsilon(tol));
        CHECK(g[11] == doctest::Approx(1 - f[11]).epsilon(tol));
        CHECK(g[12] == doctest::Approx(-f[12]).epsilon(tol));
        CHECK(g[13] == doctest::Approx(f[13]).epsilon(tol));
    }
}

TEST_CASE("detect_inversion arithmetic") {
    LogRegModel zero;
    const InversionFeatures f{};
    const auto d = detect_inversion(zero, f);
    CHECK(d.probability == 0.5);
    CHECK_FALSE(d.inverted);

    LogRegModel m;
    m.bias = std::log(3.0);
    CHECK(detect_inversion(m, f).probability == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(detect_inversion(m, f).inverted);
}

TEST_CASE("detect_inversion is monotone in the decision value") {
    LogRegModel m;
    m.weights[0] = 1.0;
    double prev = -1.0;
    for (double z = -40.0; z <= 40.0; z += 0.25) {
        InversionFeatures f{};
        f.v[0] = z;
        const double p = detect_inversion(m, f).probability;
        CHECK(p >= prev);
        prev = p;
    }
}

TEST_CASE("logistic regression on an embedded 1-D separable toy") {
    std::vector<InversionFeatures> X;
    std::vector<int> y;
    for (int i = 0; i < 20; ++i) {
        InversionFeatures f{};
        f.v[3] = (i < 10 ? -1.0 : 1.0) * (0.5 + 0.1 * i);
        X.push_back(f);
        y.push_back(i < 10 ? 0 : 1);
    }
    const auto fit = train_logreg(X, y).model;
    for (std::size_t i = 0; i < X.size(); ++i) CHECK((fit.decision(X[i]) > 0) == (y[i] == 1));

    std::vector<int> flipped;
    for (int v : y) flipped.push_back(1 - v);
    const auto neg = train_logreg(X, flipped).model;
    for (const auto& x : X) CHECK(neg.decision(x) == doctest::Approx(-fit.decision(x)).epsilon(1e-4));

    LogRegOptions heavy;
    heavy.l2 = 1e6;
    std::vector<int> skewed = y;
    skewed[0] = 1;  // prior 11/20
    const auto flat = train_logreg(X, skewed, heavy).model;
    for (double w : flat.weights) CHECK(std::fabs(w) < 1e-4);
    for (const auto& x : X) CHECK(detect_inversion(flat, x).probability == doctest::Approx(0.55).epsilon(1e-4));
}

TEST_CASE("logistic regression errors and serialisation") {
    std::vector<InversionFeatures> X(3);
    CHECK_THROWS_AS(train_logreg(X, std::vector<int>{0, 0, 0}), DegenerateDataError);
    CHECK_THROWS_AS(train_logreg(X, std::vector<int>{0, 1}), ShapeError);
    LogRegModel m;
    m.weights[4] = -2.5;
    m.bias = 0.125;
    const auto back = logreg_from_json(logreg_to_json(m));
    CHECK(back.weights == m.weights);
    CHECK(back.bias == m.bias);
    CHECK_THROWS_AS(logreg_from_json("{"), FormatError);
}

TEST_CASE("inversion detector generalises on synthetic pairs") {
    PipelineConfig cfg;
    std::vector<Record> train, test;
    for (std::uint64_t i = 0; i < 48; ++i) train.push_back(synth_prepared(kAllClasses[i % 3], 1000 + i, 12.0));
    for (std::uint64_t i = 0; i < 30; ++i) test.push_back(synth_prepared(kAllClasses[i % 3], 5000 + i, 12.0));
    const auto m = train_inversion_model(train, cfg);
    int right = 0, total = 0;
    for (const auto& r : test) {
        const auto pair = inversion_pair(r, cfg.conduction);
        if (!pair) continue;
        right += !detect_inversion(m, pair->first).inverted;
        right += detect_inversion(m, pair->second).inverted;
        total += 2;
    }
    REQUIRE(total >= 50);
    CHECK(static_cast<double>(right) / total >= 0.95);
}

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "eedn/math.hpp"
#include "eedn/uncertainty.hpp"

using namespace eedn;
namespace fs = std::filesystem;

namespace {

double mean_nll_at(const std::vector<Vec>& logits, const std::vector<std::size_t>& labels,
                   double temperature) {
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        Vec scaled = logits[i];
        for (auto& v : scaled) v /= temperature;
        total += cross_entropy(softmax(scaled), labels[i]);
    }
    return total / static_cast<double>(logits.size());
}

// One-gate validation set with fixed scores at the true label.
std::vector<ValPrediction> single_gate_valset(const Vec& true_label_probs) {
    std::vector<ValPrediction> valset;
    for (double p : true_label_probs) {
        ValPrediction v;
        v.exit_layer = 1;
        v.label = 0;
        v.probs = {{p, 1.0 - p}};
        valset.push_back(v);
    }
    return valset;
}

} // namespace

TEST_CASE("temperature fitting improves NLL") {
    Rng rng(2);
    std::vector<Vec> logits;
    std::vector<std::size_t> labels;
    // overconfident model: large-margin logits with 25% label faults
    for (int i = 0; i < 200; ++i) {
        const std::size_t y = rng.uniform_int(4);
        Vec l(4);
        for (auto& v : l) v = rng.normal(0.0, 0.5);
        l[y] += 8.0;
        labels.push_back(rng.uniform() < 0.25 ? rng.uniform_int(4) : y);
        logits.push_back(l);
    }
    const CalibrationResult fit = fit_temperature(logits, labels);
    CHECK(fit.temperature > 1.0);
    CHECK(mean_nll_at(logits, labels, fit.temperature) <= mean_nll_at(logits, labels, 1.0));

    // scaling the logits rescales the fitted temperature
    std::vector<Vec> doubled = logits;
    for (auto& l : doubled) {
        for (auto& v : l) v *= 2.0;
    }
    const CalibrationResult fit2 = fit_temperature(doubled, labels);
    CHECK(fit2.temperature == doctest::Approx(2.0 * fit.temperature).epsilon(0.01));
}

TEST_CASE("temperature fitting hits the boundary on a monotone objective") {
    // single wrong prediction: NLL decreases in T all the way to the cap
    const CalibrationResult fit = fit_temperature({{1.0, 0.0}}, {1});
    CHECK(fit.temperature > 9.99);
    CHECK(fit.temperature <= 10.0);
}

TEST_CASE("temperature fitting edge cases") {
    CHECK(fit_temperature({}, {}).temperature == 1.0);
    CHECK_THROWS_AS(fit_temperature({{1.0, 0.0}}, {}), std::invalid_argument);
}

TEST_CASE("temperature scaling never changes the argmax") {
    Rng rng(3);
    for (int trial = 0; trial < 500; ++trial) {
        Vec logits(2 + rng.uniform_int(6));
        for (auto& v : logits) v = rng.uniform(-5.0, 5.0);
        const auto base = std::distance(logits.begin(),
                                        std::max_element(logits.begin(), logits.end()));
        for (double t : {0.05, 0.3, 1.0, 2.5, 10.0}) {
            Vec scaled = logits;
            for (auto& v : scaled) v /= t;
            const Vec p = softmax(scaled);
            CHECK(std::distance(p.begin(), std::max_element(p.begin(), p.end())) == base);
        }
    }
}

TEST_CASE("ece fixtures") {
    SUBCASE("perfect confidence, perfect accuracy") {
        CHECK(ece({1.0, 1.0, 1.0}, {true, true, true}, 1) == 0.0);
    }
    SUBCASE("single bin arithmetic") {
        const Vec p(10, 0.9);
        std::vector<bool> correct(10, false);
        for (int i = 0; i < 5; ++i) correct[i] = true;
        CHECK(ece(p, correct, 1) == doctest::Approx(0.4).epsilon(1e-14));
    }
    SUBCASE("input validation") {
        CHECK_THROWS_AS(ece({}, {}, 10), std::invalid_argument);
        CHECK_THROWS_AS(ece({0.5}, {true, false}, 10), std::invalid_argument);
        CHECK_THROWS_AS(ece({0.5}, {true}, 0), std::invalid_argument);
        // more bins than samples degrades gracefully
        CHECK(ece({0.8, 0.9}, {true, true}, 10) >= 0.0);
    }
}

TEST_CASE("ece is permutation invariant and bounded") {
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 5 + rng.uniform_int(200);
        Vec p(n);
        std::vector<bool> correct(n);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = rng.uniform(0.2, 1.0);
            correct[i] = rng.uniform() < p[i];
        }
        const double base = ece(p, correct, 10);
        CHECK(base >= 0.0);
        CHECK(base <= 1.0);

        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        rng.shuffle(perm);
        Vec p2(n);
        std::vector<bool> c2(n);
        for (std::size_t i = 0; i < n; ++i) {
            p2[i] = p[perm[i]];
            c2[i] = correct[perm[i]];
        }
        CHECK(ece(p2, c2, 10) == base);
    }
}

TEST_CASE("an oracle that reports its own bin accuracy has zero ece") {
    // two confidence groups whose accuracy equals their confidence exactly
    Vec p;
    std::vector<bool> correct;
    for (int i = 0; i < 100; ++i) {
        p.push_back(0.6);
        correct.push_back(i < 60);
    }
    for (int i = 0; i < 100; ++i) {
        p.push_back(0.9);
        correct.push_back(i < 90);
    }
    CHECK(ece(p, correct, 2) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("conformal thresholds per strategy") {
    SUBCASE("general threshold from the exited-gate scores") {
        const auto valset = single_gate_valset({0.9, 0.8, 0.7, 0.6}); // scores .1 .2 .3 .4
        const ConformalCalibrator cal =
            conformal_thresholds(valset, ConformalStrategy::General, 0.25);
        CHECK(cal.global_tau == doctest::Approx(0.4).epsilon(1e-14));
    }

    SUBCASE("strict gating zeroes unused gates") {
        // two layers; every sample exits at layer 1
        std::vector<ValPrediction> valset;
        for (double p : {0.9, 0.8, 0.7, 0.6}) {
            ValPrediction v;
            v.exit_layer = 1;
            v.label = 0;
            v.probs = {{p, 1.0 - p}, {0.5, 0.5}};
            valset.push_back(v);
        }
        const ConformalCalibrator cal =
            conformal_thresholds(valset, ConformalStrategy::StrictGating, 0.25);
        CHECK(cal.per_gate_tau[0] == doctest::Approx(0.4));
        CHECK(cal.per_gate_tau[1] == 0.0);
        CHECK(conformal_set(cal, 2, {0.9, 0.1}).empty());
    }

    SUBCASE("gated falls back below the bucket minimum") {
        std::vector<ValPrediction> valset;
        for (int i = 0; i < 19; ++i) {
            ValPrediction v;
            v.exit_layer = 1;
            v.label = 0;
            v.probs = {{0.9, 0.1}, {0.5, 0.5}};
            valset.push_back(v);
        }
        for (int i = 0; i < 30; ++i) {
            ValPrediction v;
            v.exit_layer = 2;
            v.label = 0;
            v.probs = {{0.9, 0.1}, {0.4 + 0.01 * i, 0.6 - 0.01 * i}};
            valset.push_back(v);
        }
        const ConformalCalibrator gated =
            conformal_thresholds(valset, ConformalStrategy::Gated, 0.1);
        const ConformalCalibrator strict =
            conformal_thresholds(valset, ConformalStrategy::StrictGating, 0.1);
        CHECK(gated.per_gate_tau[0] == gated.global_tau);   // |V^1| = 19 < 20
        CHECK(gated.per_gate_tau[1] == strict.per_gate_tau[1]); // |V^2| = 30
    }

    SUBCASE("IMs strategy scores the whole set under every IM") {
        std::vector<ValPrediction> valset;
        for (double p : {0.9, 0.8, 0.7, 0.6}) {
            ValPrediction v;
            v.exit_layer = p > 0.7 ? 1 : 2;
            v.label = 0;
            v.probs = {{p, 1.0 - p}, {p / 2.0, 1.0 - p / 2.0}};
            valset.push_back(v);
        }
        const ConformalCalibrator cal = conformal_thresholds(valset, ConformalStrategy::IMs, 0.25);
        CHECK(cal.per_gate_tau[0] == doctest::Approx(0.4));
        CHECK(cal.per_gate_tau[1] == doctest::Approx(1.0 - 0.3));
    }

    SUBCASE("empty valset is rejected") {
        CHECK_THROWS_AS(conformal_thresholds({}, ConformalStrategy::General, 0.1),
                        std::invalid_argument);
    }
}

TEST_CASE("conformal sets") {
    ConformalCalibrator cal;
    cal.strategy = ConformalStrategy::General;

    cal.global_tau = 1.0;
    CHECK(conformal_set(cal, 1, {0.7, 0.2, 0.1}).size() == 3);

    cal.global_tau = 0.0;
    CHECK(conformal_set(cal, 1, {0.7, 0.2, 0.1}).empty());

    cal.global_tau = 0.35;
    const auto set = conformal_set(cal, 1, {0.7, 0.2, 0.1}); // scores .3 .8 .9
    CHECK(set == std::vector<std::size_t>{0});
}

TEST_CASE("coverage and inefficiency") {
    const std::vector<std::size_t> labels{0, 1, 2};
    SUBCASE("full sets") {
        const std::vector<std::vector<std::size_t>> sets(3, {0, 1, 2});
        const CoverageStats stats = coverage_and_inefficiency(sets, labels);
        CHECK(stats.coverage == 1.0);
        CHECK(stats.inefficiency == 3.0);
    }
    SUBCASE("empty sets") {
        const std::vector<std::vector<std::size_t>> sets(3);
        const CoverageStats stats = coverage_and_inefficiency(sets, labels);
        CHECK(stats.coverage == 0.0);
        CHECK(stats.inefficiency == 0.0);
    }
    SUBCASE("oracle singleton sets") {
        const std::vector<std::vector<std::size_t>> sets{{0}, {1}, {2}};
        const CoverageStats stats = coverage_and_inefficiency(sets, labels);
        CHECK(stats.coverage == 1.0);
        CHECK(stats.inefficiency == 1.0);
    }
}

TEST_CASE("higher alpha weakly shrinks thresholds and sets") {
    Rng rng(21);
    std::vector<ValPrediction> valset;
    for (int i = 0; i < 200; ++i) {
        ValPrediction v;
        v.exit_layer = 1 + rng.uniform_int(2);
        v.label = rng.uniform_int(3);
        Vec logits(3);
        for (auto& x : logits) x = rng.normal();
        logits[v.label] += 1.5;
        v.probs = {softmax(logits), softmax(logits)};
        valset.push_back(v);
    }
    for (const auto strategy : {ConformalStrategy::General, ConformalStrategy::Gated,
                                ConformalStrategy::IMs, ConformalStrategy::StrictGating}) {
        double prev_tau = 2.0;
        for (double alpha : {0.05, 0.1, 0.2, 0.4}) {
            const ConformalCalibrator cal = conformal_thresholds(valset, strategy, alpha);
            const double tau = cal.threshold_for(1);
            CHECK(tau <= prev_tau);
            prev_tau = tau;
        }
    }
}

TEST_CASE("calibration artifacts round trip") {
    ConformalCalibrator cal;
    cal.strategy = ConformalStrategy::Gated;
    cal.alpha = 0.07;
    cal.global_tau = 0.42;
    cal.per_gate_tau = {0.1, 0.2, 0.42};
    const Vec temps{1.0, 1.7, 0.9};

    const fs::path path = fs::temp_directory_path() / "eedn_test_calibration.json";
    save_calibration(cal, temps, path);
    const CalibrationArtifact art = load_calibration(path);
    CHECK(art.calibrator.strategy == ConformalStrategy::Gated);
    CHECK(art.calibrator.alpha == cal.alpha);
    CHECK(art.calibrator.global_tau == cal.global_tau);
    CHECK(art.calibrator.per_gate_tau == cal.per_gate_tau);
    CHECK(art.temperatures == temps);
    fs::remove(path);
}

TEST_CASE("split conformal coverage on exchangeable data") {
    // small-scale version of the acceptance check
    Rng rng(1234);
    double total_coverage = 0.0;
    const int seeds = 10;
    for (int seed = 0; seed < seeds; ++seed) {
        Rng local = rng.child(seed);
        auto draw = [&]() {
            ValPrediction v;
            v.exit_layer = 1;
            v.label = local.uniform_int(5);
            Vec logits(5);
            for (auto& x : logits) x = local.normal();
            logits[v.label] += 2.0;
            v.probs = {softmax(logits)};
            return v;
        };
        std::vector<ValPrediction> cal, test;
        for (int i = 0; i < 300; ++i) cal.push_back(draw());
        for (int i = 0; i < 300; ++i) test.push_back(draw());
        const ConformalCalibrator calibrator =
            conformal_thresholds(cal, ConformalStrategy::General, 0.1);
        std::vector<std::vector<std::size_t>> sets;
        std::vector<std::size_t> labels;
        for (const auto& v : test) {
            sets.push_back(conformal_set(calibrator, 1, v.probs[0]));
            labels.push_back(v.label);
        }
        total_coverage += coverage_and_inefficiency(sets, labels).coverage;
    }
    CHECK(total_coverage / seeds >= 0.9 - 0.05);
}

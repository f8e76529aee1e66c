#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "eedn/math.hpp"

using namespace eedn;

TEST_CASE("softmax basics") {
    const Vec uniform = softmax({0.0, 0.0});
    CHECK(uniform[0] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(uniform[1] == doctest::Approx(0.5).epsilon(1e-14));

    const Vec p = softmax({std::log(2.0), 0.0});
    CHECK(std::abs(p[0] - 2.0 / 3.0) < 1e-14);
    CHECK(std::abs(p[1] - 1.0 / 3.0) < 1e-14);

    const Vec extreme = softmax({1000.0, 0.0});
    CHECK(all_finite(extreme));
    CHECK(extreme[0] == doctest::Approx(1.0));
    CHECK(extreme[1] == doctest::Approx(0.0));

    CHECK_THROWS_AS(softmax({}), std::invalid_argument);
    CHECK_THROWS_AS(softmax({1.0, std::nan("")}), std::invalid_argument);
    CHECK_THROWS_AS(softmax({std::numeric_limits<double>::infinity()}), std::invalid_argument);
}

TEST_CASE("softmax properties over random logits") {
    Rng rng(42);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 2 + rng.uniform_int(9);
        Vec logits(n);
        for (auto& v : logits) v = rng.uniform(-50.0, 50.0);

        const Vec p = softmax(logits);
        double sum = 0.0;
        for (double v : p) {
            CHECK(v > 0.0);
            CHECK(v <= 1.0);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);

        // shift invariance
        const double c = rng.uniform(-20.0, 20.0);
        Vec shifted = logits;
        for (auto& v : shifted) v += c;
        const Vec q = softmax(shifted);
        for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(p[i] - q[i]) < 1e-12);
    }
}

TEST_CASE("cross entropy") {
    CHECK(cross_entropy({0.5, 0.5}, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    CHECK(cross_entropy({1.0, 0.0}, 0) == 0.0);
    // probability floor
    CHECK(cross_entropy({1e-20, 1.0 - 1e-20}, 0) == doctest::Approx(-std::log(1e-12)));
    CHECK_THROWS_AS(cross_entropy({0.5, 0.5}, 2), std::out_of_range);
}

TEST_CASE("sigmoid") {
    CHECK(sigmoid(0.0) == 0.5);
    CHECK(sigmoid(std::log(3.0)) == doctest::Approx(0.75).epsilon(1e-14));
    CHECK(sigmoid(-1000.0) == 0.0);
    CHECK(sigmoid(1000.0) == 1.0);
    // monotone
    CHECK(sigmoid(-1.0) < sigmoid(0.0));
    CHECK(sigmoid(0.0) < sigmoid(1.0));
}

TEST_CASE("binary cross entropy") {
    CHECK(binary_cross_entropy(1.0, 1.0) == 0.0);
    CHECK(binary_cross_entropy(0.0, 0.0) == 0.0);
    CHECK(binary_cross_entropy(0.5, 1.0) == doctest::Approx(std::log(2.0)));
    CHECK(binary_cross_entropy(0.0, 1.0) == doctest::Approx(-std::log(1e-12)));
}

TEST_CASE("conformal quantile") {
    CHECK(conformal_quantile({0.1, 0.2, 0.3, 0.4}, 0.25) == 0.4);
    CHECK(conformal_quantile({0.1, 0.2, 0.3, 0.4}, 0.5) == 0.3);
    CHECK(conformal_quantile({0.7}, 0.05) == 0.7);
    CHECK(conformal_quantile({0.7}, 0.95) == 0.7);
    CHECK_THROWS_AS(conformal_quantile({}, 0.1), std::invalid_argument);

    // order of the input must not matter
    CHECK(conformal_quantile({0.4, 0.1, 0.3, 0.2}, 0.25) == 0.4);
}

TEST_CASE("conformal quantile is nonincreasing in alpha") {
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng.uniform_int(50);
        std::vector<double> scores(n);
        for (auto& s : scores) s = rng.uniform();
        double prev = conformal_quantile(scores, 0.01);
        for (double alpha = 0.05; alpha < 1.0; alpha += 0.05) {
            const double tau = conformal_quantile(scores, alpha);
            CHECK(tau <= prev);
            prev = tau;
        }
    }
}

TEST_CASE("finite difference gradient") {
    auto sq_norm = [](const Vec& x) {
        double s = 0.0;
        for (double v : x) s += v * v;
        return s;
    };
    const Vec g = finite_diff_grad(sq_norm, {1.0, 2.0}, 1e-5);
    CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-8));
    CHECK(g[1] == doctest::Approx(4.0).epsilon(1e-8));

    auto constant = [](const Vec&) { return 3.0; };
    for (double v : finite_diff_grad(constant, {0.3, -0.7, 2.0}, 1e-5)) CHECK(v == 0.0);
}

TEST_CASE("rng reproducibility") {
    Rng a(123), b(123);
    for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng c(123), d(123);
    for (int i = 0; i < 100; ++i) {
        CHECK(c.uniform() == d.uniform());
        CHECK(c.normal() == d.normal());
    }

    Rng e(123), f(124);
    CHECK(e.next_u64() != f.next_u64());

    // child streams are decoupled from the parent and from each other
    Rng parent(9);
    Rng c0 = parent.child(0);
    Rng c1 = parent.child(1);
    CHECK(c0.next_u64() != c1.next_u64());
    CHECK(parent.child(0).next_u64() == Rng(9).child(0).next_u64());
}

TEST_CASE("rng ranges") {
    Rng rng(5);
    for (int i = 0; i < 1000; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        CHECK(rng.uniform_int(7) < 7);
    }
    CHECK_THROWS_AS(rng.uniform_int(0), std::invalid_argument);
}

TEST_CASE("rng shuffle is a permutation") {
    Rng rng(11);
    std::vector<int> v{1, 2, 3, 4, 5, 6, 7, 8};
    auto sorted = v;
    rng.shuffle(v);
    auto check = v;
    std::sort(check.begin(), check.end());
    CHECK(check == sorted);
}

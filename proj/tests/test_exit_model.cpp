#include <doctest.h>

#include <cmath>

#include "eedn/exit_model.hpp"

using namespace eedn;

namespace {

// Model whose gates are bias-only, so the gate values are known constants.
EarlyExitModel fixed_gate_model(const Vec& gate_values) {
    const std::size_t layer_count = gate_values.size();
    Rng rng(5);
    EarlyExitModel model = init_model(std::vector<std::size_t>(layer_count, 2), 2, rng);
    for (std::size_t l = 0; l + 1 < layer_count; ++l) {
        model.gates[l].weight = {0.0, 0.0, 0.0, 0.0};
        const double g = gate_values[l];
        model.gates[l].bias = std::log(g / (1.0 - g)); // sigmoid^-1
    }
    return model;
}

LayeredSample sample_for(const EarlyExitModel& model) {
    LayeredSample s;
    s.x = {0.0, 0.0};
    s.z.assign(model.layers(), Vec{0.3, -0.2});
    s.y = 0;
    return s;
}

} // namespace

TEST_CASE("exit distribution fixtures") {
    const ExitDistribution a = exit_distribution({0.3, 0.5, 1.0});
    CHECK(a.probabilities[0] == 0.3);
    CHECK(a.probabilities[1] == 0.5);
    CHECK(a.probabilities[2] == doctest::Approx(0.2).epsilon(1e-14));

    const ExitDistribution b = exit_distribution({1.0, 0.4, 1.0});
    CHECK(b.probabilities[0] == 1.0);
    CHECK(b.probabilities[1] == 0.0);
    CHECK(b.probabilities[2] == 0.0);

    // the min binds at gate 2
    const ExitDistribution c = exit_distribution({0.6, 0.6, 1.0});
    CHECK(c.probabilities[0] == 0.6);
    CHECK(c.probabilities[1] == doctest::Approx(0.4).epsilon(1e-14));
    CHECK(c.probabilities[2] == 0.0);
}

TEST_CASE("exit distribution rejects invalid gates") {
    CHECK_THROWS_AS(exit_distribution({1.2, 0.5, 1.0}), std::invalid_argument);
    CHECK_THROWS_AS(exit_distribution({-0.1, 0.5, 1.0}), std::invalid_argument);
    CHECK_THROWS_AS(exit_distribution({0.3, 0.5, 0.99}), std::invalid_argument);
    CHECK_THROWS_AS(exit_distribution({}), std::invalid_argument);
}

TEST_CASE("exit distribution is a probability distribution") {
    Rng rng(2024);
    for (int trial = 0; trial < 10000; ++trial) {
        const std::size_t layer_count = 2 + rng.uniform_int(9);
        Vec g(layer_count);
        for (std::size_t l = 0; l + 1 < layer_count; ++l) g[l] = rng.uniform();
        g.back() = 1.0;

        const ExitDistribution dist = exit_distribution(g);
        double sum = 0.0;
        for (double p : dist.probabilities) {
            CHECK(p >= 0.0);
            CHECK(p <= 1.0);
            sum += p;
        }
        CHECK(std::abs(sum - 1.0) < 1e-9);
    }
}

TEST_CASE("exit chain fixtures") {
    ExitDistribution dist;
    dist.gate_values = {0.3, 0.5, 1.0};
    dist.probabilities = {0.3, 0.5, 0.2};
    const Vec chain = exit_chain(dist);
    CHECK(chain[0] == 0.3);
    CHECK(chain[1] == doctest::Approx(0.5 / 0.7).epsilon(1e-14));
    CHECK(chain[2] == 1.0);

    ExitDistribution onehot;
    onehot.gate_values = {0.0, 1.0, 1.0};
    onehot.probabilities = {0.0, 1.0, 0.0};
    const Vec chain2 = exit_chain(onehot);
    CHECK(chain2[0] == 0.0);
    CHECK(chain2[1] == 1.0);
    CHECK(chain2[2] == 1.0);
}

TEST_CASE("chain recomposition is the identity") {
    Rng rng(99);
    for (int trial = 0; trial < 10000; ++trial) {
        const std::size_t layer_count = 2 + rng.uniform_int(7);
        Vec g(layer_count);
        for (std::size_t l = 0; l + 1 < layer_count; ++l) g[l] = rng.uniform();
        g.back() = 1.0;
        const ExitDistribution dist = exit_distribution(g);
        const Vec recomposed = chain_to_distribution(exit_chain(dist));
        for (std::size_t l = 0; l < layer_count; ++l) {
            CHECK(std::abs(recomposed[l] - dist.probabilities[l]) < 1e-9);
        }
    }
}

TEST_CASE("surrogate target vectors give one-hot exit distributions") {
    // the (0...0, 1...1) shapes, exactly
    for (std::size_t layer_count = 1; layer_count <= 8; ++layer_count) {
        for (std::size_t best = 1; best <= layer_count; ++best) {
            Vec g(layer_count, 0.0);
            for (std::size_t l = best; l <= layer_count; ++l) g[l - 1] = 1.0;
            const ExitDistribution dist = exit_distribution(g);
            for (std::size_t l = 1; l <= layer_count; ++l) {
                CHECK(dist.probabilities[l - 1] == (l == best ? 1.0 : 0.0));
            }
        }
    }
}

TEST_CASE("decide_exit follows the chain rule") {
    SUBCASE("all gates saturated high exits at the first layer") {
        const EarlyExitModel model = fixed_gate_model({0.999999, 0.999999, 1.0});
        const ExitDecision d = decide_exit(model, sample_for(model));
        CHECK(d.layer == 1);
        CHECK(d.ims_evaluated == 1);
    }

    SUBCASE("all gates saturated low exits at the last layer") {
        const EarlyExitModel model = fixed_gate_model({1e-9, 1e-9, 1.0});
        const ExitDecision d = decide_exit(model, sample_for(model));
        CHECK(d.layer == 3);
        CHECK(d.ims_evaluated == 3);
    }

    SUBCASE("g = (0.3, 0.5, 1) exits at layer 2") {
        // chain: (0.3, 0.714..., 1); the first value above 0.5 is at l = 2
        const EarlyExitModel model = fixed_gate_model({0.3, 0.5, 1.0});
        const ExitDecision d = decide_exit(model, sample_for(model));
        CHECK(d.layer == 2);
        CHECK(d.ims_evaluated == 2);
        CHECK(d.probabilities.size() == 2);
    }
}

TEST_CASE("decide_exit never evaluates beyond the exit layer") {
    Rng rng(8);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t layer_count = 2 + rng.uniform_int(5);
        Vec g(layer_count);
        for (std::size_t l = 0; l + 1 < layer_count; ++l) g[l] = rng.uniform();
        g.back() = 1.0;
        const EarlyExitModel model = fixed_gate_model(g);
        const ExitDecision d = decide_exit(model, sample_for(model));
        CHECK(d.ims_evaluated == d.layer);
    }
}

TEST_CASE("sampled exits follow the exit distribution") {
    const EarlyExitModel model = fixed_gate_model({0.0, 1.0, 1.0});
    const LayeredSample s = sample_for(model);
    Rng rng(3);
    for (int i = 0; i < 50; ++i) CHECK(sample_exit_layer(model, s, rng) == 2);

    // determinism: identical streams give identical assignments
    const EarlyExitModel mixed = fixed_gate_model({0.4, 0.3, 1.0});
    Rng r1(7), r2(7);
    for (int i = 0; i < 50; ++i) {
        CHECK(sample_exit_layer(mixed, s, r1) == sample_exit_layer(mixed, s, r2));
    }
}

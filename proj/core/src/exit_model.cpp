#include "eedn/exit_model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace eedn {

namespace {
constexpr double kMassEps = 1e-9;

std::size_t argmax_index(const Vec& p) {
    return static_cast<std::size_t>(
        std::distance(p.begin(), std::max_element(p.begin(), p.end())));
}
} // namespace

ExitDistribution exit_distribution(const Vec& gate_values) {
    if (gate_values.empty()) {
        throw std::invalid_argument("exit_distribution: empty gate vector");
    }
    const std::size_t layer_count = gate_values.size();
    for (std::size_t l = 0; l + 1 < layer_count; ++l) {
        if (!(gate_values[l] >= 0.0 && gate_values[l] <= 1.0)) {
            throw std::invalid_argument("exit_distribution: g^" + std::to_string(l + 1) +
                                        " out of [0,1]");
        }
    }
    if (gate_values.back() != 1.0) {
        throw std::invalid_argument("exit_distribution: final gate must be exactly 1");
    }

    ExitDistribution dist;
    dist.gate_values = gate_values;
    dist.probabilities.resize(layer_count);
    double gate_sum = 0.0;
    for (std::size_t l = 0; l < layer_count; ++l) {
        if (l == 0) {
            dist.probabilities[0] = gate_values[0];
        } else {
            dist.probabilities[l] =
                std::max(0.0, std::min(gate_values[l], 1.0 - gate_sum));
        }
        gate_sum += gate_values[l];
    }
    return dist;
}

Vec exit_chain(const ExitDistribution& dist) {
    const auto& p = dist.probabilities;
    Vec exit_probs(p.size());
    double spent = 0.0;
    for (std::size_t l = 0; l < p.size(); ++l) {
        const double remaining = 1.0 - spent;
        exit_probs[l] = remaining > kMassEps ? std::clamp(p[l] / remaining, 0.0, 1.0) : 1.0;
        spent += p[l];
    }
    exit_probs.back() = 1.0;
    return exit_probs;
}

Vec chain_to_distribution(const Vec& exit_probs) {
    Vec p(exit_probs.size());
    double survive = 1.0;
    for (std::size_t l = 0; l < exit_probs.size(); ++l) {
        p[l] = exit_probs[l] * survive;
        survive *= 1.0 - exit_probs[l];
    }
    return p;
}

ExitDecision decide_exit(const EarlyExitModel& model, const LayeredSample& sample) {
    const std::size_t layer_count = model.layers();
    ExitDecision decision;
    double gate_sum = 0.0;  // sum of g_j seen so far
    double prob_sum = 0.0;  // sum of P_j seen so far

    for (std::size_t l = 1; l <= layer_count; ++l) {
        const Vec p = im_forward(model.ims[l - 1], sample.z[l - 1]);
        ++decision.ims_evaluated;

        double exit_here;
        if (l == layer_count) {
            exit_here = 1.0;
        } else {
            const GateFeatures m = gate_features(p);
            const double g = gate_forward(model.gates[l - 1], m);
            const double prob_l =
                l == 1 ? g : std::max(0.0, std::min(g, 1.0 - gate_sum));
            const double remaining = 1.0 - prob_sum;
            exit_here = remaining > kMassEps ? prob_l / remaining : 1.0;
            gate_sum += g;
            prob_sum += prob_l;
        }

        if (exit_here > 0.5 || l == layer_count) {
            decision.layer = l;
            decision.prediction = argmax_index(p);
            decision.probabilities = p;
            return decision;
        }
    }
    throw std::logic_error("decide_exit: unreachable");
}

ExitDistribution full_exit_distribution(const EarlyExitModel& model,
                                        const LayeredSample& sample) {
    const std::size_t layer_count = model.layers();
    Vec gate_values(layer_count, 1.0);
    for (std::size_t l = 1; l < layer_count; ++l) {
        const Vec p = im_forward(model.ims[l - 1], sample.z[l - 1]);
        gate_values[l - 1] = gate_forward(model.gates[l - 1], gate_features(p));
    }
    return exit_distribution(gate_values);
}

std::size_t sample_exit_layer(const EarlyExitModel& model, const LayeredSample& sample,
                              Rng& rng) {
    const auto dist = full_exit_distribution(model, sample);
    const double u = rng.uniform();
    double cum = 0.0;
    for (std::size_t l = 0; l < dist.probabilities.size(); ++l) {
        cum += dist.probabilities[l];
        if (u < cum) return l + 1;
    }
    return dist.probabilities.size();
}

} // namespace eedn

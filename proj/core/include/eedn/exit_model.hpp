#pragma once

#include <cstddef>
#include <vector>

#include "eedn/backbone.hpp"
#include "eedn/branches.hpp"
#include "eedn/math.hpp"

namespace eedn {

/// Per-sample gate values g^1..g^L (g^L = 1) and the exit probabilities
/// P(G=l) induced by the min-construction.
struct ExitDistribution {
    Vec gate_values;
    Vec probabilities;
};

/// P_1 = g_1; P_l = max(0, min(g_l, 1 - sum_{j<l} g_j)) for l >= 2.
/// Requires g_l in [0,1] for l < L and g_L = 1. The outer clamp at 0 only
/// absorbs float error in 1 - sum g_j; the result sums to 1.
ExitDistribution exit_distribution(const Vec& gate_values);

/// Sequential exit probabilities P(E^l) = P_l / (1 - sum_{j<l} P_j), with
/// the convention P(E^l) = 1 once the remaining mass is below 1e-9.
Vec exit_chain(const ExitDistribution& dist);

/// Inverse of exit_chain: P_l = E_l * prod_{j<l} (1 - E_j).
Vec chain_to_distribution(const Vec& exit_probs);

struct ExitDecision {
    std::size_t layer = 0;       ///< 1-based exit layer
    std::size_t prediction = 0;  ///< argmax class at the exit IM
    Vec probabilities;           ///< exit IM softmax output
    std::size_t ims_evaluated = 0;
};

/// Deterministic early-exit inference: walk the layers, exit at the first
/// l with P(E^l) > 0.5, else at L. IMs and gates beyond the exit layer are
/// never evaluated.
ExitDecision decide_exit(const EarlyExitModel& model, const LayeredSample& sample);

/// Full exit distribution for one sample (evaluates every IM and gate).
ExitDistribution full_exit_distribution(const EarlyExitModel& model,
                                        const LayeredSample& sample);

/// Stochastic exit assignment l ~ P(G | x), used to form the per-gate
/// validation buckets for conformal calibration.
std::size_t sample_exit_layer(const EarlyExitModel& model, const LayeredSample& sample,
                              Rng& rng);

} // namespace eedn

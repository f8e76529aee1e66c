#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "eedn/math.hpp"

namespace eedn {

/// How the per-gate conformal thresholds are computed from the validation
/// set (General is a single global threshold).
enum class ConformalStrategy { General, IMs, StrictGating, Gated };

ConformalStrategy conformal_strategy_from_string(const std::string& name);
std::string to_string(ConformalStrategy strategy);

struct CalibrationResult {
    double temperature = 1.0; ///< in [0.05, 10]
};

/// Minimises the mean NLL of softmax(logits / T) over T in [0.05, 10] by
/// golden-section search (tolerance 1e-4). An empty calibration set skips
/// calibration and returns T = 1.
CalibrationResult fit_temperature(const std::vector<Vec>& logits,
                                  const std::vector<std::size_t>& labels);

/// Expected calibration error with B equal-count bins over the sorted
/// confidence values: bin b holds sorted ranks [floor(N(b-1)/B), floor(Nb/B)).
/// B is reduced to N (with a warning) when there are fewer samples than bins.
double ece(const Vec& p_max, const std::vector<bool>& correct, std::size_t bins = 10);

/// Everything conformal calibration needs to know about one validation
/// sample: its (sampled) exit assignment, calibrated per-layer probability
/// vectors, and true label.
struct ValPrediction {
    std::size_t exit_layer = 0;   ///< 1-based
    std::vector<Vec> probs;       ///< p_hat^1..p_hat^L
    std::size_t label = 0;
};

struct ConformalCalibrator {
    ConformalStrategy strategy = ConformalStrategy::General;
    double alpha = 0.1;
    double global_tau = 0.0;
    Vec per_gate_tau;             ///< one per layer; unused for General
    std::size_t min_bucket = 20;  ///< Gated fallback threshold

    double threshold_for(std::size_t exit_layer) const;
};

/// Conformal scores are 1 - p_hat at the true label. Bucket rules:
/// General ignores gates; IMs scores the whole set under each IM;
/// StrictGating uses only each gate's own samples (tau_l = 0 when empty);
/// Gated falls back to the General threshold when a bucket has fewer than
/// min_bucket samples.
ConformalCalibrator conformal_thresholds(const std::vector<ValPrediction>& valset,
                                         ConformalStrategy strategy, double alpha);

/// C = { k : 1 - p_k < tau } for the threshold applicable at exit_layer.
std::vector<std::size_t> conformal_set(const ConformalCalibrator& calibrator,
                                       std::size_t exit_layer, const Vec& probs);

struct CoverageStats {
    double coverage = 0.0;      ///< fraction of sets containing the label
    double inefficiency = 0.0;  ///< mean set cardinality
};

CoverageStats coverage_and_inefficiency(const std::vector<std::vector<std::size_t>>& sets,
                                        const std::vector<std::size_t>& labels);

void save_calibration(const ConformalCalibrator& calibrator, const Vec& temperatures,
                      const std::filesystem::path& path);

struct CalibrationArtifact {
    ConformalCalibrator calibrator;
    Vec temperatures;
};

CalibrationArtifact load_calibration(const std::filesystem::path& path);

} // namespace eedn

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "eedn/backbone.hpp"
#include "eedn/branches.hpp"
#include "eedn/cost_model.hpp"
#include "eedn/trainer.hpp"
#include "eedn/uncertainty.hpp"

namespace eedn {

/// One point on an accuracy/cost curve, with the uncertainty metrics and the
/// per-gate decomposition behind it. `lambda` carries the sweep parameter
/// (the cost importance for trained models, the confidence threshold for the
/// threshold-gating baseline).
struct CurvePoint {
    double lambda = 0.0;
    double accuracy = 0.0;
    double ic = 0.0;
    double ic_norm = 0.0;
    double ece = 0.0;
    double coverage = 0.0;
    double inefficiency = 0.0;
    std::vector<double> exit_fraction;
    std::vector<double> acc_exited; ///< accuracy of IM l on its exited samples D^l
    std::vector<double> acc_full;   ///< accuracy of IM l on the full set D
};

struct EvalSettings {
    double alpha = 0.1;
    ConformalStrategy strategy = ConformalStrategy::Gated;
    std::size_t ece_bins = 10;
    /// Assign V^l by sampling l ~ P(G | x) (fixed seed); when false the
    /// deterministic exit rule is used instead.
    bool sampled_exit_assignment = true;
    std::uint64_t seed = 1;
};

struct GateUsageReport {
    std::vector<std::size_t> counts;
    std::vector<double> fraction;
    std::vector<double> acc_exited;
    std::vector<double> acc_full;
    double overall_accuracy = 0.0;
};

/// Per-gate usage/accuracy decomposition under deterministic exiting.
/// The overall accuracy equals sum_l fraction_l * acc_exited_l.
GateUsageReport gate_usage_report(const EarlyExitModel& model,
                                  const std::vector<LayeredSample>& samples);

/// Full test-set evaluation of a trained model: deterministic exits,
/// per-exit temperature scaling fitted on V^2, conformal thresholds from
/// V^2, ECE/coverage/inefficiency on test.
CurvePoint evaluate_model(const EarlyExitModel& model, const DatasetSplit& data,
                          const CostTable& table, const EvalSettings& settings,
                          double lambda_tag);

/// Trains one model per lambda from a shared warm-up checkpoint and
/// evaluates each. Points are returned in input order; independent points
/// run in parallel up to max_threads().
std::vector<CurvePoint> lambda_sweep(const TrainConfig& cfg, const DatasetSplit& data,
                                     const CostTable& table, const std::vector<double>& lambdas,
                                     const EvalSettings& settings);

/// Decoupled baseline: exit at the first IM whose confidence exceeds a
/// fixed threshold. `model` must hold warm-up-trained IMs; the gates are
/// ignored. One point per threshold.
std::vector<CurvePoint> threshold_gm_baseline(const EarlyExitModel& model,
                                              const DatasetSplit& data, const CostTable& table,
                                              const std::vector<double>& thresholds,
                                              const EvalSettings& settings);

/// Decoupled baseline: bi-level training that never enters the CLASSIFIER
/// state, starting from the given warm-up checkpoint.
CurvePoint frozen_im_ablation(const TrainConfig& cfg, const DatasetSplit& data,
                              const CostTable& table, EarlyExitModel warmed_model,
                              const EvalSettings& settings);

/// Linear interpolation of curve accuracy at a given absolute cost, clamped
/// to the curve's endpoints.
double interpolate_accuracy_at_cost(const std::vector<CurvePoint>& curve, double cost);

void write_curve_csv(const std::vector<CurvePoint>& points, const std::filesystem::path& path);
void write_curve_sidecar(const std::vector<CurvePoint>& points,
                         const std::filesystem::path& path);

struct AlphaSweepResult {
    double alpha_used = 0.0;
    ConformalCalibrator calibrator;
    CoverageStats stats;
};

/// Decreases the requested alpha in fixed steps until the empirical
/// coverage on `evalset` exceeds 1 - target_alpha (or alpha reaches the
/// step size).
AlphaSweepResult sweep_alpha_until_coverage(const std::vector<ValPrediction>& calset,
                                            const std::vector<ValPrediction>& evalset,
                                            ConformalStrategy strategy, double target_alpha,
                                            double step = 0.005);

struct MeanCI {
    double mean = 0.0;
    double lo = 0.0;
    double hi = 0.0;
};

/// 95% normal-approximation interval over per-partition metric values.
MeanCI mean_ci(const Vec& values);

/// Thread cap for embarrassingly parallel evaluation work; reads
/// EEDN_THREADS, defaulting to the hardware concurrency.
std::size_t max_threads();

/// Per-exit temperatures fitted on `samples` (one per IM).
Vec fit_exit_temperatures(const EarlyExitModel& model,
                          const std::vector<LayeredSample>& samples);

/// Calibrated per-layer predictions for conformal calibration/evaluation.
std::vector<ValPrediction> collect_predictions(const EarlyExitModel& model,
                                               const std::vector<LayeredSample>& samples,
                                               const Vec& temperatures,
                                               bool sampled_assignment, Rng& rng);

} // namespace eedn

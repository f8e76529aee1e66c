#include "eedn/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <stdexcept>

#include "eedn/errors.hpp"

namespace eedn {

namespace {

using json = nlohmann::ordered_json;

constexpr double kTempLo = 0.05;
constexpr double kTempHi = 10.0;
constexpr double kTempTol = 1e-4;

double mean_nll(const std::vector<Vec>& logits, const std::vector<std::size_t>& labels,
                double temperature) {
    double total = 0.0;
    Vec scaled;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        scaled = logits[i];
        for (auto& v : scaled) v /= temperature;
        total += cross_entropy(softmax(scaled), labels[i]);
    }
    return total / static_cast<double>(logits.size());
}

} // namespace

ConformalStrategy conformal_strategy_from_string(const std::string& name) {
    if (name == "General") return ConformalStrategy::General;
    if (name == "IMs") return ConformalStrategy::IMs;
    if (name == "StrictGating") return ConformalStrategy::StrictGating;
    if (name == "Gated") return ConformalStrategy::Gated;
    throw ConfigError("unknown conformal strategy '" + name +
                      "' (expected General, IMs, StrictGating or Gated)");
}

std::string to_string(ConformalStrategy strategy) {
    switch (strategy) {
        case ConformalStrategy::General: return "General";
        case ConformalStrategy::IMs: return "IMs";
        case ConformalStrategy::StrictGating: return "StrictGating";
        case ConformalStrategy::Gated: return "Gated";
    }
    return "General";
}

CalibrationResult fit_temperature(const std::vector<Vec>& logits,
                                  const std::vector<std::size_t>& labels) {
    if (logits.size() != labels.size()) {
        throw std::invalid_argument("fit_temperature: logits/labels length mismatch");
    }
    if (logits.empty()) return {1.0};

    // Golden-section search; handles monotone NLL by converging to a bound.
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double lo = kTempLo, hi = kTempHi;
    double x1 = hi - phi * (hi - lo);
    double x2 = lo + phi * (hi - lo);
    double f1 = mean_nll(logits, labels, x1);
    double f2 = mean_nll(logits, labels, x2);
    while (hi - lo > kTempTol) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = mean_nll(logits, labels, x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = mean_nll(logits, labels, x2);
        }
    }
    const double mid = 0.5 * (lo + hi);
    // Never return a temperature worse than the identity.
    return {mean_nll(logits, labels, mid) <= mean_nll(logits, labels, 1.0) ? mid : 1.0};
}

double ece(const Vec& p_max, const std::vector<bool>& correct, std::size_t bins) {
    if (p_max.size() != correct.size()) {
        throw std::invalid_argument("ece: p_max/correct length mismatch");
    }
    if (p_max.empty()) throw std::invalid_argument("ece: empty input");
    if (bins == 0) throw std::invalid_argument("ece: bins must be >= 1");

    const std::size_t n = p_max.size();
    if (n < bins) {
        std::cerr << "ece: reducing bin count from " << bins << " to " << n << "\n";
        bins = n;
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Ties break on correctness so the binning is permutation invariant.
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (p_max[a] != p_max[b]) return p_max[a] < p_max[b];
        return correct[a] < correct[b];
    });

    double total = 0.0;
    for (std::size_t b = 1; b <= bins; ++b) {
        const std::size_t lo = n * (b - 1) / bins;
        const std::size_t hi = n * b / bins;
        if (hi == lo) continue;
        double acc = 0.0, conf = 0.0;
        for (std::size_t i = lo; i < hi; ++i) {
            acc += correct[order[i]] ? 1.0 : 0.0;
            conf += p_max[order[i]];
        }
        const double count = static_cast<double>(hi - lo);
        total += (count / static_cast<double>(n)) * std::abs(acc / count - conf / count);
    }
    return total;
}

double ConformalCalibrator::threshold_for(std::size_t exit_layer) const {
    if (strategy == ConformalStrategy::General) return global_tau;
    if (exit_layer == 0 || exit_layer > per_gate_tau.size()) {
        throw std::invalid_argument("conformal: exit layer " + std::to_string(exit_layer) +
                                    " out of range");
    }
    return per_gate_tau[exit_layer - 1];
}

ConformalCalibrator conformal_thresholds(const std::vector<ValPrediction>& valset,
                                         ConformalStrategy strategy, double alpha) {
    if (valset.empty()) throw std::invalid_argument("conformal_thresholds: empty valset");
    const std::size_t layer_count = valset.front().probs.size();
    for (const auto& v : valset) {
        if (v.probs.size() != layer_count || v.exit_layer == 0 || v.exit_layer > layer_count) {
            throw std::invalid_argument("conformal_thresholds: inconsistent prediction");
        }
    }

    ConformalCalibrator cal;
    cal.strategy = strategy;
    cal.alpha = alpha;

    std::vector<double> exited_scores;
    exited_scores.reserve(valset.size());
    for (const auto& v : valset) {
        exited_scores.push_back(1.0 - v.probs[v.exit_layer - 1][v.label]);
    }
    cal.global_tau = conformal_quantile(exited_scores, alpha);
    if (strategy == ConformalStrategy::General) return cal;

    cal.per_gate_tau.assign(layer_count, 0.0);
    for (std::size_t l = 1; l <= layer_count; ++l) {
        std::vector<double> scores;
        if (strategy == ConformalStrategy::IMs) {
            scores.reserve(valset.size());
            for (const auto& v : valset) scores.push_back(1.0 - v.probs[l - 1][v.label]);
        } else {
            for (const auto& v : valset) {
                if (v.exit_layer == l) scores.push_back(1.0 - v.probs[l - 1][v.label]);
            }
        }
        if (scores.empty()) {
            cal.per_gate_tau[l - 1] = 0.0; // empty bucket: empty conformal sets
        } else if (strategy == ConformalStrategy::Gated && scores.size() < cal.min_bucket) {
            cal.per_gate_tau[l - 1] = cal.global_tau;
        } else {
            cal.per_gate_tau[l - 1] = conformal_quantile(scores, alpha);
        }
    }
    return cal;
}

std::vector<std::size_t> conformal_set(const ConformalCalibrator& calibrator,
                                       std::size_t exit_layer, const Vec& probs) {
    const double tau = calibrator.threshold_for(exit_layer);
    std::vector<std::size_t> set;
    for (std::size_t k = 0; k < probs.size(); ++k) {
        if (1.0 - probs[k] < tau) set.push_back(k);
    }
    return set;
}

CoverageStats coverage_and_inefficiency(const std::vector<std::vector<std::size_t>>& sets,
                                        const std::vector<std::size_t>& labels) {
    if (sets.size() != labels.size()) {
        throw std::invalid_argument("coverage_and_inefficiency: length mismatch");
    }
    if (sets.empty()) throw std::invalid_argument("coverage_and_inefficiency: empty input");
    double covered = 0.0, size_sum = 0.0;
    for (std::size_t i = 0; i < sets.size(); ++i) {
        covered += std::find(sets[i].begin(), sets[i].end(), labels[i]) != sets[i].end();
        size_sum += static_cast<double>(sets[i].size());
    }
    const double n = static_cast<double>(sets.size());
    return {covered / n, size_sum / n};
}

void save_calibration(const ConformalCalibrator& calibrator, const Vec& temperatures,
                      const std::filesystem::path& path) {
    json doc;
    doc["version"] = 1;
    doc["strategy"] = to_string(calibrator.strategy);
    doc["alpha"] = calibrator.alpha;
    doc["global_tau"] = calibrator.global_tau;
    doc["per_gate_tau"] = calibrator.per_gate_tau;
    doc["min_bucket"] = calibrator.min_bucket;
    doc["temperatures"] = temperatures;
    std::ofstream os(path);
    if (!os) throw LoadError("save_calibration: cannot open " + path.string());
    os << doc.dump(2) << "\n";
}

CalibrationArtifact load_calibration(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw LoadError("calibration: cannot open " + path.string());
    json doc;
    try {
        is >> doc;
    } catch (const json::exception& e) {
        throw LoadError("calibration: parse failure: " + std::string(e.what()));
    }
    CalibrationArtifact art;
    art.calibrator.strategy = conformal_strategy_from_string(doc["strategy"].get<std::string>());
    art.calibrator.alpha = doc["alpha"].get<double>();
    art.calibrator.global_tau = doc["global_tau"].get<double>();
    art.calibrator.per_gate_tau = doc["per_gate_tau"].get<Vec>();
    art.calibrator.min_bucket = doc["min_bucket"].get<std::size_t>();
    art.temperatures = doc["temperatures"].get<Vec>();
    return art;
}

} // namespace eedn

#include "eedn/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <future>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <thread>

#include "eedn/errors.hpp"
#include "eedn/exit_model.hpp"

namespace eedn {

namespace {

using json = nlohmann::ordered_json;

std::size_t argmax_index(const Vec& p) {
    return static_cast<std::size_t>(
        std::distance(p.begin(), std::max_element(p.begin(), p.end())));
}

Vec scaled_probs(const EarlyExitModel& model, const LayeredSample& sample, std::size_t layer,
                 const Vec& temperatures) {
    Vec logits = im_logits(model.ims[layer - 1], sample.z[layer - 1]);
    const double t = temperatures.empty() ? 1.0 : temperatures[layer - 1];
    for (auto& v : logits) v /= t;
    return softmax(logits);
}

/// Exit layer under the confidence-threshold rule: first IM with
/// p_max > threshold, else L.
std::size_t threshold_exit_layer(const EarlyExitModel& model, const LayeredSample& sample,
                                 double threshold) {
    const std::size_t layer_count = model.layers();
    for (std::size_t l = 1; l < layer_count; ++l) {
        const Vec p = im_forward(model.ims[l - 1], sample.z[l - 1]);
        if (*std::max_element(p.begin(), p.end()) > threshold) return l;
    }
    return layer_count;
}

struct TestOutcome {
    std::vector<std::size_t> exit_layers;
    std::vector<std::size_t> predictions;
    Vec p_max;                      ///< temperature-scaled confidence at the exit
    std::vector<bool> correct;
    std::vector<std::vector<std::size_t>> sets;
    std::vector<std::size_t> labels;
};

CurvePoint summarise(const EarlyExitModel& model, const DatasetSplit& data,
                     const CostTable& table, const EvalSettings& settings, double lambda_tag,
                     const TestOutcome& outcome) {
    CurvePoint pt;
    pt.lambda = lambda_tag;
    const std::size_t n = outcome.labels.size();
    pt.accuracy = static_cast<double>(std::count(outcome.correct.begin(), outcome.correct.end(),
                                                 true)) /
                  static_cast<double>(n);
    pt.ic = average_cost(outcome.exit_layers, table);
    pt.ic_norm = average_cost_norm(outcome.exit_layers, table);
    pt.ece = ece(outcome.p_max, outcome.correct, settings.ece_bins);
    const CoverageStats cov = coverage_and_inefficiency(outcome.sets, outcome.labels);
    pt.coverage = cov.coverage;
    pt.inefficiency = cov.inefficiency;

    const std::size_t layer_count = model.layers();
    pt.exit_fraction.assign(layer_count, 0.0);
    pt.acc_exited.assign(layer_count, 0.0);
    std::vector<std::size_t> counts(layer_count, 0), correct_at(layer_count, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t l = outcome.exit_layers[i];
        ++counts[l - 1];
        correct_at[l - 1] += outcome.correct[i];
    }
    for (std::size_t l = 0; l < layer_count; ++l) {
        pt.exit_fraction[l] = static_cast<double>(counts[l]) / static_cast<double>(n);
        pt.acc_exited[l] =
            counts[l] > 0 ? static_cast<double>(correct_at[l]) / static_cast<double>(counts[l])
                          : 0.0;
    }
    pt.acc_full.assign(layer_count, 0.0);
    for (std::size_t l = 1; l <= layer_count; ++l) {
        std::size_t full_correct = 0;
        for (const auto& s : data.test) {
            full_correct += argmax_index(im_forward(model.ims[l - 1], s.z[l - 1])) == s.y;
        }
        pt.acc_full[l - 1] = static_cast<double>(full_correct) / static_cast<double>(n);
    }
    return pt;
}

} // namespace

std::size_t max_threads() {
    if (const char* env = std::getenv("EEDN_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<std::size_t>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

Vec fit_exit_temperatures(const EarlyExitModel& model,
                          const std::vector<LayeredSample>& samples) {
    Vec temps(model.layers(), 1.0);
    if (samples.empty()) return temps;
    std::vector<std::size_t> labels;
    labels.reserve(samples.size());
    for (const auto& s : samples) labels.push_back(s.y);
    for (std::size_t l = 1; l <= model.layers(); ++l) {
        std::vector<Vec> logits;
        logits.reserve(samples.size());
        for (const auto& s : samples) logits.push_back(im_logits(model.ims[l - 1], s.z[l - 1]));
        temps[l - 1] = fit_temperature(logits, labels).temperature;
    }
    return temps;
}

std::vector<ValPrediction> collect_predictions(const EarlyExitModel& model,
                                               const std::vector<LayeredSample>& samples,
                                               const Vec& temperatures,
                                               bool sampled_assignment, Rng& rng) {
    std::vector<ValPrediction> preds;
    preds.reserve(samples.size());
    for (const auto& s : samples) {
        ValPrediction v;
        v.label = s.y;
        v.exit_layer = sampled_assignment ? sample_exit_layer(model, s, rng)
                                          : decide_exit(model, s).layer;
        v.probs.reserve(model.layers());
        for (std::size_t l = 1; l <= model.layers(); ++l) {
            v.probs.push_back(scaled_probs(model, s, l, temperatures));
        }
        preds.push_back(std::move(v));
    }
    return preds;
}

GateUsageReport gate_usage_report(const EarlyExitModel& model,
                                  const std::vector<LayeredSample>& samples) {
    if (samples.empty()) throw std::invalid_argument("gate_usage_report: empty sample set");
    const std::size_t layer_count = model.layers();
    GateUsageReport rep;
    rep.counts.assign(layer_count, 0);
    rep.fraction.assign(layer_count, 0.0);
    rep.acc_exited.assign(layer_count, 0.0);
    rep.acc_full.assign(layer_count, 0.0);

    std::vector<std::size_t> correct_at(layer_count, 0);
    std::size_t correct_total = 0;
    for (const auto& s : samples) {
        const ExitDecision d = decide_exit(model, s);
        ++rep.counts[d.layer - 1];
        const bool ok = d.prediction == s.y;
        correct_at[d.layer - 1] += ok;
        correct_total += ok;
    }
    const double n = static_cast<double>(samples.size());
    for (std::size_t l = 0; l < layer_count; ++l) {
        rep.fraction[l] = static_cast<double>(rep.counts[l]) / n;
        rep.acc_exited[l] = rep.counts[l] > 0 ? static_cast<double>(correct_at[l]) /
                                                    static_cast<double>(rep.counts[l])
                                              : 0.0;
        std::size_t full_correct = 0;
        for (const auto& s : samples) {
            full_correct += argmax_index(im_forward(model.ims[l], s.z[l])) == s.y;
        }
        rep.acc_full[l] = static_cast<double>(full_correct) / n;
    }
    rep.overall_accuracy = static_cast<double>(correct_total) / n;
    return rep;
}

CurvePoint evaluate_model(const EarlyExitModel& model, const DatasetSplit& data,
                          const CostTable& table, const EvalSettings& settings,
                          double lambda_tag) {
    if (data.test.empty()) throw std::invalid_argument("evaluate_model: empty test split");

    const Vec temps = fit_exit_temperatures(model, data.val2);
    Rng assign_rng = Rng(settings.seed).child(7);
    ConformalCalibrator calibrator;
    bool calibrated = false;
    if (!data.val2.empty()) {
        const auto valpreds = collect_predictions(model, data.val2, temps,
                                                  settings.sampled_exit_assignment, assign_rng);
        calibrator = conformal_thresholds(valpreds, settings.strategy, settings.alpha);
        calibrated = true;
    }

    TestOutcome outcome;
    for (const auto& s : data.test) {
        const ExitDecision d = decide_exit(model, s);
        outcome.exit_layers.push_back(d.layer);
        const Vec p = scaled_probs(model, s, d.layer, temps);
        const std::size_t pred = argmax_index(p);
        outcome.predictions.push_back(pred);
        outcome.p_max.push_back(*std::max_element(p.begin(), p.end()));
        outcome.correct.push_back(pred == s.y);
        outcome.labels.push_back(s.y);
        outcome.sets.push_back(calibrated ? conformal_set(calibrator, d.layer, p)
                                          : std::vector<std::size_t>{});
    }
    return summarise(model, data, table, settings, lambda_tag, outcome);
}

std::vector<CurvePoint> lambda_sweep(const TrainConfig& cfg, const DatasetSplit& data,
                                     const CostTable& table, const std::vector<double>& lambdas,
                                     const EvalSettings& settings) {
    if (lambdas.empty()) throw std::invalid_argument("lambda_sweep: need at least one lambda");

    // Shared warm-up checkpoint keeps the curve points comparable.
    Trainer warm(cfg, data, table);
    warm.run_warmup();
    const EarlyExitModel warmed = warm.model();
    const auto warm_log = warm.log();

    std::vector<CurvePoint> points(lambdas.size());
    const std::size_t workers = std::min(max_threads(), lambdas.size());

    auto run_point = [&](std::size_t i) {
        TrainConfig point_cfg = cfg;
        point_cfg.lambda = lambdas[i];
        Trainer trainer(point_cfg, data, table, warmed);
        trainer.run_bilevel();
        points[i] = evaluate_model(trainer.model(), data, table, settings, lambdas[i]);
    };

    if (workers <= 1) {
        for (std::size_t i = 0; i < lambdas.size(); ++i) run_point(i);
    } else {
        std::vector<std::future<void>> futures;
        futures.reserve(lambdas.size());
        std::atomic<std::size_t> next{0};
        for (std::size_t w = 0; w < workers; ++w) {
            futures.push_back(std::async(std::launch::async, [&]() {
                for (std::size_t i = next.fetch_add(1); i < lambdas.size();
                     i = next.fetch_add(1)) {
                    run_point(i);
                }
            }));
        }
        for (auto& f : futures) f.get();
    }
    return points;
}

std::vector<CurvePoint> threshold_gm_baseline(const EarlyExitModel& model,
                                              const DatasetSplit& data, const CostTable& table,
                                              const std::vector<double>& thresholds,
                                              const EvalSettings& settings) {
    if (data.test.empty()) throw std::invalid_argument("threshold_gm_baseline: empty test split");
    const Vec temps = fit_exit_temperatures(model, data.val2);

    std::vector<CurvePoint> points;
    points.reserve(thresholds.size());
    for (double threshold : thresholds) {
        ConformalCalibrator calibrator;
        bool calibrated = false;
        if (!data.val2.empty()) {
            // Threshold exiting is deterministic, so V^l buckets come from
            // the same rule rather than from sampling.
            std::vector<ValPrediction> valpreds;
            valpreds.reserve(data.val2.size());
            for (const auto& s : data.val2) {
                ValPrediction v;
                v.label = s.y;
                v.exit_layer = threshold_exit_layer(model, s, threshold);
                for (std::size_t l = 1; l <= model.layers(); ++l) {
                    v.probs.push_back(scaled_probs(model, s, l, temps));
                }
                valpreds.push_back(std::move(v));
            }
            calibrator = conformal_thresholds(valpreds, settings.strategy, settings.alpha);
            calibrated = true;
        }

        TestOutcome outcome;
        for (const auto& s : data.test) {
            const std::size_t l = threshold_exit_layer(model, s, threshold);
            outcome.exit_layers.push_back(l);
            const Vec p = scaled_probs(model, s, l, temps);
            const std::size_t pred = argmax_index(p);
            outcome.predictions.push_back(pred);
            outcome.p_max.push_back(*std::max_element(p.begin(), p.end()));
            outcome.correct.push_back(pred == s.y);
            outcome.labels.push_back(s.y);
            outcome.sets.push_back(calibrated ? conformal_set(calibrator, l, p)
                                              : std::vector<std::size_t>{});
        }
        points.push_back(summarise(model, data, table, settings, threshold, outcome));
    }
    return points;
}

CurvePoint frozen_im_ablation(const TrainConfig& cfg, const DatasetSplit& data,
                              const CostTable& table, EarlyExitModel warmed_model,
                              const EvalSettings& settings) {
    Trainer trainer(cfg, data, table, std::move(warmed_model));
    trainer.run_bilevel(/*gates_only=*/true);
    return evaluate_model(trainer.model(), data, table, settings, cfg.lambda);
}

double interpolate_accuracy_at_cost(const std::vector<CurvePoint>& curve, double cost) {
    if (curve.empty()) throw std::invalid_argument("interpolate_accuracy_at_cost: empty curve");
    std::vector<CurvePoint> sorted = curve;
    std::sort(sorted.begin(), sorted.end(),
              [](const CurvePoint& a, const CurvePoint& b) { return a.ic < b.ic; });
    if (cost <= sorted.front().ic) return sorted.front().accuracy;
    if (cost >= sorted.back().ic) return sorted.back().accuracy;
    for (std::size_t i = 1; i < sorted.size(); ++i) {
        if (cost <= sorted[i].ic) {
            const double span = sorted[i].ic - sorted[i - 1].ic;
            if (span <= 0.0) return std::max(sorted[i - 1].accuracy, sorted[i].accuracy);
            const double w = (cost - sorted[i - 1].ic) / span;
            return (1.0 - w) * sorted[i - 1].accuracy + w * sorted[i].accuracy;
        }
    }
    return sorted.back().accuracy;
}

void write_curve_csv(const std::vector<CurvePoint>& points, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw LoadError("write_curve_csv: cannot open " + path.string());
    os << "lambda,accuracy,ic,ic_norm,ece,coverage,inefficiency\n";
    os << std::setprecision(17);
    for (const auto& p : points) {
        os << p.lambda << "," << p.accuracy << "," << p.ic << "," << p.ic_norm << "," << p.ece
           << "," << p.coverage << "," << p.inefficiency << "\n";
    }
}

void write_curve_sidecar(const std::vector<CurvePoint>& points,
                         const std::filesystem::path& path) {
    json doc = json::array();
    for (const auto& p : points) {
        doc.push_back({{"lambda", p.lambda},
                       {"accuracy", p.accuracy},
                       {"ic", p.ic},
                       {"ic_norm", p.ic_norm},
                       {"ece", p.ece},
                       {"coverage", p.coverage},
                       {"inefficiency", p.inefficiency},
                       {"exit_fraction", p.exit_fraction},
                       {"acc_exited", p.acc_exited},
                       {"acc_full", p.acc_full}});
    }
    std::ofstream os(path);
    if (!os) throw LoadError("write_curve_sidecar: cannot open " + path.string());
    os << doc.dump(2) << "\n";
}

AlphaSweepResult sweep_alpha_until_coverage(const std::vector<ValPrediction>& calset,
                                            const std::vector<ValPrediction>& evalset,
                                            ConformalStrategy strategy, double target_alpha,
                                            double step) {
    if (!(step > 0.0)) throw std::invalid_argument("sweep_alpha_until_coverage: step must be > 0");
    const double target_coverage = 1.0 - target_alpha;

    AlphaSweepResult result;
    for (double alpha = target_alpha; alpha > 0.0; alpha -= step) {
        result.alpha_used = alpha;
        result.calibrator = conformal_thresholds(calset, strategy, alpha);
        std::vector<std::vector<std::size_t>> sets;
        std::vector<std::size_t> labels;
        sets.reserve(evalset.size());
        for (const auto& v : evalset) {
            sets.push_back(
                conformal_set(result.calibrator, v.exit_layer, v.probs[v.exit_layer - 1]));
            labels.push_back(v.label);
        }
        result.stats = coverage_and_inefficiency(sets, labels);
        if (result.stats.coverage > target_coverage) break;
    }
    return result;
}

MeanCI mean_ci(const Vec& values) {
    if (values.empty()) throw std::invalid_argument("mean_ci: empty input");
    const double n = static_cast<double>(values.size());
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var = values.size() > 1 ? var / (n - 1.0) : 0.0;
    const double half = 1.96 * std::sqrt(var / n);
    return {mean, mean - half, mean + half};
}

} // namespace eedn

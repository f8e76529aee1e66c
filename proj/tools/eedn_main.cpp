// eedn: generate data, train, evaluate, calibrate and sweep early-exit
// models from a single JSON config. Exit codes: 0 success, 1 validation
// error, 2 runtime failure.

#include <CLI11.hpp>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>

#include "eedn/config.hpp"
#include "eedn/errors.hpp"
#include "eedn/evaluation.hpp"
#include "eedn/exit_model.hpp"
#include "eedn/trainer.hpp"
#include "eedn/uncertainty.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct CommonArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON run configuration")->required();
    cmd->add_option("--seed", args.seed, "Override every seed in the config");
    cmd->add_option("--out", args.out, "Override the output directory");
}

eedn::RunConfig resolve_config(const CommonArgs& args) {
    eedn::RunConfig cfg = eedn::load_run_config(args.config_path);
    if (args.seed) eedn::override_seed(cfg, *args.seed);
    if (args.out) cfg.output = *args.out;
    return cfg;
}

std::vector<double> parse_double_list(const std::string& csv, const char* what) {
    std::vector<double> values;
    std::stringstream ss(csv);
    std::string token;
    while (std::getline(ss, token, ',')) {
        try {
            values.push_back(std::stod(token));
        } catch (const std::exception&) {
            throw eedn::ConfigError(std::string(what) + ": cannot parse '" + token + "'");
        }
    }
    if (values.empty()) throw eedn::ConfigError(std::string(what) + ": empty list");
    return values;
}

struct LoadedRun {
    eedn::DatasetSplit data;
    std::size_t num_classes = 0;
    std::vector<std::size_t> dims;
    eedn::CostTable table;
};

LoadedRun load_run(const eedn::RunConfig& cfg) {
    LoadedRun run;
    run.data = eedn::load_dataset(cfg);
    run.num_classes = eedn::dataset_num_classes(cfg, run.data);
    eedn::validate_against_dataset(cfg, run.data, run.num_classes);
    run.dims = eedn::dataset_dims(run.data);
    run.table = eedn::make_cost_table(cfg, run.dims, run.num_classes);
    return run;
}

int cmd_gen(const CommonArgs& args) {
    const eedn::RunConfig cfg = resolve_config(args);
    if (!cfg.synth_dataset) {
        throw eedn::ConfigError("gen: dataset.type must be 'synth'");
    }
    const eedn::DatasetSplit data = eedn::synth_generate(cfg.synth);
    const fs::path dir = cfg.output / "activations";
    eedn::save_activations(data, dir, cfg.synth.classes);
    std::cout << "wrote " << (dir / "manifest.json").string() << "\n";
    return 0;
}

int cmd_train(const CommonArgs& args, std::optional<double> lambda) {
    eedn::RunConfig cfg = resolve_config(args);
    if (lambda) cfg.train.lambda = *lambda;
    const LoadedRun run = load_run(cfg);

    eedn::TrainResult result = eedn::train_model(cfg.train, run.data, run.table);

    fs::create_directories(cfg.output);
    eedn::save_checkpoint(result.model, cfg.output / "checkpoint");
    eedn::write_train_log(result.log, cfg.output / "train_log.jsonl");
    eedn::save_cost_table(run.table, cfg.output / "cost_table.json");
    std::cout << "wrote " << (cfg.output / "checkpoint").string() << "\n";
    if (!result.log.empty()) {
        const auto& last = result.log.back();
        std::cout << "final val_acc " << last.val_acc << ", avg ic_norm " << last.avg_ic_norm
                  << "\n";
    }
    return 0;
}

int cmd_eval(const CommonArgs& args, const std::optional<std::string>& checkpoint) {
    const eedn::RunConfig cfg = resolve_config(args);
    const fs::path ckpt = checkpoint ? fs::path(*checkpoint) : cfg.output / "checkpoint";
    const eedn::EarlyExitModel model = eedn::load_checkpoint(ckpt);
    const LoadedRun run = load_run(cfg);

    const eedn::CurvePoint pt =
        eedn::evaluate_model(model, run.data, run.table, cfg.eval, cfg.train.lambda);
    const eedn::GateUsageReport rep = eedn::gate_usage_report(model, run.data.test);

    json doc;
    doc["accuracy"] = pt.accuracy;
    doc["ic"] = pt.ic;
    doc["ic_norm"] = pt.ic_norm;
    doc["ece"] = pt.ece;
    doc["coverage"] = pt.coverage;
    doc["inefficiency"] = pt.inefficiency;
    doc["gate_usage"] = {{"counts", rep.counts},
                         {"fraction", rep.fraction},
                         {"acc_exited", rep.acc_exited},
                         {"acc_full", rep.acc_full},
                         {"overall_accuracy", rep.overall_accuracy}};

    fs::create_directories(cfg.output);
    std::ofstream os(cfg.output / "eval.json");
    os << doc.dump(2) << "\n";
    std::cout << doc.dump(2) << "\n";
    return 0;
}

int cmd_calibrate(const CommonArgs& args, const std::optional<std::string>& checkpoint,
                  std::optional<double> alpha, const std::optional<std::string>& strategy) {
    eedn::RunConfig cfg = resolve_config(args);
    if (alpha) cfg.eval.alpha = *alpha;
    if (strategy) cfg.eval.strategy = eedn::conformal_strategy_from_string(*strategy);
    const fs::path ckpt = checkpoint ? fs::path(*checkpoint) : cfg.output / "checkpoint";
    const eedn::EarlyExitModel model = eedn::load_checkpoint(ckpt);
    const LoadedRun run = load_run(cfg);
    if (run.data.val2.empty()) {
        throw eedn::ConfigError("calibrate: empty val2 split");
    }

    const eedn::Vec temps = eedn::fit_exit_temperatures(model, run.data.val2);
    eedn::Rng rng = eedn::Rng(cfg.eval.seed).child(7);
    const auto preds = eedn::collect_predictions(model, run.data.val2, temps,
                                                 cfg.eval.sampled_exit_assignment, rng);
    const eedn::ConformalCalibrator cal =
        eedn::conformal_thresholds(preds, cfg.eval.strategy, cfg.eval.alpha);

    fs::create_directories(cfg.output);
    const fs::path path = cfg.output / "calibration.json";
    eedn::save_calibration(cal, temps, path);
    std::cout << "wrote " << path.string() << "\n";
    return 0;
}

int cmd_sweep(const CommonArgs& args, const std::optional<std::string>& lambdas_csv) {
    const eedn::RunConfig cfg = resolve_config(args);
    const std::vector<double> lambdas =
        lambdas_csv ? parse_double_list(*lambdas_csv, "--lambdas")
                    : std::vector<double>{0.01, 0.1, 0.5, 1.0, 3.0, 10.0};
    const LoadedRun run = load_run(cfg);

    const auto points = eedn::lambda_sweep(cfg.train, run.data, run.table, lambdas, cfg.eval);

    fs::create_directories(cfg.output);
    eedn::write_curve_csv(points, cfg.output / "sweep.csv");
    eedn::write_curve_sidecar(points, cfg.output / "sweep_gates.json");
    std::cout << "wrote " << (cfg.output / "sweep.csv").string() << " (" << points.size()
              << " rows)\n";
    return 0;
}

int cmd_ablate(const CommonArgs& args, const std::optional<std::string>& thresholds_csv) {
    const eedn::RunConfig cfg = resolve_config(args);
    std::vector<double> thresholds;
    if (thresholds_csv) {
        thresholds = parse_double_list(*thresholds_csv, "--thresholds");
    } else {
        for (double t = 0.5; t < 0.951; t += 0.05) thresholds.push_back(t);
    }
    const LoadedRun run = load_run(cfg);

    // Both decoupled baselines share one warm-up checkpoint.
    eedn::Trainer warm(cfg.train, run.data, run.table);
    warm.run_warmup();
    const eedn::EarlyExitModel warmed = warm.model();

    const auto baseline =
        eedn::threshold_gm_baseline(warmed, run.data, run.table, thresholds, cfg.eval);
    const eedn::CurvePoint frozen =
        eedn::frozen_im_ablation(cfg.train, run.data, run.table, warmed, cfg.eval);

    fs::create_directories(cfg.output);
    eedn::write_curve_csv(baseline, cfg.output / "baseline_threshold.csv");
    eedn::write_curve_sidecar(baseline, cfg.output / "baseline_threshold_gates.json");
    eedn::write_curve_csv({frozen}, cfg.output / "ablation_frozen_im.csv");
    eedn::write_curve_sidecar({frozen}, cfg.output / "ablation_frozen_im_gates.json");
    std::cout << "wrote " << (cfg.output / "baseline_threshold.csv").string() << " and "
              << (cfg.output / "ablation_frozen_im.csv").string() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Early-exit dynamic network training and evaluation"};
    app.require_subcommand(1);

    CommonArgs gen_args, train_args, eval_args, cal_args, sweep_args, ablate_args;
    std::optional<double> train_lambda, cal_alpha;
    std::optional<std::string> eval_ckpt, cal_ckpt, cal_strategy, sweep_lambdas,
        ablate_thresholds;

    auto* gen = app.add_subcommand("gen", "Generate synthetic activations to disk");
    add_common(gen, gen_args);

    auto* train = app.add_subcommand("train", "Warm-up + bi-level training");
    add_common(train, train_args);
    train->add_option("--lambda", train_lambda, "Override the cost importance");

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
    add_common(eval, eval_args);
    eval->add_option("--checkpoint", eval_ckpt, "Checkpoint directory");

    auto* calibrate = app.add_subcommand("calibrate", "Fit temperatures + conformal thresholds");
    add_common(calibrate, cal_args);
    calibrate->add_option("--checkpoint", cal_ckpt, "Checkpoint directory");
    calibrate->add_option("--alpha", cal_alpha, "Target miscoverage");
    calibrate->add_option("--strategy", cal_strategy,
                          "Conformal strategy (General|IMs|StrictGating|Gated)");

    auto* sweep = app.add_subcommand("sweep", "Accuracy/cost curve over lambda values");
    add_common(sweep, sweep_args);
    sweep->add_option("--lambdas", sweep_lambdas, "Comma-separated lambda grid");

    auto* ablate = app.add_subcommand("ablate", "Decoupled baselines (threshold GM, frozen IMs)");
    add_common(ablate, ablate_args);
    ablate->add_option("--thresholds", ablate_thresholds, "Comma-separated confidence grid");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        std::cerr << e.what() << "\n";
        return 1;
    }

    try {
        if (gen->parsed()) return cmd_gen(gen_args);
        if (train->parsed()) return cmd_train(train_args, train_lambda);
        if (eval->parsed()) return cmd_eval(eval_args, eval_ckpt);
        if (calibrate->parsed()) return cmd_calibrate(cal_args, cal_ckpt, cal_alpha, cal_strategy);
        if (sweep->parsed()) return cmd_sweep(sweep_args, sweep_lambdas);
        if (ablate->parsed()) return cmd_ablate(ablate_args, ablate_thresholds);
    } catch (const eedn::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

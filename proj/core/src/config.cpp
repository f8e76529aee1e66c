#include "eedn/config.hpp"

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <string>

#include "eedn/errors.hpp"

namespace eedn {

namespace {

using json = nlohmann::ordered_json;

void check_keys(const json& obj, const std::set<std::string>& allowed,
                const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + ": expected a JSON object");
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (!allowed.contains(key)) {
            throw ConfigError(where + ": unknown key '" + key + "'");
        }
    }
}

template <typename T>
void read_field(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj[key].get<T>();
}

void parse_dataset(const json& obj, RunConfig& cfg) {
    check_keys(obj, {"type", "synth", "manifest"}, "dataset");
    std::string type = "synth";
    read_field(obj, "type", type);
    if (type == "synth") {
        cfg.synth_dataset = true;
    } else if (type == "file") {
        cfg.synth_dataset = false;
    } else {
        throw ConfigError("dataset.type: expected 'synth' or 'file', got '" + type + "'");
    }

    if (obj.contains("synth")) {
        const auto& s = obj["synth"];
        check_keys(s,
                   {"layers", "classes", "dim", "n_train", "n_val1", "n_val2", "n_test",
                    "easy_fraction", "signal_scale", "noise_sigma", "seed"},
                   "dataset.synth");
        read_field(s, "layers", cfg.synth.layers);
        read_field(s, "classes", cfg.synth.classes);
        read_field(s, "dim", cfg.synth.dim);
        read_field(s, "n_train", cfg.synth.n_train);
        read_field(s, "n_val1", cfg.synth.n_val1);
        read_field(s, "n_val2", cfg.synth.n_val2);
        read_field(s, "n_test", cfg.synth.n_test);
        read_field(s, "easy_fraction", cfg.synth.easy_fraction);
        read_field(s, "signal_scale", cfg.synth.signal_scale);
        read_field(s, "noise_sigma", cfg.synth.noise_sigma);
        read_field(s, "seed", cfg.synth.seed);
    }
    if (obj.contains("manifest")) {
        cfg.manifest = obj["manifest"].get<std::string>();
    }
    if (!cfg.synth_dataset && cfg.manifest.empty()) {
        throw ConfigError("dataset: type 'file' requires a manifest path");
    }
}

void parse_model(const json& obj, RunConfig& cfg) {
    check_keys(obj, {"layers", "dims", "classes", "layer_cost", "gate_feature_cost"}, "model");
    std::size_t layers = 0;
    read_field(obj, "layers", layers);
    read_field(obj, "dims", cfg.dims);
    read_field(obj, "classes", cfg.classes);
    read_field(obj, "layer_cost", cfg.layer_cost);
    read_field(obj, "gate_feature_cost", cfg.gate_feature_cost);
    if (layers != 0 && !cfg.dims.empty() && cfg.dims.size() != layers) {
        throw ConfigError("model: dims has " + std::to_string(cfg.dims.size()) +
                          " entries but layers = " + std::to_string(layers));
    }
    if (layers != 0 && cfg.dims.empty()) {
        cfg.dims.assign(layers, 0); // dimension checked against the dataset later
    }
}

void parse_train(const json& obj, RunConfig& cfg) {
    check_keys(obj,
               {"lambda", "epochs", "warmup_epochs", "bi_switch", "batch_size", "lr0",
                "weight_decay", "target_strategy", "imbalance_weighting", "seed",
                "final_pretrain_epochs", "early_stopping", "patience"},
               "train");
    read_field(obj, "lambda", cfg.train.lambda);
    read_field(obj, "epochs", cfg.train.epochs);
    read_field(obj, "warmup_epochs", cfg.train.warmup_epochs);
    read_field(obj, "bi_switch", cfg.train.bi_switch);
    read_field(obj, "batch_size", cfg.train.batch_size);
    read_field(obj, "lr0", cfg.train.lr0);
    read_field(obj, "weight_decay", cfg.train.weight_decay);
    if (obj.contains("target_strategy")) {
        cfg.train.target_strategy =
            target_strategy_from_string(obj["target_strategy"].get<std::string>());
    }
    read_field(obj, "imbalance_weighting", cfg.train.imbalance_weighting);
    read_field(obj, "seed", cfg.train.seed);
    read_field(obj, "final_pretrain_epochs", cfg.train.final_pretrain_epochs);
    read_field(obj, "early_stopping", cfg.train.early_stopping);
    read_field(obj, "patience", cfg.train.patience);
}

void parse_uncertainty(const json& obj, RunConfig& cfg) {
    check_keys(obj, {"alpha", "strategy", "bins", "sampled_exit_assignment"}, "uncertainty");
    read_field(obj, "alpha", cfg.eval.alpha);
    if (obj.contains("strategy")) {
        cfg.eval.strategy = conformal_strategy_from_string(obj["strategy"].get<std::string>());
    }
    read_field(obj, "bins", cfg.eval.ece_bins);
    read_field(obj, "sampled_exit_assignment", cfg.eval.sampled_exit_assignment);
    if (!(cfg.eval.alpha > 0.0 && cfg.eval.alpha < 1.0)) {
        throw ConfigError("uncertainty.alpha must lie in (0, 1)");
    }
}

} // namespace

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open " + path.string());
    json doc;
    try {
        is >> doc;
    } catch (const json::exception& e) {
        throw ConfigError("config: parse failure in " + path.string() + ": " + e.what());
    }

    RunConfig cfg;
    try {
        check_keys(doc, {"dataset", "model", "train", "uncertainty", "output"}, "config");
        if (doc.contains("dataset")) parse_dataset(doc["dataset"], cfg);
        if (doc.contains("model")) parse_model(doc["model"], cfg);
        if (doc.contains("train")) parse_train(doc["train"], cfg);
        if (doc.contains("uncertainty")) parse_uncertainty(doc["uncertainty"], cfg);
        if (doc.contains("output")) cfg.output = doc["output"].get<std::string>();
    } catch (const json::exception& e) {
        throw ConfigError("config: invalid field value: " + std::string(e.what()));
    }

    cfg.train.validate();
    if (cfg.synth_dataset) {
        cfg.synth.finalize();
    }
    cfg.eval.seed = cfg.train.seed;
    return cfg;
}

void override_seed(RunConfig& cfg, std::uint64_t seed) {
    cfg.synth.seed = seed;
    cfg.train.seed = seed;
    cfg.eval.seed = seed;
}

DatasetSplit load_dataset(const RunConfig& cfg) {
    if (cfg.synth_dataset) return synth_generate(cfg.synth);
    return load_activations(cfg.manifest);
}

std::size_t dataset_num_classes(const RunConfig& cfg, const DatasetSplit& data) {
    if (cfg.classes != 0) return cfg.classes;
    if (cfg.synth_dataset) return cfg.synth.classes;
    if (!cfg.manifest.empty()) return manifest_num_classes(cfg.manifest);
    std::size_t max_label = 0;
    for (const auto* split : {&data.train, &data.val1, &data.val2, &data.test}) {
        for (const auto& s : *split) max_label = std::max(max_label, s.y);
    }
    return max_label + 1;
}

void validate_against_dataset(const RunConfig& cfg, const DatasetSplit& data,
                              std::size_t num_classes) {
    const auto dims = dataset_dims(data);
    if (!cfg.dims.empty()) {
        if (cfg.dims.size() != dims.size()) {
            throw ConfigError("model: config declares " + std::to_string(cfg.dims.size()) +
                              " layers but dataset has " + std::to_string(dims.size()));
        }
        for (std::size_t l = 0; l < dims.size(); ++l) {
            if (cfg.dims[l] != 0 && cfg.dims[l] != dims[l]) {
                throw ConfigError("model: dims[" + std::to_string(l) + "] = " +
                                  std::to_string(cfg.dims[l]) + " but dataset layer has " +
                                  std::to_string(dims[l]));
            }
        }
    }
    if (cfg.classes != 0 && cfg.classes != num_classes) {
        throw ConfigError("model: classes = " + std::to_string(cfg.classes) +
                          " but dataset has " + std::to_string(num_classes));
    }
    if (!cfg.layer_cost.empty() && cfg.layer_cost.size() != dims.size()) {
        throw ConfigError("model: layer_cost must have one entry per layer");
    }
}

CostTable make_cost_table(const RunConfig& cfg, const std::vector<std::size_t>& dims,
                          std::size_t num_classes) {
    std::vector<MulAdds> layer_cost = cfg.layer_cost;
    if (layer_cost.empty()) layer_cost.assign(dims.size(), 1000000);
    return default_cost_table(layer_cost, dims, num_classes, cfg.gate_feature_cost);
}

} // namespace eedn

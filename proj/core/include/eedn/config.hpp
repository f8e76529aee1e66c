#pragma once

#include <filesystem>
#include <vector>

#include "eedn/backbone.hpp"
#include "eedn/cost_model.hpp"
#include "eedn/evaluation.hpp"
#include "eedn/trainer.hpp"

namespace eedn {

/// One JSON document wiring the CLI to the library. Unknown keys are
/// rejected; flags override file values which override defaults.
struct RunConfig {
    bool synth_dataset = true;
    SynthConfig synth;
    std::filesystem::path manifest;

    /// Optional expectations cross-checked against the dataset.
    std::vector<std::size_t> dims;
    std::size_t classes = 0;

    /// Per-layer backbone costs; empty = uniform 1e6 per layer.
    std::vector<MulAdds> layer_cost;
    MulAdds gate_feature_cost = kDefaultGateFeatureCost;

    TrainConfig train;
    EvalSettings eval;

    std::filesystem::path output = "out";
};

RunConfig load_run_config(const std::filesystem::path& path);

/// Applies `--seed`: data sampling, initialisation and V^l sampling all
/// follow this one value.
void override_seed(RunConfig& cfg, std::uint64_t seed);

DatasetSplit load_dataset(const RunConfig& cfg);

CostTable make_cost_table(const RunConfig& cfg, const std::vector<std::size_t>& dims,
                          std::size_t num_classes);

/// Consistency checks between config expectations and the actual dataset.
void validate_against_dataset(const RunConfig& cfg, const DatasetSplit& data,
                              std::size_t num_classes);

std::size_t dataset_num_classes(const RunConfig& cfg, const DatasetSplit& data);

} // namespace eedn

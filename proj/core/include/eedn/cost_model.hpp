#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace eedn {

using MulAdds = std::int64_t;

/// Extracting the 4 gate features (entropy terms dominate) is approximated
/// as a fixed count; together with the 4-weight dot product the default
/// reproduces the 96 Mul-Adds per gate of the reference fixture.
constexpr MulAdds kDefaultGateFeatureCost = 92;

/// Per-exit multiply-add accounting. ic is cumulative over layers, IMs and
/// gates; ic_norm is ic / ic^L. The final layer carries no IM or gate cost
/// (the last IM is the backbone classifier, the last gate is constant).
struct CostTable {
    std::vector<MulAdds> layer_cost;
    std::vector<MulAdds> im_cost;
    std::vector<MulAdds> gate_cost;
    std::vector<MulAdds> ic;
    std::vector<double> ic_norm;

    std::size_t layers() const { return layer_cost.size(); }
};

/// Cumulative sums and normalisation. All three vectors must have equal
/// length; per-layer totals must be positive so that ic is strictly
/// increasing. Throws ConfigError on zero total cost.
CostTable build_cost_table(std::vector<MulAdds> layer_cost, std::vector<MulAdds> im_cost,
                           std::vector<MulAdds> gate_cost);

/// Weight multiply-adds of a single dense layer (bias adds excluded).
MulAdds muladd_linear(std::size_t in_dim, std::size_t out_dim);

/// Mean of ic^{l_i} over per-sample exit layers (1-based).
double average_cost(const std::vector<std::size_t>& exit_layers, const CostTable& table);

/// Mean of ic_norm^{l_i}.
double average_cost_norm(const std::vector<std::size_t>& exit_layers, const CostTable& table);

/// Cost table for the built-in single-layer IMs and 4-feature gates:
/// im_cost_l = d_l * K (0 at L), gate_cost_l = 4 + feature_cost (0 at L).
CostTable default_cost_table(const std::vector<MulAdds>& layer_cost,
                             const std::vector<std::size_t>& dims, std::size_t num_classes,
                             MulAdds gate_feature_cost = kDefaultGateFeatureCost);

void save_cost_table(const CostTable& table, const std::filesystem::path& path);
CostTable load_cost_table(const std::filesystem::path& path);

} // namespace eedn

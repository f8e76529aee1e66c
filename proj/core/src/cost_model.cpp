#include "eedn/cost_model.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "eedn/errors.hpp"

namespace eedn {

namespace {
using json = nlohmann::ordered_json;
}

CostTable build_cost_table(std::vector<MulAdds> layer_cost, std::vector<MulAdds> im_cost,
                           std::vector<MulAdds> gate_cost) {
    const std::size_t layer_count = layer_cost.size();
    if (layer_count == 0) throw ConfigError("cost table: need at least one layer");
    if (im_cost.size() != layer_count || gate_cost.size() != layer_count) {
        throw ConfigError("cost table: layer_cost, im_cost and gate_cost lengths differ");
    }

    CostTable table;
    table.layer_cost = std::move(layer_cost);
    table.im_cost = std::move(im_cost);
    table.gate_cost = std::move(gate_cost);
    table.ic.resize(layer_count);
    table.ic_norm.resize(layer_count);

    MulAdds cum = 0;
    for (std::size_t l = 0; l < layer_count; ++l) {
        if (table.layer_cost[l] < 0 || table.im_cost[l] < 0 || table.gate_cost[l] < 0) {
            throw ConfigError("cost table: negative cost at layer " + std::to_string(l + 1));
        }
        const MulAdds increment = table.layer_cost[l] + table.im_cost[l] + table.gate_cost[l];
        if (increment <= 0) {
            throw ConfigError("cost table: zero total cost at layer " + std::to_string(l + 1));
        }
        cum += increment;
        table.ic[l] = cum;
    }
    for (std::size_t l = 0; l < layer_count; ++l) {
        table.ic_norm[l] = static_cast<double>(table.ic[l]) / static_cast<double>(cum);
    }
    return table;
}

MulAdds muladd_linear(std::size_t in_dim, std::size_t out_dim) {
    if (in_dim == 0 || out_dim == 0) {
        throw std::invalid_argument("muladd_linear: dimensions must be >= 1");
    }
    return static_cast<MulAdds>(in_dim) * static_cast<MulAdds>(out_dim);
}

double average_cost(const std::vector<std::size_t>& exit_layers, const CostTable& table) {
    if (exit_layers.empty()) throw std::invalid_argument("average_cost: empty exit list");
    double sum = 0.0;
    for (std::size_t l : exit_layers) {
        if (l == 0 || l > table.layers()) {
            throw std::invalid_argument("average_cost: exit layer " + std::to_string(l) +
                                        " out of range");
        }
        sum += static_cast<double>(table.ic[l - 1]);
    }
    return sum / static_cast<double>(exit_layers.size());
}

double average_cost_norm(const std::vector<std::size_t>& exit_layers, const CostTable& table) {
    if (exit_layers.empty()) throw std::invalid_argument("average_cost_norm: empty exit list");
    double sum = 0.0;
    for (std::size_t l : exit_layers) {
        if (l == 0 || l > table.layers()) {
            throw std::invalid_argument("average_cost_norm: exit layer " + std::to_string(l) +
                                        " out of range");
        }
        sum += table.ic_norm[l - 1];
    }
    return sum / static_cast<double>(exit_layers.size());
}

CostTable default_cost_table(const std::vector<MulAdds>& layer_cost,
                             const std::vector<std::size_t>& dims, std::size_t num_classes,
                             MulAdds gate_feature_cost) {
    const std::size_t layer_count = dims.size();
    if (layer_cost.size() != layer_count) {
        throw ConfigError("cost table: layer_cost must have one entry per layer");
    }
    std::vector<MulAdds> im_cost(layer_count, 0);
    std::vector<MulAdds> gate_cost(layer_count, 0);
    for (std::size_t l = 0; l + 1 < layer_count; ++l) {
        im_cost[l] = muladd_linear(dims[l], num_classes);
        gate_cost[l] = muladd_linear(4, 1) + gate_feature_cost;
    }
    return build_cost_table(layer_cost, std::move(im_cost), std::move(gate_cost));
}

void save_cost_table(const CostTable& table, const std::filesystem::path& path) {
    json doc;
    doc["version"] = 1;
    doc["layer_cost"] = table.layer_cost;
    doc["im_cost"] = table.im_cost;
    doc["gate_cost"] = table.gate_cost;
    std::ofstream os(path);
    if (!os) throw LoadError("save_cost_table: cannot open " + path.string());
    os << doc.dump(2) << "\n";
}

CostTable load_cost_table(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw LoadError("cost table: cannot open " + path.string());
    json doc;
    try {
        is >> doc;
    } catch (const json::exception& e) {
        throw LoadError("cost table: parse failure: " + std::string(e.what()));
    }
    if (doc["version"].get<int>() != 1) {
        throw LoadError("cost table: unsupported version " + doc["version"].dump());
    }
    return build_cost_table(doc["layer_cost"].get<std::vector<MulAdds>>(),
                            doc["im_cost"].get<std::vector<MulAdds>>(),
                            doc["gate_cost"].get<std::vector<MulAdds>>());
}

} // namespace eedn

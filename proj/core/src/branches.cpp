#include "eedn/branches.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "eedn/errors.hpp"

namespace eedn {

namespace {

using json = nlohmann::ordered_json;

// p ln p with the continuity convention 0 ln 0 = 0.
double plogp(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

void write_u32_le(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                          static_cast<unsigned char>((v >> 8) & 0xFF),
                          static_cast<unsigned char>((v >> 16) & 0xFF),
                          static_cast<unsigned char>((v >> 24) & 0xFF)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32_le(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_values_f32(std::ostream& os, const Vec& values) {
    for (double v : values) write_u32_le(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

void read_values_f32(std::istream& is, Vec& values) {
    for (auto& v : values) v = static_cast<double>(std::bit_cast<float>(read_u32_le(is)));
}

} // namespace

Vec im_logits(const InferenceModule& im, const Vec& z) {
    if (z.size() != im.weight.cols) {
        throw std::invalid_argument("im_logits: representation dimension " +
                                    std::to_string(z.size()) + " does not match IM layer " +
                                    std::to_string(im.layer) + " expecting " +
                                    std::to_string(im.weight.cols));
    }
    Vec logits = matvec(im.weight, z);
    for (std::size_t k = 0; k < logits.size(); ++k) logits[k] += im.bias[k];
    return logits;
}

Vec im_forward(const InferenceModule& im, const Vec& z) { return softmax(im_logits(im, z)); }

GateFeatures gate_features(const Vec& p) {
    if (p.size() < 2) throw std::invalid_argument("gate_features: need at least 2 classes");

    GateFeatures m;
    double top1 = -1.0, top2 = -1.0;
    double sum_sq = 0.0;
    for (double v : p) {
        if (v > top1) {
            top2 = top1;
            top1 = v;
        } else if (v > top2) {
            top2 = v;
        }
        m.entropy -= plogp(v);
        sum_sq += v * v;
    }
    m.p_max = top1;
    m.margin = top1 - top2;
    for (double v : p) {
        m.entropy_pow -= plogp(v * v / sum_sq);
    }
    return m;
}

double gate_forward(const Gate& g, const GateFeatures& m) {
    const auto feats = m.as_array();
    double s = g.bias;
    for (std::size_t i = 0; i < feats.size(); ++i) s += g.weight[i] * feats[i];
    return sigmoid(s);
}

ImGrad im_grad(const InferenceModule& im, const Vec& z, std::size_t y, double weight) {
    const Vec p = im_forward(im, z);
    if (y >= p.size()) throw std::out_of_range("im_grad: class index out of range");

    ImGrad g;
    g.d_weight = Matrix(im.weight.rows, im.weight.cols);
    g.d_bias.assign(p.size(), 0.0);
    for (std::size_t k = 0; k < p.size(); ++k) {
        const double delta = weight * (p[k] - (k == y ? 1.0 : 0.0));
        g.d_bias[k] = delta;
        for (std::size_t c = 0; c < z.size(); ++c) g.d_weight(k, c) = delta * z[c];
    }
    return g;
}

GateGrad gate_grad(const Gate& g, const GateFeatures& m, double target, double weight) {
    const double delta = weight * (gate_forward(g, m) - target);
    const auto feats = m.as_array();
    GateGrad out;
    for (std::size_t i = 0; i < feats.size(); ++i) out.d_weight[i] = delta * feats[i];
    out.d_bias = delta;
    return out;
}

EarlyExitModel init_model(const std::vector<std::size_t>& dims, std::size_t num_classes,
                          Rng& rng) {
    if (dims.empty()) throw std::invalid_argument("init_model: need at least one layer");
    if (num_classes < 2) throw std::invalid_argument("init_model: need at least two classes");

    EarlyExitModel model;
    model.dims = dims;
    model.num_classes = num_classes;
    for (std::size_t l = 1; l <= dims.size(); ++l) {
        InferenceModule im;
        im.layer = l;
        im.weight = Matrix(num_classes, dims[l - 1]);
        for (auto& w : im.weight.data) w = rng.normal(0.0, 0.01);
        im.bias.assign(num_classes, 0.0);
        model.ims.push_back(std::move(im));
    }
    for (std::size_t l = 1; l + 1 <= dims.size(); ++l) {
        Gate g;
        g.layer = l;
        for (auto& w : g.weight) w = rng.normal(0.0, 0.01);
        g.bias = 0.0;
        model.gates.push_back(g);
    }
    return model;
}

void save_checkpoint(const EarlyExitModel& model, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    json manifest;
    manifest["version"] = 1;
    manifest["L"] = model.layers();
    manifest["K"] = model.num_classes;
    manifest["dims"] = model.dims;
    manifest["ims"] = json::array();
    manifest["gates"] = json::array();

    for (const auto& im : model.ims) {
        const std::string file = "im_" + std::to_string(im.layer) + ".bin";
        manifest["ims"].push_back({{"layer", im.layer},
                                   {"rows", im.weight.rows},
                                   {"cols", im.weight.cols},
                                   {"frozen", im.frozen},
                                   {"file", file}});
        std::ofstream os(dir / file, std::ios::binary);
        if (!os) throw LoadError("save_checkpoint: cannot open " + (dir / file).string());
        write_values_f32(os, im.weight.data);
        write_values_f32(os, im.bias);
    }
    for (const auto& g : model.gates) {
        const std::string file = "gate_" + std::to_string(g.layer) + ".bin";
        manifest["gates"].push_back({{"layer", g.layer}, {"file", file}});
        std::ofstream os(dir / file, std::ios::binary);
        if (!os) throw LoadError("save_checkpoint: cannot open " + (dir / file).string());
        Vec values(g.weight.begin(), g.weight.end());
        values.push_back(g.bias);
        write_values_f32(os, values);
    }

    std::ofstream os(dir / "checkpoint.json");
    if (!os) throw LoadError("save_checkpoint: cannot open checkpoint.json");
    os << manifest.dump(2) << "\n";
}

EarlyExitModel load_checkpoint(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    const fs::path manifest_path = dir / "checkpoint.json";
    std::ifstream is(manifest_path);
    if (!is) throw LoadError("checkpoint not found: " + manifest_path.string());
    json manifest;
    try {
        is >> manifest;
    } catch (const json::exception& e) {
        throw LoadError("checkpoint: parse failure: " + std::string(e.what()));
    }
    if (manifest["version"].get<int>() != 1) {
        throw LoadError("checkpoint: unsupported version " + manifest["version"].dump());
    }

    EarlyExitModel model;
    model.num_classes = manifest["K"].get<std::size_t>();
    model.dims = manifest["dims"].get<std::vector<std::size_t>>();
    const auto layer_count = manifest["L"].get<std::size_t>();
    if (model.dims.size() != layer_count) {
        throw LoadError("checkpoint: dims length does not match L");
    }

    for (const auto& entry : manifest["ims"]) {
        InferenceModule im;
        im.layer = entry["layer"].get<std::size_t>();
        im.frozen = entry["frozen"].get<bool>();
        const auto rows = entry["rows"].get<std::size_t>();
        const auto cols = entry["cols"].get<std::size_t>();
        if (im.layer == 0 || im.layer > layer_count || rows != model.num_classes ||
            cols != model.dims[im.layer - 1]) {
            throw LoadError("checkpoint: IM " + std::to_string(im.layer) +
                            " has inconsistent shape");
        }
        im.weight = Matrix(rows, cols);
        im.bias.assign(rows, 0.0);
        const fs::path file = dir / entry["file"].get<std::string>();
        std::ifstream blob(file, std::ios::binary);
        if (!blob) throw LoadError("checkpoint: missing blob " + file.string());
        read_values_f32(blob, im.weight.data);
        read_values_f32(blob, im.bias);
        if (!blob) throw LoadError("checkpoint: truncated blob " + file.string());
        if (!all_finite(im.weight) || !all_finite(im.bias)) {
            throw LoadError("checkpoint: non-finite IM parameters in " + file.string());
        }
        model.ims.push_back(std::move(im));
    }
    if (model.ims.size() != layer_count) {
        throw LoadError("checkpoint: expected " + std::to_string(layer_count) + " IMs, found " +
                        std::to_string(model.ims.size()));
    }

    for (const auto& entry : manifest["gates"]) {
        Gate g;
        g.layer = entry["layer"].get<std::size_t>();
        if (g.layer == 0 || g.layer >= layer_count) {
            throw LoadError("checkpoint: gate layer " + std::to_string(g.layer) + " out of range");
        }
        const fs::path file = dir / entry["file"].get<std::string>();
        std::ifstream blob(file, std::ios::binary);
        if (!blob) throw LoadError("checkpoint: missing blob " + file.string());
        Vec values(5);
        read_values_f32(blob, values);
        if (!blob) throw LoadError("checkpoint: truncated blob " + file.string());
        if (!all_finite(values)) {
            throw LoadError("checkpoint: non-finite gate parameters in " + file.string());
        }
        std::copy_n(values.begin(), 4, g.weight.begin());
        g.bias = values[4];
        model.gates.push_back(g);
    }
    if (model.gates.size() + 1 != layer_count) {
        throw LoadError("checkpoint: expected " + std::to_string(layer_count - 1) +
                        " gates, found " + std::to_string(model.gates.size()));
    }
    return model;
}

} // namespace eedn

#include "eedn/backbone.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

#include "eedn/errors.hpp"

namespace eedn {

namespace {

using json = nlohmann::ordered_json;

constexpr double kMeanScale = 3.0;      // class-mean norm
constexpr double kEasyDifficulty = 1.0; // gamma for the easy subset
constexpr double kHardDifficulty = 0.4;
constexpr double kPairSpread = 0.5;     // direction offset within a class pair

// Round-trip through float32 so the on-disk format is lossless for
// generated data.
double quantize(double v) { return static_cast<double>(static_cast<float>(v)); }

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

void write_f32_le(std::ostream& os, float v) {
    write_u32_le(os, std::bit_cast<std::uint32_t>(v));
}

float read_f32_le(std::istream& is) {
    return std::bit_cast<float>(read_u32_le(is));
}

std::vector<LayeredSample> draw_samples(std::size_t n, const SynthConfig& cfg,
                                        const std::vector<Vec>& means, Rng& rng) {
    std::vector<LayeredSample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        LayeredSample s;
        s.y = static_cast<std::size_t>(rng.uniform_int(cfg.classes));
        const bool easy = rng.uniform() < cfg.easy_fraction;
        const double gamma = easy ? kEasyDifficulty : kHardDifficulty;
        const Vec& mu = means[s.y];

        s.x.resize(cfg.dim);
        for (std::size_t j = 0; j < cfg.dim; ++j) {
            s.x[j] = quantize(gamma * mu[j] + cfg.noise_sigma * rng.normal());
        }
        s.z.resize(cfg.layers);
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            s.z[l].resize(cfg.dim);
            const double scale = cfg.signal_scale[l] * gamma;
            for (std::size_t j = 0; j < cfg.dim; ++j) {
                s.z[l][j] = quantize(scale * mu[j] + cfg.noise_sigma * rng.normal());
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

struct SplitRef {
    const char* name;
    const std::vector<LayeredSample>* samples;
};

struct SplitMut {
    const char* name;
    std::vector<LayeredSample>* samples;
};

} // namespace

void SynthConfig::finalize() {
    if (layers == 0) throw ConfigError("synth: layers must be >= 1");
    if (classes < 2) throw ConfigError("synth: classes must be >= 2");
    if (dim == 0) throw ConfigError("synth: dim must be >= 1");
    if (easy_fraction < 0.0 || easy_fraction > 1.0) {
        throw ConfigError("synth: easy_fraction must lie in [0, 1]");
    }
    if (noise_sigma < 0.0) throw ConfigError("synth: noise_sigma must be >= 0");
    if (signal_scale.empty()) {
        signal_scale.resize(layers);
        for (std::size_t l = 0; l < layers; ++l) {
            signal_scale[l] =
                layers == 1 ? 1.0
                            : 0.2 + 0.8 * static_cast<double>(l) /
                                        static_cast<double>(layers - 1);
        }
    }
    if (signal_scale.size() != layers) {
        throw ConfigError("synth: signal_scale must have exactly L entries");
    }
    for (std::size_t l = 0; l < layers; ++l) {
        if (!(signal_scale[l] > 0.0)) throw ConfigError("synth: signal_scale entries must be > 0");
        if (l > 0 && signal_scale[l] < signal_scale[l - 1]) {
            throw ConfigError("synth: signal_scale must be nondecreasing");
        }
    }
}

DatasetSplit synth_generate(SynthConfig cfg) {
    cfg.finalize();
    Rng rng(cfg.seed);

    // Distinct class means on a common-norm sphere. Consecutive classes form
    // similar pairs (an odd class sits at a small angular offset from the
    // previous one), so low-SNR early layers see within-pair confusion while
    // the pairs themselves stay far apart.
    std::vector<Vec> means(cfg.classes, Vec(cfg.dim));
    for (std::size_t k = 0; k < cfg.classes; ++k) {
        Vec dir(cfg.dim);
        double norm2 = 0.0;
        for (auto& v : dir) {
            v = rng.normal();
            norm2 += v * v;
        }
        const double inv = 1.0 / std::sqrt(norm2);
        for (auto& v : dir) v *= inv;

        Vec& mu = means[k];
        if (k % 2 == 1) {
            const Vec& anchor = means[k - 1];
            double blended2 = 0.0;
            for (std::size_t j = 0; j < cfg.dim; ++j) {
                mu[j] = anchor[j] / kMeanScale + kPairSpread * dir[j];
                blended2 += mu[j] * mu[j];
            }
            const double rescale = kMeanScale / std::sqrt(blended2);
            for (auto& v : mu) v = quantize(v * rescale);
        } else {
            for (std::size_t j = 0; j < cfg.dim; ++j) mu[j] = quantize(dir[j] * kMeanScale);
        }
    }

    DatasetSplit ds;
    ds.train = draw_samples(cfg.n_train, cfg, means, rng);
    ds.val1 = draw_samples(cfg.n_val1, cfg, means, rng);
    ds.val2 = draw_samples(cfg.n_val2, cfg, means, rng);
    ds.test = draw_samples(cfg.n_test, cfg, means, rng);
    return ds;
}

std::vector<std::size_t> dataset_dims(const DatasetSplit& ds) {
    const std::vector<LayeredSample>* any = nullptr;
    for (const auto* split : {&ds.train, &ds.val1, &ds.val2, &ds.test}) {
        if (!split->empty()) {
            any = split;
            break;
        }
    }
    if (!any) throw std::invalid_argument("dataset_dims: all splits empty");
    std::vector<std::size_t> dims;
    for (const auto& z : any->front().z) dims.push_back(z.size());
    return dims;
}

void save_activations(const DatasetSplit& ds, const std::filesystem::path& dir,
                      std::size_t num_classes) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    const auto dims = dataset_dims(ds);
    std::size_t input_dim = 0;
    for (const auto* split : {&ds.train, &ds.val1, &ds.val2, &ds.test}) {
        if (!split->empty()) {
            input_dim = split->front().x.size();
            break;
        }
    }

    json manifest;
    manifest["version"] = 1;
    manifest["L"] = dims.size();
    manifest["K"] = num_classes;
    manifest["D"] = input_dim;
    manifest["dims"] = dims;
    manifest["splits"] = json::object();

    const SplitRef splits[] = {{"train", &ds.train},
                               {"val1", &ds.val1},
                               {"val2", &ds.val2},
                               {"test", &ds.test}};
    for (const auto& [name, samples] : splits) {
        const std::string file = std::string(name) + ".bin";
        manifest["splits"][name] = {{"count", samples->size()}, {"file", file}};

        std::ofstream os(dir / file, std::ios::binary);
        if (!os) throw LoadError("save_activations: cannot open " + (dir / file).string());
        for (const auto& s : *samples) {
            if (s.x.size() != input_dim) {
                throw LoadError("save_activations: inconsistent x dimension in split " +
                                std::string(name));
            }
            if (s.z.size() != dims.size()) {
                throw LoadError("save_activations: inconsistent layer count in split " +
                                std::string(name));
            }
            for (double v : s.x) write_f32_le(os, static_cast<float>(v));
            for (std::size_t l = 0; l < dims.size(); ++l) {
                if (s.z[l].size() != dims[l]) {
                    throw LoadError("save_activations: inconsistent z^" + std::to_string(l + 1) +
                                    " dimension in split " + std::string(name));
                }
                for (double v : s.z[l]) write_f32_le(os, static_cast<float>(v));
            }
            write_u32_le(os, static_cast<std::uint32_t>(s.y));
        }
    }

    std::ofstream os(dir / "manifest.json");
    if (!os) throw LoadError("save_activations: cannot open manifest.json");
    os << manifest.dump(2) << "\n";
}

namespace {

json parse_manifest(const std::filesystem::path& manifest_path) {
    std::ifstream is(manifest_path);
    if (!is) throw LoadError("manifest: cannot open " + manifest_path.string());
    json manifest;
    try {
        is >> manifest;
    } catch (const json::exception& e) {
        throw LoadError("manifest: parse failure in " + manifest_path.string() + ": " + e.what());
    }
    return manifest;
}

} // namespace

std::size_t manifest_num_classes(const std::filesystem::path& manifest_path) {
    const json manifest = parse_manifest(manifest_path);
    if (!manifest.contains("K")) throw LoadError("manifest: missing field K");
    return manifest["K"].get<std::size_t>();
}

DatasetSplit load_activations(const std::filesystem::path& manifest_path) {
    namespace fs = std::filesystem;
    const json manifest = parse_manifest(manifest_path);

    for (const char* field : {"version", "L", "K", "D", "dims", "splits"}) {
        if (!manifest.contains(field)) {
            throw LoadError("manifest: missing field " + std::string(field));
        }
    }
    if (manifest["version"].get<int>() != 1) {
        throw LoadError("manifest: unsupported version " + manifest["version"].dump());
    }
    const auto layer_count = manifest["L"].get<std::size_t>();
    const auto num_classes = manifest["K"].get<std::size_t>();
    const auto input_dim = manifest["D"].get<std::size_t>();
    const auto dims = manifest["dims"].get<std::vector<std::size_t>>();
    if (dims.size() != layer_count) {
        throw LoadError("manifest: dims has " + std::to_string(dims.size()) +
                        " entries but L = " + std::to_string(layer_count));
    }

    std::size_t record_floats = input_dim;
    for (auto d : dims) record_floats += d;
    const std::size_t record_bytes = 4 * record_floats + 4;

    DatasetSplit ds;
    const SplitMut splits[] = {{"train", &ds.train},
                               {"val1", &ds.val1},
                               {"val2", &ds.val2},
                               {"test", &ds.test}};
    const auto& split_manifest = manifest["splits"];
    for (const auto& [name, entry] : split_manifest.items()) {
        if (name != "train" && name != "val1" && name != "val2" && name != "test") {
            throw LoadError("manifest: unknown split name '" + name + "'");
        }
        (void)entry;
    }

    const fs::path dir = manifest_path.parent_path();
    for (const auto& [name, samples] : splits) {
        if (!split_manifest.contains(name)) {
            throw LoadError("manifest: missing split '" + std::string(name) + "'");
        }
        const auto& entry = split_manifest[name];
        if (!entry.contains("count") || !entry.contains("file")) {
            throw LoadError("manifest: split '" + std::string(name) +
                            "' must declare count and file");
        }
        const auto count = entry["count"].get<std::size_t>();
        const fs::path file = dir / entry["file"].get<std::string>();

        std::error_code ec;
        const auto actual_bytes = fs::file_size(file, ec);
        if (ec) throw LoadError("split '" + std::string(name) + "': missing file " + file.string());
        if (actual_bytes != count * record_bytes) {
            throw LoadError("split '" + std::string(name) + "': file " + file.string() + " has " +
                            std::to_string(actual_bytes) + " bytes, expected " +
                            std::to_string(count * record_bytes));
        }

        std::ifstream is(file, std::ios::binary);
        if (!is) throw LoadError("split '" + std::string(name) + "': cannot open " + file.string());
        samples->reserve(count);
        for (std::size_t i = 0; i < count; ++i) {
            LayeredSample s;
            s.x.resize(input_dim);
            for (auto& v : s.x) v = static_cast<double>(read_f32_le(is));
            s.z.resize(layer_count);
            for (std::size_t l = 0; l < layer_count; ++l) {
                s.z[l].resize(dims[l]);
                for (auto& v : s.z[l]) v = static_cast<double>(read_f32_le(is));
            }
            s.y = read_u32_le(is);
            if (!is) {
                throw LoadError("split '" + std::string(name) + "': truncated read at sample " +
                                std::to_string(i));
            }
            if (!all_finite(s.x)) {
                throw LoadError("split '" + std::string(name) + "': non-finite x at sample " +
                                std::to_string(i));
            }
            for (std::size_t l = 0; l < layer_count; ++l) {
                if (!all_finite(s.z[l])) {
                    throw LoadError("split '" + std::string(name) + "': non-finite z^" +
                                    std::to_string(l + 1) + " at sample " + std::to_string(i));
                }
            }
            if (s.y >= num_classes) {
                throw LoadError("split '" + std::string(name) + "': label y = " +
                                std::to_string(s.y) + " out of range at sample " +
                                std::to_string(i));
            }
            samples->push_back(std::move(s));
        }
    }
    return ds;
}

} // namespace eedn

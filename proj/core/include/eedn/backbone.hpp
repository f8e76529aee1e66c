#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "eedn/math.hpp"

namespace eedn {

/// One sample with its frozen per-layer backbone representations.
struct LayeredSample {
    Vec x;                  ///< raw input, dimension D
    std::vector<Vec> z;     ///< z^1..z^L, dimension dims[l-1] each
    std::size_t y = 0;      ///< class index in [0, K)

    bool operator==(const LayeredSample&) const = default;
};

struct DatasetSplit {
    std::vector<LayeredSample> train;
    std::vector<LayeredSample> val1;
    std::vector<LayeredSample> val2;
    std::vector<LayeredSample> test;

    bool operator==(const DatasetSplit&) const = default;
};

/// Desk-scale stand-in for a frozen layered feature extractor. Samples are
/// drawn from class-mean Gaussians: z^l = mu_y * s_l * gamma_i + noise, where
/// gamma_i is a per-sample difficulty multiplier (larger = easier) so that
/// early layers carry enough signal only for the easy subset.
struct SynthConfig {
    std::size_t layers = 6;          ///< L
    std::size_t classes = 5;         ///< K
    std::size_t dim = 16;            ///< per-layer representation dimension
    std::size_t n_train = 3500;
    std::size_t n_val1 = 500;
    std::size_t n_val2 = 500;
    std::size_t n_test = 500;
    double easy_fraction = 0.7;
    std::vector<double> signal_scale; ///< s_1..s_L nondecreasing; default linear 0.2..1.0
    double noise_sigma = 0.25;
    std::uint64_t seed = 1;

    /// Fills signal_scale with the default ramp when empty, then validates.
    void finalize();
};

DatasetSplit synth_generate(SynthConfig cfg);

/// Activation file format: JSON manifest
///   {version:1, L, K, D, dims:[d_1..d_L], splits:{name:{count, file}}}
/// plus one binary file per split of float32 little-endian values laid out
/// per sample as [x (D), z^1 (d_1), ..., z^L (d_L), y as uint32 LE].
void save_activations(const DatasetSplit& ds, const std::filesystem::path& dir,
                      std::size_t num_classes);

DatasetSplit load_activations(const std::filesystem::path& manifest_path);

/// Number of classes recorded in an activation manifest.
std::size_t manifest_num_classes(const std::filesystem::path& manifest_path);

/// Per-layer dimensions of a dataset (taken from the first available sample).
std::vector<std::size_t> dataset_dims(const DatasetSplit& ds);

} // namespace eedn

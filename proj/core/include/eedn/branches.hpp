#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <vector>

#include "eedn/math.hpp"

namespace eedn {

/// Single-layer softmax classifier attached at layer `layer` (1-based).
/// The last IM plays the role of the backbone's own classifier and is
/// frozen after construction.
struct InferenceModule {
    Matrix weight;        ///< K x d_l
    Vec bias;             ///< K
    std::size_t layer = 0;
    bool frozen = false;
};

/// Sigmoid-linear gate over the 4 uncertainty features; exists for
/// layers 1..L-1 only (the final gate is identically 1).
struct Gate {
    std::array<double, 4> weight{};
    double bias = 0.0;
    std::size_t layer = 0;
};

/// m = [p_max, h, h_pow, mar] computed from one IM's output.
struct GateFeatures {
    double p_max = 0.0;   ///< max predicted probability
    double entropy = 0.0; ///< -sum p ln p
    double entropy_pow = 0.0; ///< entropy of p_k^2 / sum p^2 (temperature 0.5)
    double margin = 0.0;  ///< top-1 minus top-2 probability

    std::array<double, 4> as_array() const { return {p_max, entropy, entropy_pow, margin}; }
};

Vec im_logits(const InferenceModule& im, const Vec& z);
Vec im_forward(const InferenceModule& im, const Vec& z);

GateFeatures gate_features(const Vec& p);

double gate_forward(const Gate& g, const GateFeatures& m);

struct ImGrad {
    Matrix d_weight;
    Vec d_bias;
};

/// Gradient of weight * CE(softmax(Wz + b), y):
/// dW = weight (p - onehot(y)) z^T, db = weight (p - onehot(y)).
ImGrad im_grad(const InferenceModule& im, const Vec& z, std::size_t y, double weight);

struct GateGrad {
    std::array<double, 4> d_weight{};
    double d_bias = 0.0;
};

/// Gradient of weight * BCE(sigmoid(w.m + b), t) with t in {0,1}.
GateGrad gate_grad(const Gate& g, const GateFeatures& m, double target, double weight);

/// The trainable augmentation of a frozen backbone: one IM per layer plus
/// one gate per non-final layer.
struct EarlyExitModel {
    std::vector<InferenceModule> ims;   ///< size L
    std::vector<Gate> gates;            ///< size L-1
    std::vector<std::size_t> dims;      ///< d_1..d_L
    std::size_t num_classes = 0;

    std::size_t layers() const { return ims.size(); }
};

/// Random-initialised model (IM weights ~ N(0, 0.01), gate weights ~ N(0, 0.01),
/// biases 0). The final IM is not yet frozen; see trainer assembly.
EarlyExitModel init_model(const std::vector<std::size_t>& dims, std::size_t num_classes,
                          Rng& rng);

/// Checkpoint format: checkpoint.json manifest plus one float32
/// little-endian blob per IM (W row-major, then b) and per gate (w, then b).
/// Parameters are quantised to float32 on save; save -> load -> save is
/// byte-identical.
void save_checkpoint(const EarlyExitModel& model, const std::filesystem::path& dir);
EarlyExitModel load_checkpoint(const std::filesystem::path& dir);

} // namespace eedn

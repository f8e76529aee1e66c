#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "eedn/backbone.hpp"
#include "eedn/branches.hpp"
#include "eedn/cost_model.hpp"
#include "eedn/math.hpp"

namespace eedn {

/// How the per-gate binary targets are derived from the per-layer costs C^l.
enum class TargetStrategy {
    ExitSubsequent, ///< t_j = 0 for j < l*, 1 for j >= l*
    ExitIfMin,      ///< t_j = 1 iff j = l* or no later gate is strictly cheaper
};

TargetStrategy target_strategy_from_string(const std::string& name);
std::string to_string(TargetStrategy strategy);

struct TrainConfig {
    double lambda = 1.0;            ///< cost importance
    std::size_t epochs = 30;        ///< E (total, including warm-up)
    std::size_t warmup_epochs = 5;  ///< WE
    std::size_t bi_switch = 10;     ///< batches per state before alternating
    std::size_t batch_size = 64;
    double lr0 = 0.01;
    double weight_decay = 5e-4;
    TargetStrategy target_strategy = TargetStrategy::ExitSubsequent;
    bool imbalance_weighting = true;
    std::uint64_t seed = 1;

    /// Budget for fitting the frozen final IM at assembly time (the desk-scale
    /// stand-in for the backbone's own pretrained classifier).
    std::size_t final_pretrain_epochs = 15;

    bool early_stopping = false;
    std::size_t patience = 5;

    void validate() const;
};

/// Elementwise Adam with decoupled weight decay.
/// beta = (0.9, 0.999), eps = 1e-8.
class AdamState {
public:
    AdamState() = default;
    explicit AdamState(std::size_t n) : m_(n, 0.0), v_(n, 0.0) {}

    void step(std::span<double> params, std::span<const double> grads, double lr,
              double weight_decay);

private:
    Vec m_;
    Vec v_;
    std::int64_t t_ = 0;
};

/// Per-sample gate costs C^l = CE(y, p_hat^l) + lambda * ic_norm^l.
Vec gate_costs(const LayeredSample& sample, const EarlyExitModel& model,
               const CostTable& table, double lambda);

/// Binary targets for the L gates. Ties in l* = argmin C^l break toward the
/// smallest (cheapest) layer.
std::vector<double> surrogate_targets(const Vec& costs, TargetStrategy strategy);

/// Positive-class weight per gate (length L-1) from the targets observed on
/// V^1: clamp(n_neg / n_pos, 0.1, 10), or 1 when either class is absent.
Vec imbalance_weights(const std::vector<std::vector<double>>& targets,
                      std::size_t layer_count);

/// Warm-up step scale for the IM at `layer` (1-based): (L - layer) * lr0.
double warmup_lr(std::size_t layer_count, std::size_t layer, double lr0);

struct EpochRecord {
    std::size_t epoch = 0;
    std::map<std::string, std::size_t> state_batches;
    double train_loss = 0.0;
    double val_acc = 0.0;
    double avg_ic_norm = 0.0;
    std::vector<double> gate_usage;
};

struct TrainResult {
    EarlyExitModel model;
    std::vector<EpochRecord> log;
};

/// Joint training driver: assembly (random init + frozen final IM), the
/// warm-up phase over the non-final IMs, and the alternating bi-level phase
/// starting in the GATE state.
class Trainer {
public:
    /// Fresh model: random init, then the final IM is fitted on the train
    /// split and frozen.
    Trainer(TrainConfig cfg, const DatasetSplit& data, CostTable table);

    /// Resume from an existing (typically warmed-up) model; skips assembly.
    Trainer(TrainConfig cfg, const DatasetSplit& data, CostTable table,
            EarlyExitModel model);

    /// WE epochs of plain cross entropy over all train samples for the
    /// non-final IMs, each with effective step (L - l) * lr0.
    void run_warmup();

    /// E - WE epochs alternating GATE / CLASSIFIER every bi_switch batches.
    /// With gates_only the CLASSIFIER state is never entered (the decoupled
    /// learnable-gates ablation). Throws DivergenceError if the training
    /// loss becomes non-finite.
    void run_bilevel(bool gates_only = false);

    void train_gates_step(std::span<const std::size_t> batch, const Vec& pos_weights);
    void train_ims_step(std::span<const std::size_t> batch);

    /// The joint objective: mean over samples of
    /// sum_l (CE + lambda * ic_norm^l) P(G=l | x).
    double joint_objective(const std::vector<LayeredSample>& samples) const;

    Vec current_imbalance_weights() const;

    const EarlyExitModel& model() const { return model_; }
    EarlyExitModel& model() { return model_; }
    const std::vector<EpochRecord>& log() const { return log_; }
    TrainResult take_result() { return {std::move(model_), std::move(log_)}; }

private:
    void pretrain_final_im();
    void reset_optimizer();
    std::size_t manifest_classes() const;
    void check_finite_params(const std::string& phase, std::size_t epoch) const;
    EpochRecord evaluate_epoch(std::size_t epoch,
                               std::map<std::string, std::size_t> state_batches,
                               double train_loss) const;

    TrainConfig cfg_;
    const DatasetSplit& data_;
    CostTable table_;
    EarlyExitModel model_;
    std::vector<EpochRecord> log_;

    Rng shuffle_rng_;
    std::vector<AdamState> im_weight_state_;
    std::vector<AdamState> im_bias_state_;
    std::vector<AdamState> gate_state_;
};

/// Full pipeline: assemble, warm up, bi-level train.
TrainResult train_model(const TrainConfig& cfg, const DatasetSplit& data,
                        const CostTable& table);

void write_train_log(const std::vector<EpochRecord>& log,
                     const std::filesystem::path& path);

} // namespace eedn

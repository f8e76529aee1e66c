#include "eedn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>

#include "eedn/errors.hpp"
#include "eedn/exit_model.hpp"

namespace eedn {

namespace {

using json = nlohmann::ordered_json;

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

std::vector<std::size_t> index_range(std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
}

} // namespace

TargetStrategy target_strategy_from_string(const std::string& name) {
    if (name == "ExitSubsequent") return TargetStrategy::ExitSubsequent;
    if (name == "ExitIfMin") return TargetStrategy::ExitIfMin;
    throw ConfigError("unknown target_strategy '" + name +
                      "' (expected ExitSubsequent or ExitIfMin)");
}

std::string to_string(TargetStrategy strategy) {
    return strategy == TargetStrategy::ExitSubsequent ? "ExitSubsequent" : "ExitIfMin";
}

void TrainConfig::validate() const {
    if (lambda < 0.0) throw ConfigError("train: lambda must be >= 0");
    if (warmup_epochs >= epochs) throw ConfigError("train: warmup_epochs must be < epochs");
    if (bi_switch == 0) throw ConfigError("train: bi_switch must be >= 1");
    if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
    if (!(lr0 > 0.0)) throw ConfigError("train: lr0 must be > 0");
    if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
}

void AdamState::step(std::span<double> params, std::span<const double> grads, double lr,
                     double weight_decay) {
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * g;
        v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * g * g;
        const double m_hat = m_[i] / bc1;
        const double v_hat = v_[i] / bc2;
        // Decay is decoupled from the moment normalisation: folding wd into
        // the gradient would let the normalised update shrink zero-gradient
        // parameters (IMs behind closed gates) at a constant rate per step.
        params[i] -= lr * (m_hat / (std::sqrt(v_hat) + kAdamEps) + weight_decay * params[i]);
    }
}

Vec gate_costs(const LayeredSample& sample, const EarlyExitModel& model,
               const CostTable& table, double lambda) {
    const std::size_t layer_count = model.layers();
    Vec costs(layer_count);
    for (std::size_t l = 0; l < layer_count; ++l) {
        const Vec p = im_forward(model.ims[l], sample.z[l]);
        costs[l] = cross_entropy(p, sample.y) + lambda * table.ic_norm[l];
    }
    return costs;
}

std::vector<double> surrogate_targets(const Vec& costs, TargetStrategy strategy) {
    const std::size_t layer_count = costs.size();
    const std::size_t best = static_cast<std::size_t>(
        std::distance(costs.begin(), std::min_element(costs.begin(), costs.end())));

    std::vector<double> targets(layer_count, 0.0);
    if (strategy == TargetStrategy::ExitSubsequent) {
        for (std::size_t j = best; j < layer_count; ++j) targets[j] = 1.0;
        return targets;
    }
    // ExitIfMin: 1 at l*, and at any later gate strictly cheaper than all
    // gates after it.
    targets[best] = 1.0;
    double min_later = std::numeric_limits<double>::infinity();
    for (std::size_t j = layer_count; j-- > best + 1;) {
        if (costs[j] < min_later) targets[j] = 1.0;
        min_later = std::min(min_later, costs[j]);
    }
    return targets;
}

double warmup_lr(std::size_t layer_count, std::size_t layer, double lr0) {
    if (layer == 0 || layer >= layer_count) {
        throw std::invalid_argument("warmup_lr: layer must lie in [1, L-1]");
    }
    return static_cast<double>(layer_count - layer) * lr0;
}

Vec imbalance_weights(const std::vector<std::vector<double>>& targets,
                      std::size_t layer_count) {
    Vec weights(layer_count > 0 ? layer_count - 1 : 0, 1.0);
    for (std::size_t l = 0; l + 1 < layer_count; ++l) {
        std::size_t pos = 0, neg = 0;
        for (const auto& t : targets) {
            (t[l] > 0.5 ? pos : neg)++;
        }
        if (pos == 0 || neg == 0) continue;
        weights[l] = std::clamp(static_cast<double>(neg) / static_cast<double>(pos), 0.1, 10.0);
    }
    return weights;
}

Trainer::Trainer(TrainConfig cfg, const DatasetSplit& data, CostTable table)
    : cfg_(cfg), data_(data), table_(std::move(table)), shuffle_rng_(0) {
    cfg_.validate();
    if (data_.train.empty()) throw ConfigError("train: empty train split");
    Rng init_rng = Rng(cfg_.seed).child(0);
    model_ = init_model(dataset_dims(data_), manifest_classes(), init_rng);
    shuffle_rng_ = Rng(cfg_.seed).child(1);
    if (table_.layers() != model_.layers()) {
        throw ConfigError("train: cost table has " + std::to_string(table_.layers()) +
                          " layers, model has " + std::to_string(model_.layers()));
    }
    pretrain_final_im();
}

Trainer::Trainer(TrainConfig cfg, const DatasetSplit& data, CostTable table,
                 EarlyExitModel model)
    : cfg_(cfg), data_(data), table_(std::move(table)), model_(std::move(model)),
      shuffle_rng_(Rng(cfg.seed).child(1)) {
    cfg_.validate();
    if (data_.train.empty()) throw ConfigError("train: empty train split");
    if (table_.layers() != model_.layers()) {
        throw ConfigError("train: cost table has " + std::to_string(table_.layers()) +
                          " layers, model has " + std::to_string(model_.layers()));
    }
}

std::size_t Trainer::manifest_classes() const {
    std::size_t max_label = 0;
    for (const auto* split : {&data_.train, &data_.val1, &data_.val2, &data_.test}) {
        for (const auto& s : *split) max_label = std::max(max_label, s.y);
    }
    return max_label + 1;
}

void Trainer::reset_optimizer() {
    const std::size_t layer_count = model_.layers();
    im_weight_state_.clear();
    im_bias_state_.clear();
    gate_state_.clear();
    for (std::size_t l = 0; l < layer_count; ++l) {
        im_weight_state_.emplace_back(model_.ims[l].weight.data.size());
        im_bias_state_.emplace_back(model_.ims[l].bias.size());
    }
    for (std::size_t l = 0; l + 1 < layer_count; ++l) {
        gate_state_.emplace_back(5);
    }
}

void Trainer::check_finite_params(const std::string& phase, std::size_t epoch) const {
    bool ok = true;
    for (const auto& im : model_.ims) ok = ok && all_finite(im.weight) && all_finite(im.bias);
    for (const auto& g : model_.gates) {
        ok = ok && std::isfinite(g.bias);
        for (double w : g.weight) ok = ok && std::isfinite(w);
    }
    if (!ok) {
        throw DivergenceError(phase + ": parameters non-finite after epoch " +
                              std::to_string(epoch));
    }
}

void Trainer::pretrain_final_im() {
    reset_optimizer();
    InferenceModule& final_im = model_.ims.back();
    Rng rng = Rng(cfg_.seed).child(2);
    auto idx = index_range(data_.train.size());

    for (std::size_t epoch = 0; epoch < cfg_.final_pretrain_epochs; ++epoch) {
        try {
            rng.shuffle(idx);
            for (std::size_t start = 0; start < idx.size(); start += cfg_.batch_size) {
                const std::size_t end = std::min(start + cfg_.batch_size, idx.size());
                Matrix dw(final_im.weight.rows, final_im.weight.cols);
                Vec db(final_im.bias.size(), 0.0);
                for (std::size_t i = start; i < end; ++i) {
                    const auto& s = data_.train[idx[i]];
                    const ImGrad g = im_grad(final_im, s.z.back(), s.y, 1.0);
                    for (std::size_t j = 0; j < dw.data.size(); ++j)
                        dw.data[j] += g.d_weight.data[j];
                    for (std::size_t j = 0; j < db.size(); ++j) db[j] += g.d_bias[j];
                }
                const double inv = 1.0 / static_cast<double>(end - start);
                for (auto& v : dw.data) v *= inv;
                for (auto& v : db) v *= inv;
                im_weight_state_.back().step(final_im.weight.data, dw.data, cfg_.lr0,
                                             cfg_.weight_decay);
                im_bias_state_.back().step(final_im.bias, db, cfg_.lr0, cfg_.weight_decay);
            }
        } catch (const std::invalid_argument& e) {
            throw DivergenceError("final IM pretraining diverged at epoch " +
                                  std::to_string(epoch + 1) + ": " + e.what());
        }
        check_finite_params("final IM pretraining", epoch + 1);
    }
    final_im.frozen = true;
}

void Trainer::run_warmup() {
    reset_optimizer();
    const std::size_t layer_count = model_.layers();
    auto idx = index_range(data_.train.size());

    for (std::size_t epoch = 0; epoch < cfg_.warmup_epochs; ++epoch) {
        std::size_t batches = 0;
        double warmup_loss = 0.0;
        try {
            shuffle_rng_.shuffle(idx);
            for (std::size_t start = 0; start < idx.size(); start += cfg_.batch_size) {
                const std::size_t end = std::min(start + cfg_.batch_size, idx.size());
                const double inv = 1.0 / static_cast<double>(end - start);
                for (std::size_t l = 0; l + 1 < layer_count; ++l) {
                    InferenceModule& im = model_.ims[l];
                    Matrix dw(im.weight.rows, im.weight.cols);
                    Vec db(im.bias.size(), 0.0);
                    for (std::size_t i = start; i < end; ++i) {
                        const auto& s = data_.train[idx[i]];
                        const ImGrad g = im_grad(im, s.z[l], s.y, 1.0);
                        for (std::size_t j = 0; j < dw.data.size(); ++j)
                            dw.data[j] += g.d_weight.data[j];
                        for (std::size_t j = 0; j < db.size(); ++j) db[j] += g.d_bias[j];
                    }
                    for (auto& v : dw.data) v *= inv;
                    for (auto& v : db) v *= inv;
                    // Position-based scaling: earlier IMs take larger steps.
                    const double lr = warmup_lr(layer_count, l + 1, cfg_.lr0);
                    im_weight_state_[l].step(im.weight.data, dw.data, lr, cfg_.weight_decay);
                    im_bias_state_[l].step(im.bias, db, lr, cfg_.weight_decay);
                }
                ++batches;
            }

            for (const auto& s : data_.train) {
                for (std::size_t l = 0; l + 1 < layer_count; ++l) {
                    warmup_loss += cross_entropy(im_forward(model_.ims[l], s.z[l]), s.y);
                }
            }
            warmup_loss /= static_cast<double>(data_.train.size() * (layer_count - 1));
        } catch (const std::invalid_argument& e) {
            throw DivergenceError("warm-up diverged at epoch " + std::to_string(epoch + 1) +
                                  ": " + e.what());
        }
        if (!std::isfinite(warmup_loss)) {
            throw DivergenceError("warm-up loss non-finite at epoch " + std::to_string(epoch + 1));
        }
        check_finite_params("warm-up", epoch + 1);
        log_.push_back(evaluate_epoch(epoch + 1, {{"WARMUP", batches}}, warmup_loss));
    }
}

void Trainer::train_gates_step(std::span<const std::size_t> batch, const Vec& pos_weights) {
    const std::size_t layer_count = model_.layers();
    std::vector<std::array<double, 5>> grads(layer_count - 1, std::array<double, 5>{});

    for (std::size_t i : batch) {
        const auto& s = data_.train[i];
        const Vec costs = gate_costs(s, model_, table_, cfg_.lambda);
        const std::vector<double> targets = surrogate_targets(costs, cfg_.target_strategy);
        for (std::size_t l = 0; l + 1 < layer_count; ++l) {
            const Vec p = im_forward(model_.ims[l], s.z[l]);
            const GateFeatures m = gate_features(p);
            const double w = targets[l] > 0.5 ? pos_weights[l] : 1.0;
            const GateGrad g = gate_grad(model_.gates[l], m, targets[l], w);
            for (std::size_t j = 0; j < 4; ++j) grads[l][j] += g.d_weight[j];
            grads[l][4] += g.d_bias;
        }
    }

    const double inv = 1.0 / static_cast<double>(batch.size());
    for (std::size_t l = 0; l + 1 < layer_count; ++l) {
        for (auto& v : grads[l]) v *= inv;
        std::array<double, 5> params{model_.gates[l].weight[0], model_.gates[l].weight[1],
                                     model_.gates[l].weight[2], model_.gates[l].weight[3],
                                     model_.gates[l].bias};
        gate_state_[l].step(params, grads[l], cfg_.lr0, cfg_.weight_decay);
        std::copy_n(params.begin(), 4, model_.gates[l].weight.begin());
        model_.gates[l].bias = params[4];
    }
}

void Trainer::train_ims_step(std::span<const std::size_t> batch) {
    const std::size_t layer_count = model_.layers();
    std::vector<Matrix> dw;
    std::vector<Vec> db;
    for (std::size_t l = 0; l + 1 < layer_count; ++l) {
        dw.emplace_back(model_.ims[l].weight.rows, model_.ims[l].weight.cols);
        db.emplace_back(model_.ims[l].bias.size(), 0.0);
    }

    for (std::size_t i : batch) {
        const auto& s = data_.train[i];
        // Exit probabilities act as constant per-layer weights here.
        const ExitDistribution dist = full_exit_distribution(model_, s);
        for (std::size_t l = 0; l + 1 < layer_count; ++l) {
            const double weight = dist.probabilities[l];
            if (weight == 0.0) continue;
            const ImGrad g = im_grad(model_.ims[l], s.z[l], s.y, weight);
            for (std::size_t j = 0; j < dw[l].data.size(); ++j)
                dw[l].data[j] += g.d_weight.data[j];
            for (std::size_t j = 0; j < db[l].size(); ++j) db[l][j] += g.d_bias[j];
        }
    }

    const double inv = 1.0 / static_cast<double>(batch.size());
    for (std::size_t l = 0; l + 1 < layer_count; ++l) {
        for (auto& v : dw[l].data) v *= inv;
        for (auto& v : db[l]) v *= inv;
        im_weight_state_[l].step(model_.ims[l].weight.data, dw[l].data, cfg_.lr0,
                                 cfg_.weight_decay);
        im_bias_state_[l].step(model_.ims[l].bias, db[l], cfg_.lr0, cfg_.weight_decay);
    }
}

double Trainer::joint_objective(const std::vector<LayeredSample>& samples) const {
    if (samples.empty()) return 0.0;
    double total = 0.0;
    for (const auto& s : samples) {
        const ExitDistribution dist = full_exit_distribution(model_, s);
        for (std::size_t l = 0; l < model_.layers(); ++l) {
            if (dist.probabilities[l] == 0.0) continue;
            const double ce = cross_entropy(im_forward(model_.ims[l], s.z[l]), s.y);
            total += (ce + cfg_.lambda * table_.ic_norm[l]) * dist.probabilities[l];
        }
    }
    return total / static_cast<double>(samples.size());
}

Vec Trainer::current_imbalance_weights() const {
    const std::size_t layer_count = model_.layers();
    if (!cfg_.imbalance_weighting || data_.val1.empty()) {
        return Vec(layer_count - 1, 1.0);
    }
    std::vector<std::vector<double>> targets;
    targets.reserve(data_.val1.size());
    for (const auto& s : data_.val1) {
        targets.push_back(
            surrogate_targets(gate_costs(s, model_, table_, cfg_.lambda), cfg_.target_strategy));
    }
    return imbalance_weights(targets, layer_count);
}

EpochRecord Trainer::evaluate_epoch(std::size_t epoch,
                                    std::map<std::string, std::size_t> state_batches,
                                    double train_loss) const {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.state_batches = std::move(state_batches);
    rec.train_loss = train_loss;

    const auto& eval_set = data_.val2.empty() ? data_.train : data_.val2;
    std::size_t correct = 0;
    double cost_sum = 0.0;
    rec.gate_usage.assign(model_.layers(), 0.0);
    for (const auto& s : eval_set) {
        const ExitDecision d = decide_exit(model_, s);
        correct += d.prediction == s.y;
        cost_sum += table_.ic_norm[d.layer - 1];
        rec.gate_usage[d.layer - 1] += 1.0;
    }
    const double n = static_cast<double>(eval_set.size());
    rec.val_acc = static_cast<double>(correct) / n;
    rec.avg_ic_norm = cost_sum / n;
    for (auto& v : rec.gate_usage) v /= n;
    return rec;
}

void Trainer::run_bilevel(bool gates_only) {
    reset_optimizer();
    auto idx = index_range(data_.train.size());

    enum class State { Gate, Classifier };
    State state = State::Gate;
    std::size_t batches_in_state = 0;

    double best_val_loss = std::numeric_limits<double>::infinity();
    std::size_t epochs_since_best = 0;

    for (std::size_t epoch = cfg_.warmup_epochs; epoch < cfg_.epochs; ++epoch) {
        std::map<std::string, std::size_t> state_batches;
        double train_loss = 0.0;
        try {
            const Vec pos_weights = current_imbalance_weights();
            shuffle_rng_.shuffle(idx);
            for (std::size_t start = 0; start < idx.size(); start += cfg_.batch_size) {
                const std::size_t end = std::min(start + cfg_.batch_size, idx.size());
                const std::span<const std::size_t> batch(idx.data() + start, end - start);
                if (state == State::Classifier) {
                    train_ims_step(batch);
                    ++state_batches["CLASSIFIER"];
                } else {
                    train_gates_step(batch, pos_weights);
                    ++state_batches["GATE"];
                }
                if (!gates_only && ++batches_in_state >= cfg_.bi_switch) {
                    state = state == State::Gate ? State::Classifier : State::Gate;
                    batches_in_state = 0;
                }
            }
            train_loss = joint_objective(data_.train);
        } catch (const std::invalid_argument& e) {
            // Forward passes reject non-finite values; inside the training
            // loop that means the parameters have blown up.
            throw DivergenceError("training diverged at epoch " + std::to_string(epoch + 1) +
                                  " (lambda = " + std::to_string(cfg_.lambda) +
                                  "): " + e.what());
        }
        if (!std::isfinite(train_loss)) {
            throw DivergenceError("joint objective non-finite at epoch " +
                                  std::to_string(epoch + 1) + " (lambda = " +
                                  std::to_string(cfg_.lambda) + ")");
        }
        check_finite_params("bi-level", epoch + 1);
        log_.push_back(evaluate_epoch(epoch + 1, std::move(state_batches), train_loss));

        if (cfg_.early_stopping && !data_.val2.empty()) {
            const double val_loss = joint_objective(data_.val2);
            if (val_loss < best_val_loss) {
                best_val_loss = val_loss;
                epochs_since_best = 0;
            } else if (++epochs_since_best >= cfg_.patience) {
                break;
            }
        }
    }
}

TrainResult train_model(const TrainConfig& cfg, const DatasetSplit& data,
                        const CostTable& table) {
    Trainer trainer(cfg, data, table);
    trainer.run_warmup();
    trainer.run_bilevel();
    return trainer.take_result();
}

void write_train_log(const std::vector<EpochRecord>& log,
                     const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw LoadError("write_train_log: cannot open " + path.string());
    for (const auto& rec : log) {
        json line;
        line["epoch"] = rec.epoch;
        line["state_schedule"] = rec.state_batches;
        line["train_loss"] = rec.train_loss;
        line["val_acc"] = rec.val_acc;
        line["avg_ic_norm"] = rec.avg_ic_norm;
        line["gate_usage"] = rec.gate_usage;
        os << line.dump() << "\n";
    }
}

} // namespace eedn

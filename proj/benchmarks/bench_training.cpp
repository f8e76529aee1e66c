// Microbenchmarks for the training steps.

#include <benchmark/benchmark.h>

#include <numeric>

#include "eedn/backbone.hpp"
#include "eedn/cost_model.hpp"
#include "eedn/trainer.hpp"

namespace {

struct BenchState {
    eedn::DatasetSplit data;
    eedn::CostTable table;
    eedn::TrainConfig cfg;

    BenchState() {
        eedn::SynthConfig data_cfg;
        data_cfg.layers = 6;
        data_cfg.classes = 5;
        data_cfg.dim = 16;
        data_cfg.n_train = 512;
        data_cfg.n_val1 = 64;
        data_cfg.n_val2 = 64;
        data_cfg.n_test = 64;
        data_cfg.seed = 5;
        data = eedn::synth_generate(data_cfg);
        table = eedn::default_cost_table(std::vector<eedn::MulAdds>(6, 1000000),
                                         std::vector<std::size_t>(6, 16), 5);
        cfg.epochs = 10;
        cfg.warmup_epochs = 2;
        cfg.batch_size = 64;
        cfg.seed = 5;
        cfg.final_pretrain_epochs = 3;
    }
};

BenchState& bench_state() {
    static BenchState s;
    return s;
}

void bm_gate_step(benchmark::State& state) {
    auto& s = bench_state();
    eedn::Trainer trainer(s.cfg, s.data, s.table);
    std::vector<std::size_t> batch(s.cfg.batch_size);
    std::iota(batch.begin(), batch.end(), std::size_t{0});
    const eedn::Vec weights(5, 1.0);
    for (auto _ : state) {
        trainer.train_gates_step(batch, weights);
    }
}

void bm_classifier_step(benchmark::State& state) {
    auto& s = bench_state();
    eedn::Trainer trainer(s.cfg, s.data, s.table);
    std::vector<std::size_t> batch(s.cfg.batch_size);
    std::iota(batch.begin(), batch.end(), std::size_t{0});
    for (auto _ : state) {
        trainer.train_ims_step(batch);
    }
}

void bm_gate_costs(benchmark::State& state) {
    auto& s = bench_state();
    eedn::Trainer trainer(s.cfg, s.data, s.table);
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            eedn::gate_costs(s.data.train[0], trainer.model(), s.table, 1.0));
    }
}

} // namespace

BENCHMARK(bm_gate_step);
BENCHMARK(bm_classifier_step);
BENCHMARK(bm_gate_costs);
BENCHMARK_MAIN();

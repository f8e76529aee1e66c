// Microbenchmarks for the per-sample inference path.

#include <benchmark/benchmark.h>

#include "eedn/backbone.hpp"
#include "eedn/branches.hpp"
#include "eedn/exit_model.hpp"
#include "eedn/math.hpp"

namespace {

eedn::SynthConfig bench_data_config() {
    eedn::SynthConfig cfg;
    cfg.layers = 6;
    cfg.classes = 5;
    cfg.dim = 16;
    cfg.n_train = 64;
    cfg.n_val1 = 0;
    cfg.n_val2 = 0;
    cfg.n_test = 0;
    cfg.seed = 3;
    return cfg;
}

void bm_softmax(benchmark::State& state) {
    eedn::Rng rng(1);
    eedn::Vec logits(static_cast<std::size_t>(state.range(0)));
    for (auto& v : logits) v = rng.uniform(-5.0, 5.0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(eedn::softmax(logits));
    }
}

void bm_gate_features(benchmark::State& state) {
    eedn::Rng rng(2);
    eedn::Vec logits(static_cast<std::size_t>(state.range(0)));
    for (auto& v : logits) v = rng.uniform(-3.0, 3.0);
    const eedn::Vec p = eedn::softmax(logits);
    for (auto _ : state) {
        benchmark::DoNotOptimize(eedn::gate_features(p));
    }
}

void bm_exit_distribution(benchmark::State& state) {
    eedn::Rng rng(3);
    eedn::Vec g(static_cast<std::size_t>(state.range(0)), 0.0);
    for (std::size_t l = 0; l + 1 < g.size(); ++l) g[l] = rng.uniform();
    g.back() = 1.0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(eedn::exit_distribution(g));
    }
}

void bm_decide_exit(benchmark::State& state) {
    const auto data_cfg = bench_data_config();
    const eedn::DatasetSplit data = eedn::synth_generate(data_cfg);
    eedn::Rng rng(4);
    const eedn::EarlyExitModel model =
        eedn::init_model(eedn::dataset_dims(data), data_cfg.classes, rng);
    std::size_t i = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(eedn::decide_exit(model, data.train[i]));
        i = (i + 1) % data.train.size();
    }
}

} // namespace

BENCHMARK(bm_softmax)->Arg(5)->Arg(100);
BENCHMARK(bm_gate_features)->Arg(5)->Arg(100);
BENCHMARK(bm_exit_distribution)->Arg(6)->Arg(14);
BENCHMARK(bm_decide_exit);
BENCHMARK_MAIN();

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "eedn/backbone.hpp"

using namespace eedn;
namespace fs = std::filesystem;

namespace {

const char* kCli = EEDN_CLI_PATH;

struct RunResult {
    int code = -1;
    std::string out;
    std::string err;
};

RunResult run_cli(const std::string& args, const fs::path& scratch) {
    const fs::path out_file = scratch / "stdout.txt";
    const fs::path err_file = scratch / "stderr.txt";
    const std::string cmd = std::string(kCli) + " " + args + " >" + out_file.string() + " 2>" +
                            err_file.string();
    const int raw = std::system(cmd.c_str());
    RunResult result;
    result.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    auto slurp = [](const fs::path& p) {
        std::ifstream is(p);
        return std::string((std::istreambuf_iterator<char>(is)),
                           std::istreambuf_iterator<char>());
    };
    result.out = slurp(out_file);
    result.err = slurp(err_file);
    return result;
}

std::string slurp_binary(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

struct Workspace {
    fs::path dir;
    Workspace() {
        dir = fs::temp_directory_path() / ("eedn_cli_" + std::to_string(::getpid()) + "_" +
                                           std::to_string(counter()++));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Workspace() { fs::remove_all(dir); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

fs::path write_small_config(const fs::path& dir) {
    const fs::path path = dir / "run.json";
    std::ofstream os(path);
    os << R"({
        "dataset": {"synth": {"layers": 3, "classes": 3, "dim": 6,
                               "n_train": 200, "n_val1": 50, "n_val2": 50, "n_test": 100,
                               "seed": 3}},
        "train": {"epochs": 6, "warmup_epochs": 2, "bi_switch": 2, "batch_size": 32,
                   "final_pretrain_epochs": 5, "seed": 3},
        "uncertainty": {"alpha": 0.1, "strategy": "Gated", "bins": 10},
        "output": ")" << (dir / "out").string() << R"("
    })";
    return path;
}

} // namespace

TEST_CASE("train is deterministic across runs") {
    Workspace ws;
    const fs::path cfg = write_small_config(ws.dir);

    const RunResult a =
        run_cli("train --config " + cfg.string() + " --seed 7 --out " + (ws.dir / "a").string(),
                ws.dir);
    REQUIRE(a.code == 0);
    const RunResult b =
        run_cli("train --config " + cfg.string() + " --seed 7 --out " + (ws.dir / "b").string(),
                ws.dir);
    REQUIRE(b.code == 0);

    for (const auto& entry : fs::directory_iterator(ws.dir / "a" / "checkpoint")) {
        const fs::path other = ws.dir / "b" / "checkpoint" / entry.path().filename();
        CHECK(slurp_binary(entry.path()) == slurp_binary(other));
    }
    CHECK(slurp_binary(ws.dir / "a" / "train_log.jsonl") ==
          slurp_binary(ws.dir / "b" / "train_log.jsonl"));

    // one JSON record per epoch with the documented fields
    std::ifstream log(ws.dir / "a" / "train_log.jsonl");
    std::string line;
    std::size_t records = 0;
    while (std::getline(log, line)) {
        const auto rec = nlohmann::json::parse(line);
        ++records;
        CHECK(rec["epoch"].get<std::size_t>() == records);
        CHECK(rec.contains("state_schedule"));
        CHECK(rec.contains("train_loss"));
        CHECK(rec.contains("val_acc"));
        CHECK(rec.contains("avg_ic_norm"));
        CHECK(rec["gate_usage"].size() == 3);
    }
    CHECK(records == 6); // epochs in the config
}

TEST_CASE("gen writes a loadable activation dump") {
    Workspace ws;
    const fs::path cfg = write_small_config(ws.dir);
    const RunResult r = run_cli("gen --config " + cfg.string(), ws.dir);
    REQUIRE(r.code == 0);

    const DatasetSplit ds = load_activations(ws.dir / "out" / "activations" / "manifest.json");
    CHECK(ds.train.size() == 200);
    CHECK(ds.test.size() == 100);
}

TEST_CASE("eval and calibrate run against a trained checkpoint") {
    Workspace ws;
    const fs::path cfg = write_small_config(ws.dir);
    REQUIRE(run_cli("train --config " + cfg.string(), ws.dir).code == 0);

    const RunResult ev = run_cli("eval --config " + cfg.string(), ws.dir);
    CHECK(ev.code == 0);
    CHECK(ev.out.find("accuracy") != std::string::npos);
    CHECK(fs::exists(ws.dir / "out" / "eval.json"));

    const RunResult cal = run_cli("calibrate --config " + cfg.string() + " --alpha 0.2", ws.dir);
    CHECK(cal.code == 0);
    CHECK(fs::exists(ws.dir / "out" / "calibration.json"));
}

TEST_CASE("eval without a checkpoint exits with a runtime failure") {
    Workspace ws;
    const fs::path cfg = write_small_config(ws.dir);
    const RunResult r = run_cli("eval --config " + cfg.string(), ws.dir);
    CHECK(r.code == 2);
    CHECK(r.err.find("checkpoint not found") != std::string::npos);
}

TEST_CASE("sweep emits one row per lambda") {
    Workspace ws;
    const fs::path cfg = write_small_config(ws.dir);
    const RunResult r = run_cli("sweep --config " + cfg.string() + " --lambdas 0.01,10", ws.dir);
    REQUIRE(r.code == 0);

    std::ifstream is(ws.dir / "out" / "sweep.csv");
    std::string line;
    int lines = 0;
    while (std::getline(is, line)) ++lines;
    CHECK(lines == 3); // header + 2 rows
    CHECK(fs::exists(ws.dir / "out" / "sweep_gates.json"));
}

TEST_CASE("ablate writes both baselines") {
    Workspace ws;
    const fs::path cfg = write_small_config(ws.dir);
    const RunResult r =
        run_cli("ablate --config " + cfg.string() + " --thresholds 0.5,0.9", ws.dir);
    REQUIRE(r.code == 0);
    CHECK(fs::exists(ws.dir / "out" / "baseline_threshold.csv"));
    CHECK(fs::exists(ws.dir / "out" / "ablation_frozen_im.csv"));
}

TEST_CASE("malformed configs exit with a validation error") {
    Workspace ws;
    const fs::path bad = ws.dir / "bad.json";
    std::ofstream(bad) << R"({"train": {"bogus_key": 1}})";
    const RunResult r = run_cli("train --config " + bad.string(), ws.dir);
    CHECK(r.code == 1);
    CHECK(r.err.find("unknown key") != std::string::npos);

    const RunResult missing = run_cli("train --config /nope/nothing.json", ws.dir);
    CHECK(missing.code == 1);

    const RunResult nocmd = run_cli("", ws.dir);
    CHECK(nocmd.code == 1);
}

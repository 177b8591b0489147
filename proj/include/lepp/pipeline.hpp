#pragma once

// End-to-end steps behind the CLI subcommands. Every step writes the
// resolved config (config.json) next to its outputs.
//
// Layout:
//   data dir   dataset_train.lepd, dataset_test.lepd, dataset.json, config.json
//   run dir    model.lepc, train_log.jsonl, config.json

#include <string>
#include <vector>

#include "lepp/config.hpp"
#include "lepp/evalbench.hpp"

namespace lepp {

inline constexpr const char* kDatasetStem = "dataset";
inline constexpr const char* kCheckpointFile = "model.lepc";
inline constexpr const char* kTrainLogFile = "train_log.jsonl";
inline constexpr const char* kResolvedConfigFile = "config.json";

std::string train_path(const std::string& data_dir);
std::string test_path(const std::string& data_dir);

DatasetSplit run_generate(const RunConfig& cfg, const std::string& out_dir);

struct TrainRun {
    int first_epoch = 0;
    std::vector<EpochLog> logs;
};

// Trains on <data_dir>/dataset_train.lepd. With `resume`, continues from
// <out_dir>/model.lepc (parameters, optimizer state, epoch counter) and
// appends to the log. Checkpoints every cfg.checkpoint_every epochs and at
// the end.
TrainRun run_train(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir, bool resume,
                   const std::function<void(const EpochLog&)>& on_epoch = {});

// Fits, trains and returns the model in memory (no files).
Surrogate train_in_memory(const RunConfig& cfg, const Dataset& train, std::vector<EpochLog>* logs = nullptr);

// Accuracy at cfg.eval_m against persistence, timing at cfg.bench_m.
EvalReport run_eval(const RunConfig& cfg, const Surrogate& model, const Dataset& test);

struct BenchRow {
    EvolutionKind kind = EvolutionKind::ssm;
    std::size_t params = 0, evolution_params = 0;
    TimingStats timing;
};

// Times `model` and a fresh model of the other evolution kind with the same
// configuration. Rows are ordered ssm, mlp.
std::vector<BenchRow> run_bench(const RunConfig& cfg, const Surrogate& model);
BenchRow bench_model(const RunConfig& cfg, const Surrogate& model);
std::string bench_csv_header();
std::string bench_csv_row(const BenchRow& row);

// One ablation cell trained and evaluated in this process. RMSE is the
// global rollout RMSE over train.max_horizon steps.
AblationRow run_ablation_cell(const RunConfig& base, const AblationCell& cell, const Dataset& train,
                              const Dataset& test);
RunConfig cell_config(const RunConfig& base, const AblationCell& cell);

}  // namespace lepp

#pragma once

// Accuracy metrics against held-out trajectories and the inference timing
// harness. All RMSE values are in physical units.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "lepp/curriculum.hpp"
#include "lepp/dataset.hpp"
#include "lepp/surrogate.hpp"

namespace lepp {

// sqrt(mean((pred - truth)^2)); ShapeError when sizes differ or are empty.
double rmse(std::span<const double> pred, std::span<const double> truth);
double rmse(const Tensor& pred, const Tensor& truth);

struct AccuracyReport {
    std::vector<double> per_step;  // RMSE at steps 1..M
    double rmse_single = 0.0;      // per_step[0]
    double rmse_rollout = 0.0;     // over the whole [M, S, C, H, W] block
    std::size_t windows = 0;       // rollouts evaluated
};

// Every start k (a frame index) with k + (M + 1) S <= T in every test
// trajectory: encode U^k once, roll out M latent steps, compare each decoded
// bundle with U^{k+m}.
AccuracyReport evaluate(const Surrogate& model, const Dataset& test, std::size_t M);
// Predicts U^{k+m} = U^k over the same windows.
AccuracyReport persistence_baseline(const Dataset& test, std::size_t M, std::size_t bundle = 1);

struct TimingOptions {
    std::size_t reps = 30;
    std::size_t warmup = 5;
    // Called with true just before and false just after each timed rollout,
    // outside the clock reads (allocation probes in tests).
    std::function<void(bool)> region_probe;
};

struct Percentiles {
    double median = 0.0, p10 = 0.0, p90 = 0.0;
};

Percentiles percentiles(std::vector<double> samples_ms);

struct TimingStats {
    std::size_t m = 0, reps = 0, warmup = 0;
    std::vector<double> total_ms, encode_ms, evolve_ms, decode_ms;  // one entry per rep
    Percentiles total, encode, evolve, decode;
    double timer_resolution_ms = 0.0;
    bool timer_warning = false;  // resolution above 1% of the median
    double checksum = 0.0;       // sum of every decoded value
    std::string span = "encode(U0, p) + m latent steps + decode(final)";
};

// Single-threaded timing of full rollouts from physical-unit inputs U0
// [S, C, H, W] and p [d_p]. Normalization happens once, outside the timed
// region.
TimingStats time_inference(const Surrogate& model, const Tensor& U0, std::span<const double> p, std::size_t m,
                           const TimingOptions& opt = {});

// Smallest nonzero step of the monotonic clock observed by busy polling.
double timer_resolution_ms();

struct EvalReport {
    AccuracyReport accuracy;
    std::optional<AccuracyReport> persistence;
    std::optional<TimingStats> timing;
    std::size_t parameter_count = 0;
    std::size_t evolution_parameter_count = 0;
    std::string evolution;
    std::string fingerprint;  // hex fnv1a64 of the resolved config
};

nlohmann::json to_json(const AccuracyReport& r);
nlohmann::json to_json(const TimingStats& t);
nlohmann::json to_json(const EvalReport& r);
std::string fingerprint(const nlohmann::json& resolved_config);

// ---------------------------------------------------------------------------
// Schedule / evolution-kind ablation grid.

struct AblationCell {
    EvolutionKind kind = EvolutionKind::ssm;
    ScheduleKind schedule = ScheduleKind::log;
    double tau0 = 1.0;
};

struct AblationRow {
    AblationCell cell;
    bool ok = false;
    double rmse_single = 0.0, rmse_rollout = 0.0, median_ms = 0.0;
    std::size_t params = 0;
    std::string error;
};

// Rows are independent: a runner failure becomes a failed row.
using CellRunner = std::function<AblationRow(const AblationCell&)>;

std::vector<AblationCell> ablation_grid(const std::vector<EvolutionKind>& kinds,
                                        const std::vector<ScheduleKind>& schedules, const std::vector<double>& tau0s);
std::vector<AblationRow> run_ablation(const std::vector<AblationCell>& grid, const CellRunner& runner,
                                      const std::function<void(const AblationRow&)>& on_row = {});

std::string ablation_csv_header();
std::string ablation_csv_row(const AblationRow& row);
void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);
std::vector<AblationRow> read_ablation_csv(const std::string& path);

// RFC 4180 field quoting.
std::string csv_field(const std::string& s);
std::vector<std::string> csv_split(const std::string& line);

}  // namespace lepp

#pragma once

// Run configuration: one flat JSON object with dotted keys, e.g.
//   {"seed": 7, "data.kind": "ns", "model.d_z": 64, "schedule.tau0": 0.3}
// Missing keys take defaults (data.* from the preset of data.kind); unknown
// keys are rejected; `seed` is mandatory. to_json() emits every key, so a
// resolved config reproduces a run on its own.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "lepp/curriculum.hpp"
#include "lepp/dataset.hpp"
#include "lepp/surrogate.hpp"
#include "lepp/training.hpp"

namespace lepp {

struct RunConfig {
    std::uint64_t seed = 0;
    GeneratorConfig data = GeneratorConfig::preset(pde::Kind::ns);
    ModelConfig model;
    TrainConfig train;
    std::size_t checkpoint_every = 0;  // epochs; 0: final checkpoint only
    std::size_t eval_m = 5;
    std::size_t bench_m = 20, bench_reps = 30, bench_warmup = 5;
    std::vector<double> ablation_tau0{0.1, 0.3, 0.5, 0.7, 0.9, 1.0};
    std::vector<ScheduleKind> ablation_schedules{ScheduleKind::linear, ScheduleKind::log, ScheduleKind::poly};
    std::vector<EvolutionKind> ablation_kinds{EvolutionKind::ssm};

    // Applies one key; ConfigError for unknown keys or wrong value types.
    void set(const std::string& key, const nlohmann::json& value);
    nlohmann::json to_json() const;
    void validate() const;

    static RunConfig from_json(const nlohmann::json& flat);
    static std::vector<std::string> keys();
};

// "key=value"; the value is parsed as JSON, or taken as a string when that fails.
std::pair<std::string, nlohmann::json> parse_override(const std::string& assignment);

// Reads `path` (may be empty: overrides only) and applies `overrides` on top.
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides);

void write_json_file(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::string& path);

}  // namespace lepp

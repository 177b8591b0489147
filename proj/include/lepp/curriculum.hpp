#pragma once

// Progressive-sampling schedules: epoch -> fraction of the maximum rollout
// horizon that the multi-step loss is allowed to see.

#include <string>
#include <string_view>

namespace lepp {

enum class ScheduleKind { linear, poly, log };

struct ScheduleSpec {
    ScheduleKind kind = ScheduleKind::log;
    double tau0 = 0.3;
    int epochs = 1;       // N
    double p_exp = 2.0;   // poly only
    int max_horizon = 1;  // M

    // Throws ConfigError on out-of-range fields.
    void validate() const;
};

ScheduleKind parse_schedule_kind(std::string_view name);
std::string to_string(ScheduleKind kind);

// Value in [tau0, 1]; the log schedule uses log2 so it reaches 1 at n = N.
double schedule_ratio(const ScheduleSpec& spec, int epoch);
// clamp(round_half_up(ratio * M), 1, M)
int schedule_horizon(const ScheduleSpec& spec, int epoch);

}  // namespace lepp

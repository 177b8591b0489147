#include "lepp/curriculum.hpp"

#include <algorithm>
#include <cmath>

#include "lepp/errors.hpp"

namespace lepp {

void ScheduleSpec::validate() const
{
    if (!(tau0 >= 0.0 && tau0 <= 1.0)) throw ConfigError("schedule tau0 must lie in [0, 1], got " + std::to_string(tau0));
    if (epochs < 1) throw ConfigError("schedule needs at least one epoch");
    if (max_horizon < 1) throw ConfigError("max horizon must be >= 1");
    if (kind == ScheduleKind::poly && !(p_exp > 0.0)) throw ConfigError("poly schedule exponent must be > 0");
}

ScheduleKind parse_schedule_kind(std::string_view name)
{
    if (name == "linear") return ScheduleKind::linear;
    if (name == "poly") return ScheduleKind::poly;
    if (name == "log") return ScheduleKind::log;
    throw ConfigError("unknown schedule kind '" + std::string(name) + "' (linear, poly, log)");
}

std::string to_string(ScheduleKind kind)
{
    switch (kind) {
    case ScheduleKind::linear: return "linear";
    case ScheduleKind::poly: return "poly";
    case ScheduleKind::log: return "log";
    }
    return "?";
}

double schedule_ratio(const ScheduleSpec& spec, int epoch)
{
    spec.validate();
    if (epoch < 0 || epoch > spec.epochs)
        throw ConfigError("epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(spec.epochs) + "]");
    const double t = static_cast<double>(epoch) / spec.epochs;
    double growth = 0.0;
    switch (spec.kind) {
    case ScheduleKind::linear: growth = t; break;
    case ScheduleKind::poly: growth = std::pow(t, spec.p_exp); break;
    case ScheduleKind::log: growth = std::log2(1.0 + t); break;
    }
    return std::min(1.0, spec.tau0 + (1.0 - spec.tau0) * growth);
}

int schedule_horizon(const ScheduleSpec& spec, int epoch)
{
    const double scaled = schedule_ratio(spec, epoch) * spec.max_horizon;
    const int rounded = static_cast<int>(std::floor(scaled + 0.5));
    return std::clamp(rounded, 1, spec.max_horizon);
}

}  // namespace lepp

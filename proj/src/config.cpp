#include "lepp/config.hpp"

#include <fstream>
#include <functional>
#include <map>

#include "lepp/errors.hpp"

namespace lepp {

namespace {

using json = nlohmann::json;

struct Field {
    std::function<json(const RunConfig&)> get;
    std::function<void(RunConfig&, const json&)> set;
};

[[noreturn]] void bad_type(const std::string& key, const json& v, const char* want)
{
    throw ConfigError("config key '" + key + "': expected " + want + ", got " + v.dump());
}

std::size_t as_size(const std::string& key, const json& v)
{
    if (v.is_number_unsigned()) return v.get<std::size_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::size_t>(v.get<std::int64_t>());
    bad_type(key, v, "a non-negative integer");
}

double as_double(const std::string& key, const json& v)
{
    if (!v.is_number()) bad_type(key, v, "a number");
    return v.get<double>();
}

bool as_bool(const std::string& key, const json& v)
{
    if (!v.is_boolean()) bad_type(key, v, "true or false");
    return v.get<bool>();
}

std::string as_string(const std::string& key, const json& v)
{
    if (!v.is_string()) bad_type(key, v, "a string");
    return v.get<std::string>();
}

template <typename T>
std::vector<T> as_list(const std::string& key, const json& v, const std::function<T(const json&)>& each)
{
    if (!v.is_array()) bad_type(key, v, "a list");
    std::vector<T> out;
    for (const auto& e : v) out.push_back(each(e));
    return out;
}

const std::map<std::string, Field>& table()
{
    static const std::map<std::string, Field> t = [] {
        std::map<std::string, Field> m;
        auto sz = [&](const std::string& key, auto ref) {
            m[key] = {[ref](const RunConfig& c) { return json(ref(const_cast<RunConfig&>(c))); },
                      [ref, key](RunConfig& c, const json& v) {
                          ref(c) = static_cast<std::remove_reference_t<decltype(ref(c))>>(as_size(key, v));
                      }};
        };
        auto real = [&](const std::string& key, auto ref) {
            m[key] = {[ref](const RunConfig& c) { return json(ref(const_cast<RunConfig&>(c))); },
                      [ref, key](RunConfig& c, const json& v) { ref(c) = as_double(key, v); }};
        };
        auto flag = [&](const std::string& key, auto ref) {
            m[key] = {[ref](const RunConfig& c) { return json(ref(const_cast<RunConfig&>(c))); },
                      [ref, key](RunConfig& c, const json& v) { ref(c) = as_bool(key, v); }};
        };

        m["seed"] = {[](const RunConfig& c) { return json(c.seed); },
                     [](RunConfig& c, const json& v) { c.seed = as_size("seed", v); }};

        m["data.kind"] = {[](const RunConfig& c) { return json(pde::to_string(c.data.kind)); },
                          [](RunConfig& c, const json& v) { c.data.kind = pde::parse_kind(as_string("data.kind", v)); }};
        sz("data.count", [](RunConfig& c) -> auto& { return c.data.count; });
        sz("data.train_count", [](RunConfig& c) -> auto& { return c.data.train_count; });
        sz("data.threads", [](RunConfig& c) -> auto& { return c.data.threads; });
        sz("data.nx", [](RunConfig& c) -> auto& { return c.data.grid.nx; });
        sz("data.ny", [](RunConfig& c) -> auto& { return c.data.grid.ny; });
        real("data.Lx", [](RunConfig& c) -> auto& { return c.data.grid.Lx; });
        real("data.Ly", [](RunConfig& c) -> auto& { return c.data.grid.Ly; });
        real("data.dt", [](RunConfig& c) -> auto& { return c.data.grid.dt; });
        sz("data.frames", [](RunConfig& c) -> auto& { return c.data.grid.frames; });
        sz("data.store_every", [](RunConfig& c) -> auto& { return c.data.grid.store_every; });
        real("data.ns.nu_min", [](RunConfig& c) -> auto& { return c.data.ns_nu_min; });
        real("data.ns.nu_max", [](RunConfig& c) -> auto& { return c.data.ns_nu_max; });
        real("data.ns.forcing", [](RunConfig& c) -> auto& { return c.data.ns_forcing; });
        real("data.swe.g", [](RunConfig& c) -> auto& { return c.data.swe_g; });
        real("data.swe.depth", [](RunConfig& c) -> auto& { return c.data.swe_depth; });
        real("data.pte.diffusivity_min", [](RunConfig& c) -> auto& { return c.data.pte_diffusivity_min; });
        real("data.pte.diffusivity_max", [](RunConfig& c) -> auto& { return c.data.pte_diffusivity_max; });
        sz("data.pte.sources", [](RunConfig& c) -> auto& { return c.data.pte_sources; });
        real("data.pte.rate_min", [](RunConfig& c) -> auto& { return c.data.pte_rate_min; });
        real("data.pte.rate_max", [](RunConfig& c) -> auto& { return c.data.pte_rate_max; });
        flag("data.pte.wind", [](RunConfig& c) -> auto& { return c.data.pte_wind; });
        real("data.pte.wind_min", [](RunConfig& c) -> auto& { return c.data.pte_wind_min; });
        real("data.pte.wind_max", [](RunConfig& c) -> auto& { return c.data.pte_wind_max; });

        sz("model.d_z", [](RunConfig& c) -> auto& { return c.model.d_z; });
        sz("model.bundle", [](RunConfig& c) -> auto& { return c.model.bundle; });
        m["model.evolution"] = {
            [](const RunConfig& c) { return json(to_string(c.model.evolution)); },
            [](RunConfig& c, const json& v) { c.model.evolution = parse_evolution_kind(as_string("model.evolution", v)); }};
        sz("model.d_state", [](RunConfig& c) -> auto& { return c.model.d_state; });
        sz("model.d_inner", [](RunConfig& c) -> auto& { return c.model.d_inner; });
        sz("model.mlp_hidden", [](RunConfig& c) -> auto& { return c.model.mlp_hidden; });
        m["model.widths"] = {[](const RunConfig& c) { return json(c.model.widths); },
                             [](RunConfig& c, const json& v) {
                                 c.model.widths = as_list<std::size_t>(
                                     "model.widths", v, [](const json& e) { return as_size("model.widths", e); });
                             }};

        m["train.epochs"] = {[](const RunConfig& c) { return json(c.train.epochs); },
                             [](RunConfig& c, const json& v) {
                                 c.train.epochs = static_cast<int>(as_size("train.epochs", v));
                             }};
        sz("train.batch_size", [](RunConfig& c) -> auto& { return c.train.batch_size; });
        real("train.lr", [](RunConfig& c) -> auto& { return c.train.lr; });
        sz("train.max_horizon", [](RunConfig& c) -> auto& { return c.train.max_horizon; });
        sz("train.starts_per_traj", [](RunConfig& c) -> auto& { return c.train.starts_per_traj; });
        real("train.w_multi_step", [](RunConfig& c) -> auto& { return c.train.weights.multi_step; });
        real("train.w_recons", [](RunConfig& c) -> auto& { return c.train.weights.recons; });
        real("train.w_consistency", [](RunConfig& c) -> auto& { return c.train.weights.consistency; });
        flag("train.consistency_target_grad", [](RunConfig& c) -> auto& { return c.train.consistency_target_grad; });
        flag("train.debug_grad_check", [](RunConfig& c) -> auto& { return c.train.debug_grad_check; });
        sz("train.checkpoint_every", [](RunConfig& c) -> auto& { return c.checkpoint_every; });

        m["schedule.kind"] = {
            [](const RunConfig& c) { return json(to_string(c.train.schedule)); },
            [](RunConfig& c, const json& v) { c.train.schedule = parse_schedule_kind(as_string("schedule.kind", v)); }};
        real("schedule.tau0", [](RunConfig& c) -> auto& { return c.train.tau0; });
        real("schedule.p", [](RunConfig& c) -> auto& { return c.train.p_exp; });

        sz("eval.m", [](RunConfig& c) -> auto& { return c.eval_m; });
        sz("bench.m", [](RunConfig& c) -> auto& { return c.bench_m; });
        sz("bench.reps", [](RunConfig& c) -> auto& { return c.bench_reps; });
        sz("bench.warmup", [](RunConfig& c) -> auto& { return c.bench_warmup; });

        m["ablation.tau0"] = {[](const RunConfig& c) { return json(c.ablation_tau0); },
                              [](RunConfig& c, const json& v) {
                                  c.ablation_tau0 = as_list<double>(
                                      "ablation.tau0", v, [](const json& e) { return as_double("ablation.tau0", e); });
                              }};
        m["ablation.schedules"] = {[](const RunConfig& c) {
                                       json j = json::array();
                                       for (auto s : c.ablation_schedules) j.push_back(to_string(s));
                                       return j;
                                   },
                                   [](RunConfig& c, const json& v) {
                                       c.ablation_schedules = as_list<ScheduleKind>("ablation.schedules", v, [](const json& e) {
                                           return parse_schedule_kind(as_string("ablation.schedules", e));
                                       });
                                   }};
        m["ablation.kinds"] = {[](const RunConfig& c) {
                                   json j = json::array();
                                   for (auto k : c.ablation_kinds) j.push_back(to_string(k));
                                   return j;
                               },
                               [](RunConfig& c, const json& v) {
                                   c.ablation_kinds = as_list<EvolutionKind>("ablation.kinds", v, [](const json& e) {
                                       return parse_evolution_kind(as_string("ablation.kinds", e));
                                   });
                               }};
        return m;
    }();
    return t;
}

}  // namespace

void RunConfig::set(const std::string& key, const json& value)
{
    const auto& t = table();
    const auto it = t.find(key);
    if (it == t.end()) throw ConfigError("unknown config key '" + key + "'");
    try {
        it->second.set(*this, value);
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {  // parse_* failures
        throw ConfigError("config key '" + key + "': " + e.what());
    }
}

json RunConfig::to_json() const
{
    json j = json::object();
    for (const auto& [key, f] : table()) j[key] = f.get(*this);
    return j;
}

void RunConfig::validate() const
{
    data.validate();
    train.validate();
    ModelConfig probe = model;
    probe.channels = pde::channels(data.kind);
    probe.height = data.grid.ny;
    probe.width = data.grid.nx;
    probe.validate();
    if (eval_m == 0 || bench_m == 0) throw ConfigError("eval.m and bench.m must be >= 1");
    if (bench_reps < 30) throw ConfigError("bench.reps must be >= 30");
    if (bench_warmup < 5) throw ConfigError("bench.warmup must be >= 5");
    for (double t : ablation_tau0)
        if (!(t > 0.0 && t <= 1.0)) throw ConfigError("ablation.tau0 values must lie in (0, 1]");
}

RunConfig RunConfig::from_json(const json& flat)
{
    if (!flat.is_object()) throw ConfigError("config must be a JSON object of dotted keys");
    if (!flat.contains("seed")) throw ConfigError("config key 'seed' is required");
    RunConfig c;
    if (flat.contains("data.kind")) {
        c.set("data.kind", flat["data.kind"]);
        c.data = GeneratorConfig::preset(c.data.kind);
    }
    for (const auto& [key, value] : flat.items()) c.set(key, value);
    c.data.seed = c.seed;
    c.train.seed = c.seed;
    c.validate();
    return c;
}

std::vector<std::string> RunConfig::keys()
{
    std::vector<std::string> out;
    for (const auto& [key, _] : table()) out.push_back(key);
    return out;
}

std::pair<std::string, json> parse_override(const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    json v = json::parse(text, nullptr, false);
    if (v.is_discarded()) v = text;
    return {key, v};
}

void write_json_file(const std::string& path, const json& j)
{
    std::ofstream f(path);
    if (!f) throw Error("cannot write " + path);
    f << j.dump(2) << '\n';
    if (!f) throw Error("write failed: " + path);
}

json read_json_file(const std::string& path)
{
    std::ifstream f(path);
    if (!f) throw MissingArtifactError("cannot open " + path);
    json j = json::parse(f, nullptr, false);
    if (j.is_discarded()) throw ConfigError(path + ": invalid JSON");
    return j;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides)
{
    json flat = json::object();
    if (!path.empty()) {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot open config " + path);
        flat = json::parse(f, nullptr, false);
        if (flat.is_discarded()) throw ConfigError(path + ": invalid JSON");
        if (!flat.is_object()) throw ConfigError(path + ": config must be a JSON object");
    }
    for (const auto& o : overrides) {
        auto [key, value] = parse_override(o);
        flat[key] = value;
    }
    return RunConfig::from_json(flat);
}

}  // namespace lepp

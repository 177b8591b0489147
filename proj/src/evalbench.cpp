#include "lepp/evalbench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "lepp/errors.hpp"
#include "lepp/inference.hpp"
#include "lepp/random.hpp"

namespace lepp {

double rmse(std::span<const double> pred, std::span<const double> truth)
{
    if (pred.size() != truth.size())
        throw ShapeError("rmse: " + std::to_string(pred.size()) + " vs " + std::to_string(truth.size()) + " elements");
    if (pred.empty()) throw ShapeError("rmse: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
    return std::sqrt(s / static_cast<double>(pred.size()));
}

double rmse(const Tensor& pred, const Tensor& truth)
{
    if (pred.shape() != truth.shape())
        throw ShapeError("rmse: shape " + shape_str(pred.shape()) + " vs " + shape_str(truth.shape()));
    return rmse(pred.data(), truth.data());
}

namespace {

struct Accumulator {
    std::vector<double> sq;
    std::vector<std::size_t> n;

    explicit Accumulator(std::size_t M) : sq(M, 0.0), n(M, 0) {}

    void add(std::size_t step, std::span<const double> pred, std::span<const double> truth)
    {
        for (std::size_t i = 0; i < pred.size(); ++i) sq[step] += (pred[i] - truth[i]) * (pred[i] - truth[i]);
        n[step] += pred.size();
    }

    AccuracyReport finish(std::size_t windows) const
    {
        if (windows == 0) throw Error("no evaluation window fits the test trajectories");
        AccuracyReport r;
        r.windows = windows;
        double total = 0.0;
        std::size_t count = 0;
        for (std::size_t m = 0; m < sq.size(); ++m) {
            r.per_step.push_back(std::sqrt(sq[m] / static_cast<double>(n[m])));
            total += sq[m];
            count += n[m];
        }
        r.rmse_single = r.per_step.front();
        r.rmse_rollout = std::sqrt(total / static_cast<double>(count));
        return r;
    }
};

std::size_t last_start(const Dataset& ds, std::size_t M, std::size_t S)
{
    if (M == 0) throw ConfigError("evaluation horizon must be >= 1");
    if ((M + 1) * S > ds.frames)
        throw ConfigError("horizon " + std::to_string(M) + " with bundle " + std::to_string(S) + " needs " +
                          std::to_string((M + 1) * S) + " frames; the dataset has " + std::to_string(ds.frames));
    return ds.frames - (M + 1) * S;
}

}  // namespace

AccuracyReport evaluate(const Surrogate& model, const Dataset& test, std::size_t M)
{
    const auto& cfg = model.config();
    if (test.channels != cfg.channels || test.ny != cfg.height || test.nx != cfg.width || test.d_p != cfg.d_p)
        throw ShapeError("evaluate: dataset geometry does not match the model");
    const std::size_t S = cfg.bundle, kmax = last_start(test, M, S);
    const std::size_t frame = test.channels * test.ny * test.nx, plane = test.ny * test.nx;
    const auto& norm = model.normalizer();

    InferenceSession session(model);
    std::vector<double> out(S * frame);
    Accumulator acc(M);
    std::size_t windows = 0;
    for (const auto& traj : test.trajectories) {
        const Tensor p = norm.normalize_params(traj.params);
        session.set_static(p.data());
        const Tensor nf = norm.normalize_frames(traj.fields);
        const auto raw = traj.fields.data();
        for (std::size_t k = 0; k <= kmax; ++k) {
            session.encode(nf.data().subspan(k * frame, S * frame));
            for (std::size_t m = 1; m <= M; ++m) {
                session.step();
                session.decode(out);
                norm.denormalize_frames_inplace(out, plane);
                acc.add(m - 1, out, raw.subspan((k + m * S) * frame, S * frame));
            }
            ++windows;
        }
    }
    return acc.finish(windows);
}

AccuracyReport persistence_baseline(const Dataset& test, std::size_t M, std::size_t bundle)
{
    if (bundle == 0) throw ConfigError("bundle must be >= 1");
    const std::size_t S = bundle, kmax = last_start(test, M, S);
    const std::size_t frame = test.channels * test.ny * test.nx;
    Accumulator acc(M);
    std::size_t windows = 0;
    for (const auto& traj : test.trajectories) {
        const auto raw = traj.fields.data();
        for (std::size_t k = 0; k <= kmax; ++k) {
            for (std::size_t m = 1; m <= M; ++m)
                acc.add(m - 1, raw.subspan(k * frame, S * frame), raw.subspan((k + m * S) * frame, S * frame));
            ++windows;
        }
    }
    return acc.finish(windows);
}

// ---------------------------------------------------------------------------

Percentiles percentiles(std::vector<double> s)
{
    if (s.empty()) throw Error("percentiles of an empty sample");
    std::sort(s.begin(), s.end());
    auto at = [&](double q) {
        const double pos = q * static_cast<double>(s.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const std::size_t hi = std::min(lo + 1, s.size() - 1);
        return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
    };
    return {at(0.5), at(0.1), at(0.9)};
}

double timer_resolution_ms()
{
    using clock = std::chrono::steady_clock;
    auto best = clock::duration::max();
    for (int i = 0; i < 32; ++i) {
        const auto a = clock::now();
        auto b = clock::now();
        while (b == a) b = clock::now();
        best = std::min(best, b - a);
    }
    return std::chrono::duration<double, std::milli>(best).count();
}

TimingStats time_inference(const Surrogate& model, const Tensor& U0, std::span<const double> p, std::size_t m,
                           const TimingOptions& opt)
{
    if (opt.reps < 30) throw ConfigError("timing needs reps >= 30, got " + std::to_string(opt.reps));
    if (opt.warmup < 5) throw ConfigError("timing needs warmup >= 5, got " + std::to_string(opt.warmup));
    if (m == 0) throw ConfigError("timing needs m >= 1");
    const auto& cfg = model.config();
    const Shape want{cfg.bundle, cfg.channels, cfg.height, cfg.width};
    if (U0.shape() != want) throw ShapeError("time_inference: U0 must be " + shape_str(want));
    if (p.size() != cfg.d_p) throw ShapeError("time_inference: expected " + std::to_string(cfg.d_p) + " parameters");

    using clock = std::chrono::steady_clock;
    auto ms = [](clock::duration d) { return std::chrono::duration<double, std::milli>(d).count(); };

    const Tensor u = model.normalizer().normalize_frames(U0);
    const Tensor pn = model.normalizer().normalize_params(p);
    InferenceSession session(model);
    std::vector<double> out(session.frame_size());

    TimingStats st;
    st.m = m;
    st.reps = opt.reps;
    st.warmup = opt.warmup;
    for (auto* v : {&st.total_ms, &st.encode_ms, &st.evolve_ms, &st.decode_ms}) v->reserve(opt.reps);

    for (std::size_t r = 0; r < opt.warmup + opt.reps; ++r) {
        if (opt.region_probe) opt.region_probe(true);
        const auto t0 = clock::now();
        session.set_static(pn.data());
        session.encode(u.data());
        const auto t1 = clock::now();
        for (std::size_t i = 0; i < m; ++i) session.step();
        const auto t2 = clock::now();
        session.decode(out);
        const auto t3 = clock::now();
        if (opt.region_probe) opt.region_probe(false);

        double sum = 0.0;
        for (double v : out) sum += v;
        st.checksum += sum;
        if (r < opt.warmup) continue;
        st.total_ms.push_back(ms(t3 - t0));
        st.encode_ms.push_back(ms(t1 - t0));
        st.evolve_ms.push_back(ms(t2 - t1));
        st.decode_ms.push_back(ms(t3 - t2));
    }
    st.total = percentiles(st.total_ms);
    st.encode = percentiles(st.encode_ms);
    st.evolve = percentiles(st.evolve_ms);
    st.decode = percentiles(st.decode_ms);
    st.timer_resolution_ms = timer_resolution_ms();
    st.timer_warning = st.timer_resolution_ms > 0.01 * st.evolve.median ||
                       st.timer_resolution_ms > 0.01 * st.total.median;
    if (!std::isfinite(st.checksum)) throw NonFiniteError("time_inference: decoded output is not finite");
    return st;
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const AccuracyReport& r)
{
    return {{"rmse_single", r.rmse_single}, {"rmse_rollout", r.rmse_rollout}, {"per_step_rmse", r.per_step},
            {"windows", r.windows}};
}

namespace {

nlohmann::json to_json(const Percentiles& p) { return {{"median", p.median}, {"p10", p.p10}, {"p90", p.p90}}; }

}  // namespace

nlohmann::json to_json(const TimingStats& t)
{
    return {{"m", t.m},
            {"repetitions", t.reps},
            {"warmup", t.warmup},
            {"span", t.span},
            {"median", t.total.median},
            {"p10", t.total.p10},
            {"p90", t.total.p90},
            {"unit", "ms"},
            {"phases", {{"encode", to_json(t.encode)}, {"evolve", to_json(t.evolve)}, {"decode", to_json(t.decode)}}},
            {"timer_resolution_ms", t.timer_resolution_ms},
            {"timer_warning", t.timer_warning},
            {"checksum", t.checksum}};
}

nlohmann::json to_json(const EvalReport& r)
{
    nlohmann::json j = to_json(r.accuracy);
    if (r.persistence) j["persistence"] = to_json(*r.persistence);
    j["inference"] = r.timing ? to_json(*r.timing) : nlohmann::json(nullptr);
    j["parameter_count"] = r.parameter_count;
    j["evolution_parameter_count"] = r.evolution_parameter_count;
    j["evolution"] = r.evolution;
    j["config_fingerprint"] = r.fingerprint;
    return j;
}

std::string fingerprint(const nlohmann::json& resolved_config)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(resolved_config.dump())));
    return buf;
}

// ---------------------------------------------------------------------------

std::vector<AblationCell> ablation_grid(const std::vector<EvolutionKind>& kinds,
                                        const std::vector<ScheduleKind>& schedules, const std::vector<double>& tau0s)
{
    std::vector<AblationCell> g;
    for (auto k : kinds)
        for (auto s : schedules)
            for (double t : tau0s) g.push_back({k, s, t});
    if (g.empty()) throw ConfigError("ablation grid is empty");
    return g;
}

std::vector<AblationRow> run_ablation(const std::vector<AblationCell>& grid, const CellRunner& runner,
                                      const std::function<void(const AblationRow&)>& on_row)
{
    if (grid.empty()) throw ConfigError("ablation grid is empty");
    std::vector<AblationRow> rows;
    for (const auto& cell : grid) {
        AblationRow row;
        try {
            row = runner(cell);
        } catch (const std::exception& e) {
            row = AblationRow{};
            row.error = e.what();
        }
        row.cell = cell;
        if (!row.ok && row.error.empty()) row.error = "cell failed";
        if (on_row) on_row(row);
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string csv_field(const std::string& s)
{
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

std::vector<std::string> csv_split(const std::string& line)
{
    std::vector<std::string> out(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                out.back() += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                out.back() += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.emplace_back();
        } else {
            out.back() += c;
        }
    }
    return out;
}

namespace {

std::string num(double v)
{
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

}  // namespace

std::string ablation_csv_header() { return "kind,tau0,schedule,rmse_single,rmse_rollout,median_ms,params,status,error"; }

std::string ablation_csv_row(const AblationRow& r)
{
    std::ostringstream s;
    s << to_string(r.cell.kind) << ',' << num(r.cell.tau0) << ',' << to_string(r.cell.schedule) << ',';
    if (r.ok)
        s << num(r.rmse_single) << ',' << num(r.rmse_rollout) << ',' << num(r.median_ms) << ',' << r.params << ",ok,";
    else
        s << ",,,," << "failed," << csv_field(r.error);
    return s.str();
}

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows)
{
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write " + path);
    f << ablation_csv_header() << "\r\n";
    for (const auto& r : rows) f << ablation_csv_row(r) << "\r\n";
    if (!f) throw Error("write failed: " + path);
}

std::vector<AblationRow> read_ablation_csv(const std::string& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MissingArtifactError("cannot open " + path);
    std::string line;
    std::getline(f, line);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != ablation_csv_header()) throw Error(path + ": unexpected CSV header");
    std::vector<AblationRow> rows;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto c = csv_split(line);
        if (c.size() != 9) throw Error(path + ": expected 9 fields, got " + std::to_string(c.size()));
        AblationRow r;
        r.cell = {parse_evolution_kind(c[0]), parse_schedule_kind(c[2]), std::stod(c[1])};
        r.ok = c[7] == "ok";
        if (r.ok) {
            r.rmse_single = std::stod(c[3]);
            r.rmse_rollout = std::stod(c[4]);
            r.median_ms = std::stod(c[5]);
            r.params = std::stoull(c[6]);
        }
        r.error = c[8];
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace lepp

#include "lepp/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lepp/errors.hpp"

namespace lepp {

namespace fs = std::filesystem;

namespace {

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void ensure_dir(const std::string& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw ConfigError("cannot create output directory " + dir);
}

Tensor probe_frames(const ModelConfig& c, std::uint64_t seed)
{
    Tensor u({c.bundle, c.channels, c.height, c.width});
    Rng rng = Rng(seed).split("bench-input");
    for (auto& v : u.storage()) v = rng.normal();
    return u;
}

}  // namespace

std::string train_path(const std::string& data_dir) { return join(data_dir, std::string(kDatasetStem) + "_train.lepd"); }
std::string test_path(const std::string& data_dir) { return join(data_dir, std::string(kDatasetStem) + "_test.lepd"); }

DatasetSplit run_generate(const RunConfig& cfg, const std::string& out_dir)
{
    ensure_dir(out_dir);
    write_json_file(join(out_dir, kResolvedConfigFile), cfg.to_json());
    auto split = generate_dataset(cfg.data);
    write_dataset_split(join(out_dir, kDatasetStem), split, cfg.data);
    return split;
}

Surrogate train_in_memory(const RunConfig& cfg, const Dataset& train, std::vector<EpochLog>* logs)
{
    Surrogate model(model_config_for(train, cfg.model), cfg.seed);
    model.normalizer() = fit_normalizer(train);
    const auto data = TrainingData::from(train, model.normalizer());
    Trainer trainer(model, data, cfg.train);
    auto l = trainer.fit();
    if (logs) *logs = std::move(l);
    return model;
}

TrainRun run_train(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir, bool resume,
                   const std::function<void(const EpochLog&)>& on_epoch)
{
    const Dataset train = read_dataset(train_path(data_dir));
    ensure_dir(out_dir);
    const std::string ck_path = join(out_dir, kCheckpointFile), log_path = join(out_dir, kTrainLogFile);

    TrainRun run;
    std::optional<Surrogate> model;
    std::optional<AdamState> adam;
    if (resume) {
        const Checkpoint ck = read_checkpoint(ck_path);
        model.emplace(surrogate_from_checkpoint(ck));
        adam = load_optimizer(ck, *model);
        run.first_epoch = ck.meta.value("epoch", 0);
        const auto mc = model_config_for(train, cfg.model);
        if (to_json(mc) != to_json(model->config()))
            throw ConfigError("checkpoint model config differs from the run config");
    } else {
        model.emplace(model_config_for(train, cfg.model), cfg.seed);
        model->normalizer() = fit_normalizer(train);
    }
    write_json_file(join(out_dir, kResolvedConfigFile), cfg.to_json());

    const auto data = TrainingData::from(train, model->normalizer());
    Trainer trainer(*model, data, cfg.train);
    if (adam) trainer.adam() = *adam;

    std::ofstream log(log_path, resume ? std::ios::app : std::ios::trunc);
    if (!log) throw Error("cannot write " + log_path);

    auto save = [&](int next_epoch) {
        Checkpoint ck = make_checkpoint(*model, {{"epoch", next_epoch}, {"config", cfg.to_json()}});
        store_optimizer(ck, *model, trainer.adam());
        const std::string tmp = ck_path + ".tmp";
        write_checkpoint(tmp, ck);
        fs::rename(tmp, ck_path);
    };
    run.logs = trainer.fit(run.first_epoch, [&](const EpochLog& e) {
        log << to_json(e).dump() << '\n';
        log.flush();
        if (cfg.checkpoint_every && (e.epoch + 1) % static_cast<int>(cfg.checkpoint_every) == 0) save(e.epoch + 1);
        if (on_epoch) on_epoch(e);
    });
    save(std::max(cfg.train.epochs, run.first_epoch));
    return run;
}

EvalReport run_eval(const RunConfig& cfg, const Surrogate& model, const Dataset& test)
{
    EvalReport r;
    r.accuracy = evaluate(model, test, cfg.eval_m);
    r.persistence = persistence_baseline(test, cfg.eval_m, model.config().bundle);
    const BenchRow b = bench_model(cfg, model);
    r.timing = b.timing;
    r.parameter_count = model.parameter_count();
    r.evolution_parameter_count = model.evolution_parameter_count();
    r.evolution = to_string(model.config().evolution);
    r.fingerprint = fingerprint(cfg.to_json());
    return r;
}

BenchRow bench_model(const RunConfig& cfg, const Surrogate& model)
{
    BenchRow row;
    row.kind = model.config().evolution;
    row.params = model.parameter_count();
    row.evolution_params = model.evolution_parameter_count();
    const Tensor u0 = probe_frames(model.config(), cfg.seed);
    std::vector<double> p(model.config().d_p, 0.0);
    for (std::size_t i = 0; i < p.size() && i < model.normalizer().param_mean.size(); ++i)
        p[i] = model.normalizer().param_mean[i];
    TimingOptions opt;
    opt.reps = cfg.bench_reps;
    opt.warmup = cfg.bench_warmup;
    row.timing = time_inference(model, u0, p, cfg.bench_m, opt);
    return row;
}

std::vector<BenchRow> run_bench(const RunConfig& cfg, const Surrogate& model)
{
    ModelConfig other = model.config();
    other.evolution = other.evolution == EvolutionKind::ssm ? EvolutionKind::mlp : EvolutionKind::ssm;
    Surrogate twin(other, cfg.seed);
    twin.normalizer() = model.normalizer();
    std::vector<BenchRow> rows{bench_model(cfg, model), bench_model(cfg, twin)};
    if (rows[0].kind != EvolutionKind::ssm) std::swap(rows[0], rows[1]);
    return rows;
}

std::string bench_csv_header()
{
    return "kind,params,evolution_params,m,reps,warmup,median_ms,p10_ms,p90_ms,evolve_median_ms,evolve_p10_ms,"
           "evolve_p90_ms,encode_median_ms,decode_median_ms,timer_resolution_ms,timer_warning,checksum";
}

std::string bench_csv_row(const BenchRow& r)
{
    const auto& t = r.timing;
    std::ostringstream s;
    s.precision(17);
    s << to_string(r.kind) << ',' << r.params << ',' << r.evolution_params << ',' << t.m << ',' << t.reps << ','
      << t.warmup << ',' << t.total.median << ',' << t.total.p10 << ',' << t.total.p90 << ',' << t.evolve.median
      << ',' << t.evolve.p10 << ',' << t.evolve.p90 << ',' << t.encode.median << ',' << t.decode.median << ','
      << t.timer_resolution_ms << ',' << (t.timer_warning ? "true" : "false") << ',' << t.checksum;
    return s.str();
}

RunConfig cell_config(const RunConfig& base, const AblationCell& cell)
{
    RunConfig c = base;
    c.model.evolution = cell.kind;
    c.train.schedule = cell.schedule;
    c.train.tau0 = cell.tau0;
    c.validate();
    return c;
}

AblationRow run_ablation_cell(const RunConfig& base, const AblationCell& cell, const Dataset& train,
                              const Dataset& test)
{
    const RunConfig cfg = cell_config(base, cell);
    const Surrogate model = train_in_memory(cfg, train);
    const auto acc = evaluate(model, test, cfg.train.max_horizon);
    AblationRow row;
    row.cell = cell;
    row.ok = true;
    row.rmse_single = acc.rmse_single;
    row.rmse_rollout = acc.rmse_rollout;
    row.median_ms = bench_model(cfg, model).timing.total.median;
    row.params = model.parameter_count();
    return row;
}

}  // namespace lepp

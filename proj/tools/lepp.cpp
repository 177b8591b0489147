// lepp: dataset generation, training, evaluation, benchmarking, schedule
// inspection and the schedule ablation grid.
//
// Exit codes: 0 success, 2 config error, 3 numerical failure, 4 missing
// artifact, 1 anything else.

#include <spawn.h>
#include <sys/wait.h>
#include <fcntl.h>
#include <unistd.h>

#include <charconv>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "lepp/config.hpp"
#include "lepp/errors.hpp"
#include "lepp/pipeline.hpp"

extern char** environ;

namespace fs = std::filesystem;
using namespace lepp;

namespace {

struct Common {
    std::string config;
    std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c, bool config_required)
{
    auto* opt = cmd->add_option("--config", c.config, "JSON run config (flat dotted keys)");
    if (config_required) opt->required();
    cmd->add_option("--set", c.sets, "override key=value (repeatable)");
}

RunConfig resolve(const Common& c, std::vector<std::string> extra = {})
{
    auto sets = c.sets;
    sets.insert(sets.end(), extra.begin(), extra.end());
    return load_run_config(c.config, sets);
}

// Config stored in a checkpoint, with the command line layered on top.
RunConfig resolve_with_checkpoint(const Common& c, const Checkpoint& ck)
{
    if (!c.config.empty()) return resolve(c);
    nlohmann::json flat = ck.meta.value("config", nlohmann::json::object());
    if (flat.empty()) flat["seed"] = 0;
    for (const auto& s : c.sets) {
        auto [k, v] = parse_override(s);
        flat[k] = v;
    }
    return RunConfig::from_json(flat);
}

std::string self_exe()
{
    std::error_code ec;
    auto p = fs::read_symlink("/proc/self/exe", ec);
    if (ec) throw Error("cannot locate the lepp executable");
    return p.string();
}

// Runs `args` as a child process with stdout/stderr sent to `log`; returns the exit status.
int spawn_and_wait(const std::vector<std::string>& args, const std::string& log)
{
    posix_spawn_file_actions_t fa;
    posix_spawn_file_actions_init(&fa);
    posix_spawn_file_actions_addopen(&fa, 1, log.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    posix_spawn_file_actions_adddup2(&fa, 1, 2);
    std::vector<char*> argv;
    for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    pid_t pid = 0;
    const int rc = posix_spawn(&pid, argv[0], &fa, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&fa);
    if (rc != 0) throw Error("posix_spawn failed: " + std::string(std::strerror(rc)));
    int status = 0;
    if (waitpid(pid, &status, 0) < 0) throw Error("waitpid failed");
    return WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
}

std::string last_line(const std::string& path)
{
    std::ifstream f(path);
    std::string line, last;
    while (std::getline(f, line))
        if (!line.empty()) last = line;
    return last;
}

std::string fmt(double v)
{
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

int run(int argc, char** argv)
{
    CLI::App app{"lepp: latent-evolution PDE surrogates"};
    app.require_subcommand(1);

    // generate
    Common gen_c;
    std::string gen_kind, gen_out;
    auto* gen = app.add_subcommand("generate", "simulate train/test trajectory datasets");
    add_common(gen, gen_c, true);
    gen->add_option("--kind", gen_kind, "ns, swe or pte")->check(CLI::IsMember({"ns", "swe", "pte"}));
    gen->add_option("--out", gen_out, "output directory")->required();

    // train
    Common tr_c;
    std::string tr_data, tr_out;
    bool tr_resume = false, tr_target_grad = false;
    auto* tr = app.add_subcommand("train", "train a surrogate");
    add_common(tr, tr_c, true);
    tr->add_option("--data", tr_data, "dataset directory")->required();
    tr->add_option("--out", tr_out, "run directory")->required();
    tr->add_flag("--resume", tr_resume, "continue from <out>/model.lepc");
    tr->add_flag("--consistency-target-grad", tr_target_grad, "let gradients flow through consistency targets");

    // eval
    Common ev_c;
    std::string ev_ck, ev_data, ev_out;
    auto* ev = app.add_subcommand("eval", "accuracy against persistence, plus inference timing");
    add_common(ev, ev_c, false);
    ev->add_option("--checkpoint", ev_ck)->required();
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_option("--out", ev_out, "report path (default stdout)");

    // bench
    Common be_c;
    std::string be_ck, be_out;
    auto* be = app.add_subcommand("bench", "time ssm and mlp latent evolution");
    add_common(be, be_c, false);
    be->add_option("--checkpoint", be_ck)->required();
    be->add_option("--out", be_out, "CSV path (default stdout)");

    // schedule
    std::string sc_kind = "log", sc_out;
    double sc_tau0 = 0.3, sc_p = 2.0;
    int sc_epochs = 30, sc_horizon = 10;
    auto* sc = app.add_subcommand("schedule", "print the curriculum as epoch,ratio,horizon CSV");
    sc->add_option("--kind", sc_kind)->check(CLI::IsMember({"linear", "poly", "log"}));
    sc->add_option("--tau0", sc_tau0);
    sc->add_option("--epochs", sc_epochs);
    sc->add_option("--max-horizon", sc_horizon);
    sc->add_option("--p", sc_p, "poly exponent");
    sc->add_option("--out", sc_out, "CSV path (default stdout)");

    // ablate
    Common ab_c;
    std::string ab_data, ab_out;
    auto* ab = app.add_subcommand("ablate", "train and evaluate the kind x schedule x tau0 grid");
    add_common(ab, ab_c, true);
    ab->add_option("--data", ab_data, "dataset directory")->required();
    ab->add_option("--out", ab_out, "output directory")->required();

    // one grid cell, run by `ablate` in a child process
    Common cell_c;
    std::string cell_data, cell_out, cell_kind, cell_sched;
    double cell_tau0 = 1.0;
    auto* cell = app.add_subcommand("ablate-cell");
    cell->group("");
    add_common(cell, cell_c, true);
    cell->add_option("--data", cell_data)->required();
    cell->add_option("--out", cell_out)->required();
    cell->add_option("--kind", cell_kind)->required();
    cell->add_option("--schedule", cell_sched)->required();
    cell->add_option("--tau0", cell_tau0)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    if (*gen) {
        std::vector<std::string> extra;
        if (!gen_kind.empty()) extra.push_back("data.kind=\"" + gen_kind + "\"");
        const RunConfig cfg = resolve(gen_c, extra);
        const auto split = run_generate(cfg, gen_out);
        std::cerr << "wrote " << split.train.size() << " train / " << split.test.size() << " test trajectories to "
                  << gen_out << '\n';
    } else if (*tr) {
        std::vector<std::string> extra;
        if (tr_target_grad) extra.push_back("train.consistency_target_grad=true");
        const RunConfig cfg = resolve(tr_c, extra);
        const auto r = run_train(cfg, tr_data, tr_out, tr_resume, [](const EpochLog& e) {
            std::cerr << "epoch " << e.epoch << " horizon " << e.horizon << " loss " << e.loss.total << " ("
                      << e.seconds << " s)\n";
        });
        std::cerr << "trained epochs " << r.first_epoch << ".." << r.first_epoch + static_cast<int>(r.logs.size())
                  << "; checkpoint " << (fs::path(tr_out) / kCheckpointFile).string() << '\n';
    } else if (*ev) {
        const Checkpoint ck = read_checkpoint(ev_ck);
        const RunConfig cfg = resolve_with_checkpoint(ev_c, ck);
        const Surrogate model = surrogate_from_checkpoint(ck);
        const Dataset test = read_dataset(test_path(ev_data));
        const auto report = to_json(run_eval(cfg, model, test)).dump(2);
        if (ev_out.empty()) {
            std::cout << report << '\n';
        } else {
            std::ofstream(ev_out) << report << '\n';
            write_json_file((fs::path(ev_out).parent_path() / kResolvedConfigFile).string(), cfg.to_json());
        }
    } else if (*be) {
        const Checkpoint ck = read_checkpoint(be_ck);
        const RunConfig cfg = resolve_with_checkpoint(be_c, ck);
        const Surrogate model = surrogate_from_checkpoint(ck);
        std::ostringstream csv;
        csv << bench_csv_header() << "\r\n";
        for (const auto& row : run_bench(cfg, model)) csv << bench_csv_row(row) << "\r\n";
        if (be_out.empty()) {
            std::cout << csv.str();
        } else {
            std::ofstream(be_out, std::ios::binary) << csv.str();
            write_json_file((fs::path(be_out).parent_path() / kResolvedConfigFile).string(), cfg.to_json());
        }
    } else if (*sc) {
        ScheduleSpec spec;
        spec.kind = parse_schedule_kind(sc_kind);
        spec.tau0 = sc_tau0;
        spec.epochs = sc_epochs;
        spec.p_exp = sc_p;
        spec.max_horizon = sc_horizon;
        spec.validate();
        std::ostringstream csv;
        csv << "epoch,ratio,horizon\r\n";
        for (int n = 0; n <= spec.epochs; ++n)
            csv << n << ',' << fmt(schedule_ratio(spec, n)) << ',' << schedule_horizon(spec, n) << "\r\n";
        if (sc_out.empty())
            std::cout << csv.str();
        else
            std::ofstream(sc_out, std::ios::binary) << csv.str();
    } else if (*ab) {
        const RunConfig cfg = resolve(ab_c);
        read_dataset(train_path(ab_data));  // fail fast on a missing dataset
        fs::create_directories(ab_out);
        write_json_file((fs::path(ab_out) / kResolvedConfigFile).string(), cfg.to_json());
        const auto grid = ablation_grid(cfg.ablation_kinds, cfg.ablation_schedules, cfg.ablation_tau0);
        const std::string exe = self_exe();
        std::size_t index = 0;
        const std::string csv_path = (fs::path(ab_out) / "ablation.csv").string();
        std::ofstream csv(csv_path, std::ios::binary);
        csv << ablation_csv_header() << "\r\n" << std::flush;
        const auto rows = run_ablation(
            grid,
            [&](const AblationCell& c) {
                const fs::path dir = fs::path(ab_out) / "cells" / std::to_string(index++);
                fs::create_directories(dir);
                const std::string cfg_path = (dir / kResolvedConfigFile).string();
                write_json_file(cfg_path, cfg.to_json());
                const int rc = spawn_and_wait({exe, "ablate-cell", "--config", cfg_path, "--data", ab_data, "--out",
                                               (dir / "result.json").string(), "--kind", to_string(c.kind),
                                               "--schedule", to_string(c.schedule), "--tau0", fmt(c.tau0)},
                                              (dir / "log.txt").string());
                if (rc != 0)
                    throw Error("exit " + std::to_string(rc) + ": " + last_line((dir / "log.txt").string()));
                const auto j = read_json_file((dir / "result.json").string());
                AblationRow row;
                row.ok = true;
                row.rmse_single = j.at("rmse_single").get<double>();
                row.rmse_rollout = j.at("rmse_rollout").get<double>();
                row.median_ms = j.at("median_ms").get<double>();
                row.params = j.at("params").get<std::size_t>();
                return row;
            },
            [&](const AblationRow& r) {
                csv << ablation_csv_row(r) << "\r\n" << std::flush;
                std::cerr << ablation_csv_row(r) << '\n';
            });
        std::size_t failed = 0;
        for (const auto& r : rows) failed += r.ok ? 0 : 1;
        std::cerr << rows.size() - failed << " of " << rows.size() << " cells succeeded; " << csv_path << '\n';
    } else if (*cell) {
        const RunConfig base = resolve(cell_c);
        const AblationCell c{parse_evolution_kind(cell_kind), parse_schedule_kind(cell_sched), cell_tau0};
        const Dataset train = read_dataset(train_path(cell_data));
        const Dataset test = read_dataset(test_path(cell_data));
        const auto row = run_ablation_cell(base, c, train, test);
        write_json_file(cell_out, {{"kind", to_string(c.kind)},
                                   {"schedule", to_string(c.schedule)},
                                   {"tau0", c.tau0},
                                   {"rmse_single", row.rmse_single},
                                   {"rmse_rollout", row.rmse_rollout},
                                   {"median_ms", row.median_ms},
                                   {"params", row.params}});
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const NonFiniteError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const StabilityError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const MissingArtifactError& e) {
        std::cerr << "missing artifact: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

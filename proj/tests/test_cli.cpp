#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "lepp_cli_test";

struct Result {
    int code;
    std::string out;
};

Result lepp(const std::string& args)
{
    const std::string cmd = std::string(LEPP_EXE) + " " + args + " 2>" + (kRoot / "stderr.txt").string();
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p);
    std::string out;
    char buf[4096];
    while (std::size_t n = fread(buf, 1, sizeof buf, p)) out.append(buf, n);
    const int status = pclose(p);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& p)
{
    std::ifstream f(p, std::ios::binary);
    std::stringstream s;
    s << f.rdbuf();
    return s.str();
}

std::vector<std::string> lines(const std::string& s)
{
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string l;
    while (std::getline(in, l)) {
        if (!l.empty() && l.back() == '\r') l.pop_back();
        if (!l.empty()) out.push_back(l);
    }
    return out;
}

std::string tiny_config()
{
    const auto path = kRoot / "tiny.json";
    std::ofstream(path) << R"({
  "seed": 11,
  "data.kind": "ns",
  "data.count": 4, "data.train_count": 3,
  "data.nx": 16, "data.ny": 16, "data.frames": 7, "data.store_every": 20,
  "model.d_z": 16, "model.widths": [4, 8], "model.d_state": 4, "model.mlp_hidden": 24,
  "train.epochs": 2, "train.batch_size": 4, "train.max_horizon": 3, "train.starts_per_traj": 2,
  "schedule.kind": "log", "schedule.tau0": 0.5,
  "eval.m": 2, "bench.m": 3,
  "ablation.tau0": [1.0], "ablation.schedules": ["linear", "log"]
})";
    return path.string();
}

struct Fixture {
    Fixture()
    {
        fs::remove_all(kRoot);
        fs::create_directories(kRoot);
    }
};

}  // namespace

TEST_CASE_FIXTURE(Fixture, "usage and config errors exit 2")
{
    CHECK(lepp("").code == 2);
    CHECK(lepp("generate --out " + (kRoot / "d").string()).code == 2);
    CHECK(lepp("frobnicate").code == 2);
    const auto cfg = tiny_config();
    CHECK(lepp("generate --config " + cfg + " --set model.dz=3 --out " + (kRoot / "d").string()).code == 2);
    CHECK(lepp("generate --config " + (kRoot / "absent.json").string() + " --out " + (kRoot / "d").string()).code == 2);
    std::ofstream(kRoot / "noseed.json") << R"({"model.d_z": 16})";
    CHECK(lepp("generate --config " + (kRoot / "noseed.json").string() + " --out " + (kRoot / "d").string()).code == 2);
}

TEST_CASE_FIXTURE(Fixture, "generate is deterministic and writes LEPD files")
{
    const auto cfg = tiny_config();
    REQUIRE(lepp("generate --config " + cfg + " --out " + (kRoot / "a").string()).code == 0);
    REQUIRE(lepp("generate --config " + cfg + " --set data.threads=2 --out " + (kRoot / "b").string()).code == 0);
    for (const char* f : {"dataset_train.lepd", "dataset_test.lepd"}) {
        const auto a = slurp(kRoot / "a" / f);
        CHECK(a.substr(0, 4) == "LEPD");
        CHECK(a == slurp(kRoot / "b" / f));
    }
    CHECK(fs::exists(kRoot / "a" / "dataset.json"));
    const auto resolved = nlohmann::json::parse(slurp(kRoot / "a" / "config.json"));
    CHECK(resolved["seed"] == 11);
    CHECK(resolved["data.nx"] == 16);
    // regenerating from the resolved config alone reproduces the data
    REQUIRE(lepp("generate --config " + (kRoot / "a" / "config.json").string() + " --out " + (kRoot / "c").string())
                .code == 0);
    CHECK(slurp(kRoot / "a" / "dataset_train.lepd") == slurp(kRoot / "c" / "dataset_train.lepd"));
}

TEST_CASE_FIXTURE(Fixture, "unstable simulation exits 3")
{
    const auto cfg = tiny_config();
    CHECK(lepp("generate --config " + cfg + " --set data.dt=0.5 --out " + (kRoot / "d").string()).code == 3);
}

TEST_CASE_FIXTURE(Fixture, "train, resume, eval, bench")
{
    const auto cfg = tiny_config();
    const auto data = (kRoot / "data").string(), run = (kRoot / "run").string();
    REQUIRE(lepp("generate --config " + cfg + " --out " + data).code == 0);

    SUBCASE("zero epochs")
    {
        REQUIRE(lepp("train --config " + cfg + " --set train.epochs=0 --data " + data + " --out " + run).code == 0);
        CHECK(fs::exists(fs::path(run) / "model.lepc"));
        CHECK(slurp(fs::path(run) / "train_log.jsonl").empty());
    }
    SUBCASE("resume continues the epoch numbering")
    {
        REQUIRE(lepp("train --config " + cfg + " --data " + data + " --out " + run).code == 0);
        CHECK(lines(slurp(fs::path(run) / "train_log.jsonl")).size() == 2);
        REQUIRE(lepp("train --config " + cfg + " --set train.epochs=4 --resume --data " + data + " --out " + run).code ==
                0);
        const auto log = lines(slurp(fs::path(run) / "train_log.jsonl"));
        REQUIRE(log.size() == 4);
        double prev = 0.0;
        for (std::size_t i = 0; i < 4; ++i) {
            const auto j = nlohmann::json::parse(log[i]);
            CHECK(j["epoch"] == i);
            CHECK(j.contains("multi_step"));
            CHECK(j.contains("seconds"));
            if (i > 0) CHECK(j["loss"].get<double>() <= 2.0 * prev);
            prev = j["loss"].get<double>();
        }
        CHECK(lepp("train --config " + cfg + " --resume --data " + data + " --out " + (kRoot / "fresh").string())
                  .code == 4);
    }
    SUBCASE("eval and bench")
    {
        REQUIRE(lepp("train --config " + cfg + " --data " + data + " --out " + run).code == 0);
        const auto ck = (fs::path(run) / "model.lepc").string();
        const auto ev = lepp("eval --checkpoint " + ck + " --data " + data);
        REQUIRE(ev.code == 0);
        const auto report = nlohmann::json::parse(ev.out);
        CHECK(report["per_step_rmse"].size() == 2);
        CHECK(report["rmse_single"].get<double>() >= 0.0);
        CHECK(report["persistence"].contains("rmse_rollout"));
        CHECK(report["inference"]["repetitions"] == 30);
        CHECK(report["config_fingerprint"].get<std::string>().size() == 16);
        CHECK(report["parameter_count"].get<std::size_t>() > 0);

        const auto be = lepp("bench --checkpoint " + ck);
        REQUIRE(be.code == 0);
        const auto rows = lines(be.out);
        REQUIRE(rows.size() == 3);
        CHECK(rows[1].starts_with("ssm,"));
        CHECK(rows[2].starts_with("mlp,"));

        CHECK(lepp("eval --checkpoint " + (kRoot / "nope.lepc").string() + " --data " + data).code == 4);
        CHECK(lepp("bench --checkpoint " + (kRoot / "nope.lepc").string()).code == 4);
        CHECK(lepp("eval --checkpoint " + ck + " --data " + (kRoot / "nodata").string()).code == 4);
    }
}

TEST_CASE_FIXTURE(Fixture, "schedule CSV")
{
    const auto r = lepp("schedule --kind linear --tau0 0.1 --epochs 10 --max-horizon 10");
    REQUIRE(r.code == 0);
    const auto rows = lines(r.out);
    REQUIRE(rows.size() == 12);
    CHECK(rows[0] == "epoch,ratio,horizon");
    CHECK(rows[1] == "0,0.1,1");
    CHECK(rows.back() == "10,1,10");
    CHECK(lepp("schedule --kind linear --tau0 1.5").code == 2);
}

TEST_CASE_FIXTURE(Fixture, "ablate runs cells in child processes")
{
    const auto cfg = tiny_config();
    const auto data = (kRoot / "data").string(), out = (kRoot / "abl").string();
    REQUIRE(lepp("generate --config " + cfg + " --out " + data).code == 0);
    REQUIRE(lepp("ablate --config " + cfg + " --data " + data + " --out " + out).code == 0);
    const auto rows = lines(slurp(fs::path(out) / "ablation.csv"));
    REQUIRE(rows.size() == 3);
    CHECK(rows[0] == "kind,tau0,schedule,rmse_single,rmse_rollout,median_ms,params,status,error");
    // at tau0 = 1 every schedule is the fixed full horizon: same metrics
    auto field = [](const std::string& row, int i) {
        std::istringstream s(row);
        std::string f;
        for (int k = 0; k <= i; ++k) std::getline(s, f, ',');
        return f;
    };
    CHECK(field(rows[1], 2) == "linear");
    CHECK(field(rows[2], 2) == "log");
    CHECK(field(rows[1], 7) == "ok");
    CHECK(field(rows[1], 3) == field(rows[2], 3));
    CHECK(field(rows[1], 4) == field(rows[2], 4));
    CHECK(field(rows[1], 6) == field(rows[2], 6));

    // a failing cell is recorded and the grid continues
    REQUIRE(lepp("ablate --config " + cfg + " --set 'ablation.kinds=[\"ssm\",\"mlp\"]' --set train.lr=1e300 --data " +
                 data + " --out " + out)
                .code == 0);
    const auto bad = lines(slurp(fs::path(out) / "ablation.csv"));
    REQUIRE(bad.size() == 5);
    for (std::size_t i = 1; i < bad.size(); ++i) CHECK(field(bad[i], 7) == "failed");
}

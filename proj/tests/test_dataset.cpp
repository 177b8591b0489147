#include <doctest.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "lepp/dataset.hpp"

using namespace lepp;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const std::string& name)
{
    return (fs::temp_directory_path() / ("lepp_test_" + name)).string();
}

std::string slurp(const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

void spit(const std::string& path, const std::string& bytes)
{
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

GeneratorConfig small_config(pde::Kind kind, std::uint64_t seed)
{
    auto cfg = GeneratorConfig::preset(kind);
    cfg.seed = seed;
    cfg.count = 10;
    cfg.train_count = 7;
    cfg.grid.frames = 4;
    cfg.threads = 1;
    if (kind == pde::Kind::ns) cfg.grid.store_every = 10;
    return cfg;
}

DatasetFormatError::Reason read_failure(const std::string& path)
{
    try {
        read_dataset(path);
    } catch (const DatasetFormatError& e) {
        return e.reason();
    }
    FAIL("read succeeded");
    return DatasetFormatError::Reason::bad_magic;
}

}  // namespace

TEST_CASE("round trip is bit-identical and sized as declared")
{
    for (auto kind : {pde::Kind::ns, pde::Kind::swe, pde::Kind::pte}) {
        auto split = generate_dataset(small_config(kind, 3));
        CHECK(split.train.size() == 7);
        CHECK(split.test.size() == 3);
        const auto path = tmp_path("roundtrip.lepd");
        write_dataset(path, split.train);
        auto back = read_dataset(path);
        CHECK(back.kind == kind);
        CHECK(back.dt == split.train.dt);
        CHECK(back.d_p == split.train.d_p);
        for (std::size_t i = 0; i < back.size(); ++i) {
            CHECK(back.trajectories[i].fields == split.train.trajectories[i].fields);
            CHECK(back.trajectories[i].params == split.train.trajectories[i].params);
        }
        const auto& d = split.train;
        const std::uint64_t by_hand = 60 + 8ull * 7 * (d.d_p + d.frames * d.channels * d.ny * d.nx);
        CHECK(fs::file_size(path) == by_hand);
        CHECK(d.file_size() == by_hand);
        fs::remove(path);
    }
}

TEST_CASE("corrupt files fail with distinct reasons")
{
    auto split = generate_dataset(small_config(pde::Kind::pte, 4));
    const auto path = tmp_path("corrupt.lepd");
    write_dataset(path, split.test);
    const std::string good = slurp(path);
    using R = DatasetFormatError::Reason;

    std::string bytes = good;
    bytes[0] = 'X';
    spit(path, bytes);
    CHECK(read_failure(path) == R::bad_magic);

    bytes = good;
    bytes[4] = 2;
    spit(path, bytes);
    CHECK(read_failure(path) == R::version_mismatch);

    spit(path, good.substr(0, good.size() - 8));
    CHECK(read_failure(path) == R::truncated);
    spit(path, good.substr(0, 30));
    CHECK(read_failure(path) == R::truncated);

    bytes = good;
    bytes[20] = 3;  // C = 3 for a single-channel kind
    spit(path, bytes);
    CHECK(read_failure(path) == R::shape_mismatch);

    spit(path, good + std::string(8, '\0'));
    CHECK(read_failure(path) == R::shape_mismatch);

    fs::remove(path);
    CHECK_THROWS_AS(read_dataset(path), MissingArtifactError);

    auto inconsistent = split.test;
    inconsistent.trajectories[1].params.pop_back();
    CHECK_THROWS_AS(write_dataset(path, inconsistent), ShapeError);
}

TEST_CASE("generation is deterministic and independent of thread count")
{
    auto cfg = small_config(pde::Kind::ns, 99);
    const auto stem_a = tmp_path("det_a"), stem_b = tmp_path("det_b");
    write_dataset_split(stem_a, generate_dataset(cfg), cfg);
    cfg.threads = 3;
    write_dataset_split(stem_b, generate_dataset(cfg), cfg);
    CHECK(slurp(stem_a + "_train.lepd") == slurp(stem_b + "_train.lepd"));
    CHECK(slurp(stem_a + "_test.lepd") == slurp(stem_b + "_test.lepd"));
    auto side = nlohmann::json::parse(slurp(stem_a + ".json"));
    CHECK(side["seed"] == 99);
    CHECK(side["kind"] == "ns");

    cfg.seed = 100;
    auto other = generate_dataset(cfg);
    CHECK_FALSE(other.train.trajectories[0].fields == read_dataset(stem_a + "_train.lepd").trajectories[0].fields);
    for (const auto& s : {stem_a, stem_b})
        for (const char* suffix : {"_train.lepd", "_test.lepd", ".json"}) fs::remove(s + suffix);
}

TEST_CASE("generator config validation")
{
    auto cfg = small_config(pde::Kind::swe, 1);
    cfg.count = 1;
    CHECK_THROWS_AS(generate_dataset(cfg), ConfigError);
    cfg = small_config(pde::Kind::swe, 1);
    cfg.train_count = 10;
    CHECK_THROWS_AS(generate_dataset(cfg), ConfigError);
    cfg = small_config(pde::Kind::swe, 1);
    cfg.grid.dt = 0.01;  // violates the wave CFL
    try {
        generate_dataset(cfg);
        FAIL("expected a stability error");
    } catch (const StabilityError& e) {
        CHECK(std::string(e.what()).find("trajectory 0") != std::string::npos);
    }
}

TEST_CASE("desk-scale navier-stokes preset stays finite")
{
    auto cfg = GeneratorConfig::preset(pde::Kind::ns);
    cfg.seed = 2026;
    const auto t0 = std::chrono::steady_clock::now();
    auto split = generate_dataset(cfg);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    MESSAGE("generated " << cfg.count << " trajectories in " << secs << " s");
    CHECK(split.train.size() == 50);
    for (const auto& t : split.train.trajectories) CHECK(t.fields.all_finite());
}

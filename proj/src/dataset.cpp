#include "lepp/dataset.hpp"

#include <atomic>
#include <bit>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <thread>

#include "lepp/random.hpp"

namespace lepp {

namespace {

constexpr char kMagic[4] = {'L', 'E', 'P', 'D'};

class LeWriter {
public:
    explicit LeWriter(std::ofstream& os) : os_(os) {}

    void u32(std::uint32_t v)
    {
        unsigned char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        os_.write(reinterpret_cast<const char*>(b), 4);
    }

    void f64s(std::span<const double> values)
    {
        if constexpr (std::endian::native == std::endian::little) {
            os_.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * 8));
        } else {
            for (double v : values) {
                const auto bits = std::bit_cast<std::uint64_t>(v);
                unsigned char b[8];
                for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
                os_.write(reinterpret_cast<const char*>(b), 8);
            }
        }
    }

private:
    std::ofstream& os_;
};

class LeReader {
public:
    LeReader(std::ifstream& is, std::string path) : is_(is), path_(std::move(path)) {}

    void bytes(char* dst, std::size_t n, const char* what)
    {
        is_.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(is_.gcount()) != n)
            throw DatasetFormatError(DatasetFormatError::Reason::truncated,
                                     path_ + ": truncated while reading " + what);
    }

    std::uint32_t u32(const char* what)
    {
        unsigned char b[4];
        bytes(reinterpret_cast<char*>(b), 4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
        return v;
    }

    void f64s(std::span<double> out, const char* what)
    {
        bytes(reinterpret_cast<char*>(out.data()), out.size() * 8, what);
        if constexpr (std::endian::native != std::endian::little)
            for (double& v : out) {
                auto bits = std::bit_cast<std::uint64_t>(v);
                v = std::bit_cast<double>(__builtin_bswap64(bits));
            }
    }

private:
    std::ifstream& is_;
    std::string path_;
};

}  // namespace

void Dataset::check_consistent() const
{
    const Shape expect{frames, channels, ny, nx};
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
        const auto& t = trajectories[i];
        if (t.fields.shape() != expect)
            throw ShapeError("trajectory " + std::to_string(i) + " has shape " + shape_str(t.fields.shape()) +
                             ", dataset expects " + shape_str(expect));
        if (t.params.size() != d_p)
            throw ShapeError("trajectory " + std::to_string(i) + " has " + std::to_string(t.params.size()) +
                             " static parameters, dataset expects " + std::to_string(d_p));
    }
}

std::uint64_t Dataset::file_size() const
{
    return kDatasetHeaderBytes + 8ull * size() * (d_p + frames * channels * ny * nx);
}

void write_dataset(const std::string& path, const Dataset& ds)
{
    ds.check_consistent();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open " + path + " for writing");
    LeWriter w(os);
    os.write(kMagic, 4);
    w.u32(kDatasetVersion);
    w.u32(static_cast<std::uint32_t>(ds.kind));
    for (std::size_t v : {ds.size(), ds.frames, ds.channels, ds.ny, ds.nx, ds.d_p}) w.u32(static_cast<std::uint32_t>(v));
    const double geo[3] = {ds.dt, ds.Lx, ds.Ly};
    w.f64s(geo);
    for (const auto& t : ds.trajectories) {
        w.f64s(t.params);
        w.f64s(t.fields.data());
    }
    os.flush();
    if (!os) throw Error("write failed for " + path);
}

Dataset read_dataset(const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw MissingArtifactError("dataset not found: " + path);
    LeReader r(is, path);
    char magic[4];
    r.bytes(magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw DatasetFormatError(DatasetFormatError::Reason::bad_magic, path + ": bad magic, not a dataset file");
    const std::uint32_t version = r.u32("version");
    if (version != kDatasetVersion)
        throw DatasetFormatError(DatasetFormatError::Reason::version_mismatch,
                                 path + ": version " + std::to_string(version) + ", expected " +
                                     std::to_string(kDatasetVersion));
    Dataset ds;
    const std::uint32_t kind = r.u32("kind");
    if (kind > 2)
        throw DatasetFormatError(DatasetFormatError::Reason::shape_mismatch, path + ": unknown kind " + std::to_string(kind));
    ds.kind = static_cast<pde::Kind>(kind);
    const std::size_t count = r.u32("count");
    ds.frames = r.u32("T");
    ds.channels = r.u32("C");
    ds.ny = r.u32("H");
    ds.nx = r.u32("W");
    ds.d_p = r.u32("d_p");
    if (ds.frames == 0 || ds.ny == 0 || ds.nx == 0 || ds.channels != pde::channels(ds.kind))
        throw DatasetFormatError(DatasetFormatError::Reason::shape_mismatch,
                                 path + ": header shape inconsistent with kind " + pde::to_string(ds.kind));
    double geo[3];
    r.f64s(geo, "grid");
    ds.dt = geo[0];
    ds.Lx = geo[1];
    ds.Ly = geo[2];

    // Check the size up front so a truncated file fails before allocating.
    is.seekg(0, std::ios::end);
    const auto actual = static_cast<std::uint64_t>(is.tellg());
    is.seekg(static_cast<std::streamoff>(kDatasetHeaderBytes));
    Dataset sized = ds;
    sized.trajectories.resize(count);
    const std::uint64_t expect = sized.file_size();
    if (actual < expect)
        throw DatasetFormatError(DatasetFormatError::Reason::truncated,
                                 path + ": truncated, " + std::to_string(actual) + " bytes of " + std::to_string(expect));
    if (actual > expect)
        throw DatasetFormatError(DatasetFormatError::Reason::shape_mismatch,
                                 path + ": " + std::to_string(actual - expect) + " trailing bytes after declared data");

    ds.trajectories.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        pde::Trajectory t{Tensor(Shape{ds.frames, ds.channels, ds.ny, ds.nx}), std::vector<double>(ds.d_p)};
        r.f64s(t.params, "params");
        r.f64s(t.fields.data(), "fields");
        ds.trajectories.push_back(std::move(t));
    }
    return ds;
}

GeneratorConfig GeneratorConfig::preset(pde::Kind kind)
{
    GeneratorConfig c;
    c.kind = kind;
    switch (kind) {
    case pde::Kind::ns:
        c.grid = {32, 32, 1.0, 1.0, 0.01, 21, 100};
        c.count = 60;
        c.train_count = 50;
        break;
    case pde::Kind::swe:
        c.grid = {32, 32, 1.0, 1.0, 6.25e-4, 21, 16};
        c.count = 40;
        c.train_count = 28;
        break;
    case pde::Kind::pte:
        c.grid = {64, 64, 3000.0, 3000.0, 5.0, 21, 6};
        c.count = 40;
        c.train_count = 32;
        break;
    }
    return c;
}

void GeneratorConfig::validate() const
{
    grid.validate();
    if (count < 2) throw ConfigError("dataset needs at least 2 trajectories");
    if (train_count < 1 || train_count >= count) throw ConfigError("train count must leave at least one test trajectory");
    if (ns_nu_min > ns_nu_max || swe_g <= 0.0 || pte_diffusivity_min > pte_diffusivity_max ||
        pte_rate_min > pte_rate_max || pte_wind_min > pte_wind_max)
        throw ConfigError("generator parameter range is empty");
}

nlohmann::json to_json(const GeneratorConfig& c)
{
    nlohmann::json j;
    j["kind"] = pde::to_string(c.kind);
    j["count"] = c.count;
    j["train_count"] = c.train_count;
    j["seed"] = c.seed;
    j["grid"] = {{"nx", c.grid.nx}, {"ny", c.grid.ny}, {"Lx", c.grid.Lx}, {"Ly", c.grid.Ly},
                 {"dt", c.grid.dt}, {"frames", c.grid.frames}, {"store_every", c.grid.store_every}};
    switch (c.kind) {
    case pde::Kind::ns:
        j["nu"] = {c.ns_nu_min, c.ns_nu_max};
        j["forcing"] = {{"amplitude", c.ns_forcing}, {"shape", "a*(sin(2pi(x+y))+cos(2pi(x+y)))"}};
        j["initial_condition"] = "random modes 1<=|k|<=4, zero mean, unit rms";
        break;
    case pde::Kind::swe:
        j["g"] = c.swe_g;
        j["depth"] = c.swe_depth;
        j["initial_condition"] = "1-3 periodic gaussian bumps, u=v=0";
        break;
    case pde::Kind::pte:
        j["diffusivity"] = {c.pte_diffusivity_min, c.pte_diffusivity_max};
        j["sources"] = c.pte_sources;
        j["rate"] = {c.pte_rate_min, c.pte_rate_max};
        j["wind"] = c.pte_wind ? nlohmann::json{c.pte_wind_min, c.pte_wind_max} : nlohmann::json(nullptr);
        break;
    }
    return j;
}

pde::Trajectory generate_trajectory(const GeneratorConfig& cfg, std::size_t index)
{
    const Rng base = Rng(cfg.seed).split(static_cast<std::uint64_t>(index));
    Rng prm = base.split("params");
    const std::uint64_t ic_seed = base.split("initial").next_u64();
    switch (cfg.kind) {
    case pde::Kind::ns: {
        const double nu = std::exp(prm.uniform(std::log(cfg.ns_nu_min), std::log(cfg.ns_nu_max)));
        return pde::ns_simulate(cfg.grid, nu, cfg.ns_forcing, ic_seed);
    }
    case pde::Kind::swe: return pde::swe_simulate(cfg.grid, cfg.swe_g, cfg.swe_depth, ic_seed);
    case pde::Kind::pte: {
        const double D = prm.uniform(cfg.pte_diffusivity_min, cfg.pte_diffusivity_max);
        pde::Wind wind;
        if (cfg.pte_wind) {
            const double speed = prm.uniform(cfg.pte_wind_min, cfg.pte_wind_max);
            switch (prm.below(4)) {
            case 0: wind.wx = speed; break;
            case 1: wind.wy = speed; break;
            case 2: wind.wx = -speed; break;
            default: wind.wy = -speed; break;
            }
        }
        std::vector<pde::Source> sources(cfg.pte_sources);
        for (auto& s : sources) {
            // keep blobs a few cells away from the walls
            s.x = prm.uniform(0.15, 0.85) * cfg.grid.Lx;
            s.y = prm.uniform(0.15, 0.85) * cfg.grid.Ly;
            s.rate = prm.uniform(cfg.pte_rate_min, cfg.pte_rate_max);
        }
        return pde::pte_simulate(cfg.grid, D, sources, wind);
    }
    }
    throw ConfigError("unknown dataset kind");
}

unsigned resolve_threads(unsigned requested)
{
    if (requested > 0) return requested;
    if (const char* env = std::getenv("LEPP_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

[[noreturn]] void rethrow_with_index(std::exception_ptr err, std::size_t index)
{
    const std::string prefix = "trajectory " + std::to_string(index) + ": ";
    try {
        std::rethrow_exception(err);
    } catch (const StabilityError& e) {
        throw StabilityError(prefix + e.what());
    } catch (const NonFiniteError& e) {
        throw NonFiniteError(prefix + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(prefix + e.what());
    } catch (const std::exception& e) {
        throw Error(prefix + e.what());
    }
}

Dataset empty_like(const GeneratorConfig& cfg, std::size_t d_p)
{
    Dataset ds;
    ds.kind = cfg.kind;
    ds.frames = cfg.grid.frames;
    ds.channels = pde::channels(cfg.kind);
    ds.ny = cfg.grid.ny;
    ds.nx = cfg.grid.nx;
    ds.d_p = d_p;
    ds.dt = cfg.grid.frame_interval();
    ds.Lx = cfg.grid.Lx;
    ds.Ly = cfg.grid.Ly;
    return ds;
}

}  // namespace

DatasetSplit generate_dataset(const GeneratorConfig& cfg)
{
    cfg.validate();
    std::vector<pde::Trajectory> all(cfg.count);
    std::vector<std::exception_ptr> errors(cfg.count);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < cfg.count; i = next++) {
            try {
                all[i] = generate_trajectory(cfg, i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const unsigned n_threads = std::min<unsigned>(resolve_threads(cfg.threads), static_cast<unsigned>(cfg.count));
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    }
    for (std::size_t i = 0; i < cfg.count; ++i)
        if (errors[i]) rethrow_with_index(errors[i], i);

    const std::size_t d_p = all.front().params.size();
    DatasetSplit split{empty_like(cfg, d_p), empty_like(cfg, d_p)};
    for (std::size_t i = 0; i < cfg.count; ++i)
        (i < cfg.train_count ? split.train : split.test).trajectories.push_back(std::move(all[i]));
    return split;
}

void write_dataset_split(const std::string& stem, const DatasetSplit& split, const GeneratorConfig& cfg)
{
    write_dataset(stem + "_train.lepd", split.train);
    write_dataset(stem + "_test.lepd", split.test);
    nlohmann::json side = to_json(cfg);
    const std::string base = std::filesystem::path(stem).filename().string();
    side["files"] = {{"train", base + "_train.lepd"}, {"test", base + "_test.lepd"}};
    side["frame_interval"] = cfg.grid.frame_interval();
    side["format_version"] = kDatasetVersion;
    std::ofstream os(stem + ".json");
    if (!os) throw Error("cannot write " + stem + ".json");
    os << side.dump(2) << '\n';
}

}  // namespace lepp

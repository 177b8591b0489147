#pragma once

// Trajectory datasets: generation from the reference solvers and the binary
// file format (all little-endian)
//
//   "LEPD" | u32 version | u32 kind | u32 count, T, C, H, W | u32 d_p
//   | f64 dt, Lx, Ly | per trajectory: d_p f64 params, T*C*H*W f64 fields
//
// `dt` in the header is the interval between stored frames.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "lepp/errors.hpp"
#include "lepp/pde.hpp"

namespace lepp {

inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::size_t kDatasetHeaderBytes = 60;

struct Dataset {
    pde::Kind kind = pde::Kind::ns;
    std::size_t frames = 0, channels = 0, ny = 0, nx = 0, d_p = 0;
    double dt = 0.0, Lx = 0.0, Ly = 0.0;
    std::vector<pde::Trajectory> trajectories;

    std::size_t size() const { return trajectories.size(); }
    // Throws ShapeError naming the first trajectory that disagrees with the header.
    void check_consistent() const;
    std::uint64_t file_size() const;
};

class DatasetFormatError : public Error {
public:
    enum class Reason { bad_magic, version_mismatch, truncated, shape_mismatch };
    DatasetFormatError(Reason reason, const std::string& what) : Error(what), reason_(reason) {}
    Reason reason() const { return reason_; }

private:
    Reason reason_;
};

void write_dataset(const std::string& path, const Dataset& ds);
// MissingArtifactError if the file cannot be opened.
Dataset read_dataset(const std::string& path);

struct GeneratorConfig {
    pde::Kind kind = pde::Kind::ns;
    std::size_t count = 60;
    std::size_t train_count = 50;
    std::uint64_t seed = 0;
    pde::GridSpec grid;
    unsigned threads = 0;  // 0: LEPP_THREADS or hardware concurrency

    double ns_nu_min = 1e-3, ns_nu_max = 1e-3;
    double ns_forcing = 0.1;

    double swe_g = 1.0, swe_depth = 100.0;

    double pte_diffusivity_min = 10.0, pte_diffusivity_max = 50.0;
    std::size_t pte_sources = 2;
    double pte_rate_min = 0.5, pte_rate_max = 2.0;
    bool pte_wind = true;  // one of four axis directions per trajectory
    double pte_wind_min = 0.5, pte_wind_max = 1.5;

    // Desk-scale defaults for each family.
    static GeneratorConfig preset(pde::Kind kind);
    void validate() const;
};

nlohmann::json to_json(const GeneratorConfig& cfg);

struct DatasetSplit {
    Dataset train;
    Dataset test;
};

// Trajectory i draws from Rng(seed).split(i); train takes indices
// [0, train_count), test the rest, so results do not depend on thread count.
DatasetSplit generate_dataset(const GeneratorConfig& cfg);
pde::Trajectory generate_trajectory(const GeneratorConfig& cfg, std::size_t index);

// Writes <stem>_train.lepd, <stem>_test.lepd and <stem>.json.
void write_dataset_split(const std::string& stem, const DatasetSplit& split, const GeneratorConfig& cfg);

unsigned resolve_threads(unsigned requested);

}  // namespace lepp

#pragma once

// Reference solvers for the three trajectory families:
//   ns   2-D incompressible Navier-Stokes, vorticity form, periodic [0,1)^2
//   swe  linearized shallow water (u, v, eta), periodic
//   pte  pollutant transport: diffusion + optional upwind wind + sources,
//        no-flux walls
// Every solver stores frame 0 (the initial condition) and then one frame
// every `store_every` substeps, for `frames` frames in total.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lepp/tensor.hpp"

namespace lepp::pde {

enum class Kind : std::uint32_t { ns = 0, swe = 1, pte = 2 };

Kind parse_kind(std::string_view name);
std::string to_string(Kind kind);
std::size_t channels(Kind kind);

struct GridSpec {
    std::size_t nx = 32;
    std::size_t ny = 32;
    double Lx = 1.0;
    double Ly = 1.0;
    double dt = 0.01;             // solver substep
    std::size_t frames = 21;      // stored frames T
    std::size_t store_every = 100;

    double dx() const { return Lx / static_cast<double>(nx); }
    double dy() const { return Ly / static_cast<double>(ny); }
    double frame_interval() const { return dt * static_cast<double>(store_every); }
    void validate() const;
};

struct Trajectory {
    Tensor fields;               // [T, C, ny, nx]
    std::vector<double> params;  // static parameters p
};

// ---- Navier-Stokes ---------------------------------------------------------

// p = [nu, forcing amplitude]
Trajectory ns_simulate(const GridSpec& grid, double nu, double forcing, const Tensor& w0);
Trajectory ns_simulate(const GridSpec& grid, double nu, double forcing, std::uint64_t seed);
// Random field with integer wavenumbers 1 <= |k| <= 4, zero mean, unit rms.
Tensor ns_initial_vorticity(std::size_t ny, std::size_t nx, std::uint64_t seed);

// ---- shallow water -----------------------------------------------------------

// p = [g, H]. eta0 is [ny, nx]; u0, v0 default to zero.
Trajectory swe_simulate(const GridSpec& grid, double g, double depth, const Tensor& eta0,
                        const std::optional<Tensor>& u0 = std::nullopt,
                        const std::optional<Tensor>& v0 = std::nullopt);
Trajectory swe_simulate(const GridSpec& grid, double g, double depth, std::uint64_t seed);
// Sum of 1..3 periodic Gaussian bumps.
Tensor swe_initial_elevation(const GridSpec& grid, std::uint64_t seed);

// ---- pollutant transport -----------------------------------------------------

struct Source {
    double x = 0.0;     // position in metres
    double y = 0.0;
    double rate = 0.0;  // injected mass per second (integral of S)
};

struct Wind {
    double wx = 0.0;
    double wy = 0.0;
};

// p = [D, wx, wy, then x/Lx, y/Ly, rate per source]
Trajectory pte_simulate(const GridSpec& grid, double diffusivity, const std::vector<Source>& sources, Wind wind,
                        const std::optional<Tensor>& c0 = std::nullopt);
// Source field: Gaussian blobs with sigma = 2 cells, each summing to its rate
// over the cell areas.
Tensor pte_source_field(const GridSpec& grid, const std::vector<Source>& sources);

}  // namespace lepp::pde

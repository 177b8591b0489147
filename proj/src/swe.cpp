// Linearized shallow water on a periodic collocated grid:
//   eta_t = -H (u_x + v_y),  u_t = -g eta_x,  v_t = -g eta_y
// with second-order centered differences and classical RK4.

#include <array>
#include <cmath>
#include <sstream>
#include <vector>

#include "lepp/errors.hpp"
#include "lepp/pde.hpp"
#include "lepp/random.hpp"

namespace lepp::pde {

namespace {

constexpr double kMaxWaveCfl = 0.3;

using Fields = std::array<std::vector<double>, 3>;  // u, v, eta

struct Swe {
    std::size_t nx, ny;
    double inv2dx, inv2dy, g, depth;

    void rhs(const Fields& s, Fields& out) const
    {
        const auto& u = s[0];
        const auto& v = s[1];
        const auto& eta = s[2];
        for (std::size_t iy = 0; iy < ny; ++iy) {
            const std::size_t up = ((iy + 1) % ny) * nx, dn = ((iy + ny - 1) % ny) * nx, row = iy * nx;
            for (std::size_t ix = 0; ix < nx; ++ix) {
                const std::size_t r = row + (ix + 1) % nx, l = row + (ix + nx - 1) % nx, i = row + ix;
                const double ux = (u[r] - u[l]) * inv2dx, vy = (v[up + ix] - v[dn + ix]) * inv2dy;
                out[0][i] = -g * (eta[r] - eta[l]) * inv2dx;
                out[1][i] = -g * (eta[up + ix] - eta[dn + ix]) * inv2dy;
                out[2][i] = -depth * (ux + vy);
            }
        }
    }
};

}  // namespace

Trajectory swe_simulate(const GridSpec& grid, double g, double depth, const Tensor& eta0,
                        const std::optional<Tensor>& u0, const std::optional<Tensor>& v0)
{
    grid.validate();
    const Shape plane{grid.ny, grid.nx};
    if (eta0.shape() != plane) throw ShapeError("initial elevation " + shape_str(eta0.shape()) + " does not match grid");
    if ((u0 && u0->shape() != plane) || (v0 && v0->shape() != plane))
        throw ShapeError("initial velocity does not match grid");
    if (!(g > 0.0 && depth > 0.0)) throw ConfigError("gravity and depth must be positive");
    const double cfl = std::sqrt(g * depth) * grid.dt / std::min(grid.dx(), grid.dy());
    if (cfl > kMaxWaveCfl) {
        std::ostringstream msg;
        msg << "shallow-water wave CFL " << cfl << " exceeds " << kMaxWaveCfl << " (c = " << std::sqrt(g * depth)
            << ", dt = " << grid.dt << ")";
        throw StabilityError(msg.str());
    }

    const std::size_t cells = grid.nx * grid.ny;
    Swe op{grid.nx, grid.ny, 0.5 / grid.dx(), 0.5 / grid.dy(), g, depth};
    Fields s, k1, k2, k3, k4, tmp;
    for (auto* f : {&s, &k1, &k2, &k3, &k4, &tmp})
        for (auto& c : *f) c.assign(cells, 0.0);
    if (u0) s[0] = u0->storage();
    if (v0) s[1] = v0->storage();
    s[2] = eta0.storage();

    Trajectory traj{Tensor(Shape{grid.frames, 3, grid.ny, grid.nx}), {g, depth}};
    auto out = traj.fields.data();
    auto store = [&](std::size_t f) {
        for (std::size_t c = 0; c < 3; ++c) std::copy(s[c].begin(), s[c].end(), out.begin() + (f * 3 + c) * cells);
    };
    auto axpy = [&](const Fields& k, double a) {
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < cells; ++i) tmp[c][i] = s[c][i] + a * k[c][i];
    };

    store(0);
    const double dt = grid.dt;
    for (std::size_t f = 1; f < grid.frames; ++f) {
        for (std::size_t n = 0; n < grid.store_every; ++n) {
            op.rhs(s, k1);
            axpy(k1, 0.5 * dt);
            op.rhs(tmp, k2);
            axpy(k2, 0.5 * dt);
            op.rhs(tmp, k3);
            axpy(k3, dt);
            op.rhs(tmp, k4);
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t i = 0; i < cells; ++i)
                    s[c][i] += dt / 6.0 * (k1[c][i] + 2.0 * k2[c][i] + 2.0 * k3[c][i] + k4[c][i]);
        }
        store(f);
    }
    traj.fields.require_finite("shallow-water trajectory");
    return traj;
}

Tensor swe_initial_elevation(const GridSpec& grid, std::uint64_t seed)
{
    Rng rng(seed);
    Tensor eta(Shape{grid.ny, grid.nx});
    const std::size_t bumps = 1 + rng.below(3);
    for (std::size_t b = 0; b < bumps; ++b) {
        const double cx = rng.uniform(0.0, grid.Lx), cy = rng.uniform(0.0, grid.Ly);
        const double sigma = rng.uniform(0.08, 0.15) * std::min(grid.Lx, grid.Ly);
        const double amp = rng.uniform(0.2, 1.0);
        for (std::size_t iy = 0; iy < grid.ny; ++iy)
            for (std::size_t ix = 0; ix < grid.nx; ++ix) {
                const double x = static_cast<double>(ix) * grid.dx(), y = static_cast<double>(iy) * grid.dy();
                double v = 0.0;
                // neighbouring images keep the bump smooth across the periodic seam
                for (int ox = -1; ox <= 1; ++ox)
                    for (int oy = -1; oy <= 1; ++oy) {
                        const double ddx = x - cx + ox * grid.Lx, ddy = y - cy + oy * grid.Ly;
                        v += std::exp(-(ddx * ddx + ddy * ddy) / (2.0 * sigma * sigma));
                    }
                eta[iy * grid.nx + ix] += amp * v;
            }
    }
    return eta;
}

Trajectory swe_simulate(const GridSpec& grid, double g, double depth, std::uint64_t seed)
{
    return swe_simulate(grid, g, depth, swe_initial_elevation(grid, seed));
}

}  // namespace lepp::pde

// Pollutant transport as a finite-volume scheme with zero flux through the
// walls: explicit Euler, central diffusive flux, first-order upwind advection.
// Under 2(d_x + d_y) + c_x + c_y <= 1 every update is a convex combination
// plus a non-negative source, so concentrations stay non-negative.

#include <cmath>
#include <sstream>

#include "lepp/errors.hpp"
#include "lepp/pde.hpp"

namespace lepp::pde {

namespace {

constexpr double kMaxDiffusionNumber = 0.2;
constexpr double kSourceSigmaCells = 2.0;

}  // namespace

Tensor pte_source_field(const GridSpec& grid, const std::vector<Source>& sources)
{
    Tensor s(Shape{grid.ny, grid.nx});
    const double dx = grid.dx(), dy = grid.dy();
    const double sx = kSourceSigmaCells * dx, sy = kSourceSigmaCells * dy;
    std::vector<double> blob(grid.nx * grid.ny);
    for (const auto& src : sources) {
        double total = 0.0;
        for (std::size_t iy = 0; iy < grid.ny; ++iy)
            for (std::size_t ix = 0; ix < grid.nx; ++ix) {
                const double ddx = (static_cast<double>(ix) + 0.5) * dx - src.x;
                const double ddy = (static_cast<double>(iy) + 0.5) * dy - src.y;
                const double v = std::exp(-0.5 * (ddx * ddx / (sx * sx) + ddy * ddy / (sy * sy)));
                blob[iy * grid.nx + ix] = v;
                total += v * dx * dy;
            }
        if (!(total > 0.0)) throw ConfigError("pollution source lies outside the domain");
        for (std::size_t i = 0; i < blob.size(); ++i) s[i] += src.rate * blob[i] / total;
    }
    return s;
}

Trajectory pte_simulate(const GridSpec& grid, double diffusivity, const std::vector<Source>& sources, Wind wind,
                        const std::optional<Tensor>& c0)
{
    grid.validate();
    const std::size_t nx = grid.nx, ny = grid.ny, cells = nx * ny;
    if (c0 && c0->shape() != Shape{ny, nx}) throw ShapeError("initial concentration does not match grid");
    if (!(diffusivity >= 0.0)) throw ConfigError("diffusivity must be non-negative");

    const double dx = grid.dx(), dy = grid.dy(), dt = grid.dt;
    const double dnx = diffusivity * dt / (dx * dx), dny = diffusivity * dt / (dy * dy);
    const double cx = std::abs(wind.wx) * dt / dx, cy = std::abs(wind.wy) * dt / dy;
    if (dnx > kMaxDiffusionNumber || dny > kMaxDiffusionNumber || 2.0 * (dnx + dny) + cx + cy > 1.0) {
        std::ostringstream msg;
        msg << "pollutant step unstable: diffusion numbers (" << dnx << ", " << dny << ") limit "
            << kMaxDiffusionNumber << ", courant (" << cx << ", " << cy << ")";
        throw StabilityError(msg.str());
    }

    const Tensor src = pte_source_field(grid, sources);
    std::vector<double> c(cells, 0.0), next(cells);
    if (c0) c = c0->storage();

    Trajectory traj{Tensor(Shape{grid.frames, 1, ny, nx}), {diffusivity, wind.wx, wind.wy}};
    for (const auto& s : sources) {
        traj.params.push_back(s.x / grid.Lx);
        traj.params.push_back(s.y / grid.Ly);
        traj.params.push_back(s.rate);
    }
    auto out = traj.fields.data();
    std::copy(c.begin(), c.end(), out.begin());

    // Face flux (positive toward increasing index) between cells a -> b.
    auto flux = [&](double ca, double cb, double w, double h) {
        return (w >= 0.0 ? w * ca : w * cb) - diffusivity * (cb - ca) / h;
    };
    for (std::size_t f = 1; f < grid.frames; ++f) {
        for (std::size_t n = 0; n < grid.store_every; ++n) {
            for (std::size_t i = 0; i < cells; ++i) next[i] = c[i] + dt * src[i];
            for (std::size_t iy = 0; iy < ny; ++iy)
                for (std::size_t ix = 0; ix + 1 < nx; ++ix) {
                    const std::size_t a = iy * nx + ix;
                    const double q = dt / dx * flux(c[a], c[a + 1], wind.wx, dx);
                    next[a] -= q;
                    next[a + 1] += q;
                }
            for (std::size_t iy = 0; iy + 1 < ny; ++iy)
                for (std::size_t ix = 0; ix < nx; ++ix) {
                    const std::size_t a = iy * nx + ix;
                    const double q = dt / dy * flux(c[a], c[a + nx], wind.wy, dy);
                    next[a] -= q;
                    next[a + nx] += q;
                }
            c.swap(next);
        }
        std::copy(c.begin(), c.end(), out.begin() + f * cells);
    }
    traj.fields.require_finite("pollutant trajectory");
    return traj;
}

}  // namespace lepp::pde

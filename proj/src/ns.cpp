// Pseudo-spectral vorticity solver. The state is the unnormalized r2c
// transform of w; the viscous term is integrated exactly and the advection
// plus forcing term with integrating-factor RK4.

#include <cmath>
#include <complex>
#include <numbers>
#include <sstream>
#include <vector>

#include "lepp/errors.hpp"
#include "lepp/fft.hpp"
#include "lepp/pde.hpp"
#include "lepp/random.hpp"

namespace lepp::pde {

namespace {

using cplx = std::complex<double>;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

bool is_pow2(std::size_t n) { return n >= 2 && (n & (n - 1)) == 0; }

// Signed integer wavenumber of FFT index i for length n.
long wavenumber(std::size_t i, std::size_t n)
{
    return i <= n / 2 ? static_cast<long>(i) : static_cast<long>(i) - static_cast<long>(n);
}

class VorticitySolver {
public:
    VorticitySolver(const GridSpec& g, double nu, double forcing)
        : g_(g), nk_(g.nx / 2 + 1), nb_(g.ny * nk_), fft_(g.ny, g.nx), kx_(nb_), ky_(nb_), k2_(nb_), keep_(nb_),
          e_(nb_), eh_(nb_), force_(nb_), scratch_(5, std::vector<cplx>(nb_)), phys_(5, std::vector<double>(g.nx * g.ny))
    {
        for (std::size_t iy = 0; iy < g.ny; ++iy)
            for (std::size_t ix = 0; ix < nk_; ++ix) {
                const std::size_t b = iy * nk_ + ix;
                const long mx = wavenumber(ix, g.nx), my = wavenumber(iy, g.ny);
                // Nyquist derivatives are zeroed.
                kx_[b] = 2 * ix == g.nx ? 0.0 : kTwoPi * static_cast<double>(mx) / g.Lx;
                ky_[b] = 2 * iy == g.ny ? 0.0 : kTwoPi * static_cast<double>(my) / g.Ly;
                const double qx = kTwoPi * static_cast<double>(mx) / g.Lx, qy = kTwoPi * static_cast<double>(my) / g.Ly;
                k2_[b] = qx * qx + qy * qy;
                keep_[b] = 3 * std::abs(mx) < static_cast<long>(g.nx) && 3 * std::abs(my) < static_cast<long>(g.ny);
                e_[b] = std::exp(-nu * k2_[b] * g.dt);
                eh_[b] = std::exp(-nu * k2_[b] * g.dt * 0.5);
            }
        std::vector<double> f(g.nx * g.ny);
        for (std::size_t iy = 0; iy < g.ny; ++iy)
            for (std::size_t ix = 0; ix < g.nx; ++ix) {
                const double x = static_cast<double>(ix) / static_cast<double>(g.nx);
                const double y = static_cast<double>(iy) / static_cast<double>(g.ny);
                const double arg = kTwoPi * (x + y);
                f[iy * g.nx + ix] = forcing * (std::sin(arg) + std::cos(arg));
            }
        fft_.forward(f, force_);
    }

    std::vector<cplx> to_spectral(std::span<const double> w)
    {
        std::vector<cplx> out(nb_);
        fft_.forward(w, out);
        return out;
    }

    void to_physical(const std::vector<cplx>& what, std::span<double> w)
    {
        fft_.inverse(what, w);
        const double inv = 1.0 / static_cast<double>(g_.nx * g_.ny);
        for (double& v : w) v *= inv;
    }

    // out = dt * (forcing - u . grad w), dealiased, zero mean. Returns the max
    // speed seen in physical space.
    double rhs(const std::vector<cplx>& v, std::vector<cplx>& out)
    {
        auto& uh = scratch_[0];
        auto& vh = scratch_[1];
        auto& wxh = scratch_[2];
        auto& wyh = scratch_[3];
        const cplx I(0.0, 1.0);
        for (std::size_t b = 0; b < nb_; ++b) {
            const cplx psi = k2_[b] > 0.0 ? v[b] / k2_[b] : cplx(0.0);
            uh[b] = I * ky_[b] * psi;
            vh[b] = -I * kx_[b] * psi;
            wxh[b] = I * kx_[b] * v[b];
            wyh[b] = I * ky_[b] * v[b];
        }
        for (int c = 0; c < 4; ++c) to_physical(scratch_[c], phys_[c]);
        const auto& u = phys_[0];
        const auto& vv = phys_[1];
        double vmax = 0.0;
        auto& nl = phys_[4];
        for (std::size_t i = 0; i < nl.size(); ++i) {
            vmax = std::max(vmax, std::hypot(u[i], vv[i]));
            nl[i] = u[i] * phys_[2][i] + vv[i] * phys_[3][i];
        }
        fft_.forward(nl, out);
        for (std::size_t b = 0; b < nb_; ++b) out[b] = keep_[b] ? g_.dt * (force_[b] - out[b]) : cplx(0.0);
        out[0] = 0.0;
        return vmax;
    }

    // One integrating-factor RK4 step; returns the speed at the start of it.
    double step(std::vector<cplx>& v)
    {
        auto& a = k_[0];
        auto& b = k_[1];
        auto& c = k_[2];
        auto& d = k_[3];
        auto& tmp = scratch_[4];
        for (auto* k : {&a, &b, &c, &d}) k->resize(nb_);
        const double speed = rhs(v, a);
        for (std::size_t i = 0; i < nb_; ++i) tmp[i] = eh_[i] * (v[i] + 0.5 * a[i]);
        rhs(tmp, b);
        for (std::size_t i = 0; i < nb_; ++i) tmp[i] = eh_[i] * v[i] + 0.5 * b[i];
        rhs(tmp, c);
        for (std::size_t i = 0; i < nb_; ++i) tmp[i] = e_[i] * v[i] + eh_[i] * c[i];
        rhs(tmp, d);
        for (std::size_t i = 0; i < nb_; ++i)
            v[i] = e_[i] * v[i] + (e_[i] * a[i] + 2.0 * eh_[i] * (b[i] + c[i]) + d[i]) / 6.0;
        return speed;
    }

private:
    GridSpec g_;
    std::size_t nk_, nb_;
    fft::RealFft2d fft_;
    std::vector<double> kx_, ky_, k2_;
    std::vector<bool> keep_;
    std::vector<double> e_, eh_;
    std::vector<cplx> force_;
    std::vector<std::vector<cplx>> scratch_;
    std::vector<std::vector<double>> phys_;
    std::vector<cplx> k_[4];
};

}  // namespace

Trajectory ns_simulate(const GridSpec& grid, double nu, double forcing, const Tensor& w0)
{
    grid.validate();
    if (!is_pow2(grid.nx) || !is_pow2(grid.ny)) throw ConfigError("spectral solver needs power-of-two grid sizes");
    if (w0.shape() != Shape{grid.ny, grid.nx})
        throw ShapeError("initial vorticity " + shape_str(w0.shape()) + " does not match grid");
    if (!(nu >= 0.0)) throw ConfigError("viscosity must be non-negative");

    VorticitySolver solver(grid, nu, forcing);
    const std::size_t cells = grid.nx * grid.ny;
    Trajectory traj{Tensor(Shape{grid.frames, 1, grid.ny, grid.nx}), {nu, forcing}};
    auto frames = traj.fields.data();
    std::copy(w0.storage().begin(), w0.storage().end(), frames.begin());

    auto state = solver.to_spectral(w0.data());
    const double h = std::min(grid.dx(), grid.dy());
    for (std::size_t f = 1; f < grid.frames; ++f) {
        for (std::size_t s = 0; s < grid.store_every; ++s) {
            const double speed = solver.step(state);
            const double cfl = speed * grid.dt / h;
            if (!(cfl <= 0.5)) {
                std::ostringstream msg;
                msg << "navier-stokes CFL " << cfl << " > 0.5 at frame " << f << " substep " << s
                    << " (max |u| = " << speed << ", dt = " << grid.dt << ")";
                throw StabilityError(msg.str());
            }
        }
        solver.to_physical(state, frames.subspan(f * cells, cells));
    }
    traj.fields.require_finite("navier-stokes trajectory");
    return traj;
}

Trajectory ns_simulate(const GridSpec& grid, double nu, double forcing, std::uint64_t seed)
{
    return ns_simulate(grid, nu, forcing, ns_initial_vorticity(grid.ny, grid.nx, seed));
}

Tensor ns_initial_vorticity(std::size_t ny, std::size_t nx, std::uint64_t seed)
{
    Rng rng(seed);
    Tensor w(Shape{ny, nx});
    for (long my = 0; my <= 4; ++my)
        for (long mx = -4; mx <= 4; ++mx) {
            const long r2 = mx * mx + my * my;
            // half plane: each +/-k pair once
            if (r2 == 0 || r2 > 16 || (my == 0 && mx < 0)) continue;
            const double a = rng.normal(), b = rng.normal();
            for (std::size_t iy = 0; iy < ny; ++iy)
                for (std::size_t ix = 0; ix < nx; ++ix) {
                    const double arg = kTwoPi * (static_cast<double>(mx) * static_cast<double>(ix) / static_cast<double>(nx) +
                                                 static_cast<double>(my) * static_cast<double>(iy) / static_cast<double>(ny));
                    w[iy * nx + ix] += a * std::cos(arg) + b * std::sin(arg);
                }
        }
    double mean = 0.0;
    for (double v : w.storage()) mean += v;
    mean /= static_cast<double>(w.size());
    double ss = 0.0;
    for (double& v : w.storage()) {
        v -= mean;
        ss += v * v;
    }
    const double rms = std::sqrt(ss / static_cast<double>(w.size()));
    for (double& v : w.storage()) v /= rms;
    return w;
}

}  // namespace lepp::pde

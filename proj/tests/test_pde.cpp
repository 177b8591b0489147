#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "lepp/errors.hpp"
#include "lepp/fft.hpp"
#include "lepp/pde.hpp"

using namespace lepp;
using namespace lepp::pde;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

GridSpec grid(std::size_t n, double L, double dt, std::size_t frames, std::size_t every)
{
    return GridSpec{n, n, L, L, dt, frames, every};
}

std::span<const double> frame(const Trajectory& t, std::size_t f, std::size_t c = 0)
{
    const std::size_t C = t.fields.dim(1), cells = t.fields.dim(2) * t.fields.dim(3);
    return t.fields.data().subspan((f * C + c) * cells, cells);
}

double total(std::span<const double> v)
{
    double s = 0.0;
    for (double x : v) s += x;
    return s;
}

double sum_sq(std::span<const double> v)
{
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

}  // namespace

TEST_CASE("navier-stokes: zero state stays zero")
{
    auto t = ns_simulate(grid(16, 1.0, 0.01, 4, 5), 1e-3, 0.0, Tensor(Shape{16, 16}));
    for (double v : t.fields.storage()) CHECK(v == 0.0);
    CHECK(t.params == std::vector<double>{1e-3, 0.0});
}

TEST_CASE("navier-stokes: single mode decays at the viscous rate")
{
    const std::size_t n = 32;
    const double nu = 1e-2;
    Tensor w0(Shape{n, n});
    for (std::size_t iy = 0; iy < n; ++iy)
        for (std::size_t ix = 0; ix < n; ++ix) w0[iy * n + ix] = std::sin(kTwoPi * static_cast<double>(ix) / n);
    auto t = ns_simulate(grid(n, 1.0, 0.01, 2, 50), nu, 0.0, w0);
    const double decay = std::exp(-nu * 4.0 * std::numbers::pi * std::numbers::pi * 0.5);
    double worst = 0.0;
    auto w = frame(t, 1);
    for (std::size_t i = 0; i < w.size(); ++i) worst = std::max(worst, std::abs(w[i] - decay * w0[i]));
    CHECK(worst / decay <= 1e-6);
}

TEST_CASE("navier-stokes: mean vorticity and enstrophy")
{
    const std::size_t n = 32;
    auto forced = ns_simulate(grid(n, 1.0, 0.01, 6, 20), 1e-3, 0.1, 11u);
    for (std::size_t f = 0; f < 6; ++f) CHECK(std::abs(total(frame(forced, f))) / (n * n) <= 1e-12);

    auto decaying = ns_simulate(grid(n, 1.0, 0.01, 11, 20), 1e-3, 0.0, 12u);
    for (std::size_t f = 1; f < 11; ++f) CHECK(sum_sq(frame(decaying, f)) <= sum_sq(frame(decaying, f - 1)));
}

TEST_CASE("navier-stokes: fourth-order convergence in time")
{
    const std::size_t n = 32;
    const Tensor w0 = ns_initial_vorticity(n, n, 5);
    auto run = [&](double dt, std::size_t steps) {
        return ns_simulate(grid(n, 1.0, dt, 2, steps), 1e-3, 0.1, w0);
    };
    auto coarse = run(0.08, 4), mid = run(0.04, 8), fine = run(0.02, 16);
    double e1 = 0.0, e2 = 0.0;
    auto c = frame(coarse, 1), m = frame(mid, 1), f = frame(fine, 1);
    for (std::size_t i = 0; i < c.size(); ++i) {
        e1 = std::max(e1, std::abs(c[i] - m[i]));
        e2 = std::max(e2, std::abs(m[i] - f[i]));
    }
    const double ratio = e1 / e2;
    MESSAGE("RK4 error ratio per halving: " << ratio);
    CHECK(ratio >= 8.0);
    CHECK(ratio <= 24.0);
}

TEST_CASE("navier-stokes: initial field and errors")
{
    const std::size_t n = 32;
    Tensor w0 = ns_initial_vorticity(n, n, 3);
    CHECK(std::abs(total(w0.data())) <= 1e-10);
    CHECK(std::sqrt(sum_sq(w0.data()) / (n * n)) == doctest::Approx(1.0).epsilon(1e-12));
    fft::RealFft2d fft(n, n);
    std::vector<std::complex<double>> spec(fft.bins());
    fft.forward(w0.data(), spec);
    for (std::size_t iy = 0; iy < n; ++iy)
        for (std::size_t ix = 0; ix <= n / 2; ++ix) {
            const long my = iy <= n / 2 ? static_cast<long>(iy) : static_cast<long>(iy) - static_cast<long>(n);
            if (static_cast<long>(ix * ix) + my * my > 16) CHECK(std::abs(spec[iy * (n / 2 + 1) + ix]) <= 1e-9);
        }
    CHECK(ns_initial_vorticity(n, n, 3) == w0);

    Tensor strong = w0;
    for (double& v : strong.storage()) v *= 200.0;
    CHECK_THROWS_AS(ns_simulate(grid(n, 1.0, 0.05, 3, 2), 1e-3, 0.0, strong), StabilityError);
    CHECK_THROWS_AS(ns_simulate(grid(24, 1.0, 0.01, 2, 1), 1e-3, 0.0, 1u), ConfigError);
    CHECK_THROWS_AS(ns_simulate(grid(16, 1.0, 0.01, 2, 1), 1e-3, 0.0, Tensor(Shape{8, 8})), ShapeError);
}

TEST_CASE("shallow water: zero state, mass and energy")
{
    auto zero = swe_simulate(grid(16, 1.0, 6.25e-4, 3, 4), 1.0, 100.0, Tensor(Shape{16, 16}));
    for (double v : zero.fields.storage()) CHECK(v == 0.0);

    const GridSpec g = grid(32, 1.0, 6.25e-4, 21, 16);
    auto t = swe_simulate(g, 1.0, 100.0, 77u);
    CHECK(t.fields.shape() == Shape{21, 3, 32, 32});
    CHECK(t.params == std::vector<double>{1.0, 100.0});
    const double mass0 = total(frame(t, 0, 2));
    auto energy = [&](std::size_t f) {
        return 0.5 * (100.0 * (sum_sq(frame(t, f, 0)) + sum_sq(frame(t, f, 1))) + 1.0 * sum_sq(frame(t, f, 2)));
    };
    const double e0 = energy(0);
    for (std::size_t f = 1; f < 21; ++f) {
        CHECK(std::abs(total(frame(t, f, 2)) - mass0) <= 1e-10 * std::abs(mass0));
        CHECK(std::abs(energy(f) - e0) <= 1e-3 * e0);
    }
}

TEST_CASE("shallow water: plane wave travels at sqrt(gH)")
{
    const std::size_t n = 32;
    const double H = 100.0, c = 10.0, eps = 1e-3;
    const GridSpec g = grid(n, 1.0, 6.25e-4, 11, 16);
    Tensor eta(Shape{n, n}), u(Shape{n, n});
    for (std::size_t iy = 0; iy < n; ++iy)
        for (std::size_t ix = 0; ix < n; ++ix) {
            eta[iy * n + ix] = eps * std::sin(kTwoPi * static_cast<double>(ix) / n);
            u[iy * n + ix] = c / H * eta[iy * n + ix];
        }
    auto t = swe_simulate(g, 1.0, H, eta, u);
    // Phase of the first x-mode along row 0, unwrapped frame to frame.
    auto phase = [&](std::size_t f) {
        std::complex<double> acc = 0.0;
        auto e = frame(t, f, 2);
        for (std::size_t ix = 0; ix < n; ++ix) acc += e[ix] * std::polar(1.0, -kTwoPi * static_cast<double>(ix) / n);
        return std::arg(acc);
    };
    double unwrapped = 0.0, prev = phase(0);
    for (std::size_t f = 1; f < 11; ++f) {
        const double p = phase(f);
        double d = p - prev;
        while (d > std::numbers::pi) d -= kTwoPi;
        while (d < -std::numbers::pi) d += kTwoPi;
        unwrapped += d;
        prev = p;
    }
    const double speed = -unwrapped / kTwoPi / (10 * g.frame_interval());
    MESSAGE("measured phase speed " << speed);
    CHECK(std::abs(speed - c) <= 0.02 * c);
}

TEST_CASE("shallow water: wave CFL is enforced")
{
    CHECK_THROWS_AS(swe_simulate(grid(32, 1.0, 1e-3, 2, 1), 1.0, 100.0, 1u), StabilityError);
    CHECK_NOTHROW(swe_simulate(grid(32, 1.0, 9e-4, 2, 1), 1.0, 100.0, 1u));
}

TEST_CASE("pollutant: conservation, sources, positivity")
{
    const GridSpec g = grid(32, 3000.0, 5.0, 11, 6);
    auto zero = pte_simulate(g, 30.0, {}, {});
    for (double v : zero.fields.storage()) CHECK(v == 0.0);

    Tensor c0(Shape{32, 32});
    for (std::size_t iy = 0; iy < 32; ++iy)
        for (std::size_t ix = 0; ix < 32; ++ix)
            c0[iy * 32 + ix] = std::exp(-0.02 * (std::pow(ix - 10.0, 2) + std::pow(iy - 20.0, 2)));
    const double area = g.dx() * g.dy();
    for (Wind w : {Wind{0.0, 0.0}, Wind{1.5, -0.7}}) {
        auto t = pte_simulate(g, 40.0, {}, w, c0);
        const double m0 = total(frame(t, 0)) * area;
        for (std::size_t f = 1; f < 11; ++f) CHECK(std::abs(total(frame(t, f)) * area - m0) <= 1e-10 * m0);
    }

    std::vector<Source> src{{900.0, 1500.0, 1.2}, {2000.0, 700.0, 0.4}};
    CHECK(total(pte_source_field(g, src).data()) * area == doctest::Approx(1.6).epsilon(1e-12));
    auto t = pte_simulate(g, 40.0, src, Wind{-1.0, 0.0});
    CHECK(t.params == std::vector<double>{40.0, -1.0, 0.0, 0.3, 0.5, 1.2, 2000.0 / 3000.0, 700.0 / 3000.0, 0.4});
    for (std::size_t f = 0; f < 11; ++f) {
        const double injected = 1.6 * static_cast<double>(f) * g.frame_interval();
        CHECK(total(frame(t, f)) * area == doctest::Approx(injected).epsilon(1e-10));
    }
    for (double v : t.fields.storage()) CHECK(v >= 0.0);
}

TEST_CASE("pollutant: second moment grows as 2 D t")
{
    const std::size_t n = 64;
    const double D = 20.0;
    const GridSpec g = grid(n, 3000.0, 5.0, 9, 10);
    Tensor c0(Shape{n, n});
    c0[32 * n + 32] = 1.0;
    auto t = pte_simulate(g, D, {}, {}, c0);
    auto moments = [&](std::size_t f) {
        auto c = frame(t, f);
        double m = 0.0, mx = 0.0, my = 0.0, sxx = 0.0, syy = 0.0;
        for (std::size_t iy = 0; iy < n; ++iy)
            for (std::size_t ix = 0; ix < n; ++ix) {
                const double v = c[iy * n + ix], x = (ix + 0.5) * g.dx(), y = (iy + 0.5) * g.dy();
                m += v;
                mx += v * x;
                my += v * y;
                sxx += v * x * x;
                syy += v * y * y;
            }
        mx /= m;
        my /= m;
        return std::pair{sxx / m - mx * mx, syy / m - my * my};
    };
    const auto [vx0, vy0] = moments(0);
    for (std::size_t f = 1; f < 9; ++f) {
        const auto [vx, vy] = moments(f);
        const double expect_growth = 2.0 * D * static_cast<double>(f) * g.frame_interval();
        CHECK(std::abs((vx - vx0) - expect_growth) <= 0.03 * expect_growth);
        CHECK(std::abs((vy - vy0) - expect_growth) <= 0.03 * expect_growth);
    }
}

TEST_CASE("pollutant: stability bound")
{
    const GridSpec g = grid(64, 3000.0, 5.0, 2, 1);
    const double dx2 = g.dx() * g.dx();
    CHECK_THROWS_AS(pte_simulate(g, 0.21 * dx2 / 5.0, {}, {}), StabilityError);
    CHECK_NOTHROW(pte_simulate(g, 0.19 * dx2 / 5.0, {}, {}));
    // diffusion within bound, but too much wind for positivity
    CHECK_THROWS_AS(pte_simulate(g, 0.19 * dx2 / 5.0, {}, Wind{4.0, 4.0}), StabilityError);
}

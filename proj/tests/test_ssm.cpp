#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "fd_check.hpp"
#include "lepp/ssm.hpp"
#include "ssm_oracles.hpp"

using namespace lepp;
using lepp::testing::max_grad_rel_error;
using lepp::testing::random_tensor;

namespace {

ssm::SSMDiscreteParams random_discrete(Rng& rng, std::size_t d, std::size_t n, Tensor& C, Tensor& D)
{
    Tensor A(Shape{d, n}), B = random_tensor(rng, {d, n}), dt(Shape{d});
    for (auto& v : A.storage()) v = -std::exp(rng.uniform(std::log(0.05), std::log(5.0)));
    for (auto& v : dt.storage()) v = std::exp(rng.uniform(std::log(1e-3), std::log(1.0)));
    C = random_tensor(rng, {d, n});
    D = random_tensor(rng, {d});
    return ssm::discretize(A, dt, B);
}

Tensor impulse(std::size_t L, std::size_t d, std::size_t channel)
{
    Tensor x(Shape{L, d});
    x[channel] = 1.0;
    return x;
}

}  // namespace

TEST_CASE("discretize closed-form cases")
{
    auto zero_limit = ssm::discretize(Tensor(Shape{1, 1}, 0.0), Tensor::from({0.5}), Tensor(Shape{1, 1}, 2.0));
    CHECK(zero_limit.Abar[0] == 1.0);
    CHECK(zero_limit.Bbar[0] == 1.0);

    auto half = ssm::discretize(Tensor(Shape{1, 1}, -1.0), Tensor::from({std::numbers::ln2}), Tensor(Shape{1, 1}, 1.0));
    CHECK(half.Abar[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(half.Bbar[0] == doctest::Approx(0.5).epsilon(1e-15));

    CHECK_THROWS_AS(ssm::discretize(Tensor(Shape{1, 1}, -1.0), Tensor::from({0.0}), Tensor(Shape{1, 1}, 1.0)), Error);
    CHECK_THROWS_AS(ssm::discretize(Tensor(Shape{1, 1}, -1.0), Tensor::from({-0.1}), Tensor(Shape{1, 1}, 1.0)), Error);
}

TEST_CASE("discretize matches constant-input ODE integration")
{
    Rng rng(7);
    for (int trial = 0; trial < 40; ++trial) {
        const bool tiny = trial % 4 == 0;  // exercise the series branch
        const double dt = std::exp(rng.uniform(std::log(1e-3), 0.0));
        const double a = tiny ? -rng.uniform(1e-9, 1e-7) : -std::exp(rng.uniform(-3.0, 2.0));
        const double b = rng.uniform(-2.0, 2.0), u = rng.uniform(-1.0, 1.0), h0 = rng.uniform(-1.0, 1.0);
        auto dp = ssm::discretize(Tensor(Shape{1, 1}, a), Tensor::from({dt}), Tensor(Shape{1, 1}, b));
        const double step = dp.Abar[0] * h0 + dp.Bbar[0] * u;
        CHECK(std::abs(step - lepp::testing::zoh_ode_step(a, b, u, h0, dt)) <= 1e-8);
    }
}

TEST_CASE("layer params respect stability constraints")
{
    Rng rng(1);
    auto p = ssm::SSMLayerParams::init(8, 4, rng);
    const Tensor A = p.A(), delta = p.delta();
    for (double a : A.storage()) CHECK(a < 0.0);
    for (double dt : delta.storage()) {
        CHECK(dt >= 1e-3 * (1 - 1e-12));
        CHECK(dt <= 1e-1 * (1 + 1e-12));
    }
    auto dp = ssm::discretize(p);
    for (double v : dp.Abar.storage()) CHECK(std::abs(v) < 1.0);
    CHECK(A[1] == doctest::Approx(-2.0));  // A_s = -(1+s)
}

TEST_CASE("recurrent_scan examples")
{
    Rng rng(5);
    Tensor C, D;
    auto dp = random_discrete(rng, 3, 4, C, D);
    Tensor zeroD(Shape{3});
    auto h0 = ssm::SSMHiddenState::zeros(3, 4);

    SUBCASE("single step from zero state")
    {
        Tensor x(Shape{1, 3}, {1.0, 1.0, 1.0});
        auto [y, h] = ssm::recurrent_scan(dp, C, zeroD, x, h0);
        for (std::size_t c = 0; c < 3; ++c) {
            double expect = 0.0;
            for (std::size_t s = 0; s < 4; ++s) expect += C[c * 4 + s] * dp.Bbar[c * 4 + s];
            CHECK(y[c] == doctest::Approx(expect).epsilon(1e-14));
        }
    }
    SUBCASE("zero input stays zero")
    {
        auto [y, h] = ssm::recurrent_scan(dp, C, D, Tensor(Shape{10, 3}), h0);
        CHECK(y == Tensor(Shape{10, 3}));
        CHECK(h.h == h0.h);
    }
    SUBCASE("impulse response equals the kernel")
    {
        const std::size_t L = 20;
        Tensor K = ssm::build_kernel(dp, C, L);
        for (std::size_t ch = 0; ch < 3; ++ch) {
            auto [y, h] = ssm::recurrent_scan(dp, C, zeroD, impulse(L, 3, ch), h0);
            for (std::size_t t = 0; t < L; ++t) CHECK(std::abs(y[t * 3 + ch] - K[t * 3 + ch]) <= 1e-14);
        }
    }
    SUBCASE("shape errors")
    {
        CHECK_THROWS_AS(ssm::recurrent_scan(dp, C, D, Tensor(Shape{4, 2}), h0), ShapeError);
        CHECK_THROWS_AS(ssm::recurrent_scan(dp, C, D, Tensor(Shape{4, 3}), ssm::SSMHiddenState::zeros(3, 2)),
                        ShapeError);
    }
}

TEST_CASE("build_kernel")
{
    Rng rng(9);
    Tensor C, D;
    auto dp = random_discrete(rng, 2, 3, C, D);
    Tensor K = ssm::build_kernel(dp, C, 5);
    for (std::size_t c = 0; c < 2; ++c) {
        double k0 = 0.0;
        for (std::size_t s = 0; s < 3; ++s) k0 += C[c * 3 + s] * dp.Bbar[c * 3 + s];
        CHECK(K[c] == doctest::Approx(k0).epsilon(1e-15));
    }

    ssm::SSMDiscreteParams ones{Tensor(Shape{2, 3}, 1.0), dp.Bbar};
    Tensor Kc = ssm::build_kernel(ones, C, 6);
    for (std::size_t k = 1; k < 6; ++k)
        for (std::size_t c = 0; c < 2; ++c) CHECK(Kc[k * 2 + c] == Kc[c]);

    // d_state = 1: K[k] = C B̄ Ā^k in closed form.
    ssm::SSMDiscreteParams single{Tensor(Shape{1, 1}, 0.8), Tensor(Shape{1, 1}, 0.3)};
    Tensor K1 = ssm::build_kernel(single, Tensor(Shape{1, 1}, 1.5), 30);
    for (std::size_t k = 0; k < 30; ++k)
        CHECK(K1[k] == doctest::Approx(1.5 * 0.3 * std::pow(0.8, static_cast<double>(k))).epsilon(1e-13));

    CHECK_THROWS_AS(ssm::build_kernel(dp, C, 0), ShapeError);
}

TEST_CASE("causal_conv")
{
    Rng rng(13);
    const std::size_t L = 64, d = 3;
    Tensor K = random_tensor(rng, {L, d});
    Tensor D = random_tensor(rng, {d});

    Tensor delta(Shape{L, d});
    for (std::size_t c = 0; c < d; ++c) delta[c] = 1.0;
    Tensor y = ssm::causal_conv(delta, K, D, ssm::ConvPath::direct);
    for (std::size_t t = 0; t < L; ++t)
        for (std::size_t c = 0; c < d; ++c) CHECK(y[t * d + c] == K[t * d + c] + (t == 0 ? D[c] : 0.0));

    Tensor x = random_tensor(rng, {L, d});
    Tensor id = delta;
    CHECK(ssm::causal_conv(x, id, Tensor(Shape{d}), ssm::ConvPath::direct) == x);

    Tensor direct = ssm::causal_conv(x, K, D, ssm::ConvPath::direct);
    Tensor viafft = ssm::causal_conv(x, K, D, ssm::ConvPath::fft);
    CHECK(max_abs_diff(direct, viafft) <= 1e-10);
    CHECK(max_abs_diff(direct, ssm::causal_conv(x, K, D)) <= 1e-10);

    CHECK_THROWS_AS(ssm::causal_conv(x, random_tensor(rng, {L - 1, d}), D), ShapeError);
}

TEST_CASE("scan and convolution agree, FFT path at L = 64")
{
    Rng rng(21);
    Tensor C, D;
    auto dp = random_discrete(rng, 4, 3, C, D);
    const std::size_t L = 64;
    Tensor x = random_tensor(rng, {L, 4});
    auto [ys, h] = ssm::recurrent_scan(dp, C, D, x, ssm::SSMHiddenState::zeros(4, 3));
    Tensor yc = ssm::causal_conv(x, ssm::build_kernel(dp, C, L), D, ssm::ConvPath::fft);
    CHECK(max_abs_diff(ys, yc) <= 1e-8);
}

TEST_CASE("equivalence in 32-bit")
{
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t L = 1 + rng.below(128), d = 1 + rng.below(16), n = 1 + rng.below(8);
        Tensor C, D;
        auto dp = random_discrete(rng, d, n, C, D);
        Tensor x = random_tensor(rng, {L, d});
        auto f = [](const Tensor& t) { return std::vector<float>(t.storage().begin(), t.storage().end()); };
        auto a = f(dp.Abar), b = f(dp.Bbar), cf = f(C), df = f(D), xf = f(x);
        std::vector<float> h(d * n, 0.0f), y1(L * d), K(L * d), y2(L * d);
        ssm::recurrent_scan<float>(L, d, n, a, b, cf, df, xf, h, y1);
        ssm::build_kernel<float>(L, d, n, a, b, cf, K);
        ssm::causal_conv_direct<float>(L, d, xf, K, df, y2);
        float worst = 0.0f;
        for (std::size_t i = 0; i < y1.size(); ++i) worst = std::max(worst, std::abs(y1[i] - y2[i]));
        CHECK(worst <= 1e-4f);
    }
}

TEST_CASE("hidden state stays within the geometric bound")
{
    Rng rng(41);
    Tensor C, D;
    auto dp = random_discrete(rng, 6, 4, C, D);
    const std::size_t L = 10000;
    Tensor x = random_tensor(rng, {L, 6});
    double amax = 0.0, bmax = 0.0;
    for (double v : dp.Abar.storage()) amax = std::max(amax, std::abs(v));
    for (double v : dp.Bbar.storage()) bmax = std::max(bmax, std::abs(v));
    const double bound = bmax / (1.0 - amax);

    std::vector<double> h(24, 0.0), y(6);
    double worst = 0.0;
    for (std::size_t t = 0; t < L; ++t) {
        ssm::recurrent_scan<double>(1, 6, 4, dp.Abar.data(), dp.Bbar.data(), C.data(), D.data(),
                                    x.data().subspan(t * 6, 6), h, y);
        for (double v : h) worst = std::max(worst, std::abs(v));
    }
    CHECK(worst <= bound);
}

TEST_CASE("scan is linear and time invariant")
{
    Rng rng(43);
    Tensor C, D;
    auto dp = random_discrete(rng, 3, 5, C, D);
    const std::size_t L = 40;
    auto h0 = ssm::SSMHiddenState::zeros(3, 5);
    Tensor x1 = random_tensor(rng, {L, 3}), x2 = random_tensor(rng, {L, 3});
    const double alpha = 1.7, beta = -0.4;
    Tensor mix(Shape{L, 3});
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = alpha * x1[i] + beta * x2[i];
    auto y1 = ssm::recurrent_scan(dp, C, D, x1, h0).first;
    auto y2 = ssm::recurrent_scan(dp, C, D, x2, h0).first;
    auto ym = ssm::recurrent_scan(dp, C, D, mix, h0).first;
    for (std::size_t i = 0; i < ym.size(); ++i) CHECK(std::abs(ym[i] - (alpha * y1[i] + beta * y2[i])) <= 1e-12);

    const std::size_t shift = 7;
    Tensor xs(Shape{L, 3});
    for (std::size_t t = shift; t < L; ++t)
        for (std::size_t c = 0; c < 3; ++c) xs[t * 3 + c] = x1[(t - shift) * 3 + c];
    auto ys = ssm::recurrent_scan(dp, C, D, xs, h0).first;
    for (std::size_t t = 0; t < L; ++t)
        for (std::size_t c = 0; c < 3; ++c) {
            const double expect = t < shift ? 0.0 : y1[(t - shift) * 3 + c];
            CHECK(std::abs(ys[t * 3 + c] - expect) <= 1e-12);
        }
}

TEST_CASE("graph ops: discretization gradients, including the series branch")
{
    Rng rng(51);
    auto a_log = ad::parameter(random_tensor(rng, {3, 2}, -1.0, 1.0));
    auto dl = ad::parameter(random_tensor(rng, {3}, -3.0, 0.0));
    auto B = ad::parameter(random_tensor(rng, {3, 2}));
    auto w1 = ad::constant(random_tensor(rng, {3, 2})), w2 = ad::constant(random_tensor(rng, {3, 2}));
    auto build = [&] {
        return ad::add(ad::sum_all(ad::mul(ssm::discretize_abar(a_log, dl), w1)),
                       ad::sum_all(ad::mul(ssm::discretize_bbar(a_log, dl, B), w2)));
    };
    CHECK(max_grad_rel_error({a_log, dl, B}, build) <= 1e-6);

    // Δ A around 1e-7: series branch for B̄.
    auto tiny_a = ad::parameter(Tensor(Shape{2, 2}, {-8.0, -9.0, -7.5, -8.5}));
    auto tiny_dl = ad::parameter(Tensor(Shape{2}, {-8.0, -7.0}));
    auto Bt = ad::parameter(Tensor(Shape{2, 2}, {1.0, -0.5, 0.25, 2.0}));
    auto w = ad::constant(Tensor(Shape{2, 2}, {1.0, 2.0, -1.0, 0.5}));
    CHECK(max_grad_rel_error({tiny_a, tiny_dl, Bt},
                             [&] { return ad::sum_all(ad::mul(ssm::discretize_bbar(tiny_a, tiny_dl, Bt), w)); },
                             1e-6) <= 1e-4);
}

TEST_CASE("graph ops: scan, readout and convolution gradients")
{
    Rng rng(53);
    const std::size_t L = 6, d = 3, n = 2;
    auto x = ad::parameter(random_tensor(rng, {L, d}));
    auto abar = ad::parameter(random_tensor(rng, {d, n}, 0.2, 0.9));
    auto bbar = ad::parameter(random_tensor(rng, {d, n}));
    auto C = ad::parameter(random_tensor(rng, {d, n}));
    auto D = ad::parameter(random_tensor(rng, {d}));
    auto h0 = ad::parameter(random_tensor(rng, {d, n}));
    auto proj = ad::constant(random_tensor(rng, {L, d}));
    auto hproj = ad::constant(random_tensor(rng, {d, n}));

    auto scan_loss = [&] {
        auto H = ssm::scan_states(x, abar, bbar, h0);
        auto y = ssm::readout(H, C, x, D);
        return ad::add(ad::sum_all(ad::mul(y, proj)), ad::sum_all(ad::mul(ssm::last_state(H), hproj)));
    };
    CHECK(max_grad_rel_error({x, abar, bbar, C, D, h0}, scan_loss) <= 1e-6);

    auto conv_loss = [&] { return ad::sum_all(ad::mul(ssm::conv_output(x, abar, bbar, C, D), proj)); };
    CHECK(max_grad_rel_error({x, abar, bbar, C, D}, conv_loss) <= 1e-6);

    // Same function, same gradients through either mode (zero initial state).
    auto zero = ad::constant(Tensor(Shape{d, n}));
    std::vector<ad::Var> ps{x, abar, bbar, C, D};
    ad::zero_grad(ps);
    ad::backward(ad::sum_all(ad::mul(ssm::readout(ssm::scan_states(x, abar, bbar, zero), C, x, D), proj)));
    std::vector<Tensor> g_scan;
    for (auto& p : ps) g_scan.push_back(p.grad());
    ad::zero_grad(ps);
    ad::backward(conv_loss());
    for (std::size_t i = 0; i < ps.size(); ++i) CHECK(max_abs_diff(g_scan[i], ps[i].grad()) <= 1e-12);
}

TEST_CASE("mamba block")
{
    Rng rng(61);
    const std::size_t dm = 5, di = 6, n = 3;

    SUBCASE("zero output projection is the identity")
    {
        auto p = ssm::MambaBlockParams::init(dm, di, n, rng.split("zero"), true);
        auto z = ad::constant(random_tensor(rng, {7, dm}));
        CHECK(ssm::mamba_block_forward(z, p, std::nullopt).y.value() == z.value());
    }
    SUBCASE("scan and conv modes agree")
    {
        auto p = ssm::MambaBlockParams::init(dm, di, n, rng.split("modes"));
        auto z = ad::constant(random_tensor(rng, {32, dm}));
        auto ys = ssm::mamba_block_forward(z, p, std::nullopt, ssm::BlockMode::scan);
        auto yc = ssm::mamba_block_forward(z, p, std::nullopt, ssm::BlockMode::conv);
        CHECK(max_abs_diff(ys.y.value(), yc.y.value()) <= 1e-8);
        CHECK(max_abs_diff(ys.h_last.value(), yc.h_last.value()) <= 1e-14);
    }
    SUBCASE("conv mode rejects a nonzero initial state")
    {
        auto p = ssm::MambaBlockParams::init(dm, di, n, rng.split("h0"));
        auto z = ad::constant(random_tensor(rng, {4, dm}));
        auto h0 = ad::constant(Tensor(Shape{di, n}, 0.1));
        CHECK_THROWS_AS(ssm::mamba_block_forward(z, p, h0, ssm::BlockMode::conv), Error);
        CHECK_NOTHROW(ssm::mamba_block_forward(z, p, ad::constant(Tensor(Shape{di, n})), ssm::BlockMode::conv));
    }
    SUBCASE("stepping with carried state equals one long scan")
    {
        auto p = ssm::MambaBlockParams::init(dm, di, n, rng.split("carry"));
        Tensor zs = random_tensor(rng, {9, dm});
        auto whole = ssm::mamba_block_forward(ad::constant(zs), p, std::nullopt);
        std::optional<ad::Var> h;
        for (std::size_t t = 0; t < 9; ++t) {
            auto step = ssm::mamba_block_forward(ad::slice(ad::constant(zs), t, 1), p, h);
            for (std::size_t c = 0; c < dm; ++c) CHECK(step.y.value()[c] == whole.y.value()[t * dm + c]);
            h = step.h_last;
        }
    }
    SUBCASE("gradients match finite differences in both modes")
    {
        auto p = ssm::MambaBlockParams::init(3, 4, 2, rng.split("grad"));
        auto z = ad::parameter(random_tensor(rng, {5, 3}));
        auto proj = ad::constant(random_tensor(rng, {5, 3}));
        std::vector<ad::Var> params{z};
        for (auto& [name, v] : p.named()) params.push_back(v);
        for (auto mode : {ssm::BlockMode::scan, ssm::BlockMode::conv}) {
            auto loss = [&] { return ad::sum_all(ad::mul(ssm::mamba_block_forward(z, p, std::nullopt, mode).y, proj)); };
            CHECK(max_grad_rel_error(params, loss, 1e-5, 1e-6) <= 1e-4);
        }
    }
}

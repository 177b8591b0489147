#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "fd_check.hpp"
#include "lepp/inference.hpp"
#include "lepp/surrogate.hpp"

using namespace lepp;
using lepp::testing::random_tensor;
using lepp::testing::rel_err;

namespace {

ModelConfig tiny(EvolutionKind kind, std::size_t S = 1, std::size_t C = 1)
{
    ModelConfig c;
    c.channels = C;
    c.height = 8;
    c.width = 8;
    c.d_p = 3;
    c.bundle = S;
    c.d_z = 16;
    c.evolution = kind;
    c.d_state = 4;
    c.mlp_hidden = 24;
    c.widths = {4, 6, 8};
    return c;
}

// Zero-initialized heads make the first steps trivial; give them values.
void randomize_heads(Surrogate& m, std::uint64_t seed)
{
    Rng rng(seed);
    for (auto& [name, v] : m.named_parameters())
        if (name.starts_with("evo.head") || name.starts_with("evo.mlp2"))
            v.node().value = random_tensor(rng, v.shape(), -0.3, 0.3);
}

constexpr EvolutionKind kKinds[] = {EvolutionKind::ssm, EvolutionKind::mlp};

}  // namespace

TEST_CASE("shape contracts and determinism")
{
    for (auto kind : kKinds) {
        Surrogate m(tiny(kind, 2, 3), 1);
        Rng rng(2);
        auto frames = ad::constant(random_tensor(rng, {2, 3, 8, 8}));
        auto p = ad::constant(random_tensor(rng, {3}));
        auto z = m.encode(frames);
        CHECK(z.shape() == Shape{16});
        CHECK(m.encode(frames).value() == z.value());
        CHECK(m.encode_static(p).shape() == Shape{4});
        CHECK(m.decode(z).shape() == Shape{2, 3, 8, 8});
        CHECK_THROWS_AS(m.encode(ad::constant(random_tensor(rng, {1, 3, 8, 8}))), ShapeError);
        CHECK_THROWS_AS(m.encode_static(ad::constant(random_tensor(rng, {2}))), ShapeError);

        Surrogate again(tiny(kind, 2, 3), 1);
        for (std::size_t i = 0; i < m.named_parameters().size(); ++i)
            CHECK(m.named_parameters()[i].second.value() == again.named_parameters()[i].second.value());
    }
    auto bad = tiny(EvolutionKind::ssm);
    bad.height = 12;
    CHECK_THROWS_AS(Surrogate(bad, 0), ConfigError);
}

TEST_CASE("fresh evolution is the identity")
{
    for (auto kind : kKinds) {
        Surrogate m(tiny(kind), 3);
        Rng rng(4);
        auto z = ad::constant(random_tensor(rng, {16}));
        auto zp = m.encode_static(ad::constant(random_tensor(rng, {3})));
        auto next = m.evolve(m.initial_carry(z), zp);
        CHECK(next.z.value() == z.value());
        CHECK(next.h.has_value() == (kind == EvolutionKind::ssm));
    }
    Surrogate mlp(tiny(EvolutionKind::mlp), 3);
    auto z = ad::constant(Tensor(Shape{16}));
    auto zp = ad::constant(Tensor(Shape{4}));
    CHECK_THROWS_AS(mlp.evolve({z, ad::constant(Tensor(Shape{16, 4}))}, zp), Error);
}

TEST_CASE("stepped evolution matches teacher-forced sequence scoring")
{
    for (auto kind : kKinds) {
        Surrogate m(tiny(kind), 5);
        randomize_heads(m, 6);
        Rng rng(7);
        const std::size_t L = 12;
        Tensor zs = random_tensor(rng, {L, 16});
        auto zp = m.encode_static(ad::constant(random_tensor(rng, {3})));
        auto conv = m.evolve_sequence(ad::constant(zs), zp, ssm::BlockMode::conv);
        auto scan = m.evolve_sequence(ad::constant(zs), zp, ssm::BlockMode::scan);
        LatentCarry carry{ad::constant(Tensor(Shape{16})), std::nullopt};
        double worst = 0.0;
        for (std::size_t t = 0; t < L; ++t) {
            carry.z = ad::constant(Tensor(Shape{16}, std::vector<double>(zs.storage().begin() + t * 16,
                                                                         zs.storage().begin() + (t + 1) * 16)));
            carry = m.evolve(carry, zp);
            for (std::size_t c = 0; c < 16; ++c) {
                worst = std::max(worst, std::abs(carry.z.value()[c] - conv.value()[t * 16 + c]));
                CHECK(carry.z.value()[c] == scan.value()[t * 16 + c]);
            }
        }
        CHECK(worst <= 1e-8);
    }
}

TEST_CASE("default ssm and mlp models have comparable parameter budgets")
{
    ModelConfig base;  // 32x32, d_z = 64
    base.evolution = EvolutionKind::ssm;
    Surrogate s(base, 0);
    base.evolution = EvolutionKind::mlp;
    Surrogate m(base, 0);
    const double ps = static_cast<double>(s.parameter_count()), pm = static_cast<double>(m.parameter_count());
    MESSAGE("parameters: ssm " << ps << " (evolution " << s.evolution_parameter_count() << "), mlp " << pm
                               << " (evolution " << m.evolution_parameter_count() << ")");
    CHECK(std::abs(ps - pm) <= 0.15 * std::max(ps, pm));
    CHECK(s.evolution_parameter_count() == base.ssm_evolution_params());
    CHECK(m.evolution_parameter_count() == base.mlp_evolution_params(base.hidden()));
}

TEST_CASE("automatic mlp width matches the ssm evolution budget")
{
    for (std::size_t d_z : {8, 16, 64, 128}) {
        ModelConfig c;
        c.d_z = d_z;
        const std::size_t h = c.hidden();
        const auto gap = [&](std::size_t w) {
            return std::abs(static_cast<double>(c.mlp_evolution_params(w)) -
                            static_cast<double>(c.ssm_evolution_params()));
        };
        CHECK(gap(h) <= gap(h + 1));
        if (h > 1) CHECK(gap(h) <= gap(h - 1));
        c.mlp_hidden = 7;
        CHECK(c.hidden() == 7);
    }
}

TEST_CASE("rollout: reconstruction, single encode, continuation")
{
    for (auto kind : kKinds) {
        Surrogate m(tiny(kind), 8);
        randomize_heads(m, 9);
        Rng rng(10);
        auto frames = ad::constant(random_tensor(rng, {1, 1, 8, 8}));
        auto zp = m.encode_static(ad::constant(random_tensor(rng, {3})));

        auto r0 = m.rollout(frames, zp, 0);
        CHECK(r0.frames.size() == 1);
        CHECK(r0.frames[0].value() == m.decode(m.encode(frames)).value());

        m.reset_counters();
        auto full = m.rollout(frames, zp, 7);
        CHECK(m.encoder_calls() == 1);
        CHECK(full.latents.size() == 8);
        CHECK(full.frames.size() == 8);
        for (const auto& z : full.latents) CHECK(z.shape() == Shape{16});

        auto head = m.rollout(frames, zp, 3);
        auto tail = m.continue_rollout(head.carry, zp, 4);
        for (std::size_t k = 0; k < 4; ++k) {
            CHECK(tail.latents[k].value() == full.latents[4 + k].value());
            CHECK(tail.frames[k].value() == full.frames[4 + k].value());
        }
    }
}

TEST_CASE("end-to-end gradients match finite differences")
{
    for (auto kind : kKinds) {
        Surrogate m(tiny(kind), 11);
        randomize_heads(m, 12);
        Rng rng(13);
        auto frames = ad::constant(random_tensor(rng, {1, 1, 8, 8}));
        auto p = ad::constant(random_tensor(rng, {3}));
        auto target = ad::constant(random_tensor(rng, {1, 1, 8, 8}));
        auto build = [&] {
            auto r = m.rollout(frames, m.encode_static(p), 3);
            ad::Var loss = ad::mse(r.frames[0], frames);
            for (std::size_t k = 1; k < r.frames.size(); ++k) loss = ad::add(loss, ad::mse(r.frames[k], target));
            return loss;
        };
        auto params = m.parameters();
        ad::zero_grad(params);
        ad::backward(build());
        double worst = 0.0;
        for (int trial = 0; trial < 20; ++trial) {
            auto& v = params[rng.below(params.size())];
            const std::size_t idx = rng.below(v.size());
            const double analytic = v.grad()[idx];
            const double fd =
                lepp::testing::central_difference(v, idx, [&] { return build().value().item(); }, 1e-5);
            worst = std::max(worst, rel_err(analytic, fd, 1e-6));
        }
        MESSAGE(to_string(kind) << " worst relative error " << worst);
        CHECK(worst <= 1e-4);
    }
}

TEST_CASE("inference session reproduces the graph forward pass")
{
    for (auto kind : kKinds) {
        Surrogate m(tiny(kind, 2, 3), 14);
        randomize_heads(m, 15);
        Rng rng(16);
        Tensor frames = random_tensor(rng, {2, 3, 8, 8});
        Tensor p = random_tensor(rng, {3});
        auto r = m.rollout(ad::constant(frames), m.encode_static(ad::constant(p)), 5);

        InferenceSession s(m);
        s.set_static(p.data());
        s.encode(frames.data());
        std::vector<double> out(s.frame_size());
        for (std::size_t k = 0; k <= 5; ++k) {
            if (k > 0) s.step();
            for (std::size_t c = 0; c < 16; ++c) CHECK(std::abs(s.latent()[c] - r.latents[k].value()[c]) <= 1e-12);
            s.decode(out);
            const double diff = max_abs_diff(Tensor(Shape{2, 3, 8, 8}, out), r.frames[k].value());
            CHECK(diff <= 1e-12);
        }
    }
}

TEST_CASE("checkpoint round trip")
{
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "lepp_test_model.lepp").string();
    Surrogate m(tiny(EvolutionKind::ssm, 1, 1), 17);
    randomize_heads(m, 18);
    m.normalizer() = {{0.1}, {2.0 / 3.0}, {1e-3, -4.0, 0.3}, {1.0, 0.5, 1.0 / 7.0}};
    write_checkpoint(path, make_checkpoint(m, {{"epoch", 3}}));
    auto ck = read_checkpoint(path);
    CHECK(ck.meta["epoch"] == 3);
    auto back = surrogate_from_checkpoint(ck);
    CHECK(back.config().evolution == EvolutionKind::ssm);
    for (std::size_t i = 0; i < m.named_parameters().size(); ++i) {
        CHECK(back.named_parameters()[i].first == m.named_parameters()[i].first);
        CHECK(back.named_parameters()[i].second.value() == m.named_parameters()[i].second.value());
    }
    CHECK(back.normalizer().field_std == m.normalizer().field_std);
    CHECK(back.normalizer().param_std == m.normalizer().param_std);

    write_checkpoint(path + ".2", make_checkpoint(back, {{"epoch", 3}}));
    std::ifstream a(path, std::ios::binary), b(path + ".2", std::ios::binary);
    CHECK(std::string(std::istreambuf_iterator<char>(a), {}) == std::string(std::istreambuf_iterator<char>(b), {}));

    {
        std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
        f.put('X');
    }
    CHECK_THROWS_AS(read_checkpoint(path), Error);
    fs::remove(path);
    fs::remove(path + ".2");
    CHECK_THROWS_AS(read_checkpoint(path), MissingArtifactError);
}

TEST_CASE("normalizer round trip")
{
    Normalizer n{{1.0, -2.0}, {0.5, 4.0}, {}, {}};
    Rng rng(19);
    Tensor f = random_tensor(rng, {3, 2, 4, 4});
    auto z = n.normalize_frames(f);
    CHECK(z[0] == doctest::Approx((f[0] - 1.0) / 0.5));
    CHECK(z[16] == doctest::Approx((f[16] + 2.0) / 4.0));
    CHECK(max_abs_diff(n.denormalize_frames(z), f) <= 1e-14);
}

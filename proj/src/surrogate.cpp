#include "lepp/surrogate.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "lepp/errors.hpp"

namespace lepp {

namespace {

constexpr std::size_t kKernel = 4;
constexpr std::size_t kStride = 2;
constexpr std::size_t kPad = 1;

Tensor uniform_init(const Rng& base, const std::string& name, Shape shape, double fan_in)
{
    Rng rng = base.split(name);
    const double bound = 1.0 / std::sqrt(fan_in);
    Tensor t(std::move(shape));
    for (auto& v : t.storage()) v = rng.uniform(-bound, bound);
    return t;
}

std::vector<double> to_vec(const nlohmann::json& j) { return j.get<std::vector<double>>(); }

}  // namespace

EvolutionKind parse_evolution_kind(std::string_view name)
{
    if (name == "ssm") return EvolutionKind::ssm;
    if (name == "mlp") return EvolutionKind::mlp;
    throw ConfigError("unknown evolution kind '" + std::string(name) + "' (ssm, mlp)");
}

std::string to_string(EvolutionKind kind) { return kind == EvolutionKind::ssm ? "ssm" : "mlp"; }

void ModelConfig::validate() const
{
    if (bundle < 1) throw ConfigError("bundle size S must be >= 1");
    if (channels < 1 || d_z < 1 || d_state < 1) throw ConfigError("model sizes must be positive");
    if (widths.empty()) throw ConfigError("encoder needs at least one conv level");
    const std::size_t f = std::size_t{1} << widths.size();
    if (height % f != 0 || width % f != 0 || height < f || width < f)
        throw ConfigError("grid " + std::to_string(height) + "x" + std::to_string(width) + " must be a multiple of " +
                          std::to_string(f) + " for " + std::to_string(widths.size()) + " stride-2 levels");
}

std::size_t ModelConfig::ssm_evolution_params() const
{
    const std::size_t d_in = d_z + d_zp(), di = inner();
    const std::size_t token = d_z * d_in + d_z, head = d_z * d_z + d_z;
    const std::size_t block = 2 * (di * d_z + di) + 3 * di * d_state + 2 * di + d_z * di + d_z;
    return token + block + head;
}

std::size_t ModelConfig::mlp_evolution_params(std::size_t h) const
{
    const std::size_t d_in = d_z + d_zp();
    return h * d_in + h + h * h + h + d_z * h + d_z;
}

std::size_t ModelConfig::hidden() const
{
    if (mlp_hidden) return mlp_hidden;
    const std::size_t target = ssm_evolution_params();
    std::size_t h = 1;
    while (mlp_evolution_params(h + 1) <= target) ++h;
    const auto gap = [&](std::size_t w) {
        const std::size_t n = mlp_evolution_params(w);
        return n > target ? n - target : target - n;
    };
    return gap(h + 1) < gap(h) ? h + 1 : h;
}

nlohmann::json to_json(const ModelConfig& c)
{
    return {{"channels", c.channels}, {"height", c.height},         {"width", c.width},
            {"d_p", c.d_p},           {"bundle", c.bundle},         {"d_z", c.d_z},
            {"evolution", to_string(c.evolution)}, {"d_state", c.d_state}, {"d_inner", c.d_inner},
            {"mlp_hidden", c.mlp_hidden}, {"widths", c.widths}};
}

ModelConfig model_config_from_json(const nlohmann::json& j)
{
    ModelConfig c;
    c.channels = j.at("channels");
    c.height = j.at("height");
    c.width = j.at("width");
    c.d_p = j.at("d_p");
    c.bundle = j.at("bundle");
    c.d_z = j.at("d_z");
    c.evolution = parse_evolution_kind(j.at("evolution").get<std::string>());
    c.d_state = j.at("d_state");
    c.d_inner = j.at("d_inner");
    c.mlp_hidden = j.at("mlp_hidden");
    c.widths = j.at("widths").get<std::vector<std::size_t>>();
    return c;
}

// ---------------------------------------------------------------------------

Normalizer Normalizer::identity(std::size_t channels, std::size_t d_p)
{
    return {std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0), std::vector<double>(d_p, 0.0),
            std::vector<double>(d_p, 1.0)};
}

Tensor Normalizer::normalize_frames(const Tensor& frames) const
{
    const std::size_t C = field_mean.size();
    const std::size_t nd = frames.ndim();
    if (nd < 3 || frames.dim(nd - 3) != C) throw ShapeError("normalize_frames: channel axis mismatch");
    const std::size_t plane = frames.dim(nd - 1) * frames.dim(nd - 2);
    Tensor out = frames;
    auto d = out.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
        const std::size_t c = (i / plane) % C;
        d[i] = (d[i] - field_mean[c]) / field_std[c];
    }
    return out;
}

void Normalizer::denormalize_frames_inplace(std::span<double> frames, std::size_t plane) const
{
    const std::size_t C = field_mean.size();
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const std::size_t c = (i / plane) % C;
        frames[i] = frames[i] * field_std[c] + field_mean[c];
    }
}

Tensor Normalizer::denormalize_frames(const Tensor& frames) const
{
    const std::size_t nd = frames.ndim();
    if (nd < 3 || frames.dim(nd - 3) != field_mean.size()) throw ShapeError("denormalize_frames: channel axis mismatch");
    Tensor out = frames;
    denormalize_frames_inplace(out.data(), frames.dim(nd - 1) * frames.dim(nd - 2));
    return out;
}

Tensor Normalizer::normalize_params(std::span<const double> p) const
{
    if (p.size() != param_mean.size()) throw ShapeError("normalize_params: expected " + std::to_string(param_mean.size()) +
                                                        " static parameters, got " + std::to_string(p.size()));
    Tensor out(Shape{p.size()});
    for (std::size_t i = 0; i < p.size(); ++i) out[i] = (p[i] - param_mean[i]) / param_std[i];
    return out;
}

// ---------------------------------------------------------------------------

Surrogate::Surrogate(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg))
{
    cfg_.validate();
    norm_ = Normalizer::identity(cfg_.channels, cfg_.d_p);
    const Rng rng(seed);
    const auto& W = cfg_.widths;
    const double k2 = static_cast<double>(kKernel * kKernel);

    std::size_t in_ch = cfg_.bundle * cfg_.channels;
    for (std::size_t i = 0; i < W.size(); ++i) {
        const std::string p = "enc.conv" + std::to_string(i);
        add_param(p + ".w", uniform_init(rng, p + ".w", {W[i], in_ch, kKernel, kKernel}, in_ch * k2));
        add_param(p + ".b", uniform_init(rng, p + ".b", {W[i]}, in_ch * k2));
        in_ch = W[i];
    }
    const std::size_t flat = W.back() * cfg_.latent_grid_h() * cfg_.latent_grid_w();
    add_param("enc.out.w", uniform_init(rng, "enc.out.w", {cfg_.d_z, flat}, flat));
    add_param("enc.out.b", uniform_init(rng, "enc.out.b", {cfg_.d_z}, flat));

    const double dp = static_cast<double>(std::max<std::size_t>(cfg_.d_p, 1));
    add_param("static.l0.w", uniform_init(rng, "static.l0.w", {cfg_.d_z, cfg_.d_p}, dp));
    add_param("static.l0.b", uniform_init(rng, "static.l0.b", {cfg_.d_z}, dp));
    add_param("static.l1.w", uniform_init(rng, "static.l1.w", {cfg_.d_zp(), cfg_.d_z}, cfg_.d_z));
    add_param("static.l1.b", uniform_init(rng, "static.l1.b", {cfg_.d_zp()}, cfg_.d_z));

    const std::size_t d_in = cfg_.d_z + cfg_.d_zp();
    if (cfg_.evolution == EvolutionKind::ssm) {
        add_param("evo.token.w", uniform_init(rng, "evo.token.w", {cfg_.d_z, d_in}, d_in));
        add_param("evo.token.b", uniform_init(rng, "evo.token.b", {cfg_.d_z}, d_in));
        auto blk = ssm::MambaBlockParams::init(cfg_.d_z, cfg_.inner(), cfg_.d_state, rng.split("evo.block"));
        for (auto& [name, v] : blk.named()) add_param("evo.block." + name, v.value());
        // zero head: the first evolution step is the identity
        add_param("evo.head.w", Tensor(Shape{cfg_.d_z, cfg_.d_z}));
        add_param("evo.head.b", Tensor(Shape{cfg_.d_z}));
    } else {
        const std::size_t h = cfg_.hidden();
        add_param("evo.mlp0.w", uniform_init(rng, "evo.mlp0.w", {h, d_in}, d_in));
        add_param("evo.mlp0.b", uniform_init(rng, "evo.mlp0.b", {h}, d_in));
        add_param("evo.mlp1.w", uniform_init(rng, "evo.mlp1.w", {h, h}, h));
        add_param("evo.mlp1.b", uniform_init(rng, "evo.mlp1.b", {h}, h));
        add_param("evo.mlp2.w", Tensor(Shape{cfg_.d_z, h}));
        add_param("evo.mlp2.b", Tensor(Shape{cfg_.d_z}));
    }

    add_param("dec.in.w", uniform_init(rng, "dec.in.w", {flat, cfg_.d_z}, cfg_.d_z));
    add_param("dec.in.b", uniform_init(rng, "dec.in.b", {flat}, cfg_.d_z));
    // Transposed conv fan-in: input channels times the taps that reach one
    // output pixel (k^2 / stride^2).
    for (std::size_t i = 0; i < W.size(); ++i) {
        const std::size_t from = W[W.size() - 1 - i];
        const std::size_t to = i + 1 < W.size() ? W[W.size() - 2 - i] : cfg_.bundle * cfg_.channels;
        const double fan = from * k2 / static_cast<double>(kStride * kStride);
        const std::string p = "dec.tconv" + std::to_string(i);
        add_param(p + ".w", uniform_init(rng, p + ".w", {from, to, kKernel, kKernel}, fan));
        add_param(p + ".b", uniform_init(rng, p + ".b", {to}, fan));
    }
}

void Surrogate::add_param(const std::string& name, Tensor value)
{
    params_.emplace_back(name, ad::parameter(std::move(value)));
}

std::vector<ad::Var> Surrogate::parameters() const
{
    std::vector<ad::Var> out;
    out.reserve(params_.size());
    for (const auto& [name, v] : params_) out.push_back(v);
    return out;
}

std::size_t Surrogate::parameter_count() const
{
    std::size_t n = 0;
    for (const auto& [name, v] : params_) n += v.size();
    return n;
}

std::size_t Surrogate::evolution_parameter_count() const
{
    std::size_t n = 0;
    for (const auto& [name, v] : params_)
        if (name.starts_with("evo.")) n += v.size();
    return n;
}

const ad::Var& Surrogate::param(const std::string& name) const
{
    for (const auto& [n, v] : params_)
        if (n == name) return v;
    throw Error("model has no parameter '" + name + "'");
}

ad::Var& Surrogate::param(const std::string& name)
{
    return const_cast<ad::Var&>(static_cast<const Surrogate&>(*this).param(name));
}

void Surrogate::load_parameters(const std::vector<std::pair<std::string, Tensor>>& values)
{
    for (auto& [name, v] : params_) {
        auto it = std::find_if(values.begin(), values.end(), [&](const auto& e) { return e.first == name; });
        if (it == values.end()) throw Error("checkpoint lacks parameter '" + name + "'");
        if (it->second.shape() != v.shape())
            throw ShapeError("parameter '" + name + "' has shape " + shape_str(it->second.shape()) + ", model expects " +
                             shape_str(v.shape()));
        v.node().value = it->second;
    }
}

ssm::MambaBlockParams Surrogate::block() const
{
    const std::string p = "evo.block.";
    ssm::MambaBlockParams b;
    b.in_x_w = param(p + "in_x.w");
    b.in_x_b = param(p + "in_x.b");
    b.in_g_w = param(p + "in_g.w");
    b.in_g_b = param(p + "in_g.b");
    b.a_log = param(p + "a_log");
    b.delta_log = param(p + "delta_log");
    b.B = param(p + "B");
    b.C = param(p + "C");
    b.D_skip = param(p + "D");
    b.out_w = param(p + "out.w");
    b.out_b = param(p + "out.b");
    return b;
}

ad::Var Surrogate::encode(const ad::Var& frames) const
{
    const Shape want{cfg_.bundle, cfg_.channels, cfg_.height, cfg_.width};
    if (frames.shape() != want)
        throw ShapeError("encode: expected " + shape_str(want) + ", got " + shape_str(frames.shape()));
    ++encoder_calls_;
    ad::Var x = ad::reshape(frames, {cfg_.bundle * cfg_.channels, cfg_.height, cfg_.width});
    for (std::size_t i = 0; i < cfg_.widths.size(); ++i) {
        const std::string p = "enc.conv" + std::to_string(i);
        x = ad::elu(ad::add_channel_bias(ad::conv2d(x, param(p + ".w"), kStride, kPad), param(p + ".b")));
    }
    x = ad::reshape(x, {x.size()});
    return ad::linear(x, param("enc.out.w"), param("enc.out.b"));
}

ad::Var Surrogate::encode_static(const ad::Var& p) const
{
    if (p.shape() != Shape{cfg_.d_p})
        throw ShapeError("encode_static: expected [" + std::to_string(cfg_.d_p) + "], got " + shape_str(p.shape()));
    ad::Var h = ad::elu(ad::linear(p, param("static.l0.w"), param("static.l0.b")));
    return ad::linear(h, param("static.l1.w"), param("static.l1.b"));
}

LatentCarry Surrogate::initial_carry(const ad::Var& z) const { return {z, std::nullopt}; }

LatentCarry Surrogate::evolve(const LatentCarry& s, const ad::Var& zp) const
{
    if (s.z.shape() != Shape{cfg_.d_z}) throw ShapeError("evolve: latent must be [" + std::to_string(cfg_.d_z) + "]");
    const ad::Var in = ad::concat({s.z, zp});
    if (cfg_.evolution == EvolutionKind::mlp) {
        if (s.h) throw Error("evolve: the mlp evolution carries no hidden state");
        ad::Var h = ad::elu(ad::linear(in, param("evo.mlp0.w"), param("evo.mlp0.b")));
        h = ad::elu(ad::linear(h, param("evo.mlp1.w"), param("evo.mlp1.b")));
        return {ad::add(s.z, ad::linear(h, param("evo.mlp2.w"), param("evo.mlp2.b"))), std::nullopt};
    }
    ad::Var token = ad::reshape(ad::linear(in, param("evo.token.w"), param("evo.token.b")), {1, cfg_.d_z});
    auto out = ssm::mamba_block_forward(token, block(), s.h, ssm::BlockMode::scan);
    ad::Var y = ad::reshape(out.y, {cfg_.d_z});
    return {ad::add(s.z, ad::linear(y, param("evo.head.w"), param("evo.head.b"))), out.h_last};
}

ad::Var Surrogate::evolve_sequence(const ad::Var& z_seq, const ad::Var& zp, ssm::BlockMode mode) const
{
    if (z_seq.value().ndim() != 2 || z_seq.shape()[1] != cfg_.d_z)
        throw ShapeError("evolve_sequence: expected [L, " + std::to_string(cfg_.d_z) + "]");
    const std::size_t L = z_seq.shape()[0];
    std::vector<ad::Var> rows;
    if (cfg_.evolution == EvolutionKind::mlp) {
        for (std::size_t t = 0; t < L; ++t) {
            auto next = evolve({ad::reshape(ad::slice(z_seq, t, 1), {cfg_.d_z}), std::nullopt}, zp);
            rows.push_back(ad::reshape(next.z, {1, cfg_.d_z}));
        }
        return ad::concat(rows);
    }
    std::vector<ad::Var> tokens;
    for (std::size_t t = 0; t < L; ++t) {
        ad::Var in = ad::concat({ad::reshape(ad::slice(z_seq, t, 1), {cfg_.d_z}), zp});
        tokens.push_back(ad::reshape(ad::linear(in, param("evo.token.w"), param("evo.token.b")), {1, cfg_.d_z}));
    }
    auto out = ssm::mamba_block_forward(ad::concat(tokens), block(), std::nullopt, mode);
    return ad::add(z_seq, ad::linear(out.y, param("evo.head.w"), param("evo.head.b")));
}

ad::Var Surrogate::decode(const ad::Var& z) const
{
    if (z.shape() != Shape{cfg_.d_z}) throw ShapeError("decode: latent must be [" + std::to_string(cfg_.d_z) + "]");
    const auto& W = cfg_.widths;
    ad::Var x = ad::linear(z, param("dec.in.w"), param("dec.in.b"));
    x = ad::elu(ad::reshape(x, {W.back(), cfg_.latent_grid_h(), cfg_.latent_grid_w()}));
    for (std::size_t i = 0; i < W.size(); ++i) {
        const std::string p = "dec.tconv" + std::to_string(i);
        x = ad::add_channel_bias(ad::transposed_conv2d(x, param(p + ".w"), kStride, kPad), param(p + ".b"));
        if (i + 1 < W.size()) x = ad::elu(x);
    }
    return ad::reshape(x, {cfg_.bundle, cfg_.channels, cfg_.height, cfg_.width});
}

Rollout Surrogate::continue_rollout(const LatentCarry& from, const ad::Var& zp, std::size_t m, bool decode_steps) const
{
    Rollout r;
    r.carry = from;
    for (std::size_t k = 0; k < m; ++k) {
        r.carry = evolve(r.carry, zp);
        r.latents.push_back(r.carry.z);
        if (decode_steps) r.frames.push_back(decode(r.carry.z));
    }
    return r;
}

Rollout Surrogate::rollout(const ad::Var& frames, const ad::Var& zp, std::size_t m, bool decode_steps) const
{
    const ad::Var z0 = encode(frames);
    Rollout rest = continue_rollout(initial_carry(z0), zp, m, decode_steps);
    Rollout r;
    r.latents.push_back(z0);
    if (decode_steps) r.frames.push_back(decode(z0));
    r.latents.insert(r.latents.end(), rest.latents.begin(), rest.latents.end());
    r.frames.insert(r.frames.end(), rest.frames.begin(), rest.frames.end());
    r.carry = rest.carry;
    return r;
}

// ---------------------------------------------------------------------------

const Tensor* Checkpoint::find(const std::string& name) const
{
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v)
{
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& os, std::span<const double> values)
{
    for (double v : values) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
        os.write(reinterpret_cast<const char*>(b), 8);
    }
}

class CheckpointReader {
public:
    CheckpointReader(std::istream& is, std::string path) : is_(is), path_(std::move(path)) {}

    void raw(char* dst, std::size_t n)
    {
        is_.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(is_.gcount()) != n) throw Error(path_ + ": truncated checkpoint");
    }

    std::uint32_t u32()
    {
        unsigned char b[4];
        raw(reinterpret_cast<char*>(b), 4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
        return v;
    }

    void f64(std::span<double> out)
    {
        std::vector<unsigned char> buf(out.size() * 8);
        raw(reinterpret_cast<char*>(buf.data()), buf.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            std::uint64_t bits = 0;
            for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(buf[i * 8 + k]) << (8 * k);
            out[i] = std::bit_cast<double>(bits);
        }
    }

private:
    std::istream& is_;
    std::string path_;
};

}  // namespace

void write_checkpoint(const std::string& path, const Checkpoint& ck)
{
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open " + path + " for writing");
    os.write("LEPP", 4);
    put_u32(os, kCheckpointVersion);
    const std::string meta = ck.meta.dump();
    put_u32(os, static_cast<std::uint32_t>(meta.size()));
    os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    put_u32(os, static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& [name, t] : ck.tensors) {
        put_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(os, static_cast<std::uint32_t>(t.ndim()));
        for (std::size_t d : t.shape()) put_u32(os, static_cast<std::uint32_t>(d));
        put_f64(os, t.data());
    }
    os.flush();
    if (!os) throw Error("write failed for " + path);
}

Checkpoint read_checkpoint(const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw MissingArtifactError("checkpoint not found: " + path);
    CheckpointReader r(is, path);
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, "LEPP", 4) != 0) throw Error(path + ": bad magic, not a checkpoint");
    if (const auto v = r.u32(); v != kCheckpointVersion)
        throw Error(path + ": checkpoint version " + std::to_string(v) + " not supported");
    Checkpoint ck;
    std::string meta(r.u32(), '\0');
    r.raw(meta.data(), meta.size());
    ck.meta = nlohmann::json::parse(meta);
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name(r.u32(), '\0');
        r.raw(name.data(), name.size());
        Shape shape(r.u32());
        for (auto& d : shape) d = r.u32();
        Tensor t(shape);
        r.f64(t.data());
        ck.tensors.emplace_back(std::move(name), std::move(t));
    }
    if (is.peek() != std::char_traits<char>::eof()) throw Error(path + ": trailing bytes after checkpoint");
    return ck;
}

Checkpoint make_checkpoint(const Surrogate& model, nlohmann::json extra)
{
    Checkpoint ck;
    ck.meta = std::move(extra);
    ck.meta["model"] = to_json(model.config());
    const auto& n = model.normalizer();
    ck.meta["normalizer"] = {{"field_mean", n.field_mean}, {"field_std", n.field_std},
                             {"param_mean", n.param_mean}, {"param_std", n.param_std}};
    for (const auto& [name, v] : model.named_parameters()) ck.tensors.emplace_back(name, v.value());
    return ck;
}

Surrogate surrogate_from_checkpoint(const Checkpoint& ck)
{
    if (!ck.meta.contains("model")) throw Error("checkpoint has no model config");
    Surrogate model(model_config_from_json(ck.meta.at("model")), 0);
    model.load_parameters(ck.tensors);
    const auto& n = ck.meta.at("normalizer");
    model.normalizer() = {to_vec(n.at("field_mean")), to_vec(n.at("field_std")), to_vec(n.at("param_mean")),
                          to_vec(n.at("param_std"))};
    return model;
}

}  // namespace lepp

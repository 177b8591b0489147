#include "lepp/inference.hpp"

#include <algorithm>
#include <cmath>

#include "lepp/errors.hpp"

namespace lepp {

namespace {

void elu_inplace(std::span<double> v)
{
    for (double& x : v) x = x > 0.0 ? x : std::expm1(x);
}

void add_bias(std::span<double> x, std::span<const double> b, std::size_t plane)
{
    for (std::size_t c = 0; c < b.size(); ++c)
        for (std::size_t i = 0; i < plane; ++i) x[c * plane + i] += b[c];
}

}  // namespace

InferenceSession::Dense InferenceSession::dense(const Surrogate& m, const std::string& prefix)
{
    const Tensor& w = m.param(prefix + ".w").value();
    return {w.dim(0), w.dim(1), w.storage(), m.param(prefix + ".b").value().storage()};
}

InferenceSession::InferenceSession(const Surrogate& model) : cfg_(model.config()), d_in_(cfg_.d_z + cfg_.d_zp())
{
    const auto& W = cfg_.widths;
    std::size_t c = cfg_.bundle * cfg_.channels, h = cfg_.height, w = cfg_.width;
    enc_act_.emplace_back(c * h * w);
    for (std::size_t i = 0; i < W.size(); ++i) {
        const std::string p = "enc.conv" + std::to_string(i);
        Conv conv{kernels::ConvGeom::make(c, h, w, W[i], 4, 4, 2, 1), model.param(p + ".w").value().storage(),
                  model.param(p + ".b").value().storage()};
        c = W[i];
        h = conv.g.h_out;
        w = conv.g.w_out;
        enc_.push_back(std::move(conv));
        enc_act_.emplace_back(c * h * w);
    }
    enc_out_ = dense(model, "enc.out");
    static0_ = dense(model, "static.l0");
    static1_ = dense(model, "static.l1");

    dec_in_ = dense(model, "dec.in");
    dec_act_.emplace_back(c * h * w);
    for (std::size_t i = 0; i < W.size(); ++i) {
        const std::string p = "dec.tconv" + std::to_string(i);
        const Tensor& wt = model.param(p + ".w").value();
        const std::size_t to = wt.dim(1);
        const std::size_t ho = 2 * h, wo = 2 * w;
        dec_.push_back({kernels::ConvGeom::make(to, ho, wo, c, 4, 4, 2, 1), wt.storage(),
                        model.param(p + ".b").value().storage()});
        c = to;
        h = ho;
        w = wo;
        dec_act_.emplace_back(c * h * w);
    }

    zp_.resize(cfg_.d_zp());
    static_hidden_.resize(cfg_.d_z);
    z_.resize(cfg_.d_z);
    if (cfg_.evolution == EvolutionKind::ssm) {
        token_ = dense(model, "evo.token");
        in_x_ = dense(model, "evo.block.in_x");
        in_g_ = dense(model, "evo.block.in_g");
        out_ = dense(model, "evo.block.out");
        head_ = dense(model, "evo.head");
        const std::size_t di = cfg_.inner(), n = cfg_.d_state;
        abar_.resize(di * n);
        bbar_.resize(di * n);
        const auto& al = model.param("evo.block.a_log").value().storage();
        const auto& dl = model.param("evo.block.delta_log").value().storage();
        std::vector<double> A(di * n), delta(di);
        for (std::size_t i = 0; i < A.size(); ++i) A[i] = -std::exp(al[i]);
        for (std::size_t i = 0; i < di; ++i) delta[i] = std::exp(dl[i]);
        ssm::discretize_zoh<double>(di, n, A, delta, model.param("evo.block.B").value().storage(), abar_, bbar_);
        C_ = model.param("evo.block.C").value().storage();
        D_ = model.param("evo.block.D").value().storage();
        first_bias_.resize(cfg_.d_z);
        token_buf_.resize(cfg_.d_z);
        xb_.resize(di);
        gb_.resize(di);
        y_.resize(di);
        blk_.resize(cfg_.d_z);
        delta_.resize(cfg_.d_z);
        h_.assign(di * n, 0.0);
    } else {
        mlp0_ = dense(model, "evo.mlp0");
        mlp1_ = dense(model, "evo.mlp1");
        mlp2_ = dense(model, "evo.mlp2");
        first_bias_.resize(cfg_.hidden());
        hid1_.resize(cfg_.hidden());
        hid2_.resize(cfg_.hidden());
        delta_.resize(cfg_.d_z);
    }
    std::vector<double> zero_p(cfg_.d_p, 0.0);
    set_static(zero_p);
}

void InferenceSession::set_static(std::span<const double> p)
{
    if (p.size() != cfg_.d_p) throw ShapeError("set_static: expected " + std::to_string(cfg_.d_p) + " parameters");
    kernels::affine(static0_.out, static0_.in, static0_.w, static0_.b, p, static_hidden_);
    elu_inplace(static_hidden_);
    kernels::affine(static1_.out, static1_.in, static1_.w, static1_.b, static_hidden_, zp_);
    // first evolution layer: bias + W[:, d_z:] z_p is constant over a rollout
    const Dense& first = cfg_.evolution == EvolutionKind::ssm ? token_ : mlp0_;
    for (std::size_t o = 0; o < first.out; ++o) {
        double acc = first.b[o];
        const double* row = first.w.data() + o * d_in_ + cfg_.d_z;
        for (std::size_t j = 0; j < zp_.size(); ++j) acc += row[j] * zp_[j];
        first_bias_[o] = acc;
    }
}

void InferenceSession::reset_hidden() { std::fill(h_.begin(), h_.end(), 0.0); }

void InferenceSession::encode(std::span<const double> frames)
{
    if (frames.size() != frame_size()) throw ShapeError("encode: wrong bundle size");
    std::copy(frames.begin(), frames.end(), enc_act_[0].begin());
    for (std::size_t i = 0; i < enc_.size(); ++i) {
        auto& out = enc_act_[i + 1];
        std::fill(out.begin(), out.end(), 0.0);
        kernels::conv2d_forward(enc_[i].g, enc_act_[i], enc_[i].w, out);
        add_bias(out, enc_[i].b, enc_[i].g.h_out * enc_[i].g.w_out);
        elu_inplace(out);
    }
    kernels::affine(enc_out_.out, enc_out_.in, enc_out_.w, enc_out_.b, enc_act_.back(), z_);
    reset_hidden();
}

void InferenceSession::step()
{
    const std::size_t dz = cfg_.d_z;
    auto first_layer = [&](std::span<double> out) {
        for (std::size_t o = 0; o < out.size(); ++o) {
            const double* row = (cfg_.evolution == EvolutionKind::ssm ? token_.w : mlp0_.w).data() + o * d_in_;
            double acc = first_bias_[o];
            for (std::size_t j = 0; j < dz; ++j) acc += row[j] * z_[j];
            out[o] = acc;
        }
    };
    if (cfg_.evolution == EvolutionKind::mlp) {
        first_layer(hid1_);
        elu_inplace(hid1_);
        kernels::affine(mlp1_.out, mlp1_.in, mlp1_.w, mlp1_.b, hid1_, hid2_);
        elu_inplace(hid2_);
        kernels::affine(mlp2_.out, mlp2_.in, mlp2_.w, mlp2_.b, hid2_, delta_);
        for (std::size_t i = 0; i < dz; ++i) z_[i] += delta_[i];
        return;
    }
    const std::size_t di = cfg_.inner();
    first_layer(token_buf_);
    kernels::affine(di, dz, in_x_.w, in_x_.b, token_buf_, xb_);
    kernels::affine(di, dz, in_g_.w, in_g_.b, token_buf_, gb_);
    ssm::recurrent_scan<double>(1, di, cfg_.d_state, abar_, bbar_, C_, D_, xb_, h_, y_);
    for (std::size_t i = 0; i < di; ++i) y_[i] *= gb_[i] / (1.0 + std::exp(-gb_[i]));
    kernels::affine(dz, di, out_.w, out_.b, y_, blk_);
    for (std::size_t i = 0; i < dz; ++i) blk_[i] += token_buf_[i];
    kernels::affine(dz, dz, head_.w, head_.b, blk_, delta_);
    for (std::size_t i = 0; i < dz; ++i) z_[i] += delta_[i];
}

void InferenceSession::decode(std::span<double> out)
{
    if (out.size() != frame_size()) throw ShapeError("decode: wrong output size");
    kernels::affine(dec_in_.out, dec_in_.in, dec_in_.w, dec_in_.b, z_, dec_act_[0]);
    elu_inplace(dec_act_[0]);
    for (std::size_t i = 0; i < dec_.size(); ++i) {
        auto& next = dec_act_[i + 1];
        std::fill(next.begin(), next.end(), 0.0);
        kernels::conv2d_adjoint(dec_[i].g, dec_act_[i], dec_[i].w, next);
        add_bias(next, dec_[i].b, dec_[i].g.h * dec_[i].g.w);
        if (i + 1 < dec_.size()) elu_inplace(next);
    }
    std::copy(dec_act_.back().begin(), dec_act_.back().end(), out.begin());
}

}  // namespace lepp

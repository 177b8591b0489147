#include "lepp/ssm.hpp"

#include <cmath>
#include <complex>
#include <vector>

#include "lepp/fft.hpp"

namespace lepp::ssm {

namespace {

// d/dx of (e^x - 1)/x
double dphi1(double x)
{
    if (std::abs(x) < 1e-2) return 0.5 + x / 3.0 + x * x / 8.0 + x * x * x / 30.0;
    return (x * std::exp(x) - std::expm1(x)) / (x * x);
}

void require_shape(const char* what, const Shape& got, const Shape& want)
{
    if (got != want) throw ShapeError(std::string(what) + ": expected " + shape_str(want) + ", got " + shape_str(got));
}

Tensor uniform_tensor(Rng rng, Shape shape, double bound)
{
    Tensor t(std::move(shape));
    for (auto& v : t.storage()) v = rng.uniform(-bound, bound);
    return t;
}

}  // namespace

void causal_conv_fft(std::size_t L, std::size_t d, std::span<const double> x, std::span<const double> K,
                     std::span<const double> D, std::span<double> y)
{
    const std::size_t n = fft::next_pow2(2 * L);
    fft::RealFft1d plan(n);
    std::vector<double> buf(n);
    std::vector<std::complex<double>> xs(plan.bins()), ks(plan.bins());
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t c = 0; c < d; ++c) {
        std::fill(buf.begin(), buf.end(), 0.0);
        for (std::size_t t = 0; t < L; ++t) buf[t] = x[t * d + c];
        plan.forward(buf, xs);
        std::fill(buf.begin(), buf.end(), 0.0);
        for (std::size_t t = 0; t < L; ++t) buf[t] = K[t * d + c];
        plan.forward(buf, ks);
        for (std::size_t b = 0; b < xs.size(); ++b) xs[b] *= ks[b];
        plan.inverse(xs, buf);
        for (std::size_t t = 0; t < L; ++t) y[t * d + c] = buf[t] * inv_n + D[c] * x[t * d + c];
    }
}

Tensor SSMLayerParams::A() const
{
    Tensor a(a_log.shape());
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = -std::exp(a_log[i]);
    return a;
}

Tensor SSMLayerParams::delta() const
{
    Tensor dt(delta_log.shape());
    for (std::size_t i = 0; i < dt.size(); ++i) dt[i] = std::exp(delta_log[i]);
    return dt;
}

SSMLayerParams SSMLayerParams::init(std::size_t d_model, std::size_t d_state, Rng& rng)
{
    SSMLayerParams p;
    p.d_model = d_model;
    p.d_state = d_state;
    p.a_log = Tensor(Shape{d_model, d_state});
    for (std::size_t c = 0; c < d_model; ++c)
        for (std::size_t s = 0; s < d_state; ++s) p.a_log[c * d_state + s] = std::log(1.0 + static_cast<double>(s));
    p.B = Tensor(Shape{d_model, d_state}, 1.0);
    p.C = uniform_tensor(rng.split("C"), {d_model, d_state}, 1.0 / std::sqrt(static_cast<double>(d_state)));
    p.delta_log = Tensor(Shape{d_model});
    Rng dr = rng.split("delta");
    for (auto& v : p.delta_log.storage()) v = dr.uniform(std::log(1e-3), std::log(1e-1));
    p.D_skip = Tensor(Shape{d_model}, 1.0);
    return p;
}

SSMDiscreteParams discretize(const Tensor& A, const Tensor& delta, const Tensor& B)
{
    if (A.ndim() != 2) throw ShapeError("discretize: A must be [d_model, d_state]");
    const std::size_t d = A.dim(0), n = A.dim(1);
    require_shape("discretize B", B.shape(), A.shape());
    require_shape("discretize delta", delta.shape(), Shape{d});
    SSMDiscreteParams out{Tensor(A.shape()), Tensor(A.shape())};
    discretize_zoh<double>(d, n, A.data(), delta.data(), B.data(), out.Abar.data(), out.Bbar.data());
    return out;
}

SSMDiscreteParams discretize(const SSMLayerParams& p) { return discretize(p.A(), p.delta(), p.B); }

std::pair<Tensor, SSMHiddenState> recurrent_scan(const SSMDiscreteParams& dp, const Tensor& C, const Tensor& D_skip,
                                                 const Tensor& x, const SSMHiddenState& h0)
{
    const std::size_t d = dp.Abar.dim(0), n = dp.Abar.dim(1);
    if (x.ndim() != 2 || x.dim(1) != d) throw ShapeError("recurrent_scan: x must be [L, " + std::to_string(d) + "]");
    require_shape("recurrent_scan C", C.shape(), dp.Abar.shape());
    require_shape("recurrent_scan D", D_skip.shape(), Shape{d});
    require_shape("recurrent_scan h0", h0.h.shape(), dp.Abar.shape());
    const std::size_t L = x.dim(0);
    SSMHiddenState h = h0;
    Tensor y(Shape{L, d});
    recurrent_scan<double>(L, d, n, dp.Abar.data(), dp.Bbar.data(), C.data(), D_skip.data(), x.data(), h.h.data(),
                           y.data());
    return {std::move(y), std::move(h)};
}

Tensor build_kernel(const SSMDiscreteParams& dp, const Tensor& C, std::size_t L)
{
    if (L == 0) throw ShapeError("build_kernel: length must be >= 1");
    require_shape("build_kernel C", C.shape(), dp.Abar.shape());
    const std::size_t d = dp.Abar.dim(0), n = dp.Abar.dim(1);
    Tensor K(Shape{L, d});
    build_kernel<double>(L, d, n, dp.Abar.data(), dp.Bbar.data(), C.data(), K.data());
    return K;
}

Tensor causal_conv(const Tensor& x, const Tensor& K, const Tensor& D_skip, ConvPath path)
{
    if (x.ndim() != 2) throw ShapeError("causal_conv: x must be [L, d]");
    if (K.shape() != x.shape())
        throw ShapeError("causal_conv: kernel " + shape_str(K.shape()) + " does not match sequence " +
                         shape_str(x.shape()));
    const std::size_t L = x.dim(0), d = x.dim(1);
    require_shape("causal_conv D", D_skip.shape(), Shape{d});
    Tensor y(x.shape());
    const bool use_fft = path == ConvPath::fft || (path == ConvPath::automatic && L >= 64);
    if (use_fft)
        causal_conv_fft(L, d, x.data(), K.data(), D_skip.data(), y.data());
    else
        causal_conv_direct<double>(L, d, x.data(), K.data(), D_skip.data(), y.data());
    return y;
}

// ---------------------------------------------------------------------------

ad::Var discretize_abar(const ad::Var& a_log, const ad::Var& delta_log)
{
    const std::size_t d = a_log.shape().at(0), n = a_log.shape().at(1);
    require_shape("discretize_abar delta_log", delta_log.shape(), Shape{d});
    Tensor x(Shape{d, n}), abar(Shape{d, n});
    for (std::size_t c = 0; c < d; ++c) {
        const double dt = std::exp(delta_log.value()[c]);
        for (std::size_t s = 0; s < n; ++s) {
            const std::size_t i = c * n + s;
            x[i] = -dt * std::exp(a_log.value()[i]);
            abar[i] = std::exp(x[i]);
        }
    }
    return ad::make_op("ssm_abar", std::move(abar), {a_log, delta_log}, [x = std::move(x), d, n](ad::Node& self) {
        // dĀ/da_log = dĀ/dδ_log = Ā x
        const Tensor& g = self.grad;
        const bool ga_on = self.parents[0]->requires_grad, gd_on = self.parents[1]->requires_grad;
        for (std::size_t c = 0; c < d; ++c) {
            double acc = 0.0;
            for (std::size_t s = 0; s < n; ++s) {
                const std::size_t i = c * n + s;
                const double v = g[i] * self.value[i] * x[i];
                if (ga_on) self.parents[0]->grad_buffer()[i] += v;
                acc += v;
            }
            if (gd_on) self.parents[1]->grad_buffer()[c] += acc;
        }
    });
}

ad::Var discretize_bbar(const ad::Var& a_log, const ad::Var& delta_log, const ad::Var& B)
{
    const std::size_t d = a_log.shape().at(0), n = a_log.shape().at(1);
    require_shape("discretize_bbar delta_log", delta_log.shape(), Shape{d});
    require_shape("discretize_bbar B", B.shape(), a_log.shape());
    Tensor x(Shape{d, n}), bbar(Shape{d, n});
    for (std::size_t c = 0; c < d; ++c) {
        const double dt = std::exp(delta_log.value()[c]);
        for (std::size_t s = 0; s < n; ++s) {
            const std::size_t i = c * n + s;
            x[i] = -dt * std::exp(a_log.value()[i]);
            bbar[i] = dt * phi1(x[i]) * B.value()[i];
        }
    }
    return ad::make_op(
        "ssm_bbar", std::move(bbar), {a_log, delta_log, B}, [x = std::move(x), d, n](ad::Node& self) {
            const Tensor& g = self.grad;
            const Tensor& Bv = self.parents[2]->value;
            const Tensor& dl = self.parents[1]->value;
            for (std::size_t c = 0; c < d; ++c) {
                const double dt = std::exp(dl[c]);
                double acc = 0.0;
                for (std::size_t s = 0; s < n; ++s) {
                    const std::size_t i = c * n + s;
                    const double ph = phi1(x[i]), dph = dphi1(x[i]);
                    if (self.parents[0]->requires_grad)
                        self.parents[0]->grad_buffer()[i] += g[i] * dt * Bv[i] * dph * x[i];
                    if (self.parents[2]->requires_grad) self.parents[2]->grad_buffer()[i] += g[i] * dt * ph;
                    acc += g[i] * dt * Bv[i] * (ph + x[i] * dph);
                }
                if (self.parents[1]->requires_grad) self.parents[1]->grad_buffer()[c] += acc;
            }
        });
}

ad::Var scan_states(const ad::Var& x, const ad::Var& Abar, const ad::Var& Bbar, const ad::Var& h0)
{
    const std::size_t d = Abar.shape().at(0), n = Abar.shape().at(1);
    if (x.value().ndim() != 2 || x.shape()[1] != d)
        throw ShapeError("scan_states: x must be [L, " + std::to_string(d) + "], got " + shape_str(x.shape()));
    require_shape("scan_states Bbar", Bbar.shape(), Abar.shape());
    require_shape("scan_states h0", h0.shape(), Abar.shape());
    const std::size_t L = x.shape()[0];
    Tensor H(Shape{L, d, n});
    const Tensor& a = Abar.value();
    const Tensor& b = Bbar.value();
    for (std::size_t t = 0; t < L; ++t) {
        const double* prev = t == 0 ? h0.value().data().data() : H.data().data() + (t - 1) * d * n;
        double* cur = H.data().data() + t * d * n;
        for (std::size_t c = 0; c < d; ++c) {
            const double xv = x.value()[t * d + c];
            for (std::size_t s = 0; s < n; ++s) {
                const std::size_t i = c * n + s;
                cur[i] = a[i] * prev[i] + b[i] * xv;
            }
        }
    }
    return ad::make_op("ssm_scan", std::move(H), {x, Abar, Bbar, h0}, [L, d, n](ad::Node& self) {
        const Tensor& G = self.grad;
        const Tensor& H = self.value;
        const Tensor& xv = self.parents[0]->value;
        const Tensor& a = self.parents[1]->value;
        const Tensor& b = self.parents[2]->value;
        const Tensor& h0v = self.parents[3]->value;
        std::vector<double> lam(d * n, 0.0);  // dL/dH_t including future contributions
        std::vector<double> ga(d * n, 0.0), gb(d * n, 0.0);
        Tensor* gx = self.parents[0]->requires_grad ? &self.parents[0]->grad_buffer() : nullptr;
        for (std::size_t t = L; t-- > 0;) {
            const double* prev = t == 0 ? h0v.data().data() : H.data().data() + (t - 1) * d * n;
            for (std::size_t c = 0; c < d; ++c) {
                double accx = 0.0;
                const double xt = xv[t * d + c];
                for (std::size_t s = 0; s < n; ++s) {
                    const std::size_t i = c * n + s;
                    lam[i] += G[t * d * n + i];
                    ga[i] += lam[i] * prev[i];
                    gb[i] += lam[i] * xt;
                    accx += lam[i] * b[i];
                }
                if (gx) (*gx)[t * d + c] += accx;
            }
            for (std::size_t i = 0; i < d * n; ++i) lam[i] *= a[i];
        }
        // lam now holds Ā ⊙ λ_0 = dL/dh0
        if (self.parents[1]->requires_grad) {
            auto& g = self.parents[1]->grad_buffer();
            for (std::size_t i = 0; i < d * n; ++i) g[i] += ga[i];
        }
        if (self.parents[2]->requires_grad) {
            auto& g = self.parents[2]->grad_buffer();
            for (std::size_t i = 0; i < d * n; ++i) g[i] += gb[i];
        }
        if (self.parents[3]->requires_grad) {
            auto& g = self.parents[3]->grad_buffer();
            for (std::size_t i = 0; i < d * n; ++i) g[i] += lam[i];
        }
    });
}

ad::Var readout(const ad::Var& H, const ad::Var& C, const ad::Var& x, const ad::Var& D)
{
    if (H.value().ndim() != 3) throw ShapeError("readout: H must be [L, d, n]");
    const std::size_t L = H.shape()[0], d = H.shape()[1], n = H.shape()[2];
    require_shape("readout C", C.shape(), Shape{d, n});
    require_shape("readout x", x.shape(), Shape{L, d});
    require_shape("readout D", D.shape(), Shape{d});
    Tensor y(Shape{L, d});
    for (std::size_t t = 0; t < L; ++t)
        for (std::size_t c = 0; c < d; ++c) {
            double acc = D.value()[c] * x.value()[t * d + c];
            for (std::size_t s = 0; s < n; ++s) acc += C.value()[c * n + s] * H.value()[(t * d + c) * n + s];
            y[t * d + c] = acc;
        }
    return ad::make_op("ssm_readout", std::move(y), {H, C, x, D}, [L, d, n](ad::Node& self) {
        const Tensor& g = self.grad;
        const Tensor& Hv = self.parents[0]->value;
        const Tensor& Cv = self.parents[1]->value;
        const Tensor& xv = self.parents[2]->value;
        const Tensor& Dv = self.parents[3]->value;
        const bool gH = self.parents[0]->requires_grad, gC = self.parents[1]->requires_grad,
                   gX = self.parents[2]->requires_grad, gD = self.parents[3]->requires_grad;
        for (std::size_t t = 0; t < L; ++t)
            for (std::size_t c = 0; c < d; ++c) {
                const double gy = g[t * d + c];
                for (std::size_t s = 0; s < n; ++s) {
                    const std::size_t hi = (t * d + c) * n + s;
                    if (gH) self.parents[0]->grad_buffer()[hi] += gy * Cv[c * n + s];
                    if (gC) self.parents[1]->grad_buffer()[c * n + s] += gy * Hv[hi];
                }
                if (gX) self.parents[2]->grad_buffer()[t * d + c] += gy * Dv[c];
                if (gD) self.parents[3]->grad_buffer()[c] += gy * xv[t * d + c];
            }
    });
}

ad::Var last_state(const ad::Var& H)
{
    if (H.value().ndim() != 3) throw ShapeError("last_state: H must be [L, d, n]");
    return ad::reshape(ad::slice(H, H.shape()[0] - 1, 1), {H.shape()[1], H.shape()[2]});
}

ad::Var conv_output(const ad::Var& x, const ad::Var& Abar, const ad::Var& Bbar, const ad::Var& C, const ad::Var& D)
{
    if (x.value().ndim() != 2) throw ShapeError("conv_output: x must be [L, d]");
    const std::size_t L = x.shape()[0], d = x.shape()[1], n = Abar.shape().at(1);
    require_shape("conv_output Abar", Abar.shape(), Shape{d, n});
    SSMDiscreteParams dp{Abar.value(), Bbar.value()};
    Tensor K = build_kernel(dp, C.value(), L);
    Tensor y = causal_conv(x.value(), K, D.value());
    return ad::make_op(
        "ssm_conv", std::move(y), {x, Abar, Bbar, C, D}, [K = std::move(K), L, d, n](ad::Node& self) {
            const Tensor& g = self.grad;
            const Tensor& xv = self.parents[0]->value;
            const Tensor& a = self.parents[1]->value;
            const Tensor& b = self.parents[2]->value;
            const Tensor& Cv = self.parents[3]->value;
            const Tensor& Dv = self.parents[4]->value;
            // dx_u = Σ_{t>=u} g_t K[t-u] + g_u D ;  dK[j] = Σ_{t>=j} g_t x_{t-j}
            Tensor gK(Shape{L, d});
            for (std::size_t t = 0; t < L; ++t)
                for (std::size_t j = 0; j <= t; ++j)
                    for (std::size_t c = 0; c < d; ++c) gK[j * d + c] += g[t * d + c] * xv[(t - j) * d + c];
            if (self.parents[0]->requires_grad) {
                auto& gx = self.parents[0]->grad_buffer();
                for (std::size_t u = 0; u < L; ++u)
                    for (std::size_t c = 0; c < d; ++c) {
                        double acc = g[u * d + c] * Dv[c];
                        for (std::size_t t = u; t < L; ++t) acc += g[t * d + c] * K[(t - u) * d + c];
                        gx[u * d + c] += acc;
                    }
            }
            if (self.parents[4]->requires_grad) {
                auto& gD = self.parents[4]->grad_buffer();
                for (std::size_t t = 0; t < L; ++t)
                    for (std::size_t c = 0; c < d; ++c) gD[c] += g[t * d + c] * xv[t * d + c];
            }
            // K[k][c] = Σ_s C Ā^k B̄
            for (std::size_t c = 0; c < d; ++c)
                for (std::size_t s = 0; s < n; ++s) {
                    const std::size_t i = c * n + s;
                    double pw = 1.0, sum_pw = 0.0, sum_dpw = 0.0;  // Ā^k ; Σ gK Ā^k ; Σ gK k Ā^(k-1)
                    double pw_prev = 0.0;
                    for (std::size_t k = 0; k < L; ++k) {
                        const double gk = gK[k * d + c];
                        sum_pw += gk * pw;
                        if (k > 0) sum_dpw += gk * static_cast<double>(k) * pw_prev;
                        pw_prev = pw;
                        pw *= a[i];
                    }
                    if (self.parents[1]->requires_grad) self.parents[1]->grad_buffer()[i] += Cv[i] * b[i] * sum_dpw;
                    if (self.parents[2]->requires_grad) self.parents[2]->grad_buffer()[i] += Cv[i] * sum_pw;
                    if (self.parents[3]->requires_grad) self.parents[3]->grad_buffer()[i] += b[i] * sum_pw;
                }
        });
}

// ---------------------------------------------------------------------------

MambaBlockParams MambaBlockParams::init(std::size_t d_model, std::size_t d_inner, std::size_t d_state, const Rng& rng,
                                        bool zero_output)
{
    const double bm = 1.0 / std::sqrt(static_cast<double>(d_model));
    const double bi = 1.0 / std::sqrt(static_cast<double>(d_inner));
    MambaBlockParams p;
    p.in_x_w = ad::parameter(uniform_tensor(rng.split("in_x.w"), {d_inner, d_model}, bm));
    p.in_x_b = ad::parameter(uniform_tensor(rng.split("in_x.b"), {d_inner}, bm));
    p.in_g_w = ad::parameter(uniform_tensor(rng.split("in_g.w"), {d_inner, d_model}, bm));
    p.in_g_b = ad::parameter(uniform_tensor(rng.split("in_g.b"), {d_inner}, bm));
    Rng ssm_rng = rng.split("ssm");
    auto layer = SSMLayerParams::init(d_inner, d_state, ssm_rng);
    p.a_log = ad::parameter(layer.a_log);
    p.delta_log = ad::parameter(layer.delta_log);
    p.B = ad::parameter(layer.B);
    p.C = ad::parameter(layer.C);
    p.D_skip = ad::parameter(layer.D_skip);
    p.out_w = ad::parameter(zero_output ? Tensor(Shape{d_model, d_inner})
                                        : uniform_tensor(rng.split("out.w"), {d_model, d_inner}, bi));
    p.out_b = ad::parameter(zero_output ? Tensor(Shape{d_model}) : uniform_tensor(rng.split("out.b"), {d_model}, bi));
    return p;
}

std::vector<std::pair<std::string, ad::Var>> MambaBlockParams::named() const
{
    return {{"in_x.w", in_x_w}, {"in_x.b", in_x_b},       {"in_g.w", in_g_w}, {"in_g.b", in_g_b},
            {"a_log", a_log},   {"delta_log", delta_log}, {"B", B},           {"C", C},
            {"D", D_skip},      {"out.w", out_w},         {"out.b", out_b}};
}

BlockOutput mamba_block_forward(const ad::Var& z_seq, const MambaBlockParams& p, const std::optional<ad::Var>& h0,
                                BlockMode mode)
{
    if (z_seq.value().ndim() != 2 || z_seq.shape()[1] != p.d_model())
        throw ShapeError("mamba_block_forward: expected [L, " + std::to_string(p.d_model()) + "], got " +
                         shape_str(z_seq.shape()));
    const std::size_t di = p.d_inner(), n = p.d_state();
    ad::Var xb = ad::linear(z_seq, p.in_x_w, p.in_x_b);
    ad::Var gb = ad::linear(z_seq, p.in_g_w, p.in_g_b);
    ad::Var abar = discretize_abar(p.a_log, p.delta_log);
    ad::Var bbar = discretize_bbar(p.a_log, p.delta_log, p.B);

    ad::Var init = h0 ? *h0 : ad::constant(Tensor(Shape{di, n}));
    if (h0) require_shape("mamba_block_forward h0", h0->shape(), Shape{di, n});
    ad::Var H;
    ad::Var y;
    if (mode == BlockMode::conv) {
        if (h0) {
            for (double v : h0->value().storage())
                if (v != 0.0) throw Error("mamba_block_forward: conv mode requires a zero initial state");
        }
        y = conv_output(xb, abar, bbar, p.C, p.D_skip);
        H = scan_states(xb, abar, bbar, init);
    } else {
        H = scan_states(xb, abar, bbar, init);
        y = readout(H, p.C, xb, p.D_skip);
    }
    ad::Var gated = ad::mul(y, ad::silu(gb));
    ad::Var out = ad::add(z_seq, ad::linear(gated, p.out_w, p.out_b));
    return {out, last_state(H)};
}

}  // namespace lepp::ssm

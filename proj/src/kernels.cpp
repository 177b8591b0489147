#include "lepp/kernels.hpp"

#include <algorithm>
#include <string>

#include "lepp/errors.hpp"

namespace lepp::kernels {

namespace {

// Output indices i with 0 <= i*stride - pad + p < n, as the half-open range [lo, hi).
struct Range {
    std::size_t lo, hi;
};

Range valid_range(std::size_t p, std::size_t pad, std::size_t stride, std::size_t n, std::size_t n_out)
{
    // i*stride >= pad - p
    std::size_t lo = 0;
    if (pad > p) lo = (pad - p + stride - 1) / stride;
    // i*stride <= n - 1 + pad - p
    if (n - 1 + pad < p) return {0, 0};
    std::size_t hi = (n - 1 + pad - p) / stride + 1;
    hi = std::min(hi, n_out);
    if (lo > hi) lo = hi;
    return {lo, hi};
}

}  // namespace

ConvGeom ConvGeom::make(std::size_t c_in, std::size_t h, std::size_t w, std::size_t c_out, std::size_t kh,
                        std::size_t kw, std::size_t stride, std::size_t pad)
{
    if (stride == 0) throw ShapeError("conv2d: stride must be >= 1");
    if (kh > h + 2 * pad || kw > w + 2 * pad)
        throw ShapeError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                         " larger than padded input " + std::to_string(h + 2 * pad) + "x" +
                         std::to_string(w + 2 * pad));
    ConvGeom g{c_in, h, w, c_out, kh, kw, stride, pad, 0, 0};
    g.h_out = (h + 2 * pad - kh) / stride + 1;
    g.w_out = (w + 2 * pad - kw) / stride + 1;
    return g;
}

void conv2d_forward(const ConvGeom& g, std::span<const double> x, std::span<const double> w,
                    std::span<double> out)
{
    const std::size_t s = g.stride;
    for (std::size_t o = 0; o < g.c_out; ++o) {
        double* out_o = out.data() + o * g.h_out * g.w_out;
        for (std::size_t c = 0; c < g.c_in; ++c) {
            const double* x_c = x.data() + c * g.h * g.w;
            const double* w_oc = w.data() + (o * g.c_in + c) * g.kh * g.kw;
            for (std::size_t p = 0; p < g.kh; ++p) {
                const Range ri = valid_range(p, g.pad, s, g.h, g.h_out);
                for (std::size_t q = 0; q < g.kw; ++q) {
                    const Range rj = valid_range(q, g.pad, s, g.w, g.w_out);
                    const double wv = w_oc[p * g.kw + q];
                    for (std::size_t i = ri.lo; i < ri.hi; ++i) {
                        const double* xrow = x_c + (i * s + p - g.pad) * g.w;
                        double* orow = out_o + i * g.w_out;
                        for (std::size_t j = rj.lo; j < rj.hi; ++j) orow[j] += wv * xrow[j * s + q - g.pad];
                    }
                }
            }
        }
    }
}

void conv2d_adjoint(const ConvGeom& g, std::span<const double> gy, std::span<const double> w,
                    std::span<double> gx)
{
    const std::size_t s = g.stride;
    for (std::size_t o = 0; o < g.c_out; ++o) {
        const double* gy_o = gy.data() + o * g.h_out * g.w_out;
        for (std::size_t c = 0; c < g.c_in; ++c) {
            double* gx_c = gx.data() + c * g.h * g.w;
            const double* w_oc = w.data() + (o * g.c_in + c) * g.kh * g.kw;
            for (std::size_t p = 0; p < g.kh; ++p) {
                const Range ri = valid_range(p, g.pad, s, g.h, g.h_out);
                for (std::size_t q = 0; q < g.kw; ++q) {
                    const Range rj = valid_range(q, g.pad, s, g.w, g.w_out);
                    const double wv = w_oc[p * g.kw + q];
                    for (std::size_t i = ri.lo; i < ri.hi; ++i) {
                        double* xrow = gx_c + (i * s + p - g.pad) * g.w;
                        const double* grow = gy_o + i * g.w_out;
                        for (std::size_t j = rj.lo; j < rj.hi; ++j) xrow[j * s + q - g.pad] += wv * grow[j];
                    }
                }
            }
        }
    }
}

void conv2d_weight_grad(const ConvGeom& g, std::span<const double> x, std::span<const double> gy,
                        std::span<double> gw)
{
    const std::size_t s = g.stride;
    for (std::size_t o = 0; o < g.c_out; ++o) {
        const double* gy_o = gy.data() + o * g.h_out * g.w_out;
        for (std::size_t c = 0; c < g.c_in; ++c) {
            const double* x_c = x.data() + c * g.h * g.w;
            double* gw_oc = gw.data() + (o * g.c_in + c) * g.kh * g.kw;
            for (std::size_t p = 0; p < g.kh; ++p) {
                const Range ri = valid_range(p, g.pad, s, g.h, g.h_out);
                for (std::size_t q = 0; q < g.kw; ++q) {
                    const Range rj = valid_range(q, g.pad, s, g.w, g.w_out);
                    double acc = 0.0;
                    for (std::size_t i = ri.lo; i < ri.hi; ++i) {
                        const double* xrow = x_c + (i * s + p - g.pad) * g.w;
                        const double* grow = gy_o + i * g.w_out;
                        for (std::size_t j = rj.lo; j < rj.hi; ++j) acc += grow[j] * xrow[j * s + q - g.pad];
                    }
                    gw_oc[p * g.kw + q] += acc;
                }
            }
        }
    }
}

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a, std::span<const double> b,
             std::span<double> c)
{
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            const double* brow = b.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_nt(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a, std::span<const double> b,
             std::span<double> c)
{
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.data() + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b.data() + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            c[i * n + j] += acc;
        }
    }
}

void gemm_tn(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a, std::span<const double> b,
             std::span<double> c)
{
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a.data() + p * m;
        const double* brow = b.data() + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            double* crow = c.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void affine(std::size_t out, std::size_t in, std::span<const double> w, std::span<const double> b,
            std::span<const double> x, std::span<double> y)
{
    for (std::size_t i = 0; i < out; ++i) {
        const double* wrow = w.data() + i * in;
        double acc = b.empty() ? 0.0 : b[i];
        for (std::size_t j = 0; j < in; ++j) acc += wrow[j] * x[j];
        y[i] = acc;
    }
}

}  // namespace lepp::kernels

#pragma once

// Raw compute kernels shared by the autodiff graph and the allocation-free
// inference path. All arrays are C-order; outputs are accumulated into (+=)
// unless stated otherwise, callers zero them first.

#include <cstddef>
#include <span>

namespace lepp::kernels {

struct ConvGeom {
    std::size_t c_in, h, w;     // input of the forward convolution
    std::size_t c_out, kh, kw;  // weight [c_out, c_in, kh, kw]
    std::size_t stride, pad;
    std::size_t h_out, w_out;

    // Throws ShapeError when the kernel does not fit the padded input.
    static ConvGeom make(std::size_t c_in, std::size_t h, std::size_t w, std::size_t c_out, std::size_t kh,
                         std::size_t kw, std::size_t stride, std::size_t pad);
};

// out[c_out,h_out,w_out] += conv(x[c_in,h,w], w)  (cross-correlation)
void conv2d_forward(const ConvGeom& g, std::span<const double> x, std::span<const double> w,
                    std::span<double> out);
// gx[c_in,h,w] += adjoint of conv2d applied to gy[c_out,h_out,w_out]
void conv2d_adjoint(const ConvGeom& g, std::span<const double> gy, std::span<const double> w,
                    std::span<double> gx);
// gw[c_out,c_in,kh,kw] += d<gy, conv(x,w)>/dw
void conv2d_weight_grad(const ConvGeom& g, std::span<const double> x, std::span<const double> gy,
                        std::span<double> gw);

// c[m,n] += a[m,k] * b[k,n]
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a, std::span<const double> b,
             std::span<double> c);
// c[m,n] += a[m,k] * b[n,k]^T
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a, std::span<const double> b,
             std::span<double> c);
// c[m,n] += a[k,m]^T * b[k,n]
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a, std::span<const double> b,
             std::span<double> c);

// y[out] = w[out,in] * x[in] + b[out]   (overwrites y; b may be empty)
void affine(std::size_t out, std::size_t in, std::span<const double> w, std::span<const double> b,
            std::span<const double> x, std::span<double> y);

}  // namespace lepp::kernels

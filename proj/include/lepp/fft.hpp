#pragma once

// Thin RAII wrappers over FFTW real transforms. Plans use FFTW_ESTIMATE so
// results are bit-reproducible across runs; planning is serialized because
// the FFTW planner is not thread-safe.

#include <complex>
#include <cstddef>
#include <span>

namespace lepp::fft {

// Unnormalized 1-D real transform of length n (n/2+1 complex bins).
class RealFft1d {
public:
    explicit RealFft1d(std::size_t n);
    ~RealFft1d();
    RealFft1d(const RealFft1d&) = delete;
    RealFft1d& operator=(const RealFft1d&) = delete;

    std::size_t size() const { return n_; }
    std::size_t bins() const { return n_ / 2 + 1; }

    void forward(std::span<const double> in, std::span<std::complex<double>> out);
    // Unnormalized inverse: returns n * x.
    void inverse(std::span<const std::complex<double>> in, std::span<double> out);

private:
    std::size_t n_;
    double* real_;
    std::complex<double>* spec_;
    void* plan_fwd_;
    void* plan_inv_;
};

// Unnormalized 2-D real transform of an ny x nx row-major field
// (ny x (nx/2+1) complex bins).
class RealFft2d {
public:
    RealFft2d(std::size_t ny, std::size_t nx);
    ~RealFft2d();
    RealFft2d(const RealFft2d&) = delete;
    RealFft2d& operator=(const RealFft2d&) = delete;

    std::size_t ny() const { return ny_; }
    std::size_t nx() const { return nx_; }
    std::size_t bins() const { return ny_ * (nx_ / 2 + 1); }

    void forward(std::span<const double> in, std::span<std::complex<double>> out);
    // Unnormalized inverse: returns ny*nx * f.
    void inverse(std::span<const std::complex<double>> in, std::span<double> out);

private:
    std::size_t ny_, nx_;
    double* real_;
    std::complex<double>* spec_;
    void* plan_fwd_;
    void* plan_inv_;
};

std::size_t next_pow2(std::size_t n);

}  // namespace lepp::fft

#include "lepp/fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <mutex>

namespace lepp::fft {

namespace {

std::mutex& planner_mutex()
{
    static std::mutex m;
    return m;
}

fftw_complex* as_fftw(std::complex<double>* p) { return reinterpret_cast<fftw_complex*>(p); }

}  // namespace

std::size_t next_pow2(std::size_t n)
{
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

RealFft1d::RealFft1d(std::size_t n) : n_(n)
{
    real_ = fftw_alloc_real(n_);
    spec_ = reinterpret_cast<std::complex<double>*>(fftw_alloc_complex(bins()));
    std::lock_guard lock(planner_mutex());
    plan_fwd_ = fftw_plan_dft_r2c_1d(static_cast<int>(n_), real_, as_fftw(spec_), FFTW_ESTIMATE);
    plan_inv_ = fftw_plan_dft_c2r_1d(static_cast<int>(n_), as_fftw(spec_), real_, FFTW_ESTIMATE);
}

RealFft1d::~RealFft1d()
{
    {
        std::lock_guard lock(planner_mutex());
        fftw_destroy_plan(static_cast<fftw_plan>(plan_fwd_));
        fftw_destroy_plan(static_cast<fftw_plan>(plan_inv_));
    }
    fftw_free(real_);
    fftw_free(spec_);
}

void RealFft1d::forward(std::span<const double> in, std::span<std::complex<double>> out)
{
    std::copy(in.begin(), in.begin() + n_, real_);
    fftw_execute(static_cast<fftw_plan>(plan_fwd_));
    std::copy(spec_, spec_ + bins(), out.begin());
}

void RealFft1d::inverse(std::span<const std::complex<double>> in, std::span<double> out)
{
    // c2r destroys its input, hence the staging copy.
    std::copy(in.begin(), in.begin() + bins(), spec_);
    fftw_execute(static_cast<fftw_plan>(plan_inv_));
    std::copy(real_, real_ + n_, out.begin());
}

RealFft2d::RealFft2d(std::size_t ny, std::size_t nx) : ny_(ny), nx_(nx)
{
    real_ = fftw_alloc_real(ny_ * nx_);
    spec_ = reinterpret_cast<std::complex<double>*>(fftw_alloc_complex(bins()));
    std::lock_guard lock(planner_mutex());
    plan_fwd_ = fftw_plan_dft_r2c_2d(static_cast<int>(ny_), static_cast<int>(nx_), real_, as_fftw(spec_),
                                     FFTW_ESTIMATE);
    plan_inv_ = fftw_plan_dft_c2r_2d(static_cast<int>(ny_), static_cast<int>(nx_), as_fftw(spec_), real_,
                                     FFTW_ESTIMATE);
}

RealFft2d::~RealFft2d()
{
    {
        std::lock_guard lock(planner_mutex());
        fftw_destroy_plan(static_cast<fftw_plan>(plan_fwd_));
        fftw_destroy_plan(static_cast<fftw_plan>(plan_inv_));
    }
    fftw_free(real_);
    fftw_free(spec_);
}

void RealFft2d::forward(std::span<const double> in, std::span<std::complex<double>> out)
{
    std::copy(in.begin(), in.begin() + ny_ * nx_, real_);
    fftw_execute(static_cast<fftw_plan>(plan_fwd_));
    std::copy(spec_, spec_ + bins(), out.begin());
}

void RealFft2d::inverse(std::span<const std::complex<double>> in, std::span<double> out)
{
    std::copy(in.begin(), in.begin() + bins(), spec_);
    fftw_execute(static_cast<fftw_plan>(plan_inv_));
    std::copy(real_, real_ + ny_ * nx_, out.begin());
}

}  // namespace lepp::fft

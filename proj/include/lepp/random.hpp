#pragma once

#include <cstdint>
#include <string_view>

namespace lepp {

// SplitMix64 generator. Streams are split by hashing a tag into the seed, so
// every parameter tensor (named) and every trajectory (indexed) draws from its
// own reproducible sequence independent of construction order.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64()
    {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    // Standard normal via Box-Muller (no cached second draw, so streams stay simple).
    double normal();

    Rng split(std::string_view tag) const;
    Rng split(std::uint64_t index) const;

private:
    std::uint64_t state_;
};

std::uint64_t fnv1a64(std::string_view s);
std::uint64_t mix64(std::uint64_t x);

}  // namespace lepp

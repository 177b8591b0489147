#pragma once

#include <cstdint>
#include <vector>

#include "lepp/autodiff.hpp"

namespace lepp {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<Tensor> m;  // first moments, one per parameter
    std::vector<Tensor> v;  // second moments
    std::uint64_t step = 0;

    static AdamState zeros_like(const std::vector<ad::Var>& params);
};

// One bias-corrected Adam update, in place on the parameter values. `grads`
// must match `params` in count and shape.
void adam_step(std::vector<ad::Var>& params, const std::vector<Tensor>& grads, AdamState& state,
               const AdamConfig& cfg);
// Convenience: uses each parameter's accumulated gradient.
void adam_step(std::vector<ad::Var>& params, AdamState& state, const AdamConfig& cfg);

}  // namespace lepp

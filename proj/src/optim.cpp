#include "lepp/optim.hpp"

#include <cmath>

namespace lepp {

AdamState AdamState::zeros_like(const std::vector<ad::Var>& params)
{
    AdamState s;
    for (const auto& p : params) {
        s.m.emplace_back(p.shape());
        s.v.emplace_back(p.shape());
    }
    return s;
}

void adam_step(std::vector<ad::Var>& params, const std::vector<Tensor>& grads, AdamState& state,
               const AdamConfig& cfg)
{
    if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size())
        throw ShapeError("adam_step: parameter/gradient/state count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (grads[i].shape() != params[i].shape() || state.m[i].shape() != params[i].shape())
            throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(i));

    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& w = params[i].node().value;
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        const Tensor& g = grads[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            w[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

void adam_step(std::vector<ad::Var>& params, AdamState& state, const AdamConfig& cfg)
{
    std::vector<Tensor> grads;
    grads.reserve(params.size());
    for (const auto& p : params) grads.push_back(p.grad());
    adam_step(params, grads, state, cfg);
}

}  // namespace lepp

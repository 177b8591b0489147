#pragma once

// Graph-free forward pass of a Surrogate. All buffers are sized at
// construction; encode/step/decode never allocate, which keeps timed loops
// free of allocator noise. Parameter values are copied, so the session stays
// valid while the model keeps training.

#include <span>
#include <vector>

#include "lepp/kernels.hpp"
#include "lepp/surrogate.hpp"

namespace lepp {

class InferenceSession {
public:
    explicit InferenceSession(const Surrogate& model);

    const ModelConfig& config() const { return cfg_; }
    std::size_t frame_size() const { return cfg_.bundle * cfg_.channels * cfg_.height * cfg_.width; }

    // Normalized static parameters [d_p]; precomputes z_p and its share of
    // the first evolution layer.
    void set_static(std::span<const double> p);
    // Normalized bundle [S, C, H, W] -> latent; resets the hidden state.
    void encode(std::span<const double> frames);
    // One latent evolution step.
    void step();
    // Decodes the current latent into `out` (normalized units).
    void decode(std::span<double> out);

    std::span<const double> latent() const { return z_; }
    std::span<double> latent() { return z_; }
    std::span<const double> hidden() const { return h_; }
    void reset_hidden();

private:
    struct Dense {
        std::size_t out = 0, in = 0;
        std::vector<double> w, b;
    };
    struct Conv {
        kernels::ConvGeom g;
        std::vector<double> w, b;
    };

    static Dense dense(const Surrogate& m, const std::string& prefix);

    ModelConfig cfg_;
    std::size_t d_in_;  // d_z + d_zp

    std::vector<Conv> enc_;
    Dense enc_out_, static0_, static1_;
    // ssm
    Dense token_, in_x_, in_g_, out_, head_;
    std::vector<double> abar_, bbar_, C_, D_;
    // mlp
    Dense mlp0_, mlp1_, mlp2_;
    Dense dec_in_;
    std::vector<Conv> dec_;  // geometry of the forward conv each layer transposes

    std::vector<std::vector<double>> enc_act_, dec_act_;
    std::vector<double> zp_, static_hidden_, first_bias_;
    std::vector<double> z_, token_buf_, xb_, gb_, y_, blk_, delta_, h_;
    std::vector<double> hid1_, hid2_;
};

}  // namespace lepp

#pragma once

// Encoder / latent evolution / decoder surrogate.
//
//   q   dynamic encoder   [S, C, H, W] -> z [d_z]
//       (S frames stacked on channels, three stride-2 4x4 convs with ELU,
//        flatten, linear)
//   r   static encoder    p [d_p] -> z_p [d_z/4]   (two-layer ELU MLP)
//   g   latent evolution  (z, z_p, h) -> (z', h')
//       ssm: token = W_t [z; z_p] + b_t, block = gated SSM block step,
//            z' = z + W_o block(token) + b_o, hidden state carried
//       mlp: z' = z + MLP3([z; z_p])
//   h   decoder           z -> [S, C, H, W]   (linear, ELU, three stride-2
//       transposed convs)
//
// The model works on normalized fields; Normalizer maps to and from
// physical units. One evolution step advances S stored frames.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lepp/autodiff.hpp"
#include "lepp/ssm.hpp"

namespace lepp {

enum class EvolutionKind { ssm, mlp };

EvolutionKind parse_evolution_kind(std::string_view name);
std::string to_string(EvolutionKind kind);

struct ModelConfig {
    std::size_t channels = 1;  // C
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t d_p = 2;
    std::size_t bundle = 1;  // S
    std::size_t d_z = 64;
    EvolutionKind evolution = EvolutionKind::ssm;
    std::size_t d_state = 16;
    std::size_t d_inner = 0;  // 0: d_z
    std::size_t mlp_hidden = 0;  // 0: width whose evolution budget is closest to the ssm one
    std::vector<std::size_t> widths{16, 32, 64};

    std::size_t d_zp() const { return d_z >= 4 ? d_z / 4 : 1; }
    std::size_t inner() const { return d_inner ? d_inner : d_z; }
    std::size_t hidden() const;
    std::size_t ssm_evolution_params() const;
    std::size_t mlp_evolution_params(std::size_t h) const;
    std::size_t latent_grid_h() const { return height >> widths.size(); }
    std::size_t latent_grid_w() const { return width >> widths.size(); }
    void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Per-channel field statistics and per-component static-parameter statistics.
struct Normalizer {
    std::vector<double> field_mean, field_std;  // [C]
    std::vector<double> param_mean, param_std;  // [d_p]

    static Normalizer identity(std::size_t channels, std::size_t d_p);
    // frames: [..., C, H, W] with `channels` C
    Tensor normalize_frames(const Tensor& frames) const;
    Tensor denormalize_frames(const Tensor& frames) const;
    void denormalize_frames_inplace(std::span<double> frames, std::size_t plane) const;
    Tensor normalize_params(std::span<const double> p) const;
};

struct LatentCarry {
    ad::Var z;
    std::optional<ad::Var> h;  // ssm only
};

struct Rollout {
    std::vector<ad::Var> latents;  // z_0 .. z_m
    std::vector<ad::Var> frames;   // decoded bundles for steps 0 .. m (0 = reconstruction); empty if not decoded
    LatentCarry carry;             // state after step m
};

class Surrogate {
public:
    Surrogate(ModelConfig cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    Normalizer& normalizer() { return norm_; }
    const Normalizer& normalizer() const { return norm_; }

    const std::vector<std::pair<std::string, ad::Var>>& named_parameters() const { return params_; }
    std::vector<ad::Var> parameters() const;
    std::size_t parameter_count() const;
    // Parameters of g only.
    std::size_t evolution_parameter_count() const;
    ad::Var& param(const std::string& name);
    const ad::Var& param(const std::string& name) const;

    ad::Var encode(const ad::Var& frames) const;  // [S, C, H, W] -> [d_z]
    ad::Var encode_static(const ad::Var& p) const;  // [d_p] -> [d_zp]
    LatentCarry evolve(const LatentCarry& s, const ad::Var& zp) const;
    ad::Var decode(const ad::Var& z) const;  // [d_z] -> [S, C, H, W]

    // Encode once, m latent steps, decode steps 0..m when `decode` is set.
    Rollout rollout(const ad::Var& frames, const ad::Var& zp, std::size_t m, bool decode = true) const;
    // Continue from a carried state for m more steps (latents/frames hold steps 1..m).
    Rollout continue_rollout(const LatentCarry& from, const ad::Var& zp, std::size_t m, bool decode = true) const;

    // Teacher-forced next-latent predictions for a given latent sequence
    // z_seq [L, d_z] from a zero hidden state. For ssm the block can run in
    // either mode; mlp ignores `mode`.
    ad::Var evolve_sequence(const ad::Var& z_seq, const ad::Var& zp,
                            ssm::BlockMode mode = ssm::BlockMode::scan) const;

    LatentCarry initial_carry(const ad::Var& z) const;

    std::size_t encoder_calls() const { return encoder_calls_; }
    void reset_counters() { encoder_calls_ = 0; }

    // Replaces parameter values by name; every parameter must be present.
    void load_parameters(const std::vector<std::pair<std::string, Tensor>>& values);

private:
    void add_param(const std::string& name, Tensor value);
    ssm::MambaBlockParams block() const;

    ModelConfig cfg_;
    Normalizer norm_;
    std::vector<std::pair<std::string, ad::Var>> params_;
    mutable std::size_t encoder_calls_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoint file (little-endian):
//   "LEPP" | u32 version | u32 n + n bytes JSON | u32 tensor count |
//   per tensor: u32 name length, name, u32 ndim, u32 dims..., f64 data

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    nlohmann::json meta;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor* find(const std::string& name) const;
};

void write_checkpoint(const std::string& path, const Checkpoint& ck);
// MissingArtifactError if absent; Error on corrupt content.
Checkpoint read_checkpoint(const std::string& path);

// meta["model"], meta["normalizer"] plus all parameters under their names.
Checkpoint make_checkpoint(const Surrogate& model, nlohmann::json extra = nlohmann::json::object());
Surrogate surrogate_from_checkpoint(const Checkpoint& ck);

}  // namespace lepp

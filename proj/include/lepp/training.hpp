#pragma once

// Training objective and epoch loop. For a start index k and visible horizon
// m* (from the curriculum) with bundles U^j = frames [jS, (j+1)S):
//
//   multi_step  = (1/m*) sum_{m=1..m*} mse(h(g^m(q(U^k), z_p)), U^{k+m})
//   recons      = mse(h(q(U^k)), U^k)
//   consistency = sum_{m=1..m*} |z_m - q(U^{k+m})|^2 / (|q(U^{k+m})|^2 + 1e-8)
//
// Here k counts frames, so U^{k+m} starts at frame k + mS. Consistency
// targets are detached unless `consistency_target_grad` is set.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lepp/curriculum.hpp"
#include "lepp/dataset.hpp"
#include "lepp/optim.hpp"
#include "lepp/surrogate.hpp"

namespace lepp {

struct LossWeights {
    double multi_step = 1.0;
    double recons = 1.0;
    double consistency = 1.0;
};

struct TrainConfig {
    int epochs = 30;
    std::size_t batch_size = 4;
    double lr = 1e-3;
    std::size_t max_horizon = 10;   // M
    std::size_t starts_per_traj = 4;  // K
    ScheduleKind schedule = ScheduleKind::log;
    double tau0 = 0.3;
    double p_exp = 2.0;
    std::uint64_t seed = 0;
    LossWeights weights;
    bool consistency_target_grad = false;
    // Finite-difference spot check of 5 parameters every 50th step.
    bool debug_grad_check = false;

    ScheduleSpec schedule_spec() const;
    void validate() const;
};

struct LossBreakdown {
    double multi_step = 0.0;
    double recons = 0.0;
    double consistency = 0.0;
    double total = 0.0;
};

// Normalized training tensors.
struct TrainingData {
    std::vector<Tensor> frames;  // [T, C, H, W] each
    std::vector<Tensor> params;  // [d_p] each
    std::size_t frames_per_traj = 0;

    static TrainingData from(const Dataset& ds, const Normalizer& norm);
    std::size_t size() const { return frames.size(); }
};

Normalizer fit_normalizer(const Dataset& ds);
// Model config matching a dataset's geometry, other fields from `base`.
ModelConfig model_config_for(const Dataset& ds, ModelConfig base);

// Frames [start, start + S) of a [T, C, H, W] tensor.
Tensor bundle_at(const Tensor& traj, std::size_t start, std::size_t S);

struct SampleLoss {
    ad::Var multi_step, recons, consistency, total;
};

// Throws Error when k + (horizon + 1) S exceeds the trajectory.
SampleLoss sample_loss(const Surrogate& model, const Tensor& traj, const Tensor& p, std::size_t k,
                       std::size_t horizon, const TrainConfig& cfg);
ad::Var multi_step_loss(const Surrogate& model, const Tensor& traj, const Tensor& p, std::size_t k,
                        std::size_t horizon);
ad::Var recons_loss(const Surrogate& model, const Tensor& bundle);
// ||pred - target||^2 / (||target||^2 + 1e-8); target detached unless target_grad.
ad::Var relative_latent_error(const ad::Var& pred, const ad::Var& target, bool target_grad = false);
ad::Var consistency_loss(const Surrogate& model, const Tensor& traj, const Tensor& p, std::size_t k,
                         std::size_t horizon, bool target_grad = false);

// A non-finite loss or gradient during training.
class TrainingAbort : public NonFiniteError {
public:
    TrainingAbort(int epoch, std::size_t batch, std::string term, const std::string& detail);
    int epoch;
    std::size_t batch;
    std::string term;
};

struct EpochLog {
    int epoch = 0;
    int horizon = 0;
    LossBreakdown loss;
    double seconds = 0.0;
};

nlohmann::json to_json(const EpochLog& log);

class Trainer {
public:
    Trainer(Surrogate& model, const TrainingData& data, TrainConfig cfg);

    // Runs epoch n (0-based); sampling depends only on (seed, n).
    LossBreakdown run_epoch(int n);
    int horizon_for(int n) const;
    // Epochs first_epoch .. epochs-1; `on_epoch` runs after each one.
    std::vector<EpochLog> fit(int first_epoch = 0, const std::function<void(const EpochLog&)>& on_epoch = {});

    AdamState& adam() { return adam_; }
    const AdamState& adam() const { return adam_; }
    const TrainConfig& config() const { return cfg_; }

    // Start indices drawn for epoch n, as (trajectory, k) pairs in visit order.
    std::vector<std::pair<std::size_t, std::size_t>> epoch_samples(int n) const;

private:
    void grad_spot_check(const std::vector<std::pair<std::size_t, std::size_t>>& batch, std::size_t horizon);

    Surrogate& model_;
    const TrainingData& data_;
    TrainConfig cfg_;
    std::vector<ad::Var> params_;
    AdamState adam_;
    std::size_t steps_ = 0;
};

// Adam moments under "adam.m.<name>" / "adam.v.<name>", step in meta.
void store_optimizer(Checkpoint& ck, const Surrogate& model, const AdamState& adam);
AdamState load_optimizer(const Checkpoint& ck, const Surrogate& model);

}  // namespace lepp

#include "lepp/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "lepp/errors.hpp"

namespace lepp {

namespace {

constexpr double kConsistencyEps = 1e-8;

ad::Var sum_sq(const ad::Var& x) { return ad::sum_all(ad::square(x)); }

template <typename F>
ad::Var labelled(const char* term, F&& build, int epoch, std::size_t batch)
{
    try {
        return build();
    } catch (const TrainingAbort&) {
        throw;
    } catch (const NonFiniteError& e) {
        throw TrainingAbort(epoch, batch, term, e.what());
    }
}

}  // namespace

ScheduleSpec TrainConfig::schedule_spec() const
{
    ScheduleSpec s;
    s.kind = schedule;
    s.tau0 = tau0;
    s.epochs = std::max(epochs, 1);
    s.p_exp = p_exp;
    s.max_horizon = static_cast<int>(max_horizon);
    return s;
}

void TrainConfig::validate() const
{
    if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (max_horizon < 1) throw ConfigError("train.max_horizon must be >= 1");
    if (starts_per_traj < 1) throw ConfigError("train.starts_per_traj must be >= 1");
    if (!(lr >= 0.0)) throw ConfigError("train.lr must be >= 0");
    if (weights.multi_step < 0 || weights.recons < 0 || weights.consistency < 0)
        throw ConfigError("loss weights must be non-negative");
    schedule_spec().validate();
}

TrainingAbort::TrainingAbort(int epoch_, std::size_t batch_, std::string term_, const std::string& detail)
    : NonFiniteError("non-finite " + term_ + " loss at epoch " + std::to_string(epoch_) + ", batch " +
                     std::to_string(batch_) + ": " + detail),
      epoch(epoch_), batch(batch_), term(std::move(term_))
{
}

// ---------------------------------------------------------------------------

Normalizer fit_normalizer(const Dataset& ds)
{
    if (ds.size() == 0) throw Error("cannot fit normalization on an empty dataset");
    Normalizer n;
    const std::size_t C = ds.channels, plane = ds.ny * ds.nx;
    std::vector<double> sum(C, 0.0), sq(C, 0.0);
    double count = 0.0;
    for (const auto& t : ds.trajectories) {
        const auto d = t.fields.data();
        for (std::size_t i = 0; i < d.size(); ++i) {
            const std::size_t c = (i / plane) % C;
            sum[c] += d[i];
            sq[c] += d[i] * d[i];
        }
        count += static_cast<double>(ds.frames * plane);
    }
    for (std::size_t c = 0; c < C; ++c) {
        const double mean = sum[c] / count;
        const double var = std::max(sq[c] / count - mean * mean, 0.0);
        n.field_mean.push_back(mean);
        n.field_std.push_back(var > 1e-24 ? std::sqrt(var) : 1.0);
    }
    for (std::size_t j = 0; j < ds.d_p; ++j) {
        double s = 0.0, s2 = 0.0;
        for (const auto& t : ds.trajectories) {
            s += t.params[j];
            s2 += t.params[j] * t.params[j];
        }
        const double mean = s / static_cast<double>(ds.size());
        const double var = std::max(s2 / static_cast<double>(ds.size()) - mean * mean, 0.0);
        n.param_mean.push_back(mean);
        // constant parameters (e.g. a fixed viscosity) pass through centred
        n.param_std.push_back(var > 1e-12 * std::max(1.0, mean * mean) ? std::sqrt(var) : 1.0);
    }
    return n;
}

TrainingData TrainingData::from(const Dataset& ds, const Normalizer& norm)
{
    TrainingData d;
    d.frames_per_traj = ds.frames;
    for (const auto& t : ds.trajectories) {
        d.frames.push_back(norm.normalize_frames(t.fields));
        d.params.push_back(norm.normalize_params(t.params));
    }
    return d;
}

ModelConfig model_config_for(const Dataset& ds, ModelConfig base)
{
    base.channels = ds.channels;
    base.height = ds.ny;
    base.width = ds.nx;
    base.d_p = ds.d_p;
    return base;
}

Tensor bundle_at(const Tensor& traj, std::size_t start, std::size_t S)
{
    const std::size_t T = traj.dim(0);
    if (start + S > T)
        throw Error("bundle [" + std::to_string(start) + ", " + std::to_string(start + S) + ") exceeds " +
                    std::to_string(T) + " frames");
    const std::size_t frame = traj.size() / T;
    Shape shape = traj.shape();
    shape[0] = S;
    return Tensor(shape, std::vector<double>(traj.storage().begin() + static_cast<std::ptrdiff_t>(start * frame),
                                             traj.storage().begin() + static_cast<std::ptrdiff_t>((start + S) * frame)));
}

namespace {

void check_window(const Surrogate& model, const Tensor& traj, std::size_t k, std::size_t horizon)
{
    const std::size_t S = model.config().bundle, T = traj.dim(0);
    if (k + (horizon + 1) * S > T)
        throw Error("horizon " + std::to_string(horizon) + " from frame " + std::to_string(k) + " with bundle " +
                    std::to_string(S) + " exceeds the " + std::to_string(T) + "-frame trajectory");
}

}  // namespace

ad::Var relative_latent_error(const ad::Var& pred, const ad::Var& target, bool target_grad)
{
    if (pred.shape() != target.shape()) throw ShapeError("relative_latent_error: shape mismatch");
    if (target_grad)
        return ad::div(sum_sq(ad::sub(pred, target)), ad::add(sum_sq(target), ad::constant(Tensor::scalar(kConsistencyEps))));
    const ad::Var t = ad::detach(target);
    return ad::div(sum_sq(ad::sub(pred, t)), ad::constant(Tensor::scalar(sum_sq(t).value().item() + kConsistencyEps)));
}

namespace {

// `frozen` supplies fixed target latents (finite-difference checks of the
// detached objective).
ad::Var consistency_term(const Surrogate& model, const std::vector<ad::Var>& latents, const Tensor& traj,
                         std::size_t k, bool target_grad, const std::vector<Tensor>* frozen = nullptr)
{
    const std::size_t S = model.config().bundle;
    ad::Var acc;
    for (std::size_t m = 1; m < latents.size(); ++m) {
        ad::Var target = frozen ? ad::constant((*frozen)[m - 1])
                                : model.encode(ad::constant(bundle_at(traj, k + m * S, S)));
        ad::Var term = relative_latent_error(latents[m], target, target_grad && !frozen);
        acc = acc ? ad::add(acc, term) : term;
    }
    return acc;
}

SampleLoss sample_loss_impl(const Surrogate& model, const Tensor& traj, const Tensor& p, std::size_t k,
                            std::size_t horizon, const TrainConfig& cfg, const std::vector<Tensor>* frozen)
{
    check_window(model, traj, k, horizon);
    const std::size_t S = model.config().bundle;
    const ad::Var zp = model.encode_static(ad::constant(p));
    const Tensor u0 = bundle_at(traj, k, S);
    auto roll = model.rollout(ad::constant(u0), zp, horizon);

    SampleLoss out;
    out.recons = ad::mse(roll.frames[0], ad::constant(u0));
    ad::Var ms;
    for (std::size_t m = 1; m <= horizon; ++m) {
        ad::Var term = ad::mse(roll.frames[m], ad::constant(bundle_at(traj, k + m * S, S)));
        ms = ms ? ad::add(ms, term) : term;
    }
    out.multi_step = ad::scale(ms, 1.0 / static_cast<double>(horizon));
    out.consistency = consistency_term(model, roll.latents, traj, k, cfg.consistency_target_grad, frozen);
    out.total = ad::add(ad::add(ad::scale(out.multi_step, cfg.weights.multi_step),
                                ad::scale(out.recons, cfg.weights.recons)),
                        ad::scale(out.consistency, cfg.weights.consistency));
    return out;
}

}  // namespace

SampleLoss sample_loss(const Surrogate& model, const Tensor& traj, const Tensor& p, std::size_t k,
                       std::size_t horizon, const TrainConfig& cfg)
{
    return sample_loss_impl(model, traj, p, k, horizon, cfg, nullptr);
}

ad::Var multi_step_loss(const Surrogate& model, const Tensor& traj, const Tensor& p, std::size_t k,
                        std::size_t horizon)
{
    return sample_loss(model, traj, p, k, horizon, TrainConfig{}).multi_step;
}

ad::Var recons_loss(const Surrogate& model, const Tensor& bundle)
{
    return ad::mse(model.decode(model.encode(ad::constant(bundle))), ad::constant(bundle));
}

ad::Var consistency_loss(const Surrogate& model, const Tensor& traj, const Tensor& p, std::size_t k,
                         std::size_t horizon, bool target_grad)
{
    check_window(model, traj, k, horizon);
    const std::size_t S = model.config().bundle;
    auto roll = model.rollout(ad::constant(bundle_at(traj, k, S)), model.encode_static(ad::constant(p)), horizon,
                              false);
    return consistency_term(model, roll.latents, traj, k, target_grad);
}

// ---------------------------------------------------------------------------

Trainer::Trainer(Surrogate& model, const TrainingData& data, TrainConfig cfg)
    : model_(model), data_(data), cfg_(std::move(cfg)), params_(model.parameters()),
      adam_(AdamState::zeros_like(params_))
{
    cfg_.validate();
    if (data_.size() == 0) throw Error("training data is empty");
    const std::size_t need = (cfg_.max_horizon + 1) * model_.config().bundle;
    if (data_.frames_per_traj < need)
        throw ConfigError("trajectories have " + std::to_string(data_.frames_per_traj) + " frames; horizon " +
                          std::to_string(cfg_.max_horizon) + " needs " + std::to_string(need));
}

int Trainer::horizon_for(int n) const { return schedule_horizon(cfg_.schedule_spec(), n); }

std::vector<std::pair<std::size_t, std::size_t>> Trainer::epoch_samples(int n) const
{
    const std::size_t S = model_.config().bundle;
    const std::size_t horizon = static_cast<std::size_t>(horizon_for(n));
    const std::size_t last_start = data_.frames_per_traj - (horizon + 1) * S;
    Rng rng = Rng(cfg_.seed).split("epoch").split(static_cast<std::uint64_t>(n));
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t i = 0; i < data_.size(); ++i)
        for (std::size_t r = 0; r < cfg_.starts_per_traj; ++r) out.emplace_back(i, rng.below(last_start + 1));
    for (std::size_t i = out.size(); i > 1; --i) std::swap(out[i - 1], out[rng.below(i)]);
    return out;
}

LossBreakdown Trainer::run_epoch(int n)
{
    const std::size_t horizon = static_cast<std::size_t>(horizon_for(n));
    const auto samples = epoch_samples(n);
    AdamConfig acfg;
    acfg.lr = cfg_.lr;
    LossBreakdown mean;
    for (std::size_t start = 0, batch = 0; start < samples.size(); start += cfg_.batch_size, ++batch) {
        const std::size_t end = std::min(samples.size(), start + cfg_.batch_size);
        const double inv = 1.0 / static_cast<double>(end - start);
        ad::zero_grad(params_);
        for (std::size_t s = start; s < end; ++s) {
            const auto [traj, k] = samples[s];
            const Tensor& frames = data_.frames[traj];
            const Tensor& p = data_.params[traj];
            SampleLoss l;
            l.total = labelled(
                "forward",
                [&] {
                    l = sample_loss(model_, frames, p, k, horizon, cfg_);
                    return l.total;
                },
                n, batch);
            const double terms[3] = {l.multi_step.value().item(), l.recons.value().item(),
                                     l.consistency.value().item()};
            const char* names[3] = {"multi_step", "recons", "consistency"};
            for (int t = 0; t < 3; ++t)
                if (!std::isfinite(terms[t])) throw TrainingAbort(n, batch, names[t], "value " + std::to_string(terms[t]));
            mean.multi_step += terms[0];
            mean.recons += terms[1];
            mean.consistency += terms[2];
            mean.total += l.total.value().item();
            labelled(
                "gradient",
                [&] {
                    ad::backward(ad::scale(l.total, inv));
                    return l.total;
                },
                n, batch);
        }
        for (const auto& p : params_)
            if (!p.grad().all_finite()) throw TrainingAbort(n, batch, "gradient", "non-finite parameter gradient");
        if (cfg_.debug_grad_check && steps_ % 50 == 0)
            grad_spot_check({samples.begin() + static_cast<std::ptrdiff_t>(start),
                             samples.begin() + static_cast<std::ptrdiff_t>(end)},
                            horizon);
        adam_step(params_, adam_, acfg);
        ++steps_;
    }
    const double count = static_cast<double>(samples.size());
    mean.multi_step /= count;
    mean.recons /= count;
    mean.consistency /= count;
    mean.total /= count;
    return mean;
}

std::vector<EpochLog> Trainer::fit(int first_epoch, const std::function<void(const EpochLog&)>& on_epoch)
{
    std::vector<EpochLog> logs;
    for (int n = first_epoch; n < cfg_.epochs; ++n) {
        const auto t0 = std::chrono::steady_clock::now();
        EpochLog log;
        log.epoch = n;
        log.horizon = horizon_for(n);
        log.loss = run_epoch(n);
        log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (on_epoch) on_epoch(log);
        logs.push_back(log);
    }
    return logs;
}

nlohmann::json to_json(const EpochLog& log)
{
    return {{"epoch", log.epoch},
            {"horizon", log.horizon},
            {"loss", log.loss.total},
            {"multi_step", log.loss.multi_step},
            {"recons", log.loss.recons},
            {"consistency", log.loss.consistency},
            {"seconds", log.seconds}};
}

void Trainer::grad_spot_check(const std::vector<std::pair<std::size_t, std::size_t>>& batch, std::size_t horizon)
{
    const double inv = 1.0 / static_cast<double>(batch.size());
    const std::size_t S = model_.config().bundle;
    // Detached targets are constants of the objective; pin them before perturbing.
    std::vector<std::vector<Tensor>> targets(batch.size());
    if (!cfg_.consistency_target_grad)
        for (std::size_t b = 0; b < batch.size(); ++b)
            for (std::size_t m = 1; m <= horizon; ++m)
                targets[b].push_back(
                    model_.encode(ad::constant(bundle_at(data_.frames[batch[b].first], batch[b].second + m * S, S)))
                        .value());
    auto batch_loss = [&] {
        double total = 0.0;
        for (std::size_t b = 0; b < batch.size(); ++b) {
            const auto [traj, k] = batch[b];
            total += sample_loss_impl(model_, data_.frames[traj], data_.params[traj], k, horizon, cfg_,
                                      cfg_.consistency_target_grad ? nullptr : &targets[b])
                         .total.value()
                         .item();
        }
        return total * inv;
    };
    Rng rng = Rng(cfg_.seed).split("gradcheck").split(steps_);
    constexpr double eps = 1e-5;
    for (int i = 0; i < 5; ++i) {
        auto& v = params_[rng.below(params_.size())];
        const std::size_t idx = rng.below(v.size());
        const double analytic = v.grad()[idx];
        double& w = v.node().value[idx];
        const double saved = w;
        w = saved + eps;
        const double fp = batch_loss();
        w = saved - eps;
        const double fm = batch_loss();
        w = saved;
        const double fd = (fp - fm) / (2 * eps);
        const double err = std::abs(fd - analytic) / std::max({std::abs(fd), std::abs(analytic), 1e-6});
        if (err > 1e-4) {
            std::ostringstream msg;
            msg << "gradient spot check failed at step " << steps_ << ": analytic " << analytic << ", fd " << fd;
            throw Error(msg.str());
        }
    }
}

void store_optimizer(Checkpoint& ck, const Surrogate& model, const AdamState& adam)
{
    const auto& named = model.named_parameters();
    for (std::size_t i = 0; i < named.size(); ++i) {
        ck.tensors.emplace_back("adam.m." + named[i].first, adam.m[i]);
        ck.tensors.emplace_back("adam.v." + named[i].first, adam.v[i]);
    }
    ck.meta["adam_step"] = adam.step;
}

AdamState load_optimizer(const Checkpoint& ck, const Surrogate& model)
{
    AdamState adam = AdamState::zeros_like(model.parameters());
    const auto& named = model.named_parameters();
    for (std::size_t i = 0; i < named.size(); ++i) {
        const Tensor* m = ck.find("adam.m." + named[i].first);
        const Tensor* v = ck.find("adam.v." + named[i].first);
        if (!m || !v) throw Error("checkpoint has no optimizer state for '" + named[i].first + "'");
        adam.m[i] = *m;
        adam.v[i] = *v;
    }
    adam.step = ck.meta.value("adam_step", std::uint64_t{0});
    return adam;
}

}  // namespace lepp

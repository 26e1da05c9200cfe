#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <numeric>
#include <optional>
#include <vector>

#include "unlearn/adaptive.hpp"
#include "unlearn/autodiff.hpp"
#include "unlearn/checkpoint.hpp"
#include "unlearn/diffusion.hpp"
#include "unlearn/nn.hpp"
#include "unlearn/siss.hpp"

namespace unlearn {

// -- state / action ------------------------------------------------------------

// S_t = [L_retain, L_forget, |grad L_retain|, |grad L_forget|, lambda_{t-1}, t/T];
// the four loss features are log1p + z-scored, the last two stay raw.
using UnlearnState = std::array<double, 6>;

struct ActionBounds {
    double lambda_min = 0.1;
    double lambda_max = 0.9;

    double squash(double z) const {
        const double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        return lambda_min + (lambda_max - lambda_min) * s;
    }

    double unsquash(double lambda) const {
        const double u = (lambda - lambda_min) / (lambda_max - lambda_min);
        return std::log(u / (1.0 - u));
    }
};

struct Transition {
    UnlearnState s{}, s_next{};
    double lambda = 0.5;
    double z = 0.0;       // pre-squash latent under the behavior policy
    double logp = 0.0;    // behavior log-density of lambda
    double reward = 0.0;
    bool done = false;
};

struct Episode {
    std::vector<Transition> steps;

    double total_reward() const {
        double s = 0.0;
        for (const auto& t : steps) s += t.reward;
        return s;
    }
};

// -- networks ------------------------------------------------------------------

constexpr double kLogSigmaMin = -6.907755278982137;  // log(1e-3)
constexpr double kLogSigmaMax = 0.0;                 // log(1)
constexpr double kLogSqrt2Pi = 0.9189385332046727;

// Two hidden layers of 64 tanh units; heads (mu, log sigma).
struct PolicyNet {
    Mlp net;
    ActionBounds bounds;

    static PolicyNet make(Rng& rng, ActionBounds b = {}) {
        return PolicyNet{Mlp::make({6, 64, 64, 2}, rng, "pi"), b};
    }
};

struct ValueNet {
    Mlp net;
    static ValueNet make(Rng& rng) { return ValueNet{Mlp::make({6, 64, 64, 1}, rng, "v")}; }
};

// State-action critic: input state ⊕ action.
struct QNet {
    Mlp net;
    static QNet make(Rng& rng, const std::string& prefix) {
        return QNet{Mlp::make({7, 64, 64, 1}, rng, prefix)};
    }
};

inline Tensor states_tensor(const std::vector<UnlearnState>& states) {
    Tensor t({states.size(), 6});
    for (std::size_t i = 0; i < states.size(); ++i)
        for (std::size_t j = 0; j < 6; ++j) t.at(i, j) = states[i][j];
    return t;
}

struct PolicyAction {
    double lambda, z, logp;
    double mu, sigma;
};

// Gaussian latent + sigmoid squash into [lambda_min, lambda_max]; the
// log-prob carries the change-of-variables correction.
inline PolicyAction policy_act(const PolicyNet& pi, const UnlearnState& s, Rng& rng,
                               bool deterministic = false) {
    Tensor in({1, 6});
    for (std::size_t j = 0; j < 6; ++j) in.at(0, j) = s[j];
    Tensor heads = pi.net.forward_plain(in);
    PolicyAction a;
    a.mu = heads[0];
    a.sigma = std::exp(std::clamp(heads[1], kLogSigmaMin, kLogSigmaMax));
    const double xi = deterministic ? 0.0 : rng.normal();
    a.z = a.mu + xi * a.sigma;
    a.lambda = pi.bounds.squash(a.z);
    const double sz = (a.lambda - pi.bounds.lambda_min) /
                      (pi.bounds.lambda_max - pi.bounds.lambda_min);
    const double u = (a.z - a.mu) / a.sigma;
    a.logp = -0.5 * u * u - std::log(a.sigma) - kLogSqrt2Pi -
             std::log((pi.bounds.lambda_max - pi.bounds.lambda_min) * sz * (1.0 - sz));
    return a;
}

// Graph version: log pi(lambda_i | s_i) for fixed latents z_i, differentiable
// w.r.t. the policy parameters. Also exposes the clamped log-sigma head for
// entropy bonuses.
struct PolicyLogpGraph {
    Value logp;       // [M,1]
    Value log_sigma;  // [M,1]
    Value mu;         // [M,1]
};

inline PolicyLogpGraph policy_logp_graph(Graph& g, const PolicyNet& pi, const BoundParams& bp,
                                         const Tensor& states, const std::vector<double>& zs) {
    Value heads = pi.net.forward(g, bp, g.constant(states));  // [M,2]
    Value mu = g.slice(heads, 0, 1);
    Value log_sigma = g.clamp(g.slice(heads, 1, 2), kLogSigmaMin, kLogSigmaMax);
    Tensor zt({zs.size(), 1});
    Tensor corr({zs.size(), 1});
    const double range = pi.bounds.lambda_max - pi.bounds.lambda_min;
    for (std::size_t i = 0; i < zs.size(); ++i) {
        zt.at(i, 0) = zs[i];
        const double s = 1.0 / (1.0 + std::exp(-zs[i]));
        corr.at(i, 0) = -kLogSqrt2Pi - std::log(range * s * (1.0 - s));
    }
    Value inv_sigma = g.exp(g.scale(log_sigma, -1.0));
    Value u = g.mul(g.sub(g.constant(std::move(zt)), mu), inv_sigma);
    Value logp = g.add(g.sub(g.scale(g.square(u), -0.5), log_sigma), g.constant(std::move(corr)));
    return {logp, log_sigma, mu};
}

// -- environment ----------------------------------------------------------------

struct EnvConfig {
    int horizon = 200;            // T environment steps per episode
    double theta_lr = 1e-4;       // Adam lr for the diffusion model
    double alpha_smooth = 0.01;   // reward smoothness penalty
    std::size_t pairs = 32;       // B/2 with B = 64, balanced batches
    bool grad_norm_features = true;
    double lambda0 = 0.5;
};

// The unlearning MDP: one env step = one SISS gradient update of theta.
class UnlearnEnv {
public:
    UnlearnEnv(const Denoiser& theta0, const NoiseSchedule& sched, const LabeledDataset& ds,
               const ForgetSplit& split, const SissWeights& weights, const EnvConfig& cfg,
               Rng rng)
        : theta0_(theta0), model_(theta0), sched_(sched), ds_(ds), split_(split),
          weights_(weights), cfg_(cfg), rng_(rng),
          opt_(AdamState::make(theta0.params, cfg.theta_lr)) {}

    // theta <- theta_0, lambda_0 = 0.5; one warm-up forward pass (no theta
    // update) builds S_1.
    UnlearnState reset() {
        model_.params = theta0_.params;
        opt_ = AdamState::make(model_.params, cfg_.theta_lr);
        lambda_prev_ = cfg_.lambda0;
        t_ = 1;
        auto parts = measure(lambda_prev_);
        return make_state(parts);
    }

    struct StepResult {
        UnlearnState next{};
        double reward = 0.0;
        bool done = false;
        SissStepRecord record;
    };

    StepResult step(double lambda) {
        if (lambda < 0.0 || lambda > 1.0) {
            throw ContractViolation("env_step: lambda out of [0,1]");
        }
        // One SISS gradient step at the chosen lambda.
        SissPairBatch batch = sample_pair_batch(sched_, ds_, split_, cfg_.pairs, lambda, rng_);
        Graph g;
        BoundParams bp = bind(g, model_.params);
        SissLossParts parts = siss_losses(g, model_, bp, sched_, batch, weights_);
        g.backward(parts.retain);
        std::vector<Tensor> g_retain = collect_grads(g, bp);
        g.backward(parts.forget);
        std::vector<Tensor> g_forget = collect_grads(g, bp);
        std::vector<Tensor> total = g_retain;
        axpy_grads(total, g_forget, -(1.0 + weights_.s));
        apply_adam(model_.params, total, opt_);

        StepResult res;
        res.record.lambda = lambda;
        res.record.retain_loss = parts.retain.val().scalar_value();
        res.record.forget_loss = parts.forget.val().scalar_value();
        res.record.total_loss = parts.total.val().scalar_value();
        res.record.retain_grad_norm = grad_norm(g_retain);
        res.record.forget_grad_norm = grad_norm(g_forget);

        const double dl = lambda - lambda_prev_;
        res.reward = -res.record.total_loss - cfg_.alpha_smooth * dl * dl;
        lambda_prev_ = lambda;
        t_ += 1;
        res.done = t_ > cfg_.horizon;

        // Next state reflects the updated parameters.
        auto next_parts = measure(lambda);
        res.next = make_state(next_parts);
        return res;
    }

    const Denoiser& model() const { return model_; }
    Denoiser& model() { return model_; }
    int horizon() const { return cfg_.horizon; }
    RunningNorm<4>& normalizer() { return norm_; }

private:
    SissStepRecord measure(double lambda) {
        SissPairBatch batch = sample_pair_batch(sched_, ds_, split_, cfg_.pairs, lambda, rng_);
        Graph g;
        BoundParams bp = bind(g, model_.params);
        SissLossParts parts = siss_losses(g, model_, bp, sched_, batch, weights_);
        SissStepRecord rec;
        rec.lambda = lambda;
        rec.retain_loss = parts.retain.val().scalar_value();
        rec.forget_loss = parts.forget.val().scalar_value();
        if (cfg_.grad_norm_features) {
            g.backward(parts.retain);
            rec.retain_grad_norm = grad_norm(collect_grads(g, bp));
            g.backward(parts.forget);
            rec.forget_grad_norm = grad_norm(collect_grads(g, bp));
        }
        return rec;
    }

    UnlearnState make_state(const SissStepRecord& rec) {
        norm_.update({rec.retain_loss, rec.forget_loss, rec.retain_grad_norm,
                      rec.forget_grad_norm});
        auto n = norm_.normalize(
            {rec.retain_loss, rec.forget_loss, rec.retain_grad_norm, rec.forget_grad_norm});
        UnlearnState s{};
        s[0] = n[0];
        s[1] = n[1];
        s[2] = cfg_.grad_norm_features ? n[2] : 0.0;
        s[3] = cfg_.grad_norm_features ? n[3] : 0.0;
        s[4] = lambda_prev_;
        s[5] = static_cast<double>(t_) / static_cast<double>(cfg_.horizon);
        return s;
    }

    Denoiser theta0_;
    Denoiser model_;
    const NoiseSchedule& sched_;
    const LabeledDataset& ds_;
    const ForgetSplit& split_;
    SissWeights weights_;
    EnvConfig cfg_;
    Rng rng_;
    AdamState opt_;
    RunningNorm<4> norm_;
    double lambda_prev_ = 0.5;
    int t_ = 1;
};

// -- generalized advantage estimation ----------------------------------------------

struct GaeResult {
    std::vector<double> advantages;
    std::vector<double> returns;
};

// delta_t = R_t + gamma V(S_{t+1}) - V(S_t); A_t = sum (gamma lam)^l delta;
// `values` has one entry per transition plus the bootstrap value of the
// state after the last one (0 at episode end).
inline GaeResult compute_gae(const std::vector<double>& rewards,
                             const std::vector<double>& values, double gamma,
                             double gae_lambda) {
    if (rewards.empty() || values.size() != rewards.size() + 1) {
        throw ContractViolation("compute_gae: need |values| == |rewards| + 1");
    }
    GaeResult r;
    r.advantages.resize(rewards.size());
    r.returns.resize(rewards.size());
    double acc = 0.0;
    for (std::size_t i = rewards.size(); i-- > 0;) {
        const double delta = rewards[i] + gamma * values[i + 1] - values[i];
        acc = delta + gamma * gae_lambda * acc;
        r.advantages[i] = acc;
        r.returns[i] = acc + values[i];
    }
    return r;
}

inline double value_of(const ValueNet& v, const UnlearnState& s) {
    Tensor in({1, 6});
    for (std::size_t j = 0; j < 6; ++j) in.at(0, j) = s[j];
    return v.net.forward_plain(in)[0];
}

// -- PPO ---------------------------------------------------------------------------

struct PpoConfig {
    double gamma = 0.99;
    double gae_lambda = 0.95;
    double clip_eps = 0.2;
    double entropy_coef = 0.01;
    double kl_coef = 0.0;  // optional KL-to-prior regularizer on the z latent
    int epochs = 4;
    std::size_t minibatch = 256;
    double lr = 3e-4;  // both actor and critic
};

struct PpoSample {
    UnlearnState s{};
    double z = 0.0, logp_old = 0.0, advantage = 0.0, ret = 0.0;
};

struct PpoStats {
    double policy_objective = 0.0;
    double value_loss = 0.0;
};

// Advantages are normalized to zero mean / unit variance across the batch
// before the clipped-objective epochs.
inline PpoStats ppo_update(PolicyNet& pi, ValueNet& vf, std::vector<PpoSample> samples,
                           const PpoConfig& cfg, AdamState& opt_pi, AdamState& opt_v, Rng& rng) {
    if (samples.empty()) throw ContractViolation("ppo_update: empty batch");
    double am = 0.0;
    for (const auto& s : samples) am += s.advantage;
    am /= double(samples.size());
    double av = 0.0;
    for (const auto& s : samples) av += (s.advantage - am) * (s.advantage - am);
    av = std::sqrt(av / double(samples.size()) + 1e-8);
    for (auto& s : samples) s.advantage = (s.advantage - am) / av;

    PpoStats stats;
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    long updates = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Fisher-Yates with the run's substream keeps updates reproducible.
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng.integer(i)]);
        }
        for (std::size_t lo = 0; lo < order.size(); lo += cfg.minibatch) {
            const std::size_t hi = std::min(order.size(), lo + cfg.minibatch);
            const std::size_t M = hi - lo;
            std::vector<UnlearnState> states(M);
            std::vector<double> zs(M);
            Tensor adv({M, 1}), logp_old({M, 1}), rets({M, 1});
            for (std::size_t i = 0; i < M; ++i) {
                const PpoSample& s = samples[order[lo + i]];
                states[i] = s.s;
                zs[i] = s.z;
                adv.at(i, 0) = s.advantage;
                logp_old.at(i, 0) = s.logp_old;
                rets.at(i, 0) = s.ret;
            }
            Tensor st = states_tensor(states);

            {  // policy step
                Graph g;
                BoundParams bp = bind(g, pi.net.params);
                PolicyLogpGraph lp = policy_logp_graph(g, pi, bp, st, zs);
                Value ratio = g.exp(g.sub(lp.logp, g.constant(logp_old)));  // [M,1]
                // Clipped objective: select the smaller branch per sample by
                // value; the clipped branch contributes as a constant, which
                // reproduces the PPO gradient exactly.
                Tensor mask_unclipped({M, 1}), clipped_const({M, 1});
                const Tensor& rv = ratio.val();
                for (std::size_t i = 0; i < M; ++i) {
                    const double r = rv[i];
                    const double rc = std::clamp(r, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
                    const double a = adv.at(i, 0);
                    if (r * a <= rc * a) {
                        mask_unclipped.at(i, 0) = 1.0;
                    } else {
                        clipped_const.at(i, 0) = rc * a;
                    }
                }
                Value obj = g.add(g.mul(g.mul(ratio, g.constant(adv)),
                                        g.constant(std::move(mask_unclipped))),
                                  g.constant(std::move(clipped_const)));
                Value loss = g.scale(g.mean(obj), -1.0);
                loss = g.sub(loss, g.scale(g.mean(lp.log_sigma), cfg.entropy_coef));
                if (cfg.kl_coef > 0.0) {
                    Value sigma = g.exp(lp.log_sigma);
                    Value kl = g.sub(
                        g.scale(g.sub(g.add(g.square(sigma), g.square(lp.mu)), g.constant(1.0)),
                                0.5),
                        lp.log_sigma);
                    loss = g.add(loss, g.scale(g.mean(kl), cfg.kl_coef));
                }
                g.backward(loss);
                apply_adam(pi.net.params, collect_grads(g, bp), opt_pi);
                stats.policy_objective += -loss.val().scalar_value();
            }
            {  // value step
                Graph g;
                BoundParams bp = bind(g, vf.net.params);
                Value v = vf.net.forward(g, bp, g.constant(st));
                Value loss = g.mean(g.square(g.sub(v, g.constant(rets))));
                g.backward(loss);
                apply_adam(vf.net.params, collect_grads(g, bp), opt_v);
                stats.value_loss += loss.val().scalar_value();
            }
            ++updates;
        }
    }
    if (updates > 0) {
        stats.policy_objective /= double(updates);
        stats.value_loss /= double(updates);
    }
    return stats;
}

inline std::vector<PpoSample> gae_samples(const std::vector<Episode>& episodes,
                                          const ValueNet& vf, const PpoConfig& cfg) {
    std::vector<PpoSample> out;
    for (const auto& ep : episodes) {
        std::vector<double> rewards, values;
        for (const auto& tr : ep.steps) {
            rewards.push_back(tr.reward);
            values.push_back(value_of(vf, tr.s));
        }
        const Transition& last = ep.steps.back();
        values.push_back(last.done ? 0.0 : value_of(vf, last.s_next));
        GaeResult gae = compute_gae(rewards, values, cfg.gamma, cfg.gae_lambda);
        for (std::size_t i = 0; i < ep.steps.size(); ++i) {
            PpoSample s;
            s.s = ep.steps[i].s;
            s.z = ep.steps[i].z;
            s.logp_old = ep.steps[i].logp;
            s.advantage = gae.advantages[i];
            s.ret = gae.returns[i];
            out.push_back(s);
        }
    }
    return out;
}

// -- training drivers -----------------------------------------------------------------

struct RlRunConfig {
    EnvConfig env;
    PpoConfig ppo;
    int episodes_per_iter = 8;  // N
    int iterations = 25;        // Option 1 PPO iteration budget
    long total_steps = 2000;    // Option 2 trajectory length
    int update_every = 200;     // Option 2: M
    std::size_t window = 1600;  // Option 2: most recent transitions per update
    bool final_deterministic = false;
};

struct RlIterationLog {
    int iteration = 0;
    double mean_episode_return = 0.0;
    double policy_objective = 0.0;
    double value_loss = 0.0;
};

struct RlRunResult {
    PolicyNet policy;
    ValueNet value;
    Denoiser unlearned;
    std::vector<RlIterationLog> iterations;
    std::vector<Transition> final_trajectory;  // Option 1: the frozen-policy run
};

inline Episode collect_episode(UnlearnEnv& env, const PolicyNet& pi, Rng& rng,
                               bool deterministic = false) {
    Episode ep;
    UnlearnState s = env.reset();
    bool done = false;
    while (!done) {
        PolicyAction a = policy_act(pi, s, rng, deterministic);
        auto res = env.step(a.lambda);
        Transition tr;
        tr.s = s;
        tr.s_next = res.next;
        tr.lambda = a.lambda;
        tr.z = a.z;
        tr.logp = a.logp;
        tr.reward = res.reward;
        tr.done = res.done;
        ep.steps.push_back(tr);
        s = res.next;
        done = res.done;
    }
    return ep;
}

// Episodic PPO with parameter resets; metrics come from a final run under
// the frozen policy, starting again from theta_0.
inline RlRunResult run_option1(const Denoiser& theta0, const NoiseSchedule& sched,
                               const LabeledDataset& ds, const ForgetSplit& split,
                               const SissWeights& weights, const RlRunConfig& cfg,
                               std::uint64_t seed) {
    Rng net_rng(hash_stream(seed, "rl.nets"));
    RlRunResult res{PolicyNet::make(net_rng), ValueNet::make(net_rng),
                    theta0, {}, {}};
    AdamState opt_pi = AdamState::make(res.policy.net.params, cfg.ppo.lr);
    AdamState opt_v = AdamState::make(res.value.net.params, cfg.ppo.lr);
    UnlearnEnv env(theta0, sched, ds, split, weights, cfg.env,
                   Rng(hash_stream(seed, "rl.env")));
    Rng act_rng(hash_stream(seed, "rl.actions"));
    Rng ppo_rng(hash_stream(seed, "rl.ppo"));

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        std::vector<Episode> episodes;
        double ret_sum = 0.0;
        for (int e = 0; e < cfg.episodes_per_iter; ++e) {
            episodes.push_back(collect_episode(env, res.policy, act_rng));
            ret_sum += episodes.back().total_reward();
        }
        PpoStats stats = ppo_update(res.policy, res.value, gae_samples(episodes, res.value, cfg.ppo),
                                    cfg.ppo, opt_pi, opt_v, ppo_rng);
        res.iterations.push_back({iter, ret_sum / double(cfg.episodes_per_iter),
                                  stats.policy_objective, stats.value_loss});
    }

    // Final unlearning run: policy frozen, theta evolves from theta_0.
    Episode fin = collect_episode(env, res.policy, act_rng, cfg.final_deterministic);
    res.final_trajectory = fin.steps;
    res.unlearned = env.model();
    return res;
}

// Online PPO along one long trajectory; theta evolves continuously and is
// the deliverable.
inline RlRunResult run_option2(const Denoiser& theta0, const NoiseSchedule& sched,
                               const LabeledDataset& ds, const ForgetSplit& split,
                               const SissWeights& weights, const RlRunConfig& cfg,
                               std::uint64_t seed) {
    Rng net_rng(hash_stream(seed, "rl.nets"));
    RlRunResult res{PolicyNet::make(net_rng), ValueNet::make(net_rng),
                    theta0, {}, {}};
    AdamState opt_pi = AdamState::make(res.policy.net.params, cfg.ppo.lr);
    AdamState opt_v = AdamState::make(res.value.net.params, cfg.ppo.lr);
    EnvConfig env_cfg = cfg.env;
    env_cfg.horizon = static_cast<int>(cfg.total_steps);
    UnlearnEnv env(theta0, sched, ds, split, weights, env_cfg,
                   Rng(hash_stream(seed, "rl.env")));
    Rng act_rng(hash_stream(seed, "rl.actions"));
    Rng ppo_rng(hash_stream(seed, "rl.ppo"));

    std::vector<Transition> recent;
    UnlearnState s = env.reset();
    int iter = 0;
    for (long t = 1; t <= cfg.total_steps; ++t) {
        PolicyAction a = policy_act(res.policy, s, act_rng);
        auto stepped = env.step(a.lambda);
        Transition tr;
        tr.s = s;
        tr.s_next = stepped.next;
        tr.lambda = a.lambda;
        tr.z = a.z;
        tr.logp = a.logp;
        tr.reward = stepped.reward;
        tr.done = stepped.done;
        recent.push_back(tr);
        res.final_trajectory.push_back(tr);
        if (recent.size() > cfg.window) {
            recent.erase(recent.begin(),
                         recent.begin() + static_cast<long>(recent.size() - cfg.window));
        }
        s = stepped.next;
        if (t % cfg.update_every == 0 && !recent.empty()) {
            Episode window_ep{recent};
            PpoStats stats = ppo_update(res.policy, res.value,
                                        gae_samples({window_ep}, res.value, cfg.ppo), cfg.ppo,
                                        opt_pi, opt_v, ppo_rng);
            double ret = 0.0;
            for (std::size_t i = recent.size() > static_cast<std::size_t>(cfg.update_every)
                                     ? recent.size() - cfg.update_every
                                     : 0;
                 i < recent.size(); ++i) {
                ret += recent[i].reward;
            }
            res.iterations.push_back({iter++, ret / double(cfg.update_every),
                                      stats.policy_objective, stats.value_loss});
        }
    }
    res.unlearned = env.model();
    return res;
}

// -- SAC ----------------------------------------------------------------------------

struct SacConfig {
    double gamma = 0.99;
    double tau = 0.005;           // Polyak factor for target critics
    double alpha_ent = 0.1;       // fixed entropy temperature
    double lr = 3e-4;
    std::size_t buffer_capacity = 50000;
    std::size_t batch = 64;
    long total_steps = 2000;
    long warmup_steps = 64;       // act before the first update
};

struct ReplayBuffer {
    std::deque<Transition> data;
    std::size_t capacity = 50000;

    void push(const Transition& t) {
        data.push_back(t);
        if (data.size() > capacity) data.pop_front();
    }

    std::size_t size() const { return data.size(); }
};

inline double sac_target(double reward, double gamma, bool done, double min_q_next,
                         double alpha_ent, double logp_next) {
    return reward + (done ? 0.0 : gamma * (min_q_next - alpha_ent * logp_next));
}

struct SacLosses {
    double q1 = 0.0, q2 = 0.0, actor = 0.0;
};

inline double q_value(const QNet& q, const UnlearnState& s, double lambda) {
    Tensor in({1, 7});
    for (std::size_t j = 0; j < 6; ++j) in.at(0, j) = s[j];
    in.at(0, 6) = lambda;
    return q.net.forward_plain(in)[0];
}

// One SAC update: Bellman backups with twin target critics, then a
// reparameterized actor step against min(Q1, Q2).
inline SacLosses sac_update(PolicyNet& pi, QNet& q1, QNet& q2, QNet& q1_target, QNet& q2_target,
                            const ReplayBuffer& buffer, const SacConfig& cfg, AdamState& opt_pi,
                            AdamState& opt_q1, AdamState& opt_q2, Rng& rng) {
    if (buffer.size() < cfg.batch) throw ContractViolation("sac_update: buffer underfilled");
    const std::size_t M = cfg.batch;
    std::vector<const Transition*> batch(M);
    for (auto& t : batch) t = &buffer.data[rng.integer(buffer.size())];

    // Targets under the current policy at S'.
    Tensor targets({M, 1});
    Tensor sa({M, 7});
    for (std::size_t i = 0; i < M; ++i) {
        const Transition& tr = *batch[i];
        PolicyAction next = policy_act(pi, tr.s_next, rng);
        const double mq = std::min(q_value(q1_target, tr.s_next, next.lambda),
                                   q_value(q2_target, tr.s_next, next.lambda));
        targets.at(i, 0) =
            sac_target(tr.reward, cfg.gamma, tr.done, mq, cfg.alpha_ent, next.logp);
        for (std::size_t j = 0; j < 6; ++j) sa.at(i, j) = tr.s[j];
        sa.at(i, 6) = tr.lambda;
    }

    SacLosses losses;
    auto critic_step = [&](QNet& q, AdamState& opt) {
        Graph g;
        BoundParams bp = bind(g, q.net.params);
        Value pred = q.net.forward(g, bp, g.constant(sa));
        Value loss = g.mean(g.square(g.sub(pred, g.constant(targets))));
        g.backward(loss);
        apply_adam(q.net.params, collect_grads(g, bp), opt);
        return loss.val().scalar_value();
    };
    losses.q1 = critic_step(q1, opt_q1);
    losses.q2 = critic_step(q2, opt_q2);

    {  // actor: minimize alpha * log pi - min(Q1, Q2) with reparameterized actions
        Graph g;
        BoundParams bp_pi = bind(g, pi.net.params);
        BoundParams bp_q1 = bind(g, q1.net.params);
        BoundParams bp_q2 = bind(g, q2.net.params);
        Tensor st({M, 6});
        Tensor xi({M, 1});
        for (std::size_t i = 0; i < M; ++i) {
            for (std::size_t j = 0; j < 6; ++j) st.at(i, j) = batch[i]->s[j];
            xi.at(i, 0) = rng.normal();
        }
        Value heads = pi.net.forward(g, bp_pi, g.constant(st));
        Value mu = g.slice(heads, 0, 1);
        Value log_sigma = g.clamp(g.slice(heads, 1, 2), kLogSigmaMin, kLogSigmaMax);
        Value sigma = g.exp(log_sigma);
        Value z = g.add(mu, g.mul(sigma, g.constant(xi)));
        Value squashed = g.sigmoid(z);
        const double range = pi.bounds.lambda_max - pi.bounds.lambda_min;
        Value action = g.add(g.scale(squashed, range), g.constant(pi.bounds.lambda_min));
        // log pi with the tanh-free sigmoid squash correction, all in-graph.
        Tensor xi_sq({M, 1});
        for (std::size_t i = 0; i < M; ++i) xi_sq.at(i, 0) = -0.5 * xi.at(i, 0) * xi.at(i, 0);
        Value logp = g.sub(g.add(g.constant(std::move(xi_sq)), g.constant(-kLogSqrt2Pi)),
                           log_sigma);
        Value jac = g.add(g.add(g.log(squashed), g.log(g.sub(g.constant(1.0), squashed))),
                          g.constant(std::log(range)));
        logp = g.sub(logp, jac);

        Value qin = g.concat(g.constant(st), action);
        Value qa = q1.net.forward(g, bp_q1, qin);
        Value qb = q2.net.forward(g, bp_q2, qin);
        // Per-sample min by value; the unselected branch is masked out.
        Tensor mask_a({M, 1}), mask_b({M, 1});
        for (std::size_t i = 0; i < M; ++i) {
            if (qa.val()[i] <= qb.val()[i]) {
                mask_a.at(i, 0) = 1.0;
            } else {
                mask_b.at(i, 0) = 1.0;
            }
        }
        Value qmin = g.add(g.mul(qa, g.constant(std::move(mask_a))),
                           g.mul(qb, g.constant(std::move(mask_b))));
        Value loss = g.mean(g.sub(g.scale(logp, cfg.alpha_ent), qmin));
        g.backward(loss);
        apply_adam(pi.net.params, collect_grads(g, bp_pi), opt_pi);
        losses.actor = loss.val().scalar_value();
    }

    // Polyak averaging on the target critics.
    auto polyak = [&](QNet& target, const QNet& src) {
        for (std::size_t i = 0; i < target.net.params.count(); ++i)
            for (std::size_t j = 0; j < target.net.params.values[i].size(); ++j)
                target.net.params.values[i][j] =
                    (1.0 - cfg.tau) * target.net.params.values[i][j] +
                    cfg.tau * src.net.params.values[i][j];
    };
    polyak(q1_target, q1);
    polyak(q2_target, q2);
    return losses;
}

struct SacRunResult {
    PolicyNet policy;
    Denoiser unlearned;
    std::vector<Transition> trajectory;
    std::vector<SacLosses> updates;
};

// Online SAC along a single unlearning run (the Option-2 style deployment).
inline SacRunResult run_sac(const Denoiser& theta0, const NoiseSchedule& sched,
                            const LabeledDataset& ds, const ForgetSplit& split,
                            const SissWeights& weights, const EnvConfig& env_cfg_in,
                            const SacConfig& cfg, std::uint64_t seed) {
    Rng net_rng(hash_stream(seed, "sac.nets"));
    SacRunResult res{PolicyNet::make(net_rng), theta0, {}, {}};
    QNet q1 = QNet::make(net_rng, "q1");
    QNet q2 = QNet::make(net_rng, "q2");
    QNet q1t = q1, q2t = q2;
    AdamState opt_pi = AdamState::make(res.policy.net.params, cfg.lr);
    AdamState opt_q1 = AdamState::make(q1.net.params, cfg.lr);
    AdamState opt_q2 = AdamState::make(q2.net.params, cfg.lr);
    ReplayBuffer buffer;
    buffer.capacity = cfg.buffer_capacity;

    EnvConfig env_cfg = env_cfg_in;
    env_cfg.horizon = static_cast<int>(cfg.total_steps);
    UnlearnEnv env(theta0, sched, ds, split, weights, env_cfg,
                   Rng(hash_stream(seed, "sac.env")));
    Rng act_rng(hash_stream(seed, "sac.actions"));
    Rng upd_rng(hash_stream(seed, "sac.updates"));

    UnlearnState s = env.reset();
    for (long t = 1; t <= cfg.total_steps; ++t) {
        PolicyAction a = policy_act(res.policy, s, act_rng);
        auto stepped = env.step(a.lambda);
        Transition tr;
        tr.s = s;
        tr.s_next = stepped.next;
        tr.lambda = a.lambda;
        tr.z = a.z;
        tr.logp = a.logp;
        tr.reward = stepped.reward;
        tr.done = stepped.done;
        buffer.push(tr);
        res.trajectory.push_back(tr);
        s = stepped.next;
        if (t >= cfg.warmup_steps && buffer.size() >= cfg.batch) {
            res.updates.push_back(sac_update(res.policy, q1, q2, q1t, q2t, buffer, cfg, opt_pi,
                                             opt_q1, opt_q2, upd_rng));
        }
    }
    res.unlearned = env.model();
    return res;
}

}  // namespace unlearn

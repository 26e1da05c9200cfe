#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "unlearn/autodiff.hpp"
#include "unlearn/nn.hpp"
#include "unlearn/siss.hpp"

namespace unlearn {

// -- context normalization ------------------------------------------------------

// log1p + running z-score (Welford) over the four unlearning-feedback
// features. Statistics update only while training.
template <std::size_t N>
struct RunningNorm {
    long count = 0;
    std::array<double, N> mean{};
    std::array<double, N> m2{};
    bool frozen = false;

    void update(const std::array<double, N>& raw) {
        if (frozen) return;
        count += 1;
        for (std::size_t i = 0; i < N; ++i) {
            const double x = std::log1p(raw[i]);
            const double delta = x - mean[i];
            mean[i] += delta / double(count);
            m2[i] += delta * (x - mean[i]);
        }
    }

    std::array<double, N> normalize(const std::array<double, N>& raw) const {
        std::array<double, N> out{};
        for (std::size_t i = 0; i < N; ++i) {
            const double x = std::log1p(raw[i]);
            const double var = count > 1 ? m2[i] / double(count - 1) : 0.0;
            out[i] = (x - mean[i]) / std::sqrt(var + 1e-8);
        }
        return out;
    }
};

// The four-feature unlearning context: losses and their gradient norms,
// after log1p and z-scoring. Raw copies retained for logging.
struct ContextVector {
    std::array<double, 4> raw{};
    std::array<double, 4> normalized{};
    bool finite = true;
};

inline ContextVector build_context(const SissStepRecord& prev, RunningNorm<4>& norm) {
    ContextVector v;
    v.raw = {prev.retain_loss, prev.forget_loss, prev.retain_grad_norm, prev.forget_grad_norm};
    for (double x : v.raw) {
        if (!std::isfinite(x)) {
            v.finite = false;
            return v;
        }
    }
    norm.update(v.raw);
    v.normalized = norm.normalize(v.raw);
    return v;
}

// -- lambda posterior -----------------------------------------------------------

struct LambdaPosterior {
    double mu = 0.0;
    double sigma = 1.0;  // > 0 via softplus head
};

// Closed-form KL(N(mu, sigma^2) || N(0, 1)) on the z-space latent.
inline double kl_prior(const LambdaPosterior& p) {
    if (!(p.sigma > 0.0)) throw ContractViolation("kl_prior: sigma must be positive");
    return 0.5 * (p.sigma * p.sigma + p.mu * p.mu - 1.0) - std::log(p.sigma);
}

// Small inference net: 4 -> 32 -> 32 -> 2 (tanh hidden; mu head linear,
// sigma head through softplus).
struct InferenceNet {
    Mlp net;

    static InferenceNet make(Rng& rng) {
        return InferenceNet{Mlp::make({4, 32, 32, 2}, rng, "inf")};
    }
};

// Graph handles for one reparameterized draw of lambda.
struct LambdaDraw {
    Value mu, sigma, z, lambda;
    double xi = 0.0;
    LambdaPosterior posterior;
    double lambda_value = 0.5;
};

// z = mu + xi * sigma, lambda = sigmoid(z); fully differentiable w.r.t. phi.
inline LambdaDraw infer_lambda_graph(Graph& g, const InferenceNet& inf, const BoundParams& bp,
                                     const ContextVector& v, double xi) {
    Tensor ctx({1, 4});
    for (std::size_t i = 0; i < 4; ++i) ctx.at(0, i) = v.normalized[i];
    Value heads = inf.net.forward(g, bp, g.constant(std::move(ctx)));  // [1,2]
    LambdaDraw d;
    d.mu = g.slice(heads, 0, 1);
    d.sigma = g.softplus(g.slice(heads, 1, 2));
    d.xi = xi;
    d.z = g.add(d.mu, g.scale(d.sigma, xi));
    d.lambda = g.sigmoid(d.z);
    d.posterior = {d.mu.val().scalar_value(), d.sigma.val().scalar_value()};
    d.lambda_value = d.lambda.val().scalar_value();
    return d;
}

// Value-only convenience wrapper.
inline std::pair<double, LambdaPosterior> infer_lambda(const InferenceNet& inf,
                                                       const ContextVector& v, Rng& rng) {
    Graph g;
    BoundParams bp = bind(g, inf.net.params);
    LambdaDraw d = infer_lambda_graph(g, inf, bp, v, rng.normal());
    return {d.lambda_value, d.posterior};
}

inline Value kl_prior_graph(Graph& g, Value mu, Value sigma) {
    Value half = g.scale(
        g.sub(g.add(g.square(sigma), g.square(mu)), g.constant(1.0)), 0.5);
    return g.sub(half, g.log(sigma));
}

// -- joint ELBO step ---------------------------------------------------------------

struct AdaptiveStepRecord {
    SissStepRecord siss;
    double mu = 0.0, sigma = 1.0, kl = 0.0, elbo = 0.0;
    bool skipped = false;  // non-finite context
};

struct AdaptiveConfig {
    double beta = 0.01;     // KL weight
    std::size_t pairs = 32; // mixture pairs per step (B/2 with B=64)
};

// One warm-up static step at lambda = 0.5 to seed the context statistics.
inline SissStepRecord adaptive_warmup(Denoiser& den, const NoiseSchedule& sched,
                                      const LabeledDataset& ds, const ForgetSplit& split,
                                      const SissWeights& w, AdamState& opt_theta,
                                      RunningNorm<4>& norm, Rng& rng, std::size_t pairs = 32) {
    ClipConfig no_clip{false, 0.0};
    SissStepRecord rec = static_step(den, sched, ds, split, w, 0.5, opt_theta, no_clip, rng,
                                     pairs);
    norm.update({rec.retain_loss, rec.forget_loss, rec.retain_grad_norm, rec.forget_grad_norm});
    return rec;
}

// One joint update of theta and phi: context from the previous step, lambda
// via the reparameterized posterior, SISS loss with in-graph importance
// ratios, plus the beta-weighted KL. A single backward pass yields both
// gradients.
inline AdaptiveStepRecord elbo_step(Denoiser& den, InferenceNet& inf, const NoiseSchedule& sched,
                                    const LabeledDataset& ds, const ForgetSplit& split,
                                    const SissWeights& w, const AdaptiveConfig& cfg,
                                    AdamState& opt_theta, AdamState& opt_phi,
                                    RunningNorm<4>& norm, const SissStepRecord& prev, Rng& rng) {
    AdaptiveStepRecord rec;
    ContextVector v = build_context(prev, norm);
    if (!v.finite) {
        rec.skipped = true;
        rec.siss = prev;
        return rec;
    }

    Graph g;
    BoundParams bp_theta = bind(g, den.params);
    BoundParams bp_phi = bind(g, inf.net.params);

    LambdaDraw draw = infer_lambda_graph(g, inf, bp_phi, v, rng.normal());
    SissPairBatch batch =
        sample_pair_batch(sched, ds, split, cfg.pairs, draw.lambda_value, rng);
    SissLossParts parts = siss_losses(g, den, bp_theta, sched, batch, w, draw.lambda);
    Value kl = kl_prior_graph(g, draw.mu, draw.sigma);
    Value elbo = g.add(parts.total, g.scale(kl, cfg.beta));

    g.backward(elbo);
    std::vector<Tensor> g_theta = collect_grads(g, bp_theta);
    std::vector<Tensor> g_phi = collect_grads(g, bp_phi);

    // Retain/forget gradient norms feed the next step's context; reuse the
    // same graph with fresh sweeps.
    g.backward(parts.retain);
    rec.siss.retain_grad_norm = grad_norm(collect_grads(g, bp_theta));
    g.backward(parts.forget);
    rec.siss.forget_grad_norm = grad_norm(collect_grads(g, bp_theta));

    rec.siss.lambda = draw.lambda_value;
    rec.siss.retain_loss = parts.retain.val().scalar_value();
    rec.siss.forget_loss = parts.forget.val().scalar_value();
    rec.siss.total_loss = parts.total.val().scalar_value();
    rec.mu = draw.posterior.mu;
    rec.sigma = draw.posterior.sigma;
    rec.kl = kl.val().scalar_value();
    rec.elbo = elbo.val().scalar_value();

    apply_adam(den.params, g_theta, opt_theta);
    apply_adam(inf.net.params, g_phi, opt_phi);
    return rec;
}

}  // namespace unlearn

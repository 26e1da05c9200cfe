#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "unlearn/autodiff.hpp"
#include "unlearn/data.hpp"
#include "unlearn/diffusion.hpp"
#include "unlearn/errors.hpp"
#include "unlearn/nn.hpp"

namespace unlearn {

enum class MixtureComponent { Retain, Forget };

// A noisy latent together with the lambda, timestep, and source pair that
// produced it.
struct MixtureLatent {
    std::vector<double> m;
    int t = 1;
    double lambda = 0.5;
    std::vector<double> x_r, x_f;
    MixtureComponent component = MixtureComponent::Retain;
};

enum class ForgetWeightMode { Eq8, Alg1 };

struct SissWeights {
    std::size_t n = 0, k = 0;
    double s = 0.1;                                 // forget-loss scale factor
    ForgetWeightMode mode = ForgetWeightMode::Eq8;  // k/(n-k) vs n/k

    double retain_coef() const { return double(n) / double(n - k); }
    double forget_coef() const {
        return mode == ForgetWeightMode::Eq8 ? double(k) / double(n - k)
                                             : double(n) / double(k);
    }
};

// -- densities ----------------------------------------------------------------

struct LogDensities {
    double log_qr, log_qf, log_qlam;
};

inline double gaussian_logpdf(const std::vector<double>& m, const std::vector<double>& x,
                              double gamma, double sigma) {
    const double var = sigma * sigma;
    double acc = -0.5 * double(m.size()) * std::log(2.0 * M_PI * var);
    for (std::size_t j = 0; j < m.size(); ++j) {
        const double r = m[j] - gamma * x[j];
        acc -= r * r / (2.0 * var);
    }
    return acc;
}

// Isotropic Gaussian log-densities of the two mixture components plus the
// mixture itself via log-sum-exp; lambda in {0,1} drops the vanished branch.
inline LogDensities log_densities(const NoiseSchedule& s, const std::vector<double>& m,
                                  const std::vector<double>& x_r, const std::vector<double>& x_f,
                                  int t, double lambda) {
    const double gamma = s.gamma_at(t), sigma = s.sigma_at(t);
    if (!(sigma > 0.0)) throw ContractViolation("log_densities: sigma must be positive");
    LogDensities out;
    out.log_qr = gaussian_logpdf(m, x_r, gamma, sigma);
    out.log_qf = gaussian_logpdf(m, x_f, gamma, sigma);
    if (lambda <= 0.0) {
        out.log_qlam = out.log_qr;
    } else if (lambda >= 1.0) {
        out.log_qlam = out.log_qf;
    } else {
        const double a = std::log1p(-lambda) + out.log_qr;
        const double b = std::log(lambda) + out.log_qf;
        const double mx = std::max(a, b);
        out.log_qlam = mx + std::log(std::exp(a - mx) + std::exp(b - mx));
    }
    return out;
}

// Bernoulli(lambda) picks the forget component, then m_t = gamma x + sigma eps.
inline MixtureLatent mixture_sample(const NoiseSchedule& s, const std::vector<double>& x_r,
                                    const std::vector<double>& x_f, int t, double lambda,
                                    Rng& rng) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw ContractViolation("mixture_sample: lambda must be in [0,1]");
    }
    MixtureLatent lat;
    lat.t = t;
    lat.lambda = lambda;
    lat.x_r = x_r;
    lat.x_f = x_f;
    lat.component = rng.bernoulli(lambda) ? MixtureComponent::Forget : MixtureComponent::Retain;
    const auto& src = lat.component == MixtureComponent::Forget ? x_f : x_r;
    lat.m.resize(src.size());
    for (std::size_t j = 0; j < src.size(); ++j) {
        lat.m[j] = s.gamma_at(t) * src[j] + s.sigma_at(t) * rng.normal();
    }
    return lat;
}

// -- batched loss graphs --------------------------------------------------------

// A mini-batch of (x_r, x_f) pairs with their mixture latents. Labels ride
// along for class-conditional denoisers.
struct SissPairBatch {
    Tensor m, x_r, x_f;            // [B, d]
    std::vector<int> ts;
    std::vector<int> labels_r, labels_f;
    std::vector<double> log_qr, log_qf, log_qlam;  // per pair
    std::vector<MixtureComponent> component;

    std::size_t size() const { return ts.size(); }
};

inline SissPairBatch sample_pair_batch(const NoiseSchedule& sched, const LabeledDataset& ds,
                                       const ForgetSplit& split, std::size_t pairs, double lambda,
                                       Rng& rng) {
    if (split.forget.empty() || split.retain.empty()) {
        throw ConfigError("sample_pair_batch: forget and retain sets must be nonempty");
    }
    SissPairBatch b;
    b.m = Tensor({pairs, ds.d});
    b.x_r = Tensor({pairs, ds.d});
    b.x_f = Tensor({pairs, ds.d});
    b.ts.resize(pairs);
    b.labels_r.resize(pairs);
    b.labels_f.resize(pairs);
    for (std::size_t i = 0; i < pairs; ++i) {
        const auto& xr = ds.items[split.retain[rng.integer(split.retain.size())]];
        const auto& xf = ds.items[split.forget[rng.integer(split.forget.size())]];
        const int t = 1 + static_cast<int>(rng.integer(static_cast<std::uint64_t>(sched.T)));
        MixtureLatent lat = mixture_sample(sched, xr.x, xf.x, t, lambda, rng);
        LogDensities ld = log_densities(sched, lat.m, xr.x, xf.x, t, lambda);
        for (std::size_t j = 0; j < ds.d; ++j) {
            b.m.at(i, j) = lat.m[j];
            b.x_r.at(i, j) = xr.x[j];
            b.x_f.at(i, j) = xf.x[j];
        }
        b.ts[i] = t;
        b.labels_r[i] = xr.label;
        b.labels_f[i] = xf.label;
        b.log_qr.push_back(ld.log_qr);
        b.log_qf.push_back(ld.log_qf);
        b.log_qlam.push_back(ld.log_qlam);
        b.component.push_back(lat.component);
    }
    return b;
}

struct SissLossParts {
    Value retain, forget, total;  // scalar graph values
    std::vector<double> log_ratio_retain, log_ratio_forget;  // per pair
};

// Builds the importance-weighted retain/forget/total losses over a pair
// batch. When `lambda_node` is set, the importance ratios are built inside
// the graph as a function of lambda so gradients reach the inference net;
// otherwise the precomputed log-space ratios are baked in as constants.
// For conditional denoisers the retain residual is conditioned on the retain
// sample's label and the forget residual on the forget sample's label.
inline SissLossParts siss_losses(Graph& g, const Denoiser& den, const BoundParams& bp,
                                 const NoiseSchedule& sched, const SissPairBatch& batch,
                                 const SissWeights& w,
                                 std::optional<Value> lambda_node = std::nullopt) {
    const std::size_t B = batch.size();
    const std::size_t d = den.d;
    const bool conditional = den.num_classes > 0;

    Tensor target_r({B, d}), target_f({B, d});
    for (std::size_t i = 0; i < B; ++i) {
        const double gamma = sched.gamma_at(batch.ts[i]);
        const double sigma = sched.sigma_at(batch.ts[i]);
        for (std::size_t j = 0; j < d; ++j) {
            target_r.at(i, j) = (batch.m.at(i, j) - gamma * batch.x_r.at(i, j)) / sigma;
            target_f.at(i, j) = (batch.m.at(i, j) - gamma * batch.x_f.at(i, j)) / sigma;
        }
    }

    Value m_in = g.constant(batch.m);
    Value pred_r = den.forward(g, bp, m_in, batch.ts, sched.T,
                               conditional ? &batch.labels_r : nullptr);
    Value pred_f = conditional ? den.forward(g, bp, m_in, batch.ts, sched.T, &batch.labels_f)
                               : pred_r;

    Value sq_r = row_sq_norm(g, g.sub(g.constant(std::move(target_r)), pred_r));  // [B,1]
    Value sq_f = row_sq_norm(g, g.sub(g.constant(std::move(target_f)), pred_f));

    SissLossParts parts;
    Value w_r{&g, -1}, w_f{&g, -1};
    if (lambda_node) {
        // w_r = q_r/q_lam = 1/((1-lam) + lam e^{log qf - log qr}); the density
        // ratio constants are clamped so extreme pairs stay finite.
        Tensor rat_fr({B, 1}), rat_rf({B, 1});
        for (std::size_t i = 0; i < B; ++i) {
            const double delta = batch.log_qf[i] - batch.log_qr[i];
            rat_fr.at(i, 0) = std::exp(std::clamp(delta, -60.0, 60.0));
            rat_rf.at(i, 0) = std::exp(std::clamp(-delta, -60.0, 60.0));
        }
        Value lam = *lambda_node;
        Value one_minus = g.sub(g.constant(1.0), lam);
        Value u_r = g.add(g.mul(g.constant(rat_fr), lam), one_minus);
        Value u_f = g.add(g.mul(g.constant(rat_rf), one_minus), lam);
        w_r = g.exp(g.scale(g.log(u_r), -1.0));
        w_f = g.exp(g.scale(g.log(u_f), -1.0));
        for (std::size_t i = 0; i < B; ++i) {
            parts.log_ratio_retain.push_back(std::log(w_r.val()[i]));
            parts.log_ratio_forget.push_back(std::log(w_f.val()[i]));
        }
    } else {
        Tensor cr({B, 1}), cf({B, 1});
        for (std::size_t i = 0; i < B; ++i) {
            const double lr = batch.log_qr[i] - batch.log_qlam[i];
            const double lf = batch.log_qf[i] - batch.log_qlam[i];
            cr.at(i, 0) = std::exp(lr);
            cf.at(i, 0) = std::exp(lf);
            parts.log_ratio_retain.push_back(lr);
            parts.log_ratio_forget.push_back(lf);
        }
        w_r = g.constant(std::move(cr));
        w_f = g.constant(std::move(cf));
    }

    parts.retain = g.scale(g.mean(g.mul(w_r, sq_r)), w.retain_coef());
    parts.forget = g.scale(g.mean(g.mul(w_f, sq_f)), w.forget_coef());
    parts.total = g.sub(parts.retain, g.scale(parts.forget, 1.0 + w.s));
    return parts;
}

// -- static-lambda unlearning step ---------------------------------------------

struct ClipConfig {
    bool enabled = true;
    double factor = 2.0;  // forget-term gradient norm cap, relative to retain
};

struct SissStepRecord {
    double lambda = 0.5;
    double retain_loss = 0.0, forget_loss = 0.0, total_loss = 0.0;
    double retain_grad_norm = 0.0, forget_grad_norm = 0.0;
};

// One Algorithm-1 step: sample a pair batch at fixed lambda, build the loss,
// backprop the retain and forget terms separately (their norms feed logging
// and the optional clip rule), and take one Adam step on theta.
inline SissStepRecord static_step(Denoiser& den, const NoiseSchedule& sched,
                                  const LabeledDataset& ds, const ForgetSplit& split,
                                  const SissWeights& w, double lambda, AdamState& opt,
                                  const ClipConfig& clip, Rng& rng, std::size_t pairs = 32) {
    SissPairBatch batch = sample_pair_batch(sched, ds, split, pairs, lambda, rng);
    Graph g;
    BoundParams bp = bind(g, den.params);
    SissLossParts parts = siss_losses(g, den, bp, sched, batch, w);

    g.backward(parts.retain);
    std::vector<Tensor> g_retain = collect_grads(g, bp);
    g.backward(parts.forget);
    std::vector<Tensor> g_forget = collect_grads(g, bp);

    SissStepRecord rec;
    rec.lambda = lambda;
    rec.retain_loss = parts.retain.val().scalar_value();
    rec.forget_loss = parts.forget.val().scalar_value();
    rec.total_loss = parts.total.val().scalar_value();
    rec.retain_grad_norm = grad_norm(g_retain);
    rec.forget_grad_norm = grad_norm(g_forget);

    // total gradient = g_retain - (1+s) * clip(g_forget)
    double forget_scale = -(1.0 + w.s);
    if (clip.enabled) {
        const double term_norm = (1.0 + w.s) * rec.forget_grad_norm;
        const double cap = clip.factor * rec.retain_grad_norm;
        if (term_norm > cap) {
            forget_scale *= term_norm > 0.0 ? cap / term_norm : 0.0;
        }
    }
    std::vector<Tensor> total = g_retain;
    axpy_grads(total, g_forget, forget_scale);
    apply_adam(den.params, total, opt);
    return rec;
}

}  // namespace unlearn

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <thread>
#include <vector>

#include "unlearn/autodiff.hpp"
#include "unlearn/data.hpp"
#include "unlearn/errors.hpp"
#include "unlearn/nn.hpp"
#include "unlearn/rng.hpp"
#include "unlearn/tensor.hpp"

namespace unlearn {

// -- noise schedule -----------------------------------------------------------

struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta, alpha, alpha_bar, gamma, sigma;  // index 0 == t=1

    double gamma_at(int t) const { return gamma.at(static_cast<std::size_t>(t - 1)); }
    double sigma_at(int t) const { return sigma.at(static_cast<std::size_t>(t - 1)); }
    double beta_at(int t) const { return beta.at(static_cast<std::size_t>(t - 1)); }
    double alpha_at(int t) const { return alpha.at(static_cast<std::size_t>(t - 1)); }
};

inline NoiseSchedule build_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw ConfigError("build_schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw ConfigError("build_schedule: need 0 < beta_start <= beta_end < 1");
    }
    NoiseSchedule s;
    s.T = T;
    double abar = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double b = T == 1 ? beta_start
                                : beta_start + (beta_end - beta_start) * (t - 1) / double(T - 1);
        abar *= 1.0 - b;
        s.beta.push_back(b);
        s.alpha.push_back(1.0 - b);
        s.alpha_bar.push_back(abar);
        s.gamma.push_back(std::sqrt(abar));
        s.sigma.push_back(std::sqrt(1.0 - abar));
    }
    return s;
}

// m_t = gamma_t x0 + sigma_t eps with eps ~ N(0, I).
inline std::pair<std::vector<double>, std::vector<double>> forward_marginal(
    const NoiseSchedule& s, const std::vector<double>& x0, int t, Rng& rng) {
    if (t < 1 || t > s.T) throw ContractViolation("forward_marginal: t out of range");
    std::vector<double> eps(x0.size()), m(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) {
        eps[i] = rng.normal();
        m[i] = s.gamma_at(t) * x0[i] + s.sigma_at(t) * eps[i];
    }
    return {std::move(m), std::move(eps)};
}

// -- epsilon-prediction denoiser ---------------------------------------------

// MLP noise predictor: input = data ⊕ 32-dim sinusoidal time features; an
// optional learned 16-dim class embedding is projected and added to the
// first hidden pre-activation. Two hidden layers of 128 tanh units.
struct Denoiser {
    static constexpr std::size_t kTimeDim = 32;
    static constexpr std::size_t kClassDim = 16;

    std::size_t d = 0;
    int num_classes = 0;  // 0 => unconditional
    std::size_t hidden = 128;
    ParamSet params;

    static Denoiser make(std::size_t d, int num_classes, Rng& rng, std::size_t hidden = 128) {
        Denoiser dn;
        dn.d = d;
        dn.num_classes = num_classes;
        dn.hidden = hidden;
        const std::size_t in = d + kTimeDim;
        auto init = [&](std::vector<std::size_t> shape, double scale) {
            Tensor t(std::move(shape));
            for (double& v : t.vec()) v = scale * rng.normal();
            return t;
        };
        auto xavier = [&](std::size_t fi, std::size_t fo) {
            return init({fi, fo}, std::sqrt(2.0 / double(fi + fo)));
        };
        dn.params.add("den.W0", xavier(in, hidden));
        dn.params.add("den.b0", Tensor({hidden}));
        dn.params.add("den.W1", xavier(hidden, hidden));
        dn.params.add("den.b1", Tensor({hidden}));
        dn.params.add("den.W2", xavier(hidden, d));
        dn.params.add("den.b2", Tensor({d}));
        if (num_classes > 0) {
            dn.params.add("den.class_table",
                          init({static_cast<std::size_t>(num_classes), kClassDim}, 0.1));
            dn.params.add("den.class_proj", xavier(kClassDim, hidden));
        }
        return dn;
    }

    Tensor time_features(const std::vector<int>& ts, int T) const {
        Tensor f({ts.size(), kTimeDim});
        for (std::size_t i = 0; i < ts.size(); ++i) {
            const double u = static_cast<double>(ts[i]) / static_cast<double>(T);
            for (std::size_t k = 0; k < kTimeDim / 2; ++k) {
                const double w = 2.0 * M_PI * std::pow(100.0, double(k) / (kTimeDim / 2.0 - 1.0));
                f.at(i, 2 * k) = std::sin(w * u);
                f.at(i, 2 * k + 1) = std::cos(w * u);
            }
        }
        return f;
    }

    Tensor one_hot(const std::vector<int>& labels) const {
        Tensor oh({labels.size(), static_cast<std::size_t>(num_classes)});
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] < 0 || labels[i] >= num_classes) {
                throw ContractViolation("Denoiser: label out of range");
            }
            oh.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
        }
        return oh;
    }

    // x: [B, d] graph value; ts: per-sample timesteps; labels required iff
    // the model is conditional.
    Value forward(Graph& g, const BoundParams& bp, Value x, const std::vector<int>& ts, int T,
                  const std::vector<int>* labels) const {
        Value in = g.concat(x, g.constant(time_features(ts, T)));
        Value pre0 = g.add(g.matmul(in, bp.leaves[0]), bp.leaves[1]);
        if (num_classes > 0) {
            if (labels == nullptr) throw ContractViolation("Denoiser: labels required");
            Value sel = g.constant(one_hot(*labels));
            Value emb = g.matmul(g.matmul(sel, bp.leaves[6]), bp.leaves[7]);
            pre0 = g.add(pre0, emb);
        }
        Value h1 = g.tanh(pre0);
        Value h2 = g.tanh(g.add(g.matmul(h1, bp.leaves[2]), bp.leaves[3]));
        return g.add(g.matmul(h2, bp.leaves[4]), bp.leaves[5]);
    }

    // Graph-free forward for sampling loops.
    Tensor forward_plain(const Tensor& x, const std::vector<int>& ts, int T,
                         const std::vector<int>* labels) const {
        Graph g;
        BoundParams bp;
        bp.leaves.reserve(params.count());
        for (const Tensor& t : params.values) bp.leaves.push_back(g.leaf(t, false));
        return forward(g, bp, g.constant(x), ts, T, labels).val();
    }
};

// -- training objective -------------------------------------------------------

struct DdpmBatch {
    Tensor x0;                 // [B, d]
    std::vector<int> labels;   // empty for unconditional
};

// Mean over the batch of ||eps - eps_theta(m_t, t, c)||^2, t uniform in
// {1..T} per element.
inline Value ddpm_loss(Graph& g, const Denoiser& den, const BoundParams& bp,
                       const NoiseSchedule& sched, const DdpmBatch& batch, Rng& rng) {
    const std::size_t B = batch.x0.rows();
    if (B == 0) throw ContractViolation("ddpm_loss: empty batch");
    const std::size_t d = batch.x0.cols();
    Tensor m({B, d}), eps({B, d});
    std::vector<int> ts(B);
    for (std::size_t i = 0; i < B; ++i) {
        const int t = 1 + static_cast<int>(rng.integer(static_cast<std::uint64_t>(sched.T)));
        ts[i] = t;
        for (std::size_t j = 0; j < d; ++j) {
            const double e = rng.normal();
            eps.at(i, j) = e;
            m.at(i, j) = sched.gamma_at(t) * batch.x0.at(i, j) + sched.sigma_at(t) * e;
        }
    }
    Value pred = den.forward(g, bp, g.constant(std::move(m)), ts, sched.T,
                             batch.labels.empty() ? nullptr : &batch.labels);
    Value resid = g.sub(g.constant(std::move(eps)), pred);
    return g.mean(row_sq_norm(g, resid));
}

// -- ancestral sampling --------------------------------------------------------

// Standard DDPM chain from x_T ~ N(0, I); posterior variance beta_t. Pure
// given (parameters, seed): each sample row draws from its own substream, so
// the result is independent of chunking/thread count.
inline std::vector<std::vector<double>> ancestral_sample(const Denoiser& den,
                                                         const NoiseSchedule& sched,
                                                         std::size_t n,
                                                         std::optional<int> condition,
                                                         std::uint64_t seed,
                                                         unsigned threads = 1) {
    const std::size_t d = den.d;
    std::vector<std::vector<double>> out(n, std::vector<double>(d));
    if (n == 0) return out;

    auto run_chunk = [&](std::size_t lo, std::size_t hi) {
        const std::size_t B = hi - lo;
        std::vector<Rng> rngs;
        rngs.reserve(B);
        for (std::size_t i = lo; i < hi; ++i) rngs.emplace_back(hash_stream(seed, std::to_string(i)));
        Tensor x({B, d});
        for (std::size_t i = 0; i < B; ++i)
            for (std::size_t j = 0; j < d; ++j) x.at(i, j) = rngs[i].normal();
        std::vector<int> labels;
        if (condition) labels.assign(B, *condition);
        for (int t = sched.T; t >= 1; --t) {
            std::vector<int> ts(B, t);
            Tensor pred = den.forward_plain(x, ts, sched.T, condition ? &labels : nullptr);
            const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha_at(t));
            const double coef = sched.beta_at(t) / sched.sigma_at(t);
            const double noise_std = t > 1 ? std::sqrt(sched.beta_at(t)) : 0.0;
            for (std::size_t i = 0; i < B; ++i) {
                for (std::size_t j = 0; j < d; ++j) {
                    double v = inv_sqrt_alpha * (x.at(i, j) - coef * pred.at(i, j));
                    if (noise_std > 0.0) v += noise_std * rngs[i].normal();
                    x.at(i, j) = v;
                }
            }
        }
        for (std::size_t i = 0; i < B; ++i)
            for (std::size_t j = 0; j < d; ++j) out[lo + i][j] = x.at(i, j);
    };

    threads = std::max(1u, threads);
    if (threads == 1 || n < 2 * threads) {
        run_chunk(0, n);
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (n + threads - 1) / threads;
        for (std::size_t lo = 0; lo < n; lo += chunk) {
            pool.emplace_back(run_chunk, lo, std::min(n, lo + chunk));
        }
        for (auto& th : pool) th.join();
    }
    return out;
}

// -- base training loop --------------------------------------------------------

struct TrainBaseConfig {
    long steps = 2000;
    std::size_t batch = 64;
    double lr = 2e-3;
    bool conditional = true;
};

struct TrainLogRow {
    long step;
    double loss;
};

inline DdpmBatch draw_batch(const LabeledDataset& ds, std::size_t batch, bool conditional,
                            Rng& rng) {
    DdpmBatch b;
    b.x0 = Tensor({batch, ds.d});
    if (conditional) b.labels.resize(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        const std::size_t idx = rng.integer(ds.size());
        const auto& item = ds.items[idx];
        for (std::size_t j = 0; j < ds.d; ++j) b.x0.at(i, j) = item.x[j];
        if (conditional) b.labels[i] = item.label;
    }
    return b;
}

// Runs ddpm_loss + Adam for the configured number of steps. Returns the
// trained model and a per-step loss log. Throws FormatError-free; divergence
// surfaces as a non-finite loss the caller can inspect.
inline std::pair<Denoiser, std::vector<TrainLogRow>> train_base(const LabeledDataset& ds,
                                                                const NoiseSchedule& sched,
                                                                const TrainBaseConfig& cfg,
                                                                std::uint64_t seed) {
    if (ds.size() == 0) throw ConfigError("train_base: empty dataset");
    Rng init_rng(hash_stream(seed, "train-base.init"));
    Rng step_rng(hash_stream(seed, "train-base.steps"));
    Denoiser den = Denoiser::make(ds.d, cfg.conditional ? ds.num_classes : 0, init_rng);
    AdamState opt = AdamState::make(den.params, cfg.lr);
    std::vector<TrainLogRow> log;
    log.reserve(static_cast<std::size_t>(cfg.steps));
    for (long step = 0; step < cfg.steps; ++step) {
        DdpmBatch batch = draw_batch(ds, cfg.batch, cfg.conditional, step_rng);
        Graph g;
        BoundParams bp = bind(g, den.params);
        Value loss = ddpm_loss(g, den, bp, sched, batch, step_rng);
        g.backward(loss);
        apply_adam(den.params, collect_grads(g, bp), opt);
        log.push_back({step, loss.val().scalar_value()});
    }
    return {std::move(den), std::move(log)};
}

}  // namespace unlearn

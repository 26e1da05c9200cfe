#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "unlearn/adaptive.hpp"
#include "unlearn/autodiff.hpp"
#include "unlearn/diffusion.hpp"
#include "unlearn/nn.hpp"

namespace unlearn {

// -- one-step conditional generator ---------------------------------------------

// g(n, c): d-dim noise plus a learned 16-dim class embedding (projected and
// added to the first hidden pre-activation) -> d-dim sample. Same hidden
// stack as the Denoiser, minus the time features.
struct Generator {
    static constexpr std::size_t kClassDim = 16;

    std::size_t d = 0;
    int num_classes = 0;
    std::size_t hidden = 128;
    ParamSet params;

    static Generator make(std::size_t d, int num_classes, Rng& rng, std::size_t hidden = 128) {
        if (num_classes < 1) throw ConfigError("Generator: need at least one class");
        Generator gen;
        gen.d = d;
        gen.num_classes = num_classes;
        gen.hidden = hidden;
        auto init = [&](std::vector<std::size_t> shape, double scale) {
            Tensor t(std::move(shape));
            for (double& v : t.vec()) v = scale * rng.normal();
            return t;
        };
        auto xavier = [&](std::size_t fi, std::size_t fo) {
            return init({fi, fo}, std::sqrt(2.0 / double(fi + fo)));
        };
        gen.params.add("gen.W0", xavier(d, hidden));
        gen.params.add("gen.b0", Tensor({hidden}));
        gen.params.add("gen.W1", xavier(hidden, hidden));
        gen.params.add("gen.b1", Tensor({hidden}));
        gen.params.add("gen.W2", xavier(hidden, d));
        gen.params.add("gen.b2", Tensor({d}));
        gen.params.add("gen.class_table",
                       init({static_cast<std::size_t>(num_classes), kClassDim}, 0.1));
        gen.params.add("gen.class_proj", xavier(kClassDim, hidden));
        return gen;
    }

    Tensor one_hot(const std::vector<int>& labels) const {
        Tensor oh({labels.size(), static_cast<std::size_t>(num_classes)});
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] < 0 || labels[i] >= num_classes) {
                throw ContractViolation("Generator: label out of range");
            }
            oh.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
        }
        return oh;
    }

    Value forward(Graph& g, const BoundParams& bp, Value n,
                  const std::vector<int>& labels) const {
        Value pre0 = g.add(g.matmul(n, bp.leaves[0]), bp.leaves[1]);
        Value emb = g.matmul(g.matmul(g.constant(one_hot(labels)), bp.leaves[6]), bp.leaves[7]);
        Value h1 = g.tanh(g.add(pre0, emb));
        Value h2 = g.tanh(g.add(g.matmul(h1, bp.leaves[2]), bp.leaves[3]));
        return g.add(g.matmul(h2, bp.leaves[4]), bp.leaves[5]);
    }

    Tensor forward_plain(const Tensor& n, const std::vector<int>& labels) const {
        Graph g;
        BoundParams bp;
        bp.leaves.reserve(params.count());
        for (const Tensor& t : params.values) bp.leaves.push_back(g.leaf(t, false));
        return forward(g, bp, g.constant(n), labels).val();
    }
};

// n ~ N(0, I), all rows conditioned per `labels`.
inline Tensor generator_forward(const Generator& gen, std::size_t n_samples,
                                const std::vector<int>& labels, Rng& rng) {
    if (labels.size() != n_samples) throw ContractViolation("generator_forward: label count");
    Tensor n({n_samples, gen.d});
    for (double& v : n.vec()) v = rng.normal();
    return gen.forward_plain(n, labels);
}

// -- fake score network ----------------------------------------------------------

// Conditional mean-predictor x_psi(z_t, c, t) in the Denoiser architecture
// family; the head predicts x directly rather than epsilon.
struct FakeScoreNet {
    Denoiser net;

    static FakeScoreNet make(std::size_t d, int num_classes, Rng& rng) {
        return FakeScoreNet{Denoiser::make(d, num_classes, rng)};
    }

    Tensor mean_plain(const Tensor& z, const std::vector<int>& ts, int T,
                      const std::vector<int>& labels) const {
        return net.forward_plain(z, ts, T, &labels);
    }
};

// Teacher mean prediction via Tweedie: x_hat = (z_t - sigma_t eps_hat) / gamma_t.
inline Tensor teacher_mean(const Denoiser& teacher, const NoiseSchedule& sched, const Tensor& z,
                           const std::vector<int>& ts, const std::vector<int>& labels) {
    Tensor eps = teacher.forward_plain(z, ts, sched.T, &labels);
    Tensor out({z.rows(), z.cols()});
    for (std::size_t i = 0; i < z.rows(); ++i) {
        const double gamma = sched.gamma_at(ts[i]);
        const double sigma = sched.sigma_at(ts[i]);
        for (std::size_t j = 0; j < z.cols(); ++j) {
            out.at(i, j) = (z.at(i, j) - sigma * eps.at(i, j)) / gamma;
        }
    }
    return out;
}

// One DSM step on psi over generator samples: x ~ g(n, c), z_t = a_t x +
// sigma_t eps, minimize mean ||x_psi(z_t, c, t) - x||^2. The generator is
// read-only here.
inline double fake_score_update(FakeScoreNet& fake, const Generator& gen,
                                const NoiseSchedule& sched, const std::vector<int>& classes,
                                std::size_t batch, AdamState& opt, Rng& rng) {
    if (classes.empty()) throw ConfigError("fake_score_update: empty class list");
    std::vector<int> labels(batch);
    for (auto& c : labels) c = classes[rng.integer(classes.size())];
    Tensor x = generator_forward(gen, batch, labels, rng);
    std::vector<int> ts(batch);
    Tensor z({batch, gen.d});
    for (std::size_t i = 0; i < batch; ++i) {
        ts[i] = 1 + static_cast<int>(rng.integer(static_cast<std::uint64_t>(sched.T)));
        for (std::size_t j = 0; j < gen.d; ++j) {
            z.at(i, j) = sched.gamma_at(ts[i]) * x.at(i, j) + sched.sigma_at(ts[i]) * rng.normal();
        }
    }
    Graph g;
    BoundParams bp = bind(g, fake.net.params);
    Value pred = fake.net.forward(g, bp, g.constant(std::move(z)), ts, sched.T, &labels);
    Value loss = g.mean(row_sq_norm(g, g.sub(pred, g.constant(x))));
    g.backward(loss);
    apply_adam(fake.net.params, collect_grads(g, bp), opt);
    return loss.val().scalar_value();
}

// -- the practical SFD loss (Eq. 12 form) -----------------------------------------

// omega_i = sigma^4 a^2 C |x_phi - x|_1 with C = 1 / (d * batch), no
// gradient flow.
inline std::vector<double> sfd_omega(const Tensor& x_phi, const Tensor& x,
                                     const std::vector<int>& ts, const NoiseSchedule& sched) {
    const double C = 1.0 / (double(x.cols()) * double(x.rows()));
    std::vector<double> omega(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const double a = sched.gamma_at(ts[i]);
        const double s = sched.sigma_at(ts[i]);
        double l1 = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) l1 += std::fabs(x_phi.at(i, j) - x.at(i, j));
        omega[i] = s * s * s * s * a * a * C * l1;
    }
    return omega;
}

// sum_i omega_i a_i^2 sigma_i^4 [ (1-alpha) ||phi_i - psi_i||^2
//                                 + (phi_i - psi_i)^T (psi_i - x_i) ].
// Teacher and fake outputs enter as constants; only x carries gradient.
inline Value sfd_hat_loss(Graph& g, const Tensor& x_phi, const Tensor& x_psi, Value x,
                          const std::vector<double>& omega, const std::vector<int>& ts,
                          const NoiseSchedule& sched, double alpha) {
    const std::size_t B = x_phi.rows(), d = x_phi.cols();
    if (x_psi.rows() != B || omega.size() != B || ts.size() != B) {
        throw ContractViolation("sfd_hat_loss: batch size mismatch");
    }
    Tensor weighted_diff({B, d});  // coeff_i * (phi_i - psi_i)
    double const_term = 0.0;
    for (std::size_t i = 0; i < B; ++i) {
        const double a = sched.gamma_at(ts[i]);
        const double s = sched.sigma_at(ts[i]);
        const double coeff = omega[i] * a * a * s * s * s * s;
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = x_phi.at(i, j) - x_psi.at(i, j);
            weighted_diff.at(i, j) = coeff * diff;
            sq += diff * diff;
        }
        const_term += coeff * (1.0 - alpha) * sq;
    }
    Value inner = g.sum(g.mul(g.constant(std::move(weighted_diff)),
                              g.sub(g.constant(x_psi), x)));
    return g.add(g.constant(const_term), inner);
}

// -- alternating rounds -----------------------------------------------------------

struct SfdClassConfig {
    std::vector<int> retain;  // C_r
    int c_f = -1;             // class to forget
    int c_o = -1;             // override class the teacher is redirected to
};

struct SfdRoundRecord {
    double fake_loss = 0.0;
    double distill_loss = 0.0;
    double forget_loss = 0.0;
    double total_loss = 0.0;
    double omega_mean = 0.0;
    double lambda = 1.0;  // multiclass rounds record the sampled mixture weight
};

struct SfdConfig {
    double alpha = 1.2;
    double lambda_sfd = 1.0;
    std::size_t batch = 64;
    double lr_gen = 1e-3;
    double lr_fake = 1e-3;
    long rounds = 400;
};

namespace detail_sfd {

struct HatTerm {
    Value loss;
    double omega_mean = 0.0;
};

// Builds one L-hat term: generator conditioned on gen_class (per-sample),
// teacher on c1, fake on c2; z_t, omega, and both net outputs are computed
// outside the graph.
inline HatTerm hat_term(Graph& g, const Generator& gen, const BoundParams& bp_gen,
                        const FakeScoreNet& fake, const Denoiser& teacher,
                        const NoiseSchedule& sched, const std::vector<int>& gen_labels,
                        const std::vector<int>& c1_labels, const std::vector<int>& c2_labels,
                        double alpha, Rng& rng) {
    const std::size_t B = gen_labels.size();
    Tensor n({B, gen.d});
    for (double& v : n.vec()) v = rng.normal();
    Value x = gen.forward(g, bp_gen, g.constant(std::move(n)), gen_labels);
    const Tensor& xv = x.val();

    std::vector<int> ts(B);
    Tensor z({B, gen.d});
    for (std::size_t i = 0; i < B; ++i) {
        ts[i] = 1 + static_cast<int>(rng.integer(static_cast<std::uint64_t>(sched.T)));
        for (std::size_t j = 0; j < gen.d; ++j) {
            z.at(i, j) = sched.gamma_at(ts[i]) * xv.at(i, j) +
                         sched.sigma_at(ts[i]) * rng.normal();
        }
    }
    Tensor phi = teacher_mean(teacher, sched, z, ts, c1_labels);
    Tensor psi = fake.mean_plain(z, ts, sched.T, c2_labels);
    std::vector<double> omega = sfd_omega(phi, xv, ts, sched);
    HatTerm term{sfd_hat_loss(g, phi, psi, x, omega, ts, sched, alpha), 0.0};
    for (double w : omega) term.omega_mean += w;
    term.omega_mean /= double(B);
    return term;
}

}  // namespace detail_sfd

// One alternation: a fake-score DSM step, then one generator Adam step on
// E_{c_r}[L-hat(c_r, c_r)] + lambda_sfd * L-hat(c_o, c_f).
inline SfdRoundRecord sfd_round(Generator& gen, FakeScoreNet& fake, const Denoiser& teacher,
                                const NoiseSchedule& sched, const SfdClassConfig& classes,
                                const SfdConfig& cfg, AdamState& opt_gen, AdamState& opt_fake,
                                Rng& rng) {
    for (int c : classes.retain) {
        if (c == classes.c_f) throw ConfigError("sfd_round: forget class in retain set");
    }
    if (classes.retain.empty()) throw ConfigError("sfd_round: empty retain set");

    SfdRoundRecord rec;
    std::vector<int> all_classes = classes.retain;
    all_classes.push_back(classes.c_f);
    rec.fake_loss = fake_score_update(fake, gen, sched, all_classes, cfg.batch, opt_fake, rng);

    Graph g;
    BoundParams bp_gen = bind(g, gen.params);

    std::vector<int> retain_labels(cfg.batch);
    for (auto& c : retain_labels) c = classes.retain[rng.integer(classes.retain.size())];
    auto distill = detail_sfd::hat_term(g, gen, bp_gen, fake, teacher, sched, retain_labels,
                                        retain_labels, retain_labels, cfg.alpha, rng);
    Value total = distill.loss;
    rec.distill_loss = distill.loss.val().scalar_value();
    rec.omega_mean = distill.omega_mean;

    if (cfg.lambda_sfd != 0.0) {
        std::vector<int> forget_labels(cfg.batch, classes.c_f);
        std::vector<int> override_labels(cfg.batch, classes.c_o);
        auto forget = detail_sfd::hat_term(g, gen, bp_gen, fake, teacher, sched, forget_labels,
                                           override_labels, forget_labels, cfg.alpha, rng);
        rec.forget_loss = forget.loss.val().scalar_value();
        rec.omega_mean = 0.5 * (rec.omega_mean + forget.omega_mean);
        total = g.add(total, g.scale(forget.loss, cfg.lambda_sfd));
    }
    rec.total_loss = total.val().scalar_value();
    g.backward(total);
    apply_adam(gen.params, collect_grads(g, bp_gen), opt_gen);
    return rec;
}

// -- multi-class adaptive forgetting (the §5.2 extension) ---------------------------

// Per-class log-density of a noisy latent; injected so the responsibility
// weights stay decoupled from any particular data model.
using ClassLogDensity = std::function<double(const std::vector<double>& z, int cls, int t)>;

// Softmax over mean per-class log-likelihoods; the lambda-dependent mixture
// normalizer is shared across classes and cancels.
inline std::vector<double> responsibility_weights(const std::vector<double>& mean_logliks) {
    if (mean_logliks.empty()) throw ConfigError("responsibility_weights: empty input");
    const double m = *std::max_element(mean_logliks.begin(), mean_logliks.end());
    std::vector<double> w(mean_logliks.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = std::exp(mean_logliks[i] - m);
        sum += w[i];
    }
    for (double& v : w) v /= sum;
    return w;
}

// One multi-class round: fake update, then a generator step on
// L-hat(c_r, c_r) + lambda_sfd * sum_{c_o} w(c_o) L-hat(c_o, c_f) with
// lambda ~ q_phi and w = responsibility softmax over the retain classes.
inline SfdRoundRecord multiclass_adaptive_round(Generator& gen, FakeScoreNet& fake,
                                                const Denoiser& teacher,
                                                const InferenceNet& inf,
                                                const ContextVector& context,
                                                const NoiseSchedule& sched,
                                                const std::vector<int>& retain_classes, int c_f,
                                                const ClassLogDensity& log_density,
                                                const SfdConfig& cfg, AdamState& opt_gen,
                                                AdamState& opt_fake, Rng& rng) {
    if (retain_classes.empty()) throw ConfigError("multiclass_adaptive_round: empty retain set");
    for (int c : retain_classes) {
        if (c == c_f) throw ConfigError("multiclass_adaptive_round: forget class in retain set");
    }

    SfdRoundRecord rec;
    std::vector<int> all_classes = retain_classes;
    all_classes.push_back(c_f);
    rec.fake_loss = fake_score_update(fake, gen, sched, all_classes, cfg.batch, opt_fake, rng);

    auto [lambda, posterior] = infer_lambda(inf, context, rng);
    rec.lambda = lambda;
    (void)posterior;

    Graph g;
    BoundParams bp_gen = bind(g, gen.params);

    std::vector<int> retain_labels(cfg.batch);
    for (auto& c : retain_labels) c = retain_classes[rng.integer(retain_classes.size())];
    auto distill = detail_sfd::hat_term(g, gen, bp_gen, fake, teacher, sched, retain_labels,
                                        retain_labels, retain_labels, cfg.alpha, rng);
    Value total = distill.loss;
    rec.distill_loss = distill.loss.val().scalar_value();
    rec.omega_mean = distill.omega_mean;

    // Responsibilities from the latent's per-class likelihood on a shared
    // probe batch at the sampled lambda's forward noise level.
    const std::size_t B = cfg.batch;
    std::vector<int> forget_labels(B, c_f);
    Tensor probe = generator_forward(gen, B, forget_labels, rng);
    std::vector<int> probe_ts(B);
    std::vector<std::vector<double>> probe_z(B, std::vector<double>(gen.d));
    for (std::size_t i = 0; i < B; ++i) {
        probe_ts[i] = 1 + static_cast<int>(rng.integer(static_cast<std::uint64_t>(sched.T)));
        for (std::size_t j = 0; j < gen.d; ++j) {
            probe_z[i][j] = sched.gamma_at(probe_ts[i]) * probe.at(i, j) +
                            sched.sigma_at(probe_ts[i]) * rng.normal();
        }
    }
    std::vector<double> mean_logliks(retain_classes.size(), 0.0);
    for (std::size_t c = 0; c < retain_classes.size(); ++c) {
        for (std::size_t i = 0; i < B; ++i) {
            mean_logliks[c] += log_density(probe_z[i], retain_classes[c], probe_ts[i]);
        }
        mean_logliks[c] /= double(B);
    }
    std::vector<double> w = responsibility_weights(mean_logliks);

    double forget_value = 0.0;
    for (std::size_t c = 0; c < retain_classes.size(); ++c) {
        std::vector<int> override_labels(cfg.batch, retain_classes[c]);
        auto forget = detail_sfd::hat_term(g, gen, bp_gen, fake, teacher, sched, forget_labels,
                                           override_labels, forget_labels, cfg.alpha, rng);
        forget_value += w[c] * forget.loss.val().scalar_value();
        total = g.add(total, g.scale(forget.loss, cfg.lambda_sfd * w[c]));
    }
    rec.forget_loss = forget_value;
    rec.total_loss = total.val().scalar_value();
    g.backward(total);
    apply_adam(gen.params, collect_grads(g, bp_gen), opt_gen);
    return rec;
}

// -- driver -------------------------------------------------------------------------

struct SfdRunResult {
    Generator gen;
    FakeScoreNet fake;
    std::vector<SfdRoundRecord> rounds;
};

inline SfdRunResult run_sfd(const Denoiser& teacher, const NoiseSchedule& sched,
                            const SfdClassConfig& classes, const SfdConfig& cfg,
                            std::uint64_t seed) {
    Rng init_rng(hash_stream(seed, "sfd.init"));
    SfdRunResult res{Generator::make(teacher.d, teacher.num_classes, init_rng),
                     FakeScoreNet::make(teacher.d, teacher.num_classes, init_rng),
                     {}};
    AdamState opt_gen = AdamState::make(res.gen.params, cfg.lr_gen);
    AdamState opt_fake = AdamState::make(res.fake.net.params, cfg.lr_fake);
    Rng rng(hash_stream(seed, "sfd.rounds"));
    res.rounds.reserve(static_cast<std::size_t>(cfg.rounds));
    for (long r = 0; r < cfg.rounds; ++r) {
        res.rounds.push_back(
            sfd_round(res.gen, res.fake, teacher, sched, classes, cfg, opt_gen, opt_fake, rng));
    }
    return res;
}

}  // namespace unlearn

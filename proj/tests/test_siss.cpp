#include <catch_amalgamated.hpp>

#include <cmath>

#include "unlearn/siss.hpp"

using namespace unlearn;

namespace {

// A degenerate schedule with gamma = sigma = 1 at t = 1; lets the density
// oracles be evaluated in closed form without the gamma^2 + sigma^2 = 1 tie.
NoiseSchedule unit_schedule() {
    NoiseSchedule s;
    s.T = 1;
    s.beta = {0.0};
    s.alpha = {1.0};
    s.alpha_bar = {1.0};
    s.gamma = {1.0};
    s.sigma = {1.0};
    return s;
}

}  // namespace

TEST_CASE("weights: retain and forget coefficients") {
    SissWeights w;
    w.n = 4400;
    w.k = 100;
    CHECK(w.retain_coef() == Catch::Approx(4400.0 / 4300.0).margin(1e-15));
    CHECK(w.forget_coef() == Catch::Approx(100.0 / 4300.0).margin(1e-15));
    w.mode = ForgetWeightMode::Alg1;
    CHECK(w.forget_coef() == Catch::Approx(44.0).margin(1e-15));
}

TEST_CASE("densities: 1-D oracle at gamma = sigma = 1") {
    NoiseSchedule s = unit_schedule();
    const std::vector<double> m = {0.0}, x_r = {0.0}, x_f = {2.0};
    LogDensities ld = log_densities(s, m, x_r, x_f, 1, 0.5);

    const double log_qr = -0.5 * std::log(2.0 * M_PI);
    const double log_qf = log_qr - 2.0;
    CHECK(std::exp(ld.log_qr) == Catch::Approx(0.398942).margin(5e-7));
    CHECK(std::exp(ld.log_qf) == Catch::Approx(0.053991).margin(5e-7));
    CHECK(std::exp(ld.log_qlam) == Catch::Approx(0.226467).margin(5e-7));
    CHECK(ld.log_qlam == Catch::Approx(-1.4851577027216453).margin(1e-12));

    CHECK(ld.log_qr == Catch::Approx(log_qr).margin(1e-12));
    CHECK(ld.log_qf == Catch::Approx(log_qf).margin(1e-12));
    // Importance ratios: q_r/q_lam = 2*sigmoid(2), q_f/q_lam = 2*sigmoid(-2).
    CHECK(std::exp(ld.log_qr - ld.log_qlam) == Catch::Approx(1.76160).margin(5e-6));
    CHECK(std::exp(ld.log_qf - ld.log_qlam) == Catch::Approx(0.238405).margin(5e-7));
}

TEST_CASE("densities: lambda endpoints drop the vanished branch") {
    NoiseSchedule s = unit_schedule();
    const std::vector<double> m = {0.3}, x_r = {0.0}, x_f = {500.0};
    // q_f underflows to zero here; lambda = 0 must still be exact and
    // lambda = 1 must return log q_f without a log(0).
    LogDensities l0 = log_densities(s, m, x_r, x_f, 1, 0.0);
    CHECK(l0.log_qlam == l0.log_qr);
    LogDensities l1 = log_densities(s, m, x_r, x_f, 1, 1.0);
    CHECK(l1.log_qlam == l1.log_qf);
    CHECK(std::isfinite(l1.log_qlam));
    // Interior lambda stays finite via log-sum-exp.
    LogDensities lm = log_densities(s, m, x_r, x_f, 1, 0.5);
    CHECK(std::isfinite(lm.log_qlam));
    CHECK(lm.log_qlam == Catch::Approx(l0.log_qr + std::log(0.5)).margin(1e-10));
}

TEST_CASE("densities: agree with direct evaluation when safe") {
    NoiseSchedule s = build_schedule(10, 1e-4, 0.02);
    Rng rng(13);
    for (int rep = 0; rep < 200; ++rep) {
        const int t = 1 + int(rng.integer(10));
        // Keep the residuals on the sigma scale so the direct (non-log)
        // evaluation cannot underflow at the small early-step sigmas.
        const double gamma = s.gamma_at(t), sigma = s.sigma_at(t);
        const std::vector<double> x_r = {rng.normal(), rng.normal()};
        const std::vector<double> x_f = {x_r[0] + sigma * rng.normal(),
                                         x_r[1] + sigma * rng.normal()};
        const std::vector<double> m = {gamma * x_r[0] + sigma * rng.normal(),
                                       gamma * x_r[1] + sigma * rng.normal()};
        const double lam = rng.uniform();
        LogDensities ld = log_densities(s, m, x_r, x_f, t, lam);
        const double direct =
            std::log((1.0 - lam) * std::exp(ld.log_qr) + lam * std::exp(ld.log_qf));
        CHECK(ld.log_qlam == Catch::Approx(direct).margin(1e-10));
    }
}

TEST_CASE("mixture_sample: component choice follows lambda") {
    NoiseSchedule s = unit_schedule();
    const std::vector<double> x_r = {-5.0}, x_f = {5.0};
    Rng rng(31);
    for (int i = 0; i < 50; ++i) {
        CHECK(mixture_sample(s, x_r, x_f, 1, 0.0, rng).component == MixtureComponent::Retain);
        CHECK(mixture_sample(s, x_r, x_f, 1, 1.0, rng).component == MixtureComponent::Forget);
    }
    std::size_t forget = 0;
    const int N = 20000;
    for (int i = 0; i < N; ++i) {
        MixtureLatent lat = mixture_sample(s, x_r, x_f, 1, 0.3, rng);
        forget += lat.component == MixtureComponent::Forget ? 1 : 0;
        const double center = lat.component == MixtureComponent::Forget ? 5.0 : -5.0;
        CHECK(std::abs(lat.m[0] - center) < 6.0);
    }
    CHECK(double(forget) / N == Catch::Approx(0.3).margin(0.015));
    CHECK_THROWS_AS(mixture_sample(s, x_r, x_f, 1, -0.1, rng), ContractViolation);
    CHECK_THROWS_AS(mixture_sample(s, x_r, x_f, 1, 1.1, rng), ContractViolation);
}

TEST_CASE("pair batch: stores matching densities and shapes") {
    auto [ds, spec] = gen_contam2d(4, 40, 0.2);
    ForgetSplit split = split_forget_retain(ds);
    NoiseSchedule s = build_schedule(10, 1e-4, 0.02);
    Rng rng(5);
    SissPairBatch b = sample_pair_batch(s, ds, split, 16, 0.4, rng);
    REQUIRE(b.size() == 16);
    CHECK(b.m.rows() == 16);
    CHECK(b.m.cols() == 2);
    for (std::size_t i = 0; i < 16; ++i) {
        const std::vector<double> m = {b.m.at(i, 0), b.m.at(i, 1)};
        const std::vector<double> xr = {b.x_r.at(i, 0), b.x_r.at(i, 1)};
        const std::vector<double> xf = {b.x_f.at(i, 0), b.x_f.at(i, 1)};
        LogDensities ld = log_densities(s, m, xr, xf, b.ts[i], 0.4);
        CHECK(b.log_qr[i] == Catch::Approx(ld.log_qr).margin(1e-12));
        CHECK(b.log_qf[i] == Catch::Approx(ld.log_qf).margin(1e-12));
        CHECK(b.log_qlam[i] == Catch::Approx(ld.log_qlam).margin(1e-12));
        CHECK(b.labels_f[i] == 1);  // contaminants all live in class 1
    }
}

TEST_CASE("siss_losses: total identity and zero-net closed form") {
    auto [ds, spec] = gen_contam2d(7, 30, 0.2);
    ForgetSplit split = split_forget_retain(ds);
    NoiseSchedule s = build_schedule(8, 1e-4, 0.02);
    Rng init(2), rng(3);
    Denoiser den = Denoiser::make(2, 0, init, 16);
    for (double& v : den.params.values[4].vec()) v = 0.0;
    for (double& v : den.params.values[5].vec()) v = 0.0;

    SissWeights w;
    w.n = split.n;
    w.k = split.k;
    w.s = 0.1;
    SissPairBatch b = sample_pair_batch(s, ds, split, 8, 0.5, rng);
    Graph g;
    BoundParams bp = bind(g, den.params);
    SissLossParts parts = siss_losses(g, den, bp, s, b, w);

    // With eps_theta == 0 the residual equals the target, so each term is a
    // weighted mean of ||(m - gamma x)/sigma||^2.
    double acc_r = 0.0, acc_f = 0.0;
    for (std::size_t i = 0; i < b.size(); ++i) {
        double sq_r = 0.0, sq_f = 0.0;
        const double gamma = s.gamma_at(b.ts[i]), sigma = s.sigma_at(b.ts[i]);
        for (std::size_t j = 0; j < 2; ++j) {
            const double tr = (b.m.at(i, j) - gamma * b.x_r.at(i, j)) / sigma;
            const double tf = (b.m.at(i, j) - gamma * b.x_f.at(i, j)) / sigma;
            sq_r += tr * tr;
            sq_f += tf * tf;
        }
        acc_r += std::exp(b.log_qr[i] - b.log_qlam[i]) * sq_r;
        acc_f += std::exp(b.log_qf[i] - b.log_qlam[i]) * sq_f;
    }
    const double want_r = w.retain_coef() * acc_r / double(b.size());
    const double want_f = w.forget_coef() * acc_f / double(b.size());
    CHECK(parts.retain.val().scalar_value() == Catch::Approx(want_r).margin(1e-10));
    CHECK(parts.forget.val().scalar_value() == Catch::Approx(want_f).margin(1e-10));
    CHECK(parts.total.val().scalar_value() ==
          Catch::Approx(want_r - 1.1 * want_f).margin(1e-10));
}

TEST_CASE("siss_losses: in-graph ratios match baked constants") {
    auto [ds, spec] = gen_contam2d(8, 30, 0.2);
    ForgetSplit split = split_forget_retain(ds);
    NoiseSchedule s = build_schedule(8, 1e-4, 0.02);
    Rng init(12), rng(13);
    Denoiser den = Denoiser::make(2, 4, init, 16);
    SissWeights w;
    w.n = split.n;
    w.k = split.k;
    const double lam = 0.37;
    SissPairBatch b = sample_pair_batch(s, ds, split, 8, lam, rng);

    Graph g1;
    BoundParams bp1 = bind(g1, den.params);
    SissLossParts stat = siss_losses(g1, den, bp1, s, b, w);

    Graph g2;
    BoundParams bp2 = bind(g2, den.params);
    Value lam_node = g2.sigmoid(g2.leaf(Tensor::scalar(std::log(lam / (1.0 - lam))), true));
    SissLossParts adap = siss_losses(g2, den, bp2, s, b, w, lam_node);

    CHECK(adap.retain.val().scalar_value() ==
          Catch::Approx(stat.retain.val().scalar_value()).margin(1e-9));
    CHECK(adap.forget.val().scalar_value() ==
          Catch::Approx(stat.forget.val().scalar_value()).margin(1e-9));
    for (std::size_t i = 0; i < b.size(); ++i) {
        // The in-graph path clamps the density log-gap at +-60 before forming
        // the mixture weight; per-row ratios only agree inside that band.
        if (std::abs(b.log_qf[i] - b.log_qr[i]) < 59.0) {
            CHECK(adap.log_ratio_retain[i] ==
                  Catch::Approx(stat.log_ratio_retain[i]).margin(1e-9));
            CHECK(adap.log_ratio_forget[i] ==
                  Catch::Approx(stat.log_ratio_forget[i]).margin(1e-9));
        }
    }
}

TEST_CASE("siss_losses: theta gradient passes grad_check") {
    auto [ds, spec] = gen_contam2d(9, 30, 0.2);
    ForgetSplit split = split_forget_retain(ds);
    NoiseSchedule s = build_schedule(6, 1e-4, 0.02);
    Rng init(6), rng(7);
    Denoiser den = Denoiser::make(2, 4, init, 12);
    SissWeights w;
    w.n = split.n;
    w.k = split.k;
    SissPairBatch b = sample_pair_batch(s, ds, split, 6, 0.5, rng);
    const double err = grad_check(
        [&](Graph& g, const BoundParams& bp) {
            return siss_losses(g, den, bp, s, b, w).total;
        },
        den.params, 1e-5);
    CHECK(err < 1e-5);
}

TEST_CASE("static_step: clip factor 0 reduces to a pure retain step") {
    auto [ds, spec] = gen_contam2d(11, 30, 0.2);
    ForgetSplit split = split_forget_retain(ds);
    NoiseSchedule s = build_schedule(6, 1e-4, 0.02);
    Rng init(3);
    Denoiser den_a = Denoiser::make(2, 4, init, 12);
    Denoiser den_b = den_a;
    SissWeights w;
    w.n = split.n;
    w.k = split.k;

    AdamState opt_a = AdamState::make(den_a.params, 1e-3);
    Rng rng_a(42);
    ClipConfig clip0{true, 0.0};
    SissStepRecord rec = static_step(den_a, s, ds, split, w, 0.5, opt_a, clip0, rng_a, 8);
    CHECK(rec.forget_grad_norm > 0.0);

    // Manual replication: same pair batch, retain-term gradient only.
    Rng rng_b(42);
    SissPairBatch b = sample_pair_batch(s, ds, split, 8, 0.5, rng_b);
    Graph g;
    BoundParams bp = bind(g, den_b.params);
    SissLossParts parts = siss_losses(g, den_b, bp, s, b, w);
    g.backward(parts.retain);
    AdamState opt_b = AdamState::make(den_b.params, 1e-3);
    apply_adam(den_b.params, collect_grads(g, bp), opt_b);

    for (std::size_t p = 0; p < den_a.params.count(); ++p) {
        for (std::size_t j = 0; j < den_a.params.values[p].size(); ++j) {
            CHECK(den_a.params.values[p][j] == den_b.params.values[p][j]);
        }
    }
}

TEST_CASE("static_step: inactive clip matches disabled clip") {
    auto [ds, spec] = gen_contam2d(12, 30, 0.2);
    ForgetSplit split = split_forget_retain(ds);
    NoiseSchedule s = build_schedule(6, 1e-4, 0.02);
    Rng init(4);
    Denoiser den_a = Denoiser::make(2, 4, init, 12);
    Denoiser den_b = den_a;
    SissWeights w;
    w.n = split.n;
    w.k = split.k;

    AdamState opt_a = AdamState::make(den_a.params, 1e-3);
    AdamState opt_b = AdamState::make(den_b.params, 1e-3);
    Rng rng_a(9), rng_b(9);
    ClipConfig huge{true, 1e9};
    ClipConfig off{false, 2.0};
    SissStepRecord ra = static_step(den_a, s, ds, split, w, 0.5, opt_a, huge, rng_a, 8);
    SissStepRecord rb = static_step(den_b, s, ds, split, w, 0.5, opt_b, off, rng_b, 8);
    CHECK(ra.total_loss == rb.total_loss);
    for (std::size_t p = 0; p < den_a.params.count(); ++p) {
        for (std::size_t j = 0; j < den_a.params.values[p].size(); ++j) {
            CHECK(den_a.params.values[p][j] == den_b.params.values[p][j]);
        }
    }
}

TEST_CASE("static_step: record is internally consistent") {
    auto [ds, spec] = gen_contam2d(13, 30, 0.2);
    ForgetSplit split = split_forget_retain(ds);
    NoiseSchedule s = build_schedule(6, 1e-4, 0.02);
    Rng init(5), rng(6);
    Denoiser den = Denoiser::make(2, 4, init, 12);
    SissWeights w;
    w.n = split.n;
    w.k = split.k;
    w.s = 0.25;
    AdamState opt = AdamState::make(den.params, 1e-3);
    ClipConfig clip;
    SissStepRecord rec = static_step(den, s, ds, split, w, 0.7, opt, clip, rng, 8);
    CHECK(rec.lambda == 0.7);
    CHECK(rec.total_loss ==
          Catch::Approx(rec.retain_loss - 1.25 * rec.forget_loss).margin(1e-12));
    CHECK(std::isfinite(rec.retain_grad_norm));
    CHECK(rec.retain_grad_norm > 0.0);
}

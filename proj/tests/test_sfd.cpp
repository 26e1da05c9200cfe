#include <catch_amalgamated.hpp>

#include <cmath>

#include "unlearn/sfd.hpp"

using namespace unlearn;

namespace {

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

Denoiser zero_denoiser(std::size_t d, int num_classes, std::uint64_t seed) {
    Rng rng(seed);
    Denoiser den = Denoiser::make(d, num_classes, rng, 16);
    for (double& v : den.params.values[4].vec()) v = 0.0;
    for (double& v : den.params.values[5].vec()) v = 0.0;
    return den;
}

}  // namespace

TEST_CASE("generator: parameter naming and label conditioning") {
    Rng rng(1);
    Generator gen = Generator::make(2, 4, rng, 16);
    CHECK(gen.params.names[0] == "gen.W0");
    CHECK(gen.params.names[6] == "gen.class_table");
    Tensor n({1, 2}, {0.4, -0.1});
    Tensor a = gen.forward_plain(n, {0});
    Tensor b = gen.forward_plain(n, {2});
    CHECK(std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]) > 1e-8);
    CHECK_THROWS_AS(gen.forward_plain(n, {7}), ContractViolation);
    CHECK_THROWS_AS(Generator::make(2, 0, rng), ConfigError);
    Rng noise(2);
    CHECK_THROWS_AS(generator_forward(gen, 3, {0, 1}, noise), ContractViolation);
}

TEST_CASE("teacher_mean: Tweedie with a zero epsilon-net gives z / gamma") {
    NoiseSchedule s = build_schedule(5, 1e-4, 0.02);
    Denoiser teacher = zero_denoiser(2, 4, 3);
    Tensor z({2, 2}, {0.5, -1.0, 2.0, 0.25});
    std::vector<int> ts = {2, 5};
    Tensor out = teacher_mean(teacher, s, z, ts, {0, 1});
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t j = 0; j < 2; ++j) {
            CHECK(out.at(i, j) == Catch::Approx(z.at(i, j) / s.gamma_at(ts[i])).margin(1e-12));
        }
    }
}

TEST_CASE("sfd_omega: closed form with hand weights") {
    NoiseSchedule s = build_schedule(5, 1e-4, 0.02);
    Tensor x_phi({2, 2}, {1.0, 0.0, -1.0, 2.0});
    Tensor x({2, 2}, {0.0, 0.0, 0.0, 0.0});
    std::vector<int> ts = {1, 4};
    std::vector<double> omega = sfd_omega(x_phi, x, ts, s);
    const double C = 1.0 / (2.0 * 2.0);
    for (std::size_t i = 0; i < 2; ++i) {
        const double a = s.gamma_at(ts[i]), sg = s.sigma_at(ts[i]);
        const double l1 = i == 0 ? 1.0 : 3.0;
        CHECK(omega[i] == Catch::Approx(sg * sg * sg * sg * a * a * C * l1).margin(1e-15));
    }
}

TEST_CASE("sfd_hat_loss: 1-D oracle equals 0.2") {
    // With omega a^2 sigma^4 = 1, alpha = 1.2, phi = 1, psi = 0.5, x = 0:
    // (1 - alpha) ||phi - psi||^2 + (phi - psi)(psi - x) = -0.05 + 0.25 = 0.2.
    NoiseSchedule s = unit_schedule();
    Graph g;
    Value x = g.leaf(Tensor({1, 1}, {0.0}), true);
    Tensor phi({1, 1}, {1.0}), psi({1, 1}, {0.5});
    Value loss = sfd_hat_loss(g, phi, psi, x, {1.0}, {1}, s, 1.2);
    CHECK(loss.val().scalar_value() == Catch::Approx(0.2).margin(1e-12));
    // Only x carries gradient: d/dx [coeff (phi-psi)(psi - x)] = -0.5.
    g.backward(loss);
    CHECK(g.grad(x)[0] == Catch::Approx(-0.5).margin(1e-12));
}

TEST_CASE("sfd_hat_loss: batch mismatch rejected") {
    NoiseSchedule s = unit_schedule();
    Graph g;
    Value x = g.leaf(Tensor({2, 1}), true);
    Tensor phi({2, 1}), psi({1, 1});
    CHECK_THROWS_AS(sfd_hat_loss(g, phi, psi, x, {1.0, 1.0}, {1, 1}, s, 1.2),
                    ContractViolation);
}

TEST_CASE("fake_score_update: loss is finite and parameters move") {
    NoiseSchedule s = build_schedule(4, 1e-4, 0.02);
    Rng rng(5);
    Generator gen = Generator::make(2, 4, rng, 16);
    FakeScoreNet fake{Denoiser::make(2, 4, rng, 16)};
    ParamSet before = fake.net.params;
    AdamState opt = AdamState::make(fake.net.params, 1e-3);
    Rng step_rng(6);
    const double loss = fake_score_update(fake, gen, s, {0, 1, 2}, 8, opt, step_rng);
    CHECK(std::isfinite(loss));
    CHECK(loss >= 0.0);
    bool moved = false;
    for (std::size_t p = 0; p < before.count(); ++p) {
        for (std::size_t j = 0; j < before.values[p].size(); ++j) {
            moved |= fake.net.params.values[p][j] != before.values[p][j];
        }
    }
    CHECK(moved);
    CHECK_THROWS_AS(fake_score_update(fake, gen, s, {}, 8, opt, step_rng), ConfigError);
}

TEST_CASE("sfd_round: total decomposition and validation") {
    NoiseSchedule s = build_schedule(4, 1e-4, 0.02);
    Rng rng(7);
    Denoiser teacher = Denoiser::make(2, 4, rng, 16);
    Generator gen = Generator::make(2, 4, rng, 16);
    FakeScoreNet fake{Denoiser::make(2, 4, rng, 16)};
    AdamState og = AdamState::make(gen.params, 1e-3);
    AdamState of = AdamState::make(fake.net.params, 1e-3);

    SfdClassConfig classes;
    classes.retain = {0, 2, 3};
    classes.c_f = 1;
    classes.c_o = 0;
    SfdConfig cfg;
    cfg.batch = 8;
    cfg.lambda_sfd = 0.7;
    Rng step_rng(8);
    SfdRoundRecord rec = sfd_round(gen, fake, teacher, s, classes, cfg, og, of, step_rng);
    CHECK(rec.total_loss ==
          Catch::Approx(rec.distill_loss + 0.7 * rec.forget_loss).margin(1e-10));
    CHECK(std::isfinite(rec.fake_loss));
    CHECK(rec.omega_mean >= 0.0);
    CHECK(rec.lambda == 1.0);

    SfdClassConfig bad = classes;
    bad.retain = {0, 1};
    CHECK_THROWS_AS(sfd_round(gen, fake, teacher, s, bad, cfg, og, of, step_rng), ConfigError);
    bad.retain = {};
    CHECK_THROWS_AS(sfd_round(gen, fake, teacher, s, bad, cfg, og, of, step_rng), ConfigError);
}

TEST_CASE("sfd_round: lambda_sfd = 0 skips the forget term") {
    NoiseSchedule s = build_schedule(4, 1e-4, 0.02);
    Rng rng(9);
    Denoiser teacher = Denoiser::make(2, 4, rng, 16);
    Generator gen = Generator::make(2, 4, rng, 16);
    FakeScoreNet fake{Denoiser::make(2, 4, rng, 16)};
    AdamState og = AdamState::make(gen.params, 1e-3);
    AdamState of = AdamState::make(fake.net.params, 1e-3);
    SfdClassConfig classes;
    classes.retain = {0, 2, 3};
    classes.c_f = 1;
    classes.c_o = 0;
    SfdConfig cfg;
    cfg.batch = 8;
    cfg.lambda_sfd = 0.0;
    Rng step_rng(10);
    SfdRoundRecord rec = sfd_round(gen, fake, teacher, s, classes, cfg, og, of, step_rng);
    CHECK(rec.forget_loss == 0.0);
    CHECK(rec.total_loss == Catch::Approx(rec.distill_loss).margin(1e-12));
}

TEST_CASE("responsibility_weights: softmax properties") {
    auto uniform = responsibility_weights({-3.0, -3.0, -3.0});
    for (double w : uniform) CHECK(w == Catch::Approx(1.0 / 3.0).margin(1e-12));

    auto shifted_a = responsibility_weights({0.0, 1.0, -2.0});
    auto shifted_b = responsibility_weights({-500.0, -499.0, -502.0});
    double sum = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(shifted_a[i] == Catch::Approx(shifted_b[i]).margin(1e-12));
        sum += shifted_a[i];
    }
    CHECK(sum == Catch::Approx(1.0).margin(1e-12));

    auto dominant = responsibility_weights({0.0, 100.0});
    CHECK(dominant[1] > 0.999);
    CHECK_THROWS_AS(responsibility_weights({}), ConfigError);
}

TEST_CASE("multiclass_adaptive_round: responsibilities steer the mixture") {
    NoiseSchedule s = build_schedule(4, 1e-4, 0.02);
    Rng rng(11);
    Denoiser teacher = Denoiser::make(2, 4, rng, 16);
    Generator gen = Generator::make(2, 4, rng, 16);
    FakeScoreNet fake{Denoiser::make(2, 4, rng, 16)};
    InferenceNet inf = InferenceNet::make(rng);
    AdamState og = AdamState::make(gen.params, 1e-3);
    AdamState of = AdamState::make(fake.net.params, 1e-3);
    ContextVector ctx;
    ctx.normalized = {0.1, 0.2, -0.3, 0.4};

    // Injected class density that always prefers class 3.
    ClassLogDensity density = [](const std::vector<double>&, int cls, int) {
        return cls == 3 ? 0.0 : -50.0;
    };
    SfdConfig cfg;
    cfg.batch = 8;
    Rng step_rng(12);
    SfdRoundRecord rec = multiclass_adaptive_round(gen, fake, teacher, inf, ctx, s, {0, 2, 3},
                                                   1, density, cfg, og, of, step_rng);
    CHECK(rec.lambda > 0.0);
    CHECK(rec.lambda < 1.0);
    CHECK(std::isfinite(rec.total_loss));
    CHECK(std::isfinite(rec.forget_loss));
    CHECK(rec.omega_mean >= 0.0);
    CHECK_THROWS_AS(multiclass_adaptive_round(gen, fake, teacher, inf, ctx, s, {1, 2}, 1,
                                              density, cfg, og, of, step_rng),
                    ConfigError);
    CHECK_THROWS_AS(multiclass_adaptive_round(gen, fake, teacher, inf, ctx, s, {}, 1, density,
                                              cfg, og, of, step_rng),
                    ConfigError);
}

TEST_CASE("run_sfd: deterministic and logs every round") {
    NoiseSchedule s = build_schedule(4, 1e-4, 0.02);
    Rng rng(13);
    Denoiser teacher = Denoiser::make(2, 4, rng, 16);
    SfdClassConfig classes;
    classes.retain = {0, 2, 3};
    classes.c_f = 1;
    classes.c_o = 0;
    SfdConfig cfg;
    cfg.batch = 8;
    cfg.rounds = 3;
    SfdRunResult a = run_sfd(teacher, s, classes, cfg, 41);
    SfdRunResult b = run_sfd(teacher, s, classes, cfg, 41);
    REQUIRE(a.rounds.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(a.rounds[i].total_loss == b.rounds[i].total_loss);
        CHECK(a.rounds[i].fake_loss == b.rounds[i].fake_loss);
    }
    for (std::size_t p = 0; p < a.gen.params.count(); ++p) {
        for (std::size_t j = 0; j < a.gen.params.values[p].size(); ++j) {
            CHECK(a.gen.params.values[p][j] == b.gen.params.values[p][j]);
        }
    }
}

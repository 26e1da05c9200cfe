#include <catch_amalgamated.hpp>

#include <cmath>

#include "unlearn/metrics.hpp"
#include "unlearn/rng.hpp"

using namespace unlearn;

namespace {

SampleSet gaussian_cloud(double mx, double my, double std, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    SampleSet out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back({mx + std * rng.normal(), my + std * rng.normal()});
    }
    return out;
}

}  // namespace

TEST_CASE("fit_gaussian: sample moments with n-1 denominator") {
    SampleSet s = {{1.0, 2.0}, {3.0, 6.0}};
    GaussianFit f = fit_gaussian(s);
    CHECK(f.mean[0] == Catch::Approx(2.0).margin(1e-12));
    CHECK(f.mean[1] == Catch::Approx(4.0).margin(1e-12));
    CHECK(f.cov.at(0, 0) == Catch::Approx(2.0 + 1e-6).margin(1e-12));
    CHECK(f.cov.at(1, 1) == Catch::Approx(8.0 + 1e-6).margin(1e-12));
    CHECK(f.cov.at(0, 1) == Catch::Approx(4.0).margin(1e-12));
    CHECK_THROWS_AS(fit_gaussian({}), ContractViolation);
}

TEST_CASE("frechet: identical sets give zero") {
    SampleSet a = gaussian_cloud(0.0, 0.0, 1.0, 200, 1);
    CHECK(frechet(a, a) == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("frechet: 1-D mean-shift oracle equals the squared shift") {
    // Two-point sets with exact unit sample variance; a pure mean shift of 1
    // leaves the covariance terms cancelling, so the distance is exactly 1.
    const double h = 1.0 / std::sqrt(2.0);
    SampleSet a = {{-h}, {h}};
    SampleSet b = {{1.0 - h}, {1.0 + h}};
    CHECK(frechet(a, b) == Catch::Approx(1.0).margin(1e-9));
    // Doubling the shift quadruples the distance.
    SampleSet c = {{2.0 - h}, {2.0 + h}};
    CHECK(frechet(a, c) == Catch::Approx(4.0).margin(1e-9));
}

TEST_CASE("frechet: matched Monte Carlo clouds score near zero, shifted far") {
    SampleSet a = gaussian_cloud(0.0, 0.0, 1.0, 2000, 2);
    SampleSet b = gaussian_cloud(0.0, 0.0, 1.0, 2000, 3);
    SampleSet far = gaussian_cloud(3.0, 0.0, 1.0, 2000, 4);
    const double near_d = frechet(a, b);
    const double far_d = frechet(a, far);
    CHECK(near_d < 0.05);
    CHECK(far_d > 8.0);
    // Symmetry.
    CHECK(frechet(a, far) == Catch::Approx(frechet(far, a)).margin(1e-9));
}

TEST_CASE("kid: identical two-point sets give exactly zero") {
    SampleSet a = {{0.0, 0.0}, {0.0, 0.0}};
    CHECK(kid_mmd(a, a) == Catch::Approx(0.0).margin(1e-15));
    CHECK_THROWS_AS(kid_mmd({{0.0}}, a), ContractViolation);
}

TEST_CASE("kid: unbiased estimate is small for same-distribution sets") {
    SampleSet a = gaussian_cloud(0.0, 0.0, 1.0, 400, 5);
    SampleSet b = gaussian_cloud(0.0, 0.0, 1.0, 400, 6);
    const double v = kid_mmd(a, b);
    CHECK(std::abs(v) < 2.0 / std::sqrt(double(a.size())));
    SampleSet far = gaussian_cloud(4.0, 4.0, 1.0, 400, 7);
    CHECK(kid_mmd(a, far) > 10.0 * std::abs(v));
}

TEST_CASE("forget_rate: clean and contaminant clouds at the extremes") {
    GaussMixtureSpec spec;
    spec.per_class.resize(2);
    spec.per_class[0] = {{{3.0, 0.0}, 0.35, 1.0}};
    spec.per_class[1] = {{{3.0, 0.0}, 0.35, 0.9}, {{-3.0, 0.0}, 0.35, 0.1}};

    SampleSet clean = gaussian_cloud(3.0, 0.0, 0.35, 500, 8);
    SampleSet contam = gaussian_cloud(-3.0, 0.0, 0.35, 500, 9);
    CHECK(forget_rate(clean, spec, 1) == 0.0);
    CHECK(forget_rate(contam, spec, 1) == 1.0);
    CHECK_THROWS_AS(forget_rate(clean, spec, 0), ConfigError);
    CHECK_THROWS_AS(forget_rate(clean, spec, 1, 5), ConfigError);
}

TEST_CASE("forget_rate: symmetric point pairs split evenly") {
    // Mirrored points around the bisector have complementary posteriors; with
    // a strict > test, exactly one of each mirrored pair counts.
    GaussMixtureSpec spec;
    spec.per_class.resize(1);
    spec.per_class[0] = {{{3.0, 0.0}, 0.35, 0.5}, {{-3.0, 0.0}, 0.35, 0.5}};
    SampleSet pairs;
    Rng rng(10);
    for (int i = 0; i < 100; ++i) {
        const double x = 0.5 + rng.uniform(), y = rng.normal();
        pairs.push_back({x, y});
        pairs.push_back({-x, y});
    }
    CHECK(forget_rate(pairs, spec, 0) == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("bayes_classify: four-cluster geometry and class_rate") {
    auto [ds, spec] = gen_contam2d(1, 30, 0.1);
    CHECK(bayes_classify(spec, {3.0, 0.0}) == 0);
    CHECK(bayes_classify(spec, {0.0, 3.0}) == 1);
    // Class 1's contaminant component sits at the reflected mean (0, -3),
    // but class 3's clean component is also there with weight 1 and wins.
    CHECK(bayes_classify(spec, {0.0, -3.0}) == 3);
    CHECK(bayes_classify(spec, {-3.0, 0.0}) == 2);

    SampleSet near0 = gaussian_cloud(3.0, 0.0, 0.2, 300, 11);
    CHECK(class_rate(near0, spec, 0) > 0.99);
    CHECK(class_rate(near0, spec, 2) < 0.01);
    CHECK(class_rate({}, spec, 0) == 0.0);
}

TEST_CASE("ssim: identity, constants, and anticorrelation") {
    Rng rng(12);
    std::vector<double> img(64);
    for (double& v : img) v = std::tanh(rng.normal());
    CHECK(ssim(img, img) == Catch::Approx(1.0).margin(1e-12));

    std::vector<double> flat_a(64, 0.25), flat_b(64, 0.25);
    CHECK(ssim(flat_a, flat_b) == Catch::Approx(1.0).margin(1e-12));

    // Zero-mean pattern vs its negation: luminance terms match (both means
    // 0.5 after rescale) and the structure term approaches -1.
    std::vector<double> pat(64), neg(64);
    for (std::size_t i = 0; i < 64; ++i) {
        pat[i] = (i % 2 == 0) ? 0.8 : -0.8;
        neg[i] = -pat[i];
    }
    CHECK(ssim(pat, neg) < -0.95);
    CHECK(ssim(pat, pat) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("ssim: small images use one full window; bad shapes throw") {
    std::vector<double> a4(16, 0.1), b4(16, 0.1);
    CHECK(ssim(a4, b4) == Catch::Approx(1.0).margin(1e-12));
    std::vector<double> a16(256), b16(256);
    Rng rng(13);
    for (double& v : a16) v = std::tanh(rng.normal());
    b16 = a16;
    CHECK(ssim(a16, b16) == Catch::Approx(1.0).margin(1e-12));
    CHECK_THROWS_AS(ssim(a4, a16), ContractViolation);
    std::vector<double> not_square(15, 0.0);
    CHECK_THROWS_AS(ssim(not_square, not_square), ContractViolation);
}

TEST_CASE("ssim: degrades monotonically with noise") {
    Rng rng(14);
    std::vector<double> base(64);
    for (double& v : base) v = std::tanh(rng.normal());
    auto noisy = [&](double amp, std::uint64_t seed) {
        Rng r(seed);
        std::vector<double> out = base;
        for (double& v : out) v = std::clamp(v + amp * r.normal(), -1.0, 1.0);
        return out;
    };
    const double s_small = ssim(base, noisy(0.05, 21));
    const double s_big = ssim(base, noisy(0.5, 22));
    CHECK(s_small > s_big);
    CHECK(s_small > 0.9);
}

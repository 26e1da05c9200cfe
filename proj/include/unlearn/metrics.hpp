#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "unlearn/data.hpp"
#include "unlearn/errors.hpp"
#include "unlearn/tensor.hpp"

namespace unlearn {

using SampleSet = std::vector<std::vector<double>>;

// -- Gaussian fits and Frechet distance ----------------------------------------

struct GaussianFit {
    std::vector<double> mean;
    Tensor cov;  // [d, d], symmetric PSD after 1e-6 diagonal jitter
};

inline GaussianFit fit_gaussian(const SampleSet& set) {
    if (set.empty()) throw ContractViolation("fit_gaussian: empty sample set");
    const std::size_t n = set.size(), d = set[0].size();
    GaussianFit f;
    f.mean.assign(d, 0.0);
    for (const auto& x : set)
        for (std::size_t j = 0; j < d; ++j) f.mean[j] += x[j];
    for (double& v : f.mean) v /= double(n);
    f.cov = Tensor({d, d});
    for (const auto& x : set) {
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j)
                f.cov.at(i, j) += (x[i] - f.mean[i]) * (x[j] - f.mean[j]);
    }
    const double denom = n > 1 ? double(n - 1) : 1.0;
    for (double& v : f.cov.vec()) v /= denom;
    for (std::size_t i = 0; i < d; ++i) f.cov.at(i, i) += 1e-6;
    return f;
}

namespace detail_metrics {

// Cyclic Jacobi eigendecomposition of a symmetric matrix; plenty for the
// feature dimensions at desk scale (d <= 64).
inline void jacobi_eigen(Tensor a, std::vector<double>& eigvals, Tensor& eigvecs) {
    const std::size_t d = a.rows();
    eigvecs = Tensor({d, d});
    for (std::size_t i = 0; i < d; ++i) eigvecs.at(i, i) = 1.0;
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < d; ++p)
            for (std::size_t q = p + 1; q < d; ++q) off += a.at(p, q) * a.at(p, q);
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < d; ++p) {
            for (std::size_t q = p + 1; q < d; ++q) {
                const double apq = a.at(p, q);
                if (std::abs(apq) < 1e-18) continue;
                const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t i = 0; i < d; ++i) {
                    const double aip = a.at(i, p), aiq = a.at(i, q);
                    a.at(i, p) = c * aip - s * aiq;
                    a.at(i, q) = s * aip + c * aiq;
                }
                for (std::size_t i = 0; i < d; ++i) {
                    const double api = a.at(p, i), aqi = a.at(q, i);
                    a.at(p, i) = c * api - s * aqi;
                    a.at(q, i) = s * api + c * aqi;
                }
                for (std::size_t i = 0; i < d; ++i) {
                    const double vip = eigvecs.at(i, p), viq = eigvecs.at(i, q);
                    eigvecs.at(i, p) = c * vip - s * viq;
                    eigvecs.at(i, q) = s * vip + c * viq;
                }
            }
        }
    }
    eigvals.resize(d);
    for (std::size_t i = 0; i < d; ++i) eigvals[i] = a.at(i, i);
}

inline Tensor matmul(const Tensor& A, const Tensor& B) {
    Tensor C({A.rows(), B.cols()});
    for (std::size_t i = 0; i < A.rows(); ++i)
        for (std::size_t p = 0; p < A.cols(); ++p) {
            const double av = A.at(i, p);
            for (std::size_t j = 0; j < B.cols(); ++j) C.at(i, j) += av * B.at(p, j);
        }
    return C;
}

// Symmetric PSD matrix square root via eigendecomposition.
inline Tensor sqrtm_psd(const Tensor& S) {
    std::vector<double> ev;
    Tensor V;
    jacobi_eigen(S, ev, V);
    const std::size_t d = S.rows();
    Tensor R({d, d});
    for (std::size_t k = 0; k < d; ++k) {
        const double s = std::sqrt(std::max(0.0, ev[k]));
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) R.at(i, j) += s * V.at(i, k) * V.at(j, k);
    }
    return R;
}

}  // namespace detail_metrics

// ||mu_A - mu_B||^2 + Tr(S_A + S_B - 2 (S_A S_B)^{1/2}), the FID-analog on
// raw feature vectors. The cross square root is computed on the symmetrized
// product sqrt(S_A) S_B sqrt(S_A).
inline double frechet(const SampleSet& a, const SampleSet& b) {
    GaussianFit fa = fit_gaussian(a), fb = fit_gaussian(b);
    const std::size_t d = fa.mean.size();
    double mean_term = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double dm = fa.mean[j] - fb.mean[j];
        mean_term += dm * dm;
    }
    using namespace detail_metrics;
    Tensor ra = sqrtm_psd(fa.cov);
    Tensor inner = matmul(matmul(ra, fb.cov), ra);
    // Symmetrize against roundoff before the eigen solve.
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i + 1; j < d; ++j) {
            const double m = 0.5 * (inner.at(i, j) + inner.at(j, i));
            inner.at(i, j) = inner.at(j, i) = m;
        }
    std::vector<double> ev;
    Tensor V;
    jacobi_eigen(inner, ev, V);
    double tr_cross = 0.0;
    for (double e : ev) tr_cross += std::sqrt(std::max(0.0, e));
    double tr = 0.0;
    for (std::size_t i = 0; i < d; ++i) tr += fa.cov.at(i, i) + fb.cov.at(i, i);
    return std::max(0.0, mean_term + tr - 2.0 * tr_cross);
}

// -- kernel MMD (KID analog) -----------------------------------------------------

// Unbiased MMD^2 with polynomial kernel (x.y/d + 1)^3; within-set diagonals
// excluded.
inline double kid_mmd(const SampleSet& a, const SampleSet& b) {
    if (a.size() < 2 || b.size() < 2) throw ContractViolation("kid_mmd: need >= 2 samples/set");
    const double d = static_cast<double>(a[0].size());
    auto kernel = [d](const std::vector<double>& x, const std::vector<double>& y) {
        double dot = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) dot += x[j] * y[j];
        const double u = dot / d + 1.0;
        return u * u * u;
    };
    const double m = double(a.size()), n = double(b.size());
    double kaa = 0.0, kbb = 0.0, kab = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a.size(); ++j)
            if (i != j) kaa += kernel(a[i], a[j]);
    for (std::size_t i = 0; i < b.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j)
            if (i != j) kbb += kernel(b[i], b[j]);
    for (const auto& x : a)
        for (const auto& y : b) kab += kernel(x, y);
    return kaa / (m * (m - 1.0)) + kbb / (n * (n - 1.0)) - 2.0 * kab / (m * n);
}

// -- Bayes oracle ------------------------------------------------------------------

inline double component_logpdf(const GaussComponent& c, const std::vector<double>& x) {
    const double var = c.std * c.std;
    double acc = -0.5 * double(x.size()) * std::log(2.0 * M_PI * var);
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double r = x[j] - c.mean[j];
        acc -= r * r / (2.0 * var);
    }
    return acc;
}

// Fraction of samples whose exact posterior puts the contaminant component
// (index `contaminant` within the class mixture) above 0.5.
inline double forget_rate(const SampleSet& samples, const GaussMixtureSpec& spec, int cls,
                          std::size_t contaminant = 1) {
    const auto& comps = spec.per_class.at(static_cast<std::size_t>(cls));
    if (comps.size() < 2) {
        throw ConfigError("forget_rate: class spec must have >= 2 components");
    }
    if (contaminant >= comps.size()) throw ConfigError("forget_rate: bad contaminant index");
    std::size_t hits = 0;
    for (const auto& x : samples) {
        std::vector<double> lp(comps.size());
        double mx = -1e300;
        for (std::size_t i = 0; i < comps.size(); ++i) {
            lp[i] = std::log(comps[i].weight) + component_logpdf(comps[i], x);
            mx = std::max(mx, lp[i]);
        }
        double z = 0.0;
        for (double v : lp) z += std::exp(v - mx);
        const double post = std::exp(lp[contaminant] - mx) / z;
        if (post > 0.5) ++hits;
    }
    return samples.empty() ? 0.0 : double(hits) / double(samples.size());
}

// Maximum-likelihood class under the synthetic spec, uniform class priors.
inline int bayes_classify(const GaussMixtureSpec& spec, const std::vector<double>& x) {
    int best = 0;
    double best_lp = -1e300;
    for (std::size_t c = 0; c < spec.per_class.size(); ++c) {
        const auto& comps = spec.per_class[c];
        double mx = -1e300;
        std::vector<double> lp(comps.size());
        for (std::size_t i = 0; i < comps.size(); ++i) {
            lp[i] = std::log(comps[i].weight) + component_logpdf(comps[i], x);
            mx = std::max(mx, lp[i]);
        }
        double z = 0.0;
        for (double v : lp) z += std::exp(v - mx);
        const double class_lp = mx + std::log(z);
        if (class_lp > best_lp) {
            best_lp = class_lp;
            best = static_cast<int>(c);
        }
    }
    return best;
}

inline double class_rate(const SampleSet& samples, const GaussMixtureSpec& spec, int target) {
    if (samples.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& x : samples)
        if (bayes_classify(spec, x) == target) ++hits;
    return double(hits) / double(samples.size());
}

// -- SSIM ---------------------------------------------------------------------------

// Single-scale SSIM on square images with values in [-1, 1] (rescaled to
// [0, 1] internally); 8x8 sliding window, or one full-image window when the
// side is <= 8. C1 = (0.01 L)^2, C2 = (0.03 L)^2 with L = 1.
inline double ssim(const std::vector<double>& img_a, const std::vector<double>& img_b) {
    if (img_a.size() != img_b.size()) throw ContractViolation("ssim: shape mismatch");
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(double(img_a.size()))));
    if (side * side != img_a.size()) throw ContractViolation("ssim: images must be square");
    constexpr double kC1 = 0.01 * 0.01, kC2 = 0.03 * 0.03;
    const std::size_t win = std::min<std::size_t>(8, side);

    auto px = [](double v) { return (v + 1.0) / 2.0; };
    double acc = 0.0;
    std::size_t windows = 0;
    for (std::size_t r0 = 0; r0 + win <= side; ++r0) {
        for (std::size_t c0 = 0; c0 + win <= side; ++c0) {
            double ma = 0.0, mb = 0.0;
            const double n = double(win * win);
            for (std::size_t r = 0; r < win; ++r)
                for (std::size_t c = 0; c < win; ++c) {
                    ma += px(img_a[(r0 + r) * side + c0 + c]);
                    mb += px(img_b[(r0 + r) * side + c0 + c]);
                }
            ma /= n;
            mb /= n;
            double va = 0.0, vb = 0.0, cov = 0.0;
            for (std::size_t r = 0; r < win; ++r)
                for (std::size_t c = 0; c < win; ++c) {
                    const double da = px(img_a[(r0 + r) * side + c0 + c]) - ma;
                    const double db = px(img_b[(r0 + r) * side + c0 + c]) - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            va /= n - 1.0;
            vb /= n - 1.0;
            cov /= n - 1.0;
            acc += (2.0 * ma * mb + kC1) * (2.0 * cov + kC2) /
                   ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
            ++windows;
        }
    }
    return acc / double(windows);
}

// -- reports -----------------------------------------------------------------------

struct MetricCell {
    double frechet = 0.0;
    double kid = 0.0;
    std::optional<double> forget_rate;
    std::optional<double> ssim;
    std::size_t sample_count = 0;
};

struct MetricReport {
    std::map<std::string, MetricCell> conditions;  // e.g. "class_0", "class_1"
    std::uint64_t seed = 0;
};

}  // namespace unlearn

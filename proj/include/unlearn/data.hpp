#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "unlearn/errors.hpp"
#include "unlearn/rng.hpp"

namespace unlearn {

enum class Provenance { Clean, Contaminant };

struct LabeledItem {
    std::vector<double> x;
    int label = 0;
    Provenance tag = Provenance::Clean;
};

struct LabeledDataset {
    std::vector<LabeledItem> items;
    std::size_t d = 0;       // data dimension
    int num_classes = 0;

    std::size_t size() const { return items.size(); }
};

// Analytic ground truth for the synthetic tasks; enables the exact Bayes
// oracle in the metrics module.
struct GaussComponent {
    std::vector<double> mean;
    double std = 1.0;
    double weight = 1.0;
};

struct GaussMixtureSpec {
    std::vector<std::vector<GaussComponent>> per_class;  // indexed by class id
};

struct ForgetSplit {
    std::vector<std::size_t> forget;  // indices into the dataset
    std::vector<std::size_t> retain;
    std::size_t n = 0;  // |D|
    std::size_t k = 0;  // |F|
};

// Desk-scale analog of a class contaminated with off-distribution content:
// four isotropic 2-D Gaussians (std 0.35) on a radius-3 circle; class 1 mixes
// in a contaminant sub-cluster at the reflected position with the given
// ratio. Counts are deterministic: round(count * ratio) contaminant items.
inline std::pair<LabeledDataset, GaussMixtureSpec> gen_contam2d(std::uint64_t seed,
                                                                std::size_t per_class_count,
                                                                double ratio) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("gen_contam2d: ratio must be in (0,1)");
    if (per_class_count < 20) throw ConfigError("gen_contam2d: per-class count must be >= 20");

    constexpr int kClasses = 4;
    constexpr double kStd = 0.35;
    constexpr double kRadius = 3.0;

    LabeledDataset ds;
    ds.d = 2;
    ds.num_classes = kClasses;

    GaussMixtureSpec spec;
    spec.per_class.resize(kClasses);

    Rng rng(hash_stream(seed, "data.contam2d"));
    for (int c = 0; c < kClasses; ++c) {
        const double angle = 2.0 * M_PI * c / kClasses;
        const std::vector<double> mean = {kRadius * std::cos(angle), kRadius * std::sin(angle)};
        if (c == 1) {
            const std::vector<double> contam_mean = {-mean[0], -mean[1]};
            spec.per_class[c] = {{mean, kStd, 1.0 - ratio}, {contam_mean, kStd, ratio}};
            const auto contam_count = static_cast<std::size_t>(
                std::llround(ratio * static_cast<double>(per_class_count)));
            for (std::size_t i = 0; i < per_class_count; ++i) {
                const bool contam = i < contam_count;
                const auto& m = contam ? contam_mean : mean;
                LabeledItem it;
                it.x = {m[0] + kStd * rng.normal(), m[1] + kStd * rng.normal()};
                it.label = c;
                it.tag = contam ? Provenance::Contaminant : Provenance::Clean;
                ds.items.push_back(std::move(it));
            }
        } else {
            spec.per_class[c] = {{mean, kStd, 1.0}};
            for (std::size_t i = 0; i < per_class_count; ++i) {
                LabeledItem it;
                it.x = {mean[0] + kStd * rng.normal(), mean[1] + kStd * rng.normal()};
                it.label = c;
                ds.items.push_back(std::move(it));
            }
        }
    }
    return {std::move(ds), std::move(spec)};
}

// F = all contaminant-tagged items, R = the rest. Fails when the dataset has
// no contaminants or nothing to retain (k < n is required downstream).
inline ForgetSplit split_forget_retain(const LabeledDataset& ds) {
    ForgetSplit s;
    s.n = ds.size();
    for (std::size_t i = 0; i < ds.items.size(); ++i) {
        if (ds.items[i].tag == Provenance::Contaminant) {
            s.forget.push_back(i);
        } else {
            s.retain.push_back(i);
        }
    }
    s.k = s.forget.size();
    if (s.k == 0) throw ConfigError("split_forget_retain: no contaminant items to forget");
    if (s.k >= s.n) throw ConfigError("split_forget_retain: forget set must be a strict subset");
    return s;
}

// -- IDX ingestion -----------------------------------------------------------

namespace detail_idx {

inline std::uint32_t read_u32_be(std::istream& is, const char* what, std::size_t offset) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) {
        throw FormatError(std::string("idx: truncated ") + what + " at byte offset " +
                          std::to_string(offset));
    }
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace detail_idx

// Loads an IDX image/label pair, rescales pixels to [-1, 1], and mean-pools
// each side x side block down to `side`. `contaminant_of_label` marks items
// for the forget split.
inline LabeledDataset load_idx(const std::string& image_path, const std::string& label_path,
                               std::size_t side,
                               const std::function<bool(int)>& contaminant_of_label) {
    std::ifstream img(image_path, std::ios::binary);
    if (!img) throw ConfigError("idx: cannot open " + image_path);
    std::ifstream lab(label_path, std::ios::binary);
    if (!lab) throw ConfigError("idx: cannot open " + label_path);

    using detail_idx::read_u32_be;
    const std::uint32_t img_magic = read_u32_be(img, "image magic", 0);
    if (img_magic != 0x00000803u) {
        throw FormatError("idx: bad image magic 0x" + std::to_string(img_magic) +
                          " at byte offset 0 (expected 0x00000803)");
    }
    const std::uint32_t count = read_u32_be(img, "image count", 4);
    const std::uint32_t rows = read_u32_be(img, "image rows", 8);
    const std::uint32_t cols = read_u32_be(img, "image cols", 12);

    const std::uint32_t lab_magic = read_u32_be(lab, "label magic", 0);
    if (lab_magic != 0x00000801u) {
        throw FormatError("idx: bad label magic 0x" + std::to_string(lab_magic) +
                          " at byte offset 0 (expected 0x00000801)");
    }
    const std::uint32_t lab_count = read_u32_be(lab, "label count", 4);
    if (lab_count != count) throw FormatError("idx: image/label count mismatch");

    if (side == 0 || rows % side != 0 || cols % side != 0) {
        throw ConfigError("idx: downsample side must divide the image dimensions");
    }
    const std::size_t pr = rows / side, pc = cols / side;

    LabeledDataset ds;
    ds.d = side * side;

    std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols);
    int max_label = -1;
    for (std::uint32_t i = 0; i < count; ++i) {
        img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!img) {
            throw FormatError("idx: truncated image payload at byte offset " +
                              std::to_string(16 + static_cast<std::size_t>(i) * buf.size()));
        }
        char lb;
        lab.read(&lb, 1);
        if (!lab) {
            throw FormatError("idx: truncated label payload at byte offset " +
                              std::to_string(8 + i));
        }
        LabeledItem it;
        it.label = static_cast<unsigned char>(lb);
        max_label = std::max(max_label, it.label);
        it.x.resize(side * side);
        for (std::size_t r = 0; r < side; ++r) {
            for (std::size_t c = 0; c < side; ++c) {
                double acc = 0.0;
                for (std::size_t dr = 0; dr < pr; ++dr)
                    for (std::size_t dc = 0; dc < pc; ++dc)
                        acc += buf[(r * pr + dr) * cols + (c * pc + dc)];
                const double mean_px = acc / static_cast<double>(pr * pc);
                it.x[r * side + c] = mean_px / 255.0 * 2.0 - 1.0;
            }
        }
        it.tag = contaminant_of_label(it.label) ? Provenance::Contaminant : Provenance::Clean;
        ds.items.push_back(std::move(it));
    }
    ds.num_classes = max_label + 1;
    return ds;
}

// Held-out sampler for metric baselines: fresh draws from the same spec.
inline std::vector<std::vector<double>> sample_from_spec(const GaussMixtureSpec& spec, int label,
                                                         std::size_t n, Rng& rng) {
    const auto& comps = spec.per_class.at(static_cast<std::size_t>(label));
    std::vector<std::vector<double>> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        double u = rng.uniform(), acc = 0.0;
        const GaussComponent* pick = &comps.back();
        for (const auto& c : comps) {
            acc += c.weight;
            if (u < acc) {
                pick = &c;
                break;
            }
        }
        std::vector<double> x(pick->mean.size());
        for (std::size_t j = 0; j < x.size(); ++j) x[j] = pick->mean[j] + pick->std * rng.normal();
        out.push_back(std::move(x));
    }
    return out;
}

}  // namespace unlearn

#pragma once

#include <array>
#include <string>
#include <vector>

#include <spdlog/fmt/fmt.h>

#include "dualad/benchmark/auroc.hpp"
#include "dualad/core/random.hpp"
#include "dualad/density/gaussian.hpp"

namespace dualad::diagnostics {

// ---------------------------------------------------------------------------
// Toy feature space with four classes: squares, circles, triangles, diamonds.
// Squares, triangles and diamonds sit on three corners of a square; circles
// either coincide with squares (a pair the feature extractor confuses) or take
// the fourth corner (the control).

inline constexpr std::array<const char*, 4> kToyClassNames{"squares", "circles", "triangles", "diamonds"};

struct ToyOptions {
    int train_per_class = 200;
    int test_per_class = 200;
    double spread = 6.0;  // half side of the square
    double noise = 1.0;   // isotropic standard deviation per class
};

struct ToyData {
    FeatureMatrix train, test;
    std::vector<int> train_labels, test_labels;
};

inline ToyData toy_points(std::uint64_t seed, bool confused, const ToyOptions& o = {}) {
    const double s = o.spread;
    const std::array<std::array<double, 2>, 4> centres{{{-s, -s}, confused ? std::array<double, 2>{-s, -s}
                                                                             : std::array<double, 2>{s, -s},
                                                        {s, s}, {-s, s}}};
    Rng rng(seed);
    ToyData d;
    auto fill = [&](int per_class, FeatureMatrix& f, std::vector<int>& labels) {
        f.values.resize(4 * per_class, 2);
        f.space = SpaceTag::pretrained;
        Eigen::Index row = 0;
        for (int c = 0; c < 4; ++c)
            for (int i = 0; i < per_class; ++i, ++row) {
                for (int k = 0; k < 2; ++k)
                    f.values(row, k) = centres[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)] +
                                       o.noise * standard_normal(rng);
                labels.push_back(c);
            }
    };
    fill(o.train_per_class, d.train, d.train_labels);
    fill(o.test_per_class, d.test, d.test_labels);
    return d;
}

/// Gaussian-scored AUROC with `pivot` as the normal class (unimodal) or as the
/// only anomalous class (multimodal).
inline double toy_auroc(const ToyData& d, int pivot, bool unimodal) {
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < d.train_labels.size(); ++i)
        if ((d.train_labels[i] == pivot) == unimodal) rows.push_back(static_cast<Eigen::Index>(i));
    FeatureMatrix train = d.train;
    train.values = d.train.values(rows, Eigen::all);
    const auto scores = density::gaussian_log_likelihood(density::fit_gaussian(train), d.test);
    std::vector<int> anomaly;
    for (int l : d.test_labels) anomaly.push_back((l == pivot) == unimodal ? 0 : 1);
    return benchmark::auroc(std::span<const double>(scores.values.data(), static_cast<std::size_t>(scores.size())),
                            std::span<const int>(anomaly));
}

struct ToyDemoResult {
    double unimodal_auroc = 0.0;    // squares normal, circles coincide with squares
    double multimodal_auroc = 0.0;  // squares anomalous, circles coincide with squares
    double control_unimodal_auroc = 0.0;
    double control_multimodal_auroc = 0.0;
    std::string narrative;
};

inline ToyDemoResult toy_confusion_demo(std::uint64_t seed, const ToyOptions& o = {}) {
    ToyDemoResult r;
    const auto confused = toy_points(seed, true, o);
    const auto control = toy_points(derive_seed(seed, 1), false, o);
    r.unimodal_auroc = toy_auroc(confused, 0, true);
    r.multimodal_auroc = toy_auroc(confused, 0, false);
    r.control_unimodal_auroc = toy_auroc(control, 0, true);
    r.control_multimodal_auroc = toy_auroc(control, 0, false);
    r.narrative = fmt::format(
        "Squares and circles share one region of feature space. With squares as the only normal class the "
        "detector still rejects triangles and diamonds but accepts circles (AUROC {:.3f}). With squares as the "
        "anomalous class every square lands where normal circles live, so none are caught (AUROC {:.3f}). "
        "Moving circles to their own corner restores both settings ({:.3f} and {:.3f}).",
        r.unimodal_auroc, r.multimodal_auroc, r.control_unimodal_auroc, r.control_multimodal_auroc);
    return r;
}

// ---------------------------------------------------------------------------
// AUROC inflation in the one-class-normal setting.

struct InflationOptions {
    int per_class = 500;
    double jitter = 0.05;       // score noise around each class's level
    bool confuse_all = false;   // every class shares the normal level
};

struct InflationResult {
    double auroc = 0.0;
    double precision_at_threshold = 0.0;  // at the lowest normal score
    double threshold = 0.0;
    int normal_count = 0;
    int anomaly_count = 0;
    double expected_auroc = 0.0;      // closed form for the tie-free ordering
    double expected_precision = 0.0;  // closed form
    std::string narrative;
};

/// Class 0 is normal. The simulated scorer ranks the normal class and
/// `confused_class` (negative for none) above every other class.
inline InflationResult auroc_inflation_demo(int num_classes, int confused_class, std::uint64_t seed,
                                            const InflationOptions& o = {}) {
    if (num_classes < 3) throw ConfigError("inflation demo needs at least three classes");
    if (confused_class == 0 || confused_class >= num_classes)
        throw ConfigError("confused class must be an anomalous class index or negative");
    if (o.per_class < 1) throw ConfigError("inflation demo needs samples in every class");
    Rng rng(seed);
    std::vector<double> scores;
    std::vector<int> anomaly;
    for (int c = 0; c < num_classes; ++c) {
        const bool high = c == 0 || c == confused_class || o.confuse_all;
        for (int i = 0; i < o.per_class; ++i) {
            scores.push_back((high ? 1.0 : 0.0) + o.jitter * standard_normal(rng));
            anomaly.push_back(c == 0 ? 0 : 1);
        }
    }
    InflationResult r;
    r.normal_count = o.per_class;
    r.anomaly_count = o.per_class * (num_classes - 1);
    r.auroc = benchmark::auroc(scores, anomaly);
    r.threshold = *std::min_element(scores.begin(), scores.begin() + o.per_class);
    int above = 0, normal_above = 0;
    for (std::size_t i = 0; i < scores.size(); ++i)
        if (scores[i] >= r.threshold) {
            ++above;
            normal_above += anomaly[i] == 0;
        }
    r.precision_at_threshold = static_cast<double>(normal_above) / above;

    const double a = num_classes - 1;
    const int tied = o.confuse_all ? num_classes - 1 : (confused_class > 0 ? 1 : 0);
    r.expected_auroc = (a - tied + 0.5 * tied) / a;
    r.expected_precision = 1.0 / (1.0 + tied);
    r.narrative = fmt::format(
        "{} normal and {} anomalous test samples over {} classes. The scorer cannot tell the normal class from {} "
        "anomalous class(es), yet AUROC is {:.4f} because the remaining anomalies dominate the pair count. At the "
        "natural threshold (lowest normal score) only {:.1f}% of accepted samples are normal.",
        r.normal_count, r.anomaly_count, num_classes, tied, r.auroc, 100.0 * r.precision_at_threshold);
    return r;
}

} // namespace dualad::diagnostics

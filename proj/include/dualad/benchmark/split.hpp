#pragma once

#include <string>
#include <vector>

#include "dualad/backbone/spec.hpp"
#include "dualad/core/error.hpp"

namespace dualad::benchmark {

enum class Setting { unimodal, multimodal };

inline std::string to_string(Setting s) { return s == Setting::unimodal ? "unimodal" : "multimodal"; }

inline Setting setting_from_string(const std::string& s) {
    if (s == "unimodal") return Setting::unimodal;
    if (s == "multimodal") return Setting::multimodal;
    throw ConfigError("unknown setting '" + s + "' (expected unimodal or multimodal)");
}

/// Labelled train and test images of one dataset.
struct DatasetSplits {
    backbone::ImageBatch train;
    backbone::ImageBatch test;
};

/// Indices into DatasetSplits. Train labels never leave this struct.
struct EvalSplit {
    Setting setting = Setting::unimodal;
    int pivot_class = 0;
    std::vector<std::size_t> train_index;
    std::vector<std::size_t> test_index;
    std::vector<int> anomaly_labels;  // aligned with test_index, 1 = anomalous

    /// Training images with labels stripped.
    [[nodiscard]] backbone::ImageBatch train_batch(const DatasetSplits& d) const { return d.train.subset(train_index, false); }
    [[nodiscard]] backbone::ImageBatch test_batch(const DatasetSplits& d) const { return d.test.subset(test_index, false); }
};

namespace detail {

inline EvalSplit make_split(const DatasetSplits& d, int num_classes, int pivot, Setting setting) {
    if (pivot < 0 || pivot >= num_classes)
        throw ConfigError("class " + std::to_string(pivot) + " outside [0, " + std::to_string(num_classes) + ")");
    if (!d.train.has_labels() || !d.test.has_labels()) throw DataError("splits need labelled data");
    EvalSplit s;
    s.setting = setting;
    s.pivot_class = pivot;
    const bool uni = setting == Setting::unimodal;
    for (std::size_t i = 0; i < d.train.size(); ++i)
        if ((d.train.labels[i] == pivot) == uni) s.train_index.push_back(i);
    if (s.train_index.empty())
        throw DataError(to_string(setting) + " split for class " + std::to_string(pivot) + " has no training samples");
    for (std::size_t i = 0; i < d.test.size(); ++i) {
        s.test_index.push_back(i);
        s.anomaly_labels.push_back((d.test.labels[i] == pivot) == uni ? 0 : 1);
    }
    return s;
}

} // namespace detail

/// One class is normal; every other class is anomalous at test time.
inline EvalSplit make_unimodal_split(const DatasetSplits& d, int num_classes, int normal_class) {
    return detail::make_split(d, num_classes, normal_class, Setting::unimodal);
}

/// Every class but one is normal (labels discarded); the held-out class is anomalous.
inline EvalSplit make_multimodal_split(const DatasetSplits& d, int num_classes, int abnormal_class) {
    return detail::make_split(d, num_classes, abnormal_class, Setting::multimodal);
}

inline EvalSplit make_split(const DatasetSplits& d, int num_classes, int pivot, Setting setting) {
    return detail::make_split(d, num_classes, pivot, setting);
}

} // namespace dualad::benchmark

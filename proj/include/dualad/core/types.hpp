#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "dualad/core/error.hpp"

namespace dualad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class SpaceTag { pretrained, finetuned, combined };

inline std::string_view to_string(SpaceTag tag) {
    switch (tag) {
    case SpaceTag::pretrained: return "pretrained";
    case SpaceTag::finetuned: return "finetuned";
    case SpaceTag::combined: return "combined";
    }
    return "unknown";
}

inline SpaceTag space_tag_from_string(std::string_view s) {
    if (s == "pretrained") return SpaceTag::pretrained;
    if (s == "finetuned") return SpaceTag::finetuned;
    if (s == "combined") return SpaceTag::combined;
    throw ConfigError("unknown feature space '" + std::string(s) + "'");
}

/// n x d per-sample embeddings (z_p or z_f) with provenance.
struct FeatureMatrix {
    Matrix values;
    SpaceTag space = SpaceTag::pretrained;
    std::string backbone_id;
    std::string split_tag;

    [[nodiscard]] Eigen::Index rows() const { return values.rows(); }
    [[nodiscard]] Eigen::Index cols() const { return values.cols(); }

    /// Throws DataError if empty or non-finite.
    void validate(std::string_view what = "feature matrix") const {
        if (values.rows() < 1 || values.cols() < 1)
            throw DataError(std::string(what) + " is empty");
        if (!values.allFinite())
            throw DataError(std::string(what) + " has non-finite entries");
    }
};

inline FeatureMatrix make_features(Matrix values, SpaceTag space = SpaceTag::pretrained) {
    FeatureMatrix f;
    f.values = std::move(values);
    f.space = space;
    return f;
}

/// Per-sample log-scores; higher means more normal.
struct ScoreVector {
    Vector values;
    SpaceTag space = SpaceTag::pretrained;

    [[nodiscard]] Eigen::Index size() const { return values.size(); }
};

} // namespace dualad

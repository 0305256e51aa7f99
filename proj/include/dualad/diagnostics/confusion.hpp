#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "dualad/core/error.hpp"
#include "dualad/core/io.hpp"
#include "dualad/core/parallel.hpp"
#include "dualad/core/types.hpp"

namespace dualad::diagnostics {

struct ConfusionReport {
    std::vector<int> classes;  // label of each matrix row/column, ascending
    Matrix confusion;          // symmetrized leave-one-out 1-NN confusion
    Matrix raw;                // raw(a, b): fraction of class a whose nearest neighbour is in b
    std::vector<std::pair<int, int>> flagged;  // class labels, a < b
    Matrix projection;         // n x 2 principal-component coordinates
    double threshold = 0.25;
};

/// Leave-one-out nearest neighbour of every row (squared Euclidean, ties to the lowest index).
inline std::vector<Eigen::Index> nearest_neighbours(const Matrix& x) {
    const Eigen::Index n = x.rows();
    std::vector<Eigen::Index> nn(static_cast<std::size_t>(n), -1);
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t iu) {
        const auto i = static_cast<Eigen::Index>(iu);
        double best = std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j == i) continue;
            const double d = (x.row(i) - x.row(j)).squaredNorm();
            if (d < best) {
                best = d;
                nn[iu] = j;
            }
        }
    });
    return nn;
}

/// Top-two principal-component scores. Each axis is signed so that its
/// largest-magnitude loading is positive.
inline Matrix pca_2d(const Matrix& x) {
    const Matrix centered = x.rowwise() - x.colwise().mean();
    Matrix out = Matrix::Zero(x.rows(), 2);
    if (x.rows() < 2) return out;
    const Matrix cov = centered.transpose() * centered / static_cast<double>(x.rows());
    const Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
    const Eigen::Index d = x.cols();
    for (Eigen::Index k = 0; k < std::min<Eigen::Index>(2, d); ++k) {
        Vector axis = es.eigenvectors().col(d - 1 - k);
        Eigen::Index arg = 0;
        axis.cwiseAbs().maxCoeff(&arg);
        if (axis[arg] < 0) axis = -axis;
        out.col(k) = centered * axis;
    }
    return out;
}

/// Pairwise class confusion in feature space by leave-one-out 1-NN voting.
/// Pairs whose symmetrized confusion reaches `flag_threshold` are flagged.
inline ConfusionReport confusion_report(const FeatureMatrix& features, const std::vector<int>& labels,
                                        double flag_threshold = 0.25) {
    features.validate("confusion features");
    if (static_cast<Eigen::Index>(labels.size()) != features.rows())
        throw DataError("confusion_report: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(features.rows()) + " samples");
    std::map<int, int> count;
    for (int l : labels) ++count[l];
    if (count.size() < 2) throw DataError("confusion_report needs at least two classes");
    for (const auto& [c, k] : count)
        if (k < 2) throw DataError("confusion_report: class " + std::to_string(c) + " has fewer than two samples");

    ConfusionReport r;
    r.threshold = flag_threshold;
    std::map<int, Eigen::Index> slot;
    for (const auto& [c, k] : count) {
        slot[c] = static_cast<Eigen::Index>(r.classes.size());
        r.classes.push_back(c);
    }
    const auto m = static_cast<Eigen::Index>(r.classes.size());
    r.raw = Matrix::Zero(m, m);
    const auto nn = nearest_neighbours(features.values);
    for (std::size_t i = 0; i < labels.size(); ++i)
        r.raw(slot[labels[i]], slot[labels[static_cast<std::size_t>(nn[i])]]) += 1.0;
    for (Eigen::Index a = 0; a < m; ++a) r.raw.row(a) /= static_cast<double>(count[r.classes[static_cast<std::size_t>(a)]]);
    r.confusion = 0.5 * (r.raw + r.raw.transpose());
    for (Eigen::Index a = 0; a < m; ++a)
        for (Eigen::Index b = a + 1; b < m; ++b)
            if (r.confusion(a, b) >= flag_threshold)
                r.flagged.emplace_back(r.classes[static_cast<std::size_t>(a)], r.classes[static_cast<std::size_t>(b)]);
    r.projection = pca_2d(features.values);
    return r;
}

inline io::json to_json(const ConfusionReport& r, const std::vector<std::string>& class_names = {}) {
    auto name = [&](int c) {
        return c >= 0 && static_cast<std::size_t>(c) < class_names.size() ? class_names[static_cast<std::size_t>(c)]
                                                                          : std::to_string(c);
    };
    io::json matrix = io::json::array(), raw = io::json::array(), flagged = io::json::array(), names = io::json::array();
    for (Eigen::Index a = 0; a < r.confusion.rows(); ++a) {
        matrix.push_back(std::vector<double>(r.confusion.row(a).begin(), r.confusion.row(a).end()));
        raw.push_back(std::vector<double>(r.raw.row(a).begin(), r.raw.row(a).end()));
        names.push_back(name(r.classes[static_cast<std::size_t>(a)]));
    }
    for (const auto& [a, b] : r.flagged) {
        const auto ia = std::find(r.classes.begin(), r.classes.end(), a) - r.classes.begin();
        const auto ib = std::find(r.classes.begin(), r.classes.end(), b) - r.classes.begin();
        flagged.push_back({{"classes", {a, b}}, {"names", {name(a), name(b)}}, {"confusion", r.confusion(ia, ib)}});
    }
    return {{"classes", r.classes}, {"class_names", names},       {"threshold", r.threshold},
            {"confusion", matrix},  {"raw_nearest_neighbour", raw}, {"flagged_pairs", flagged}};
}

} // namespace dualad::diagnostics

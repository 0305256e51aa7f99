#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "dualad/core/types.hpp"

namespace dualad::density {

/// Negative mean Euclidean distance to the k nearest training rows.
inline ScoreVector knn_score(const FeatureMatrix& train, const FeatureMatrix& test, int k) {
    if (train.rows() == 0) throw DataError("knn_score: empty training set");
    if (k < 1 || k > train.rows())
        throw ConfigError("knn_score: k=" + std::to_string(k) + " outside [1, n_train=" +
                          std::to_string(train.rows()) + "]");
    if (train.cols() != test.cols()) throw DataError("knn_score: dimension mismatch");

    ScoreVector out{Vector(test.rows()), test.space};
    std::vector<double> dist(static_cast<std::size_t>(train.rows()));
    for (Eigen::Index i = 0; i < test.rows(); ++i) {
        for (Eigen::Index j = 0; j < train.rows(); ++j)
            dist[static_cast<std::size_t>(j)] = (test.values.row(i) - train.values.row(j)).norm();
        std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
        double sum = 0.0;
        for (int j = 0; j < k; ++j) sum += dist[static_cast<std::size_t>(j)];
        out.values[i] = -(sum / k);
    }
    return out;
}

} // namespace dualad::density

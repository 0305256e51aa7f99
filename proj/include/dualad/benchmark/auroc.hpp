#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "dualad/core/error.hpp"

namespace dualad::benchmark {

/// Probability that a random anomaly scores lower (less normal) than a random
/// normal sample, ties credited 1/2. `scores` are normality scores; `anomaly`
/// is 1 for anomalous samples. Mann-Whitney with midranks, O(n log n).
inline double auroc(std::span<const double> scores, std::span<const int> anomaly) {
    if (scores.size() != anomaly.size())
        throw DataError("auroc: " + std::to_string(scores.size()) + " scores for " + std::to_string(anomaly.size()) +
                        " labels");
    std::size_t n_anomalous = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) throw NumericalError("auroc: non-finite score at index " + std::to_string(i));
        if (anomaly[i] != 0 && anomaly[i] != 1) throw DataError("auroc: labels must be 0 or 1");
        n_anomalous += static_cast<std::size_t>(anomaly[i]);
    }
    const std::size_t n_normal = scores.size() - n_anomalous;
    if (n_anomalous == 0 || n_normal == 0) throw DataError("auroc is undefined unless both classes are present");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Twice the rank sum of the normal samples keeps midranks integral.
    double twice_rank_sum = 0.0;
    for (std::size_t lo = 0; lo < order.size();) {
        std::size_t hi = lo;
        while (hi + 1 < order.size() && scores[order[hi + 1]] == scores[order[lo]]) ++hi;
        const double twice_midrank = static_cast<double>(lo + hi + 2);  // ranks are 1-based
        for (std::size_t k = lo; k <= hi; ++k)
            if (anomaly[order[k]] == 0) twice_rank_sum += twice_midrank;
        lo = hi + 1;
    }
    const double nn = static_cast<double>(n_normal);
    const double u = (twice_rank_sum - nn * (nn + 1.0)) / 2.0;
    return u / (nn * static_cast<double>(n_anomalous));
}

inline double auroc(const std::vector<double>& scores, const std::vector<int>& anomaly) {
    return auroc(std::span<const double>(scores), std::span<const int>(anomaly));
}

} // namespace dualad::benchmark

#pragma once

#include <limits>
#include <string>

#include "dualad/core/types.hpp"
#include "dualad/density/gaussian.hpp"

namespace dualad::density {

/// Truncated PCA whitening: y = (x - mean) * projection, projection = V_r diag(1/sqrt(lambda)).
struct WhitenTransform {
    Vector mean;
    Matrix projection;  // d x r
    Vector eigenvalues; // r, descending
    double energy_threshold = 0.9;

    [[nodiscard]] Eigen::Index input_dim() const { return mean.size(); }
    [[nodiscard]] Eigen::Index output_dim() const { return projection.cols(); }
};

/// Smallest r with sum(lambda[0..r)) >= threshold * sum(lambda). Expects
/// eigenvalues sorted descending and non-negative.
inline Eigen::Index retained_components(const Vector& descending, double threshold) {
    const double total = descending.sum();
    const double slack = 1e-12 * total;
    double acc = 0.0;
    for (Eigen::Index r = 0; r < descending.size(); ++r) {
        acc += descending[r];
        if (acc >= threshold * total - slack) return r + 1;
    }
    return descending.size();
}

inline WhitenTransform fit_whitener(const FeatureMatrix& train, double energy_threshold) {
    train.validate("whitening training set");
    if (train.rows() < 2) throw DataError("fit_whitener needs at least 2 samples");
    if (!(energy_threshold > 0.0 && energy_threshold <= 1.0))
        throw ConfigError("energy threshold must lie in (0, 1]");

    WhitenTransform w;
    w.energy_threshold = energy_threshold;
    w.mean = column_mean(train.values);
    const Matrix cov = ml_covariance(train.values, w.mean);

    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    if (eig.info() != Eigen::Success) throw NumericalError("eigendecomposition of covariance failed");
    const Vector ascending = eig.eigenvalues();
    const Eigen::Index d = ascending.size();
    Vector values = ascending.reverse().cwiseMax(0.0);
    Matrix vectors = eig.eigenvectors().rowwise().reverse();

    // Zero directions of a rank-deficient covariance carry no energy and are
    // never emitted (their inverse square root is not finite).
    const double tol = values[0] * static_cast<double>(d) * 64.0 * std::numeric_limits<double>::epsilon();
    Eigen::Index rank = 0;
    while (rank < d && values[rank] > tol) ++rank;
    if (rank == 0) throw DataError("fit_whitener: training data has zero variance");

    const Eigen::Index r = std::min(retained_components(values, energy_threshold), rank);
    w.eigenvalues = values.head(r);
    w.projection = vectors.leftCols(r) * w.eigenvalues.cwiseSqrt().cwiseInverse().asDiagonal();
    return w;
}

inline FeatureMatrix apply_whitener(const WhitenTransform& w, const FeatureMatrix& x) {
    if (x.cols() != w.input_dim())
        throw DataError("apply_whitener: expected " + std::to_string(w.input_dim()) + " columns, got " +
                        std::to_string(x.cols()));
    FeatureMatrix out;
    out.values = (x.values.rowwise() - w.mean.transpose()) * w.projection;
    out.space = x.space;
    out.backbone_id = x.backbone_id;
    out.split_tag = x.split_tag;
    return out;
}

} // namespace dualad::density

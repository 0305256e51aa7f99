#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include <spdlog/spdlog.h>

#include "dualad/core/types.hpp"

namespace dualad::density {

inline constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)
inline constexpr double kFirstEscalation = 1e-6;
inline constexpr int kMaxEscalations = 24;

/// Column means of an n x d matrix.
inline Vector column_mean(const Matrix& x) { return x.colwise().mean().transpose(); }

/// Maximum-likelihood covariance (normalized by n).
inline Matrix ml_covariance(const Matrix& x, const Vector& mean) {
    const Matrix centered = x.rowwise() - mean.transpose();
    Matrix cov = (centered.transpose() * centered) / static_cast<double>(x.rows());
    return 0.5 * (cov + cov.transpose());
}

/// Weighted ML covariance; weights need not be normalized.
inline Matrix weighted_covariance(const Matrix& x, const Vector& weights, const Vector& mean) {
    const Matrix centered = x.rowwise() - mean.transpose();
    Matrix cov = (centered.transpose() * weights.asDiagonal() * centered) / weights.sum();
    return 0.5 * (cov + cov.transpose());
}

/// Lower Cholesky factor of (cov + reg*I) with the regularization actually used.
struct RegularizedFactor {
    Matrix lower;
    double log_det = 0.0;
    double reg_lambda = 0.0;
    int escalations = 0;
};

namespace detail {

inline bool try_cholesky(const Matrix& a, Matrix& lower) {
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() != Eigen::Success) return false;
    lower = llt.matrixL();
    const Vector diag = lower.diagonal();
    if (!diag.allFinite() || diag.minCoeff() <= 0.0) return false;
    const double lo = diag.minCoeff();
    const double hi = diag.maxCoeff();
    return lo * lo > 1e-12 * hi * hi;
}

} // namespace detail

/// Factor cov + reg*I, escalating reg by decades from 1e-6 while the factor
/// fails or is numerically singular.
inline RegularizedFactor factor_covariance(const Matrix& cov, double reg_lambda) {
    if (reg_lambda < 0.0) throw ConfigError("reg_lambda must be non-negative");
    RegularizedFactor f;
    f.reg_lambda = reg_lambda;
    const auto d = cov.rows();
    for (;;) {
        Matrix a = cov;
        a.diagonal().array() += f.reg_lambda;
        if (detail::try_cholesky(a, f.lower)) break;
        if (f.escalations >= kMaxEscalations)
            throw NumericalError("covariance factorization failed after regularization up to " +
                                 std::to_string(f.reg_lambda));
        const double next = f.reg_lambda < kFirstEscalation ? kFirstEscalation : f.reg_lambda * 10.0;
        spdlog::warn("covariance ({}x{}) not positive definite with reg_lambda={:g}; escalating to {:g}",
                     d, d, f.reg_lambda, next);
        f.reg_lambda = next;
        ++f.escalations;
    }
    f.log_det = 2.0 * f.lower.diagonal().array().log().sum();
    return f;
}

/// Single Gaussian with full covariance and a cached Cholesky factor.
struct GaussianModel {
    Vector mean;
    Matrix covariance;  // includes reg_lambda * I
    Matrix lower;       // Cholesky factor of covariance
    double log_det = 0.0;
    double reg_lambda = 0.0;
    int escalations = 0;

    [[nodiscard]] Eigen::Index dim() const { return mean.size(); }
};

/// Build a model from a mean and unregularized covariance.
inline GaussianModel make_gaussian(Vector mean, const Matrix& cov, double reg_lambda = 0.0) {
    if (mean.size() != cov.rows() || cov.rows() != cov.cols())
        throw DataError("mean/covariance dimension mismatch");
    auto f = factor_covariance(cov, reg_lambda);
    GaussianModel g;
    g.mean = std::move(mean);
    g.covariance = cov;
    g.covariance.diagonal().array() += f.reg_lambda;
    g.lower = std::move(f.lower);
    g.log_det = f.log_det;
    g.reg_lambda = f.reg_lambda;
    g.escalations = f.escalations;
    return g;
}

inline GaussianModel fit_gaussian(const FeatureMatrix& train, double reg_lambda = 0.0) {
    train.validate("gaussian training set");
    if (train.rows() < 2) throw DataError("fit_gaussian needs at least 2 samples");
    Vector mean = column_mean(train.values);
    const Matrix cov = ml_covariance(train.values, mean);
    return make_gaussian(std::move(mean), cov, reg_lambda);
}

/// Per-row log N(x | mean, covariance) for a raw matrix.
inline Vector gaussian_log_density(const GaussianModel& model, const Matrix& x) {
    if (x.cols() != model.dim())
        throw DataError("gaussian_log_likelihood: expected " + std::to_string(model.dim()) +
                        " columns, got " + std::to_string(x.cols()));
    const Matrix centered = (x.rowwise() - model.mean.transpose()).transpose();  // d x n
    const Matrix solved = model.lower.triangularView<Eigen::Lower>().solve(centered);
    const double constant = -0.5 * (static_cast<double>(model.dim()) * kLog2Pi + model.log_det);
    return (constant - 0.5 * solved.colwise().squaredNorm().array()).matrix().transpose();
}

inline ScoreVector gaussian_log_likelihood(const GaussianModel& model, const FeatureMatrix& x) {
    return {gaussian_log_density(model, x.values), x.space};
}

} // namespace dualad::density

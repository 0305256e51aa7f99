#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include <spdlog/spdlog.h>

#include "dualad/core/random.hpp"
#include "dualad/core/types.hpp"
#include "dualad/density/gaussian.hpp"

namespace dualad::density {

struct GMMComponent {
    double weight = 1.0;
    GaussianModel gaussian;
};

struct GMMModel {
    std::vector<GMMComponent> components;
    int iterations = 0;
    double final_log_likelihood = 0.0;      // mean per training sample
    std::vector<double> log_likelihood_trace; // one entry per E-step
    int pruned_components = 0;

    [[nodiscard]] Eigen::Index dim() const {
        return components.empty() ? 0 : components.front().gaussian.dim();
    }
};

struct GMMOptions {
    int max_iterations = 200;
    double tolerance = 1e-8;  // on the change of mean log-likelihood
    double reg_lambda = 0.0;
    double min_weight = 1e-12;
};

namespace detail {

/// n x k matrix of log w_k + log N(x_i | component k).
inline Matrix weighted_log_densities(const std::vector<GMMComponent>& comps, const Matrix& x) {
    Matrix out(x.rows(), static_cast<Eigen::Index>(comps.size()));
    for (std::size_t k = 0; k < comps.size(); ++k)
        out.col(static_cast<Eigen::Index>(k)) =
            gaussian_log_density(comps[k].gaussian, x).array() + std::log(comps[k].weight);
    return out;
}

inline Vector row_logsumexp(const Matrix& a) {
    Vector out(a.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        const double m = a.row(i).maxCoeff();
        out[i] = m + std::log((a.row(i).array() - m).exp().sum());
    }
    return out;
}

/// k-means++ seeding followed by hard assignment to the nearest seed.
inline Matrix kmeanspp_responsibilities(const Matrix& x, int k, Rng& rng) {
    const Eigen::Index n = x.rows();
    std::vector<Eigen::Index> centers;
    centers.push_back(static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n)));
    Vector dist2 = (x.rowwise() - x.row(centers[0])).rowwise().squaredNorm();
    while (static_cast<int>(centers.size()) < k) {
        const double total = dist2.sum();
        Eigen::Index pick = 0;
        if (total <= 0.0) {
            pick = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n));
        } else {
            double u = uniform01(rng) * total;
            for (pick = 0; pick < n - 1; ++pick) {
                u -= dist2[pick];
                if (u <= 0.0) break;
            }
        }
        centers.push_back(pick);
        dist2 = dist2.cwiseMin((x.rowwise() - x.row(pick)).rowwise().squaredNorm());
    }
    Matrix resp = Matrix::Zero(n, k);
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
            const double d = (x.row(i) - x.row(centers[static_cast<std::size_t>(c)])).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        resp(i, best) = 1.0;
    }
    return resp;
}

} // namespace detail

/// Expectation-maximization for a full-covariance mixture. With k = 1 the
/// single M-step reproduces fit_gaussian (same estimator and regularization).
inline GMMModel fit_gmm(const FeatureMatrix& train, int k, std::uint64_t seed, const GMMOptions& opt = {}) {
    train.validate("GMM training set");
    if (k < 1) throw ConfigError("GMM needs k >= 1");
    if (train.rows() < std::max<Eigen::Index>(k, 2)) throw DataError("GMM needs n >= max(k, 2)");
    const Matrix& x = train.values;
    const double n = static_cast<double>(x.rows());

    Rng rng(seed);
    Matrix resp = k == 1 ? Matrix::Ones(x.rows(), 1) : detail::kmeanspp_responsibilities(x, k, rng);

    GMMModel model;
    double previous = -std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < opt.max_iterations; ++iter) {
        // M-step.
        std::vector<GMMComponent> comps;
        std::vector<Eigen::Index> kept;
        for (Eigen::Index c = 0; c < resp.cols(); ++c) {
            const double mass = resp.col(c).sum();
            const double weight = mass / n;
            // Below one effective sample the covariance is not estimable either.
            if (!(weight >= opt.min_weight) || mass < 1.0) {
                spdlog::info("GMM: pruning degenerate component (weight {:g})", weight);
                ++model.pruned_components;
                continue;
            }
            Vector mean = k == 1 ? column_mean(x) : Vector((x.transpose() * resp.col(c)) / mass);
            const Matrix cov = k == 1 ? ml_covariance(x, mean) : weighted_covariance(x, resp.col(c), mean);
            comps.push_back({weight, make_gaussian(std::move(mean), cov, opt.reg_lambda)});
            kept.push_back(c);
        }
        if (comps.empty()) throw NumericalError("GMM: every component degenerated");
        double wsum = 0.0;
        for (const auto& c : comps) wsum += c.weight;
        for (auto& c : comps) c.weight /= wsum;
        model.components = std::move(comps);
        model.iterations = iter + 1;

        // E-step.
        const Matrix logp = detail::weighted_log_densities(model.components, x);
        const Vector lse = detail::row_logsumexp(logp);
        const double ll = lse.mean();
        if (!std::isfinite(ll)) throw NumericalError("GMM: non-finite log-likelihood");
        model.log_likelihood_trace.push_back(ll);
        model.final_log_likelihood = ll;
        resp = (logp.colwise() - lse).array().exp().matrix();
        if (ll - previous < opt.tolerance * std::max(1.0, std::abs(ll))) break;
        previous = ll;
    }
    return model;
}

inline ScoreVector gmm_log_likelihood(const GMMModel& model, const FeatureMatrix& x) {
    if (x.cols() != model.dim())
        throw DataError("gmm_log_likelihood: expected " + std::to_string(model.dim()) + " columns");
    return {detail::row_logsumexp(detail::weighted_log_densities(model.components, x.values)), x.space};
}

} // namespace dualad::density

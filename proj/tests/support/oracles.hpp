#pragma once

// Independent reference implementations used only by tests. None of these
// share code paths with the library routines they check.

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

/// Cyclic Jacobi eigensolver for a symmetric matrix. Returns eigenvalues
/// descending and matching eigenvectors as columns.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> jacobi_eigen(Eigen::MatrixXd a, int sweeps = 100) {
    const Eigen::Index n = a.rows();
    Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
    for (int s = 0; s < sweeps; ++s) {
        double off = 0.0;
        for (Eigen::Index p = 0; p < n; ++p)
            for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (off < 1e-30) break;
        for (Eigen::Index p = 0; p < n; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                if (std::abs(a(p, q)) < 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double sn = t * c;
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - sn * akq;
                    a(k, q) = sn * akp + c * akq;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - sn * aqk;
                    a(q, k) = sn * apk + c * aqk;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - sn * vkq;
                    v(k, q) = sn * vkp + c * vkq;
                }
            }
        }
    }
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](auto x, auto y) { return a(x, x) > a(y, y); });
    Eigen::VectorXd values(n);
    Eigen::MatrixXd vectors(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        values[i] = a(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(i)]);
        vectors.col(i) = v.col(order[static_cast<std::size_t>(i)]);
    }
    return {values, vectors};
}

/// -1/2 (x-mu)^T S^-1 (x-mu) - 1/2 log det(2 pi S), via an explicit inverse.
inline double dense_gaussian_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mu, const Eigen::MatrixXd& cov) {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(cov);
    const Eigen::MatrixXd inv = lu.inverse();
    const Eigen::VectorXd d = x - mu;
    const double two_pi_det = (2.0 * M_PI * cov).determinant();
    return -0.5 * d.dot(inv * d) - 0.5 * std::log(two_pi_det);
}

/// AUROC by counting every (normal, anomaly) pair; anomaly lower = 1, tie = 1/2.
inline double brute_force_auroc(const std::vector<double>& scores, const std::vector<int>& anomaly) {
    double credit = 0.0;
    double pairs = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (anomaly[i]) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (!anomaly[j]) continue;
            pairs += 1.0;
            if (scores[j] < scores[i]) credit += 1.0;
            else if (scores[j] == scores[i]) credit += 0.5;
        }
    }
    return credit / pairs;
}

/// Leave-one-out nearest neighbor index for every row (ties -> lowest index).
inline std::vector<Eigen::Index> brute_force_nn(const Eigen::MatrixXd& x) {
    std::vector<Eigen::Index> nn(static_cast<std::size_t>(x.rows()), -1);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double best = INFINITY;
        for (Eigen::Index j = 0; j < x.rows(); ++j) {
            if (j == i) continue;
            double d = 0.0;
            for (Eigen::Index c = 0; c < x.cols(); ++c) d += (x(i, c) - x(j, c)) * (x(i, c) - x(j, c));
            if (d < best) {
                best = d;
                nn[static_cast<std::size_t>(i)] = j;
            }
        }
    }
    return nn;
}

} // namespace oracle

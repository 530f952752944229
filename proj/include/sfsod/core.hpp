#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "sfsod/linalg.hpp"
#include "sfsod/math_util.hpp"
#include "sfsod/problem.hpp"

namespace sfsod {

/// Shared residual kernel. Every operation that needs y - X beta goes through
/// this function so the floating-point path is identical everywhere.
inline Eigen::VectorXd fit_residuals(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                     const Eigen::VectorXd& beta) {
    if (beta.size() != x.cols()) throw DimensionMismatch("beta length does not match columns of X");
    Eigen::VectorXd r = y;
    r.noalias() -= x * beta;
    return r;
}

/// (1/n) sum_i (y_i - x_i' beta - phi_i)^2, summed in index order.
inline double objective(const SfsodProblem& problem, const Eigen::VectorXd& beta,
                        const Eigen::VectorXd& phi) {
    if (phi.size() != problem.n()) throw DimensionMismatch("phi length does not match n");
    Eigen::VectorXd r = fit_residuals(problem.data.X, problem.data.y, beta);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < r.size(); ++i) {
        const double e = r[i] - phi[i];
        acc += e * e;
    }
    return acc / static_cast<double>(problem.n());
}

/// The phi minimizing the objective for fixed beta under ||phi||_0 <= k_n:
/// support on the k_n largest |residuals| (ties to the smallest index),
/// with phi_i equal to the residual there.
inline Eigen::VectorXd optimal_phi_given_beta(const SfsodProblem& problem,
                                              const Eigen::VectorXd& beta) {
    Eigen::VectorXd e = fit_residuals(problem.data.X, problem.data.y, beta);
    Eigen::VectorXd phi = Eigen::VectorXd::Zero(problem.n());
    for (int i : top_k_abs_indices(e, problem.k_n)) phi[i] = e[i];
    return phi;
}

/// (1/n) times the sum of the n - k_n smallest squared residuals,
/// summed in index order over the retained cases.
inline double trimmed_loss(const SfsodProblem& problem, const Eigen::VectorXd& beta) {
    Eigen::VectorXd e = fit_residuals(problem.data.X, problem.data.y, beta);
    std::vector<char> trimmed(static_cast<size_t>(problem.n()), 0);
    for (int i : top_k_abs_indices(e, problem.k_n)) trimmed[static_cast<size_t>(i)] = 1;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < e.size(); ++i)
        if (!trimmed[static_cast<size_t>(i)]) acc += e[i] * e[i];
    return acc / static_cast<double>(problem.n());
}

/// Deletion (externally Studentized) residuals against a fitted subset.
/// For cases in the subset the fit excludes the case itself; for cases
/// outside, the prediction residual is studentized against the subset fit.
/// The subset must have at least p + 2 cases and full column rank.
inline Eigen::VectorXd deletion_residuals(const Dataset& data, const std::vector<int>& subset) {
    data.validate();
    const int n = data.n(), p = data.p();
    const int m = static_cast<int>(subset.size());
    if (m < p + 2) throw DataError("fitted subset must have at least p + 2 cases");

    std::vector<int> all_cols(static_cast<size_t>(p));
    for (int j = 0; j < p; ++j) all_cols[static_cast<size_t>(j)] = j;
    Eigen::MatrixXd xs = submatrix(data.X, subset, all_cols);
    Eigen::VectorXd ys = subvector(data.y, subset);

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xs);
    if (qr.rank() < p) throw RankDeficient("subset Gram matrix is singular");
    Eigen::VectorXd beta = qr.solve(ys);
    const double ssr = (ys - xs * beta).squaredNorm();
    const double sigma2 = ssr / static_cast<double>(m - p);

    Eigen::MatrixXd gram_inv = (xs.transpose() * xs).ldlt().solve(Eigen::MatrixXd::Identity(p, p));
    std::vector<char> in_subset(static_cast<size_t>(n), 0);
    for (int i : subset) in_subset[static_cast<size_t>(i)] = 1;

    // Residuals and scales below this are treated as exact zeros (0/0 -> 0).
    const double zero_tol = 1e-10 * (1.0 + ys.cwiseAbs().maxCoeff());

    Eigen::VectorXd t(n);
    for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd xi = data.X.row(i).transpose();
        const double e = data.y[i] - xi.dot(beta);
        const double q = xi.dot(gram_inv * xi);
        double denom2;
        if (in_subset[static_cast<size_t>(i)]) {
            const double one_minus_h = std::max(1.0 - q, 1e-14);
            const double s2_loo =
                (static_cast<double>(m - p) * sigma2 - e * e / one_minus_h) /
                static_cast<double>(m - p - 1);
            denom2 = std::max(s2_loo, 0.0) * one_minus_h;
        } else {
            denom2 = sigma2 * (1.0 + q);
        }
        if (std::abs(e) <= zero_tol) {
            t[i] = 0.0;
        } else if (denom2 <= zero_tol * zero_tol) {
            t[i] = e > 0.0 ? kInf : -kInf;
        } else {
            t[i] = e / std::sqrt(denom2);
        }
    }
    return t;
}

/// Least squares on the restricted augmented matrix A_S = [X_S, I_S]: the
/// estimator that behaves as if active features and outliers were known.
struct OracleFit {
    Eigen::VectorXd theta;  // stacked (beta_S, phi_S)
    std::vector<int> support_beta;
    std::vector<int> support_phi;
    Eigen::VectorXd residuals;  // length n: y - A_S theta

    Eigen::VectorXd beta_full(int p) const {
        Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
        for (size_t k = 0; k < support_beta.size(); ++k) b[support_beta[k]] = theta[static_cast<Eigen::Index>(k)];
        return b;
    }
    Eigen::VectorXd phi_full(int n) const {
        Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
        const size_t off = support_beta.size();
        for (size_t k = 0; k < support_phi.size(); ++k) f[support_phi[k]] = theta[static_cast<Eigen::Index>(off + k)];
        return f;
    }
};

inline OracleFit robust_oracle_fit(const Dataset& data, const std::vector<int>& support_beta,
                                   const std::vector<int>& support_phi) {
    data.validate();
    const int n = data.n();
    const int sb = static_cast<int>(support_beta.size());
    const int sp = static_cast<int>(support_phi.size());
    if (sb + sp >= n) throw DataError("|S_beta| + |S_phi| must be smaller than n");

    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, sb + sp);
    for (int k = 0; k < sb; ++k) a.col(k) = data.X.col(support_beta[static_cast<size_t>(k)]);
    for (int k = 0; k < sp; ++k) a(support_phi[static_cast<size_t>(k)], sb + k) = 1.0;

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    if (qr.rank() < sb + sp) throw RankDeficient("restricted matrix [X_S, I_S] is rank deficient");

    OracleFit fit;
    fit.theta = qr.solve(data.y);
    fit.support_beta = support_beta;
    fit.support_phi = support_phi;
    fit.residuals = data.y - a * fit.theta;
    return fit;
}

}  // namespace sfsod

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <vector>

#include "sfsod/errors.hpp"

namespace sfsod {

struct LsFit {
    Eigen::VectorXd coef;
    double ssr = 0.0;
    int rank = 0;
};

/// Least squares via column-pivoted QR. The SSR is evaluated explicitly at
/// the solution, never by subtraction of squared norms.
inline LsFit least_squares(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
    LsFit fit;
    if (a.cols() == 0) {
        fit.coef = Eigen::VectorXd::Zero(0);
        fit.ssr = b.squaredNorm();
        return fit;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    fit.coef = qr.solve(b);
    fit.rank = static_cast<int>(qr.rank());
    fit.ssr = (b - a * fit.coef).squaredNorm();
    return fit;
}

/// Least squares with the ridge-style constraint sum(coef_j^2) <= lambda over
/// penalized coordinates (coordinate 0 is exempt when skip_first is set).
/// The multiplier is found by bisection when the constraint is active.
inline LsFit ridge_constrained_ls(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                                  double lambda, bool skip_first) {
    LsFit fit = least_squares(a, b);
    if (!std::isfinite(lambda) || a.cols() == 0) return fit;

    auto penalized_norm2 = [&](const Eigen::VectorXd& c) {
        double s = 0.0;
        for (Eigen::Index j = skip_first ? 1 : 0; j < c.size(); ++j) s += c[j] * c[j];
        return s;
    };
    if (penalized_norm2(fit.coef) <= lambda) return fit;

    const Eigen::Index p = a.cols();
    Eigen::MatrixXd gram = a.transpose() * a;
    Eigen::VectorXd rhs = a.transpose() * b;
    auto solve_mu = [&](double mu) {
        Eigen::MatrixXd g = gram;
        for (Eigen::Index j = skip_first ? 1 : 0; j < p; ++j) g(j, j) += mu;
        return Eigen::VectorXd(g.ldlt().solve(rhs));
    };

    double lo = 0.0, hi = 1.0;
    while (penalized_norm2(solve_mu(hi)) > lambda) {
        hi *= 4.0;
        if (hi > 1e18) break;
    }
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (penalized_norm2(solve_mu(mid)) > lambda)
            lo = mid;
        else
            hi = mid;
        if (hi - lo <= 1e-12 * std::max(1.0, hi)) break;
    }
    fit.coef = solve_mu(hi);
    fit.ssr = (b - a * fit.coef).squaredNorm();
    fit.rank = static_cast<int>(p);
    return fit;
}

/// Rows of x restricted to `rows` and columns restricted to `cols`.
inline Eigen::MatrixXd submatrix(const Eigen::MatrixXd& x, const std::vector<int>& rows,
                                 const std::vector<int>& cols) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (size_t i = 0; i < rows.size(); ++i)
        for (size_t j = 0; j < cols.size(); ++j) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = x(rows[i], cols[j]);
    return out;
}

inline Eigen::VectorXd subvector(const Eigen::VectorXd& v, const std::vector<int>& idx) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
    for (size_t i = 0; i < idx.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[idx[i]];
    return out;
}

}  // namespace sfsod

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "sfsod/data.hpp"
#include "sfsod/errors.hpp"

namespace sfsod {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kGapEpsilon = 1e-10;

/// A fully specified instance of the sparse robust regression MIQP:
/// minimize (1/n) ||y - X beta - phi||^2 subject to
///   ||beta||_0 <= k_p, ||phi||_0 <= k_n, sum beta_j^2 <= lambda,
/// with optional per-coordinate big-M boxes linking values to indicators.
///
/// When `intercept` is set, column 0 of X must be all ones; the intercept is
/// always active, never box-penalized, and consumes one unit of k_p.
struct SfsodProblem {
    Dataset data;
    int k_p = 1;
    int k_n = 0;
    double lambda = kInf;  // ridge radius; +inf disables constraint (2c)
    std::optional<Eigen::VectorXd> bigm_beta;
    std::optional<Eigen::VectorXd> bigm_phi;
    bool intercept = true;

    int n() const { return data.n(); }
    int p() const { return data.p(); }

    /// Number of freely selectable features (excludes the forced-in intercept).
    int free_feature_budget() const { return intercept ? k_p - 1 : k_p; }

    void validate() const {
        data.validate();
        if (intercept) {
            for (int i = 0; i < n(); ++i)
                if (data.X(i, 0) != 1.0)
                    throw DataError("intercept flag set but column 0 is not all ones");
            if (k_p < 1 || k_p > p())
                throw DataError("with an intercept, k_p must satisfy 1 <= k_p <= p");
        } else if (k_p < 0 || k_p > p()) {
            throw DataError("k_p must satisfy 0 <= k_p <= p");
        }
        if (k_n < 0 || k_n > n() - k_p - 1)
            throw DataError("k_n must satisfy 0 <= k_n <= n - k_p - 1");
        if (!(lambda >= 0.0)) throw DataError("lambda must be nonnegative");
        auto check_bigm = [](const std::optional<Eigen::VectorXd>& m, Eigen::Index len,
                             const char* name) {
            if (!m) return;
            if (m->size() != len) throw DimensionMismatch(std::string(name) + " has wrong length");
            for (Eigen::Index i = 0; i < m->size(); ++i)
                if (!((*m)[i] > 0.0) || !std::isfinite((*m)[i]))
                    throw DataError(std::string(name) + " entries must be strictly positive and finite");
        };
        check_bigm(bigm_beta, p(), "bigm_beta");
        check_bigm(bigm_phi, n(), "bigm_phi");
    }
};

/// A solver result with its optimality certificate.
struct Solution {
    Eigen::VectorXd beta;
    Eigen::VectorXd phi;
    std::vector<std::uint8_t> z_beta;
    std::vector<std::uint8_t> z_phi;
    double objective = kInf;
    double lower_bound = 0.0;
    double gap = 1.0;
    std::int64_t nodes_explored = 0;
    double wall_time = 0.0;

    std::vector<int> selected_features() const {
        std::vector<int> s;
        for (size_t j = 0; j < z_beta.size(); ++j)
            if (z_beta[j]) s.push_back(static_cast<int>(j));
        return s;
    }
    std::vector<int> detected_outliers() const {
        std::vector<int> s;
        for (size_t i = 0; i < z_phi.size(); ++i)
            if (z_phi[i]) s.push_back(static_cast<int>(i));
        return s;
    }
};

inline double relative_gap(double objective, double lower_bound) {
    return (objective - lower_bound) / std::max(objective, kGapEpsilon);
}

}  // namespace sfsod

#pragma once

// Shared test helpers: random instances, planted-outlier instances, and the
// brute-force enumeration oracle the solver is checked against. The oracle
// deliberately uses its own linear algebra path (plain QR on explicit
// submatrices), independent of the library's fitting helpers.

#include <Eigen/Dense>
#include <algorithm>
#include <functional>
#include <limits>
#include <vector>

#include "sfsod/problem.hpp"
#include "sfsod/rng.hpp"

namespace sfsod_test {

using sfsod::CounterRng;
using sfsod::Dataset;
using sfsod::SfsodProblem;

inline Dataset make_random_dataset(int n, int p, bool intercept, CounterRng& rng,
                                   double noise = 1.0) {
    Dataset d;
    d.X.resize(n, p);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < p; ++j) d.X(i, j) = (intercept && j == 0) ? 1.0 : rng.normal();
    d.y.resize(n);
    for (int i = 0; i < n; ++i) d.y[i] = rng.normal() * noise;
    return d;
}

inline SfsodProblem make_problem(Dataset d, int k_p, int k_n, bool intercept = false,
                                 double lambda = std::numeric_limits<double>::infinity()) {
    SfsodProblem pr;
    pr.data = std::move(d);
    pr.k_p = k_p;
    pr.k_n = k_n;
    pr.lambda = lambda;
    pr.intercept = intercept;
    pr.validate();
    return pr;
}

struct Planted {
    SfsodProblem problem;
    Eigen::VectorXd beta_true;
    std::vector<int> outliers;
};

/// Sparse signal + gross mean-shift outliers on the first n0 cases.
inline Planted make_planted(int n, int p, int p_active, int n0, double shift, CounterRng& rng,
                            double noise = 1.0, bool intercept = false) {
    Dataset d = make_random_dataset(n, p, intercept, rng, 0.0);
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    for (int j = 0; j < p_active; ++j) beta[j] = 2.0;  // slot 0 is the intercept when present
    d.y = d.X * beta;
    for (int i = 0; i < n; ++i) d.y[i] += noise * rng.normal();
    std::vector<int> outliers;
    for (int i = 0; i < n0; ++i) {
        d.y[i] += shift;
        outliers.push_back(i);
    }
    Planted out;
    out.problem = make_problem(std::move(d), p_active, n0, intercept);
    out.beta_true = beta;
    out.outliers = outliers;
    return out;
}

inline void for_each_subset(int n, int max_size, const std::function<void(const std::vector<int>&)>& fn) {
    std::vector<int> subset;
    std::function<void(int)> rec = [&](int start) {
        fn(subset);
        if (static_cast<int>(subset.size()) == max_size) return;
        for (int i = start; i < n; ++i) {
            subset.push_back(i);
            rec(i + 1);
            subset.pop_back();
        }
    };
    rec(0);
}

struct EnumerationResult {
    double objective = std::numeric_limits<double>::infinity();
    std::vector<int> support_beta;   // selected columns (includes intercept slot)
    std::vector<int> support_phi;    // trimmed cases
    Eigen::VectorXd beta;
    double runner_up = std::numeric_limits<double>::infinity();
};

/// Brute force over every feasible (feature support, trimmed set) pair.
/// Only supports lambda = +inf problems.
inline EnumerationResult enumerate_best(const SfsodProblem& pr) {
    const int n = pr.n(), p = pr.p();
    EnumerationResult best;

    std::vector<int> free_features;
    for (int j = pr.intercept ? 1 : 0; j < p; ++j) free_features.push_back(j);

    for_each_subset(static_cast<int>(free_features.size()), pr.free_feature_budget(),
                    [&](const std::vector<int>& fsub) {
        std::vector<int> cols;
        if (pr.intercept) cols.push_back(0);
        for (int k : fsub) cols.push_back(free_features[static_cast<size_t>(k)]);
        for_each_subset(n, pr.k_n, [&](const std::vector<int>& trimmed) {
            std::vector<char> is_trimmed(static_cast<size_t>(n), 0);
            for (int i : trimmed) is_trimmed[static_cast<size_t>(i)] = 1;
            std::vector<int> rows;
            for (int i = 0; i < n; ++i)
                if (!is_trimmed[static_cast<size_t>(i)]) rows.push_back(i);

            Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
            if (!cols.empty() && !rows.empty()) {
                Eigen::MatrixXd a(static_cast<Eigen::Index>(rows.size()),
                                  static_cast<Eigen::Index>(cols.size()));
                Eigen::VectorXd b(static_cast<Eigen::Index>(rows.size()));
                for (size_t i = 0; i < rows.size(); ++i) {
                    b[static_cast<Eigen::Index>(i)] = pr.data.y[rows[i]];
                    for (size_t j = 0; j < cols.size(); ++j)
                        a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                            pr.data.X(rows[i], cols[j]);
                }
                Eigen::VectorXd coef = Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(a).solve(b);
                for (size_t j = 0; j < cols.size(); ++j) beta[cols[j]] = coef[static_cast<Eigen::Index>(j)];
            }
            double obj = 0.0;
            for (int i : rows) {
                double pred = 0.0;
                for (int j : cols) pred += pr.data.X(i, j) * beta[j];
                const double e = pr.data.y[i] - pred;
                obj += e * e;
            }
            obj /= static_cast<double>(n);

            if (obj < best.objective) {
                if (best.support_beta != cols || best.support_phi != trimmed)
                    best.runner_up = best.objective;
                best.objective = obj;
                best.support_beta = cols;
                best.support_phi = trimmed;
                best.beta = beta;
            } else if (obj < best.runner_up &&
                       (cols != best.support_beta || trimmed != best.support_phi)) {
                best.runner_up = obj;
            }
        });
    });
    return best;
}

}  // namespace sfsod_test

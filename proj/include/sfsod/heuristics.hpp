#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "sfsod/core.hpp"
#include "sfsod/linalg.hpp"
#include "sfsod/math_util.hpp"
#include "sfsod/problem.hpp"
#include "sfsod/rng.hpp"

namespace sfsod {

/// One preliminary estimator in the big-M ensemble.
struct Candidate {
    Eigen::VectorXd beta;
    Eigen::VectorXd residuals;  // y - X beta
    std::string provenance;
};

struct CandidateSet {
    std::vector<Candidate> candidates;

    void validate(const Dataset& data) const {
        for (const auto& c : candidates) {
            Eigen::VectorXd e = data.y - data.X * c.beta;
            if ((e - c.residuals).lpNorm<Eigen::Infinity>() > 1e-10)
                throw DataError("candidate residuals do not match y - X beta: " + c.provenance);
        }
    }
};

/// Big-M bounds as per-coordinate maxima over the ensemble, scaled by c >= 1.
/// Coordinates whose maximum is zero receive the floor so the bound never
/// pins a variable to zero spuriously.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> ensemble_bounds(const CandidateSet& set,
                                                                   double c, double floor_eps) {
    if (set.candidates.empty()) throw EmptyEnsemble();
    if (c < 1.0) throw DataError("ensemble bound multiplier c must be >= 1");
    const Eigen::Index p = set.candidates.front().beta.size();
    const Eigen::Index n = set.candidates.front().residuals.size();
    Eigen::VectorXd mb = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd mp = Eigen::VectorXd::Zero(n);
    for (const auto& cand : set.candidates) {
        if (cand.beta.size() != p || cand.residuals.size() != n)
            throw DimensionMismatch("inconsistent candidate dimensions");
        mb = mb.cwiseMax(cand.beta.cwiseAbs());
        mp = mp.cwiseMax(cand.residuals.cwiseAbs());
    }
    mb *= c;
    mp *= c;
    for (Eigen::Index j = 0; j < p; ++j) mb[j] = std::max(mb[j], floor_eps);
    for (Eigen::Index i = 0; i < n; ++i) mp[i] = std::max(mp[i], floor_eps);
    return {mb, mp};
}

/// Support of size <= k_p: the intercept (when present) plus the largest
/// non-intercept coordinates of |beta|, ties to the smallest index.
inline std::vector<int> sparse_support(const SfsodProblem& problem, const Eigen::VectorXd& beta) {
    const int start = problem.intercept ? 1 : 0;
    std::vector<int> idx;
    idx.reserve(static_cast<size_t>(problem.p() - start));
    for (int j = start; j < problem.p(); ++j) idx.push_back(j);
    const int budget = std::min<int>(problem.free_feature_budget(), static_cast<int>(idx.size()));
    std::partial_sort(idx.begin(), idx.begin() + budget, idx.end(), [&](int a, int b) {
        const double fa = std::abs(beta[a]), fb = std::abs(beta[b]);
        if (fa != fb) return fa > fb;
        return a < b;
    });
    std::vector<int> support(idx.begin(), idx.begin() + budget);
    if (problem.intercept) support.push_back(0);
    std::sort(support.begin(), support.end());
    return support;
}

/// Scale the penalized coordinates onto the ridge ball when they exceed it.
inline Eigen::VectorXd project_ridge(const SfsodProblem& problem, Eigen::VectorXd beta) {
    if (!std::isfinite(problem.lambda)) return beta;
    double nrm2 = 0.0;
    for (int j = problem.intercept ? 1 : 0; j < problem.p(); ++j) nrm2 += beta[j] * beta[j];
    if (nrm2 > problem.lambda) {
        const double scale = std::sqrt(problem.lambda / nrm2) * (1.0 - 1e-12);
        for (int j = problem.intercept ? 1 : 0; j < problem.p(); ++j) beta[j] *= scale;
    }
    return beta;
}

/// Least squares restricted to `cols` over `rows`, honoring the ridge
/// constraint; returns a full-length coefficient vector.
inline Eigen::VectorXd fit_restricted(const SfsodProblem& problem, const std::vector<int>& cols,
                                      const std::vector<int>& rows) {
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(problem.p());
    if (cols.empty() || rows.empty()) return beta;
    Eigen::MatrixXd a = submatrix(problem.data.X, rows, cols);
    Eigen::VectorXd b = subvector(problem.data.y, rows);
    const bool skip_first = problem.intercept && !cols.empty() && cols.front() == 0;
    LsFit fit = std::isfinite(problem.lambda) ? ridge_constrained_ls(a, b, problem.lambda, skip_first)
                                              : least_squares(a, b);
    for (size_t k = 0; k < cols.size(); ++k) beta[cols[k]] = fit.coef[static_cast<Eigen::Index>(k)];
    return beta;
}

/// Assemble a feasible Solution from a sparse coefficient vector: phi is the
/// optimal mean-shift for beta, the indicators follow the given support.
inline Solution make_feasible_solution(const SfsodProblem& problem, const Eigen::VectorXd& beta,
                                       const std::vector<int>& support) {
    Solution s;
    s.beta = project_ridge(problem, beta);
    s.phi = optimal_phi_given_beta(problem, beta);
    s.z_beta.assign(static_cast<size_t>(problem.p()), 0);
    for (int j : support) s.z_beta[static_cast<size_t>(j)] = 1;
    if (problem.intercept) s.z_beta[0] = 1;
    s.z_phi.assign(static_cast<size_t>(problem.n()), 0);
    for (Eigen::Index i = 0; i < s.phi.size(); ++i)
        if (s.phi[i] != 0.0) s.z_phi[static_cast<size_t>(i)] = 1;
    s.objective = objective(problem, s.beta, s.phi);
    s.lower_bound = 0.0;
    s.gap = relative_gap(s.objective, s.lower_bound);
    return s;
}

/// Retained rows under the optimal trimming for beta.
inline std::vector<int> retained_rows(const SfsodProblem& problem, const Eigen::VectorXd& beta) {
    Eigen::VectorXd e = fit_residuals(problem.data.X, problem.data.y, beta);
    std::vector<char> trimmed(static_cast<size_t>(problem.n()), 0);
    for (int i : top_k_abs_indices(e, problem.k_n)) trimmed[static_cast<size_t>(i)] = 1;
    std::vector<int> rows;
    rows.reserve(static_cast<size_t>(problem.n() - problem.k_n));
    for (int i = 0; i < problem.n(); ++i)
        if (!trimmed[static_cast<size_t>(i)]) rows.push_back(i);
    return rows;
}

/// Projected-gradient local search on the trimmed loss: a gradient step,
/// hard-thresholding to the k_p budget, a restricted refit, and a phi reset,
/// accepting only strict improvements (step halving otherwise).
inline Solution dfo_local_search(const SfsodProblem& problem, const Eigen::VectorXd& init_beta,
                                 int max_iter, std::vector<double>* objective_trace = nullptr) {
    if (init_beta.size() != problem.p()) throw DimensionMismatch("init_beta length must be p");
    if (max_iter < 1) throw DataError("max_iter must be >= 1");
    const Eigen::MatrixXd& x = problem.data.X;
    const double n = static_cast<double>(problem.n());

    std::vector<int> support = sparse_support(problem, init_beta);
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(problem.p());
    for (int j : support) beta[j] = init_beta[j];
    beta = project_ridge(problem, beta);
    double obj = trimmed_loss(problem, beta);
    if (objective_trace) objective_trace->push_back(obj);

    const double lmax = spectral_bound(x);
    const double base_step = lmax > 0.0 ? 1.0 / lmax : 1.0;

    for (int it = 0; it < max_iter; ++it) {
        Eigen::VectorXd phi = optimal_phi_given_beta(problem, beta);
        Eigen::VectorXd r = fit_residuals(x, problem.data.y, beta) - phi;
        Eigen::VectorXd grad = -(2.0 / n) * (x.transpose() * r);

        bool improved = false;
        double step = base_step;
        for (int bt = 0; bt < 25 && !improved; ++bt, step *= 0.5) {
            Eigen::VectorXd cand = beta - step * grad;
            std::vector<int> cand_support = sparse_support(problem, cand);

            Eigen::VectorXd beta_ht = Eigen::VectorXd::Zero(problem.p());
            for (int j : cand_support) beta_ht[j] = cand[j];
            beta_ht = project_ridge(problem, beta_ht);
            Eigen::VectorXd beta_ls =
                fit_restricted(problem, cand_support, retained_rows(problem, beta_ht));

            for (const Eigen::VectorXd* b : {&beta_ls, &beta_ht}) {
                const double cand_obj = trimmed_loss(problem, *b);
                if (cand_obj < obj - 1e-14 * std::max(1.0, obj)) {
                    beta = *b;
                    support = cand_support;
                    obj = cand_obj;
                    improved = true;
                    break;
                }
            }
        }
        if (objective_trace && improved) objective_trace->push_back(obj);
        if (!improved) break;
    }
    return make_feasible_solution(problem, beta, support);
}

/// Concentration steps: fit a k_p-sparse model on the current subset, then
/// reset the subset to the n - k_n smallest absolute residuals; repeats until
/// the subset is a fixed point or max_iter.
inline Solution concentration_steps(const SfsodProblem& problem, std::vector<int> subset,
                                    int max_iter) {
    if (static_cast<int>(subset.size()) != problem.n() - problem.k_n)
        throw DataError("init_subset must have n - k_n case indices");
    std::sort(subset.begin(), subset.end());

    std::vector<int> all_cols(static_cast<size_t>(problem.p()));
    std::iota(all_cols.begin(), all_cols.end(), 0);

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(problem.p());
    std::vector<int> support;
    for (int it = 0; it < max_iter; ++it) {
        // (a) sparse fit on the subset: dfo with the trimming disabled.
        SfsodProblem sub;
        sub.data.X = submatrix(problem.data.X, subset, all_cols);
        sub.data.y = subvector(problem.data.y, subset);
        sub.k_p = problem.k_p;
        sub.k_n = 0;
        sub.lambda = problem.lambda;
        sub.intercept = problem.intercept;
        Solution fit = dfo_local_search(sub, beta, 100);
        beta = fit.beta;
        support = fit.selected_features();

        // (b) re-retain the n - k_n smallest absolute residuals.
        std::vector<int> next = retained_rows(problem, beta);
        if (next == subset) break;
        subset = std::move(next);
    }
    return make_feasible_solution(problem, beta, support);
}

/// Multistart concentration scheme: each start fits a sparse model on a small
/// random elemental subset, retains the n - k_n best-fitting cases, and runs a
/// couple of concentration steps; the best few starts are then iterated to
/// convergence. Mirrors the classic trimmed-squares initialization (small
/// subsamples have a high chance of being outlier free).
inline Solution lts_multistart(const SfsodProblem& problem, int n_starts, int n_keep,
                               CounterRng& rng, int warmup_iters = 2, int polish_iters = 50) {
    if (n_starts < 1 || n_keep < 1) throw DataError("multistart needs n_starts >= 1, n_keep >= 1");
    const int n = problem.n();
    const int elemental = std::min(n, problem.k_p + 2);
    std::vector<int> all_cols(static_cast<size_t>(problem.p()));
    std::iota(all_cols.begin(), all_cols.end(), 0);

    std::vector<std::pair<double, std::vector<int>>> pool;
    pool.reserve(static_cast<size_t>(n_starts));
    std::vector<int> idx(static_cast<size_t>(n));
    for (int s = 0; s < n_starts; ++s) {
        std::iota(idx.begin(), idx.end(), 0);
        for (int i = 0; i < elemental; ++i) {
            const int j = i + static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(n - i)));
            std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
        }
        std::vector<int> rows(idx.begin(), idx.begin() + elemental);
        std::sort(rows.begin(), rows.end());

        SfsodProblem sub;
        sub.data.X = submatrix(problem.data.X, rows, all_cols);
        sub.data.y = subvector(problem.data.y, rows);
        sub.k_p = problem.k_p;
        sub.k_n = 0;
        sub.lambda = problem.lambda;
        sub.intercept = problem.intercept;
        Solution elem_fit = dfo_local_search(sub, Eigen::VectorXd::Zero(problem.p()), 50);

        Solution warm =
            concentration_steps(problem, retained_rows(problem, elem_fit.beta), warmup_iters);
        pool.emplace_back(warm.objective, retained_rows(problem, warm.beta));
    }
    std::stable_sort(pool.begin(), pool.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });

    Solution best;
    for (int k = 0; k < std::min<int>(n_keep, static_cast<int>(pool.size())); ++k) {
        Solution s = concentration_steps(problem, pool[static_cast<size_t>(k)].second, polish_iters);
        if (s.objective < best.objective) best = s;
    }
    return best;
}

struct EnsembleParams {
    double c = 2.0;            // bound multiplier
    double floor_scale = 1e-3; // floor = floor_scale * MAD(y)
    int cs_starts = 20;
    int cs_keep = 5;
    int dfo_max_iter = 200;
    std::uint64_t seed = 0;
};

/// Default warm-start ensemble: dfo from zero, dfo from a ridge fit, and the
/// best multistart concentration fit. Members run in a fixed provenance order
/// so the merged result is identical in serial and parallel execution.
inline CandidateSet build_candidate_set(const SfsodProblem& problem, const EnsembleParams& params,
                                        std::vector<Solution>* warm_starts = nullptr) {
    CandidateSet set;
    auto add = [&](const Solution& s, const std::string& tag) {
        Candidate c;
        c.beta = s.beta;
        c.residuals = problem.data.y - problem.data.X * s.beta;
        c.provenance = tag;
        set.candidates.push_back(std::move(c));
        if (warm_starts) warm_starts->push_back(s);
    };

    Eigen::VectorXd zero = Eigen::VectorXd::Zero(problem.p());
    add(dfo_local_search(problem, zero, params.dfo_max_iter), "dfo-zero");

    Eigen::MatrixXd gram = problem.data.X.transpose() * problem.data.X;
    const double jitter = 1e-3 * gram.trace() / static_cast<double>(problem.p());
    gram.diagonal().array() += std::max(jitter, 1e-12);
    Eigen::VectorXd ridge = gram.ldlt().solve(problem.data.X.transpose() * problem.data.y);
    add(dfo_local_search(problem, ridge, params.dfo_max_iter), "dfo-ridge");

    CounterRng rng(params.seed, 0, 4);  // stream 4: heuristic randomness
    add(lts_multistart(problem, params.cs_starts, params.cs_keep, rng), "concentration");
    return set;
}

/// Candidate set -> problem bounds, with the configured floor.
inline void attach_ensemble_bounds(SfsodProblem& problem, const CandidateSet& set, double c,
                                   double floor_scale = 1e-3) {
    const double floor_eps = std::max(floor_scale * mad(problem.data.y), 1e-12);
    auto [mb, mp] = ensemble_bounds(set, c, floor_eps);
    problem.bigm_beta = mb;
    problem.bigm_phi = mp;
}

}  // namespace sfsod

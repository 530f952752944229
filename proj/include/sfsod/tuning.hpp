#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "sfsod/bench.hpp"
#include "sfsod/core.hpp"
#include "sfsod/heuristics.hpp"
#include "sfsod/math_util.hpp"
#include "sfsod/problem.hpp"
#include "sfsod/solver.hpp"

namespace sfsod {

/// The tuning protocol: fix lambda, start k_n high, select k_p by trimmed
/// cross-validation or BIC, then refine k_n downward along the
/// deletion-residual monitor.
struct TuningPlan {
    std::vector<double> lambda_grid{kInf};
    int kn_start = 0;  // step (ii): larger than the plausible contamination
    std::vector<int> kp_grid;
    enum class Method { TrimmedCv, Bic } method = Method::TrimmedCv;
    int folds = 10;
    std::uint64_t seed = 0;
    double alpha = 0.01;  // deletion-residual monitor level
    SolverConfig solver = [] {
        SolverConfig c;
        c.time_limit = 5.0;
        c.node_limit = 20000;
        return c;
    }();
    EnsembleParams ensemble = [] {
        EnsembleParams e;
        e.cs_starts = 40;
        e.cs_keep = 5;
        return e;
    }();

    /// Default grid 1..2*expected_p0 (sizes count the intercept).
    void default_kp_grid(int expected_p0, int p) {
        kp_grid.clear();
        for (int k = 1; k <= std::min(2 * expected_p0, p); ++k) kp_grid.push_back(k);
    }

    void validate(const SfsodProblem& problem) const {
        if (kp_grid.empty()) throw InvalidConfig("kp_grid must be nonempty");
        for (size_t i = 0; i + 1 < kp_grid.size(); ++i)
            if (kp_grid[i] >= kp_grid[i + 1]) throw InvalidConfig("kp_grid must be increasing");
        if (kp_grid.front() < (problem.intercept ? 1 : 0) || kp_grid.back() > problem.p())
            throw InvalidConfig("kp_grid outside the feasible range");
        if (kn_start < 0 || kn_start > problem.n() - kp_grid.back() - 1)
            throw InvalidConfig("kn_start outside the feasible range");
        if (folds < 2) throw FoldTooSmall("folds must be >= 2");
        if (lambda_grid.empty()) throw InvalidConfig("lambda_grid must be nonempty");
        if (!(alpha > 0.0 && alpha < 0.5)) throw InvalidConfig("alpha must be in (0, 0.5)");
    }
};

/// Mean of the squared errors after dropping the `trim` largest.
inline double upper_trimmed_mean(std::vector<double> squared_errors, int trim) {
    std::sort(squared_errors.begin(), squared_errors.end());
    const int keep = static_cast<int>(squared_errors.size()) - trim;
    if (keep < 1) throw FoldTooSmall("test fold fully trimmed");
    double acc = 0.0;
    for (int i = 0; i < keep; ++i) acc += squared_errors[static_cast<size_t>(i)];
    return acc / keep;
}

/// Elbow rule: the model size with the largest decrease along consecutive
/// BIC values; with no decrease anywhere, the smallest size in the grid.
inline int select_bic_elbow(const std::vector<int>& kp, const std::vector<double>& bic) {
    size_t best = 0;
    double best_drop = 0.0;
    for (size_t k = 1; k < bic.size(); ++k) {
        const double drop = bic[k] - bic[k - 1];
        if (drop < best_drop) {
            best_drop = drop;
            best = k;
        }
    }
    return kp[best];
}

namespace detail {

/// Solve with a multistart warm start plus chained solutions.
inline Solution tuning_solve(const SfsodProblem& problem, const TuningPlan& plan,
                             std::uint64_t stream, const std::vector<Solution>& chain) {
    std::vector<Solution> warms = chain;
    if (problem.k_n > 0) {
        CounterRng rng(plan.seed, stream, kStreamHeuristics);
        warms.push_back(
            lts_multistart(problem, plan.ensemble.cs_starts, plan.ensemble.cs_keep, rng));
    }
    SolverConfig scfg = plan.solver;
    scfg.seed = plan.seed ^ stream;
    return solve(problem, scfg, warms);
}

}  // namespace detail

struct CvResult {
    int selected_kp = 0;
    std::vector<int> kp;
    std::vector<double> score;              // mean trimmed prediction error per k_p
    std::vector<std::vector<double>> fold_score;  // [fold][kp index]
};

/// Step (iii) by cross-validation: the performance measure is the upper
/// trimmed mean of squared prediction errors, dropping ceil(3 k_n / n * |test|)
/// cases on the test fold while the training fits trim ceil(2 k_n / n * |train|).
inline CvResult trimmed_cv(const SfsodProblem& problem, const TuningPlan& plan) {
    problem.validate();
    plan.validate(problem);
    const int n = problem.n();
    const int folds = plan.folds;

    // uniform random permutation, contiguous blocks as folds
    std::vector<int> perm(static_cast<size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    CounterRng rng(plan.seed, 0, kStreamFolds);
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(i + 1)));
        std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
    }

    std::vector<int> all_cols(static_cast<size_t>(problem.p()));
    std::iota(all_cols.begin(), all_cols.end(), 0);

    CvResult result;
    result.kp = plan.kp_grid;
    result.score.assign(plan.kp_grid.size(), 0.0);
    result.fold_score.assign(static_cast<size_t>(folds), {});

    for (int f = 0; f < folds; ++f) {
        std::vector<int> test_rows, train_rows;
        for (int i = 0; i < n; ++i)
            (i % folds == f ? test_rows : train_rows).push_back(perm[static_cast<size_t>(i)]);
        std::sort(test_rows.begin(), test_rows.end());
        std::sort(train_rows.begin(), train_rows.end());
        if (static_cast<int>(test_rows.size()) < 2 || static_cast<int>(train_rows.size()) < 2)
            throw FoldTooSmall("fold sizes must be >= 2");

        const int test_trim = static_cast<int>(std::ceil(
            3.0 * problem.k_n / n * static_cast<double>(test_rows.size()) - 1e-12));
        int train_kn = static_cast<int>(std::ceil(
            2.0 * problem.k_n / n * static_cast<double>(train_rows.size()) - 1e-12));

        SfsodProblem sub;
        sub.data.X = submatrix(problem.data.X, train_rows, all_cols);
        sub.data.y = subvector(problem.data.y, train_rows);
        sub.lambda = problem.lambda;
        sub.intercept = problem.intercept;
        // keep the training fit identifiable on small folds
        train_kn = std::min(train_kn,
                            static_cast<int>(train_rows.size()) - plan.kp_grid.back() - 1);
        sub.k_n = std::max(train_kn, 0);

        std::vector<Solution> chain;
        for (size_t k = 0; k < plan.kp_grid.size(); ++k) {
            sub.k_p = plan.kp_grid[k];
            sub.validate();
            Solution fit = detail::tuning_solve(
                sub, plan, 1000003ULL * static_cast<std::uint64_t>(f) + k, chain);
            chain.assign(1, fit);

            std::vector<double> sq;
            sq.reserve(test_rows.size());
            for (int i : test_rows) {
                const double e = problem.data.y[i] - problem.data.X.row(i).dot(fit.beta);
                sq.push_back(e * e);
            }
            result.fold_score[static_cast<size_t>(f)].push_back(upper_trimmed_mean(sq, test_trim));
        }
    }
    for (size_t k = 0; k < plan.kp_grid.size(); ++k) {
        double acc = 0.0;
        for (int f = 0; f < folds; ++f) acc += result.fold_score[static_cast<size_t>(f)][k];
        result.score[k] = acc / folds;
    }
    size_t best = 0;
    for (size_t k = 1; k < result.score.size(); ++k)
        if (result.score[k] < result.score[best]) best = k;  // ties keep the smaller k_p
    result.selected_kp = plan.kp_grid[best];
    return result;
}

struct BicResult {
    int selected_kp = 0;
    std::vector<int> kp;
    std::vector<double> bic;
    std::vector<double> loss;  // L = SSR over retained / h
    std::vector<Solution> fits;
};

/// Step (iii) by the BIC criterion BIC(k) = k log(h) + h log(L) with
/// h = n - k_n, selecting the largest decrease along consecutive model sizes
/// (no decrease anywhere selects the smallest k_p in the grid). Fits are
/// warm-started from the previous model size.
inline BicResult bic_path(const SfsodProblem& problem, const TuningPlan& plan) {
    problem.validate();
    plan.validate(problem);
    const int h = problem.n() - problem.k_n;
    if (h < 2) throw DataError("bic_path requires h = n - k_n >= 2");

    BicResult result;
    result.kp = plan.kp_grid;
    std::vector<Solution> chain;
    for (size_t k = 0; k < plan.kp_grid.size(); ++k) {
        SfsodProblem sub = problem;
        sub.k_p = plan.kp_grid[k];
        Solution fit = detail::tuning_solve(sub, plan, 2000003ULL + k, chain);
        chain.assign(1, fit);
        const double loss = std::max(fit.objective * problem.n() / h, 1e-300);
        result.loss.push_back(loss);
        result.bic.push_back(plan.kp_grid[k] * std::log(static_cast<double>(h)) +
                             h * std::log(loss));
        result.fits.push_back(std::move(fit));
    }

    result.selected_kp = select_bic_elbow(result.kp, result.bic);
    return result;
}

struct KnTrace {
    int selected_kn = 0;
    std::vector<int> kn;
    std::vector<double> min_abs_deletion_residual;
    std::vector<double> threshold;
    std::vector<double> objective;
};

/// Step (iv): walk k_n downward from kn_start, monitoring the minimum
/// absolute deletion residual among the trimmed cases. The walk stops at the
/// first k_n whose monitor exceeds a Student-t threshold with df = n - k_p - 1
/// at level alpha; the quantile is taken at the order-statistic-adjusted
/// probability for the maximum of n - k_n + 1 null draws, so the test
/// accounts for the trimmed cases being selected as the most outlying.
inline KnTrace refine_kn(const SfsodProblem& problem, int k_p, int kn_start,
                         const TuningPlan& plan) {
    problem.validate();
    if (kn_start < 1) throw DataError("kn_start must be >= 1");
    const int n = problem.n();
    const double df = std::max(1.0, static_cast<double>(n - k_p - 1));

    KnTrace trace;
    std::vector<Solution> chain;
    for (int kn = kn_start; kn >= 1; --kn) {
        SfsodProblem sub = problem;
        sub.k_p = k_p;
        sub.k_n = kn;
        sub.validate();
        Solution fit = detail::tuning_solve(sub, plan, 3000017ULL + static_cast<std::uint64_t>(kn),
                                            chain);
        chain.assign(1, fit);

        std::vector<int> trimmed = fit.detected_outliers();
        std::vector<char> is_trimmed(static_cast<size_t>(n), 0);
        for (int i : trimmed) is_trimmed[static_cast<size_t>(i)] = 1;
        std::vector<int> subset;
        for (int i = 0; i < n; ++i)
            if (!is_trimmed[static_cast<size_t>(i)]) subset.push_back(i);

        Dataset restricted;
        restricted.y = problem.data.y;
        const std::vector<int> sel = fit.selected_features();
        restricted.X.resize(n, static_cast<Eigen::Index>(sel.size()));
        for (size_t c = 0; c < sel.size(); ++c) restricted.X.col(static_cast<Eigen::Index>(c)) =
            problem.data.X.col(sel[c]);

        double monitor = kInf;
        if (!trimmed.empty()) {
            Eigen::VectorXd t = deletion_residuals(restricted, subset);
            // The subset is the best-fitting n - k_n cases, so its residual
            // scale underestimates sigma; correct the studentization by the
            // Gaussian trimming factor before comparing against the envelope.
            const double gamma = static_cast<double>(subset.size()) / n;
            const double correction = std::sqrt(gaussian_trimming_variance_factor(gamma));
            for (int i : trimmed) monitor = std::min(monitor, std::abs(t[i]) * correction);
        }

        // Envelope under "the least-outlying trimmed case is clean": that case
        // is then the maximum over a clean pool of at least n - k_n + 1 cases
        // (the retained ones plus itself; trimmed cases above it may be
        // genuine outliers). The max of m null draws has CDF^m, so the level
        // is the Beta(m, 1) quantile at 1 - alpha.
        const int m_pool = n - kn + 1;
        const double level =
            beta_quantile(static_cast<double>(m_pool), 1.0, 1.0 - plan.alpha);
        const double threshold = student_t_abs_quantile(level, df);

        trace.kn.push_back(kn);
        trace.min_abs_deletion_residual.push_back(monitor);
        trace.threshold.push_back(threshold);
        trace.objective.push_back(fit.objective);

        if (monitor > threshold) {
            trace.selected_kn = kn;
            return trace;
        }
    }
    trace.selected_kn = 0;
    return trace;
}

struct TuneResult {
    double lambda = kInf;
    int k_p = 0;
    int k_n = 0;
    CvResult cv;        // populated when method == TrimmedCv
    BicResult bic;      // populated when method == Bic
    KnTrace kn_trace;
    double selection_score = kInf;
};

/// The full protocol (i)-(iv) over the lambda grid.
inline TuneResult tune(const SfsodProblem& problem, const TuningPlan& plan) {
    problem.validate();
    plan.validate(problem);
    TuneResult best;
    for (double lambda : plan.lambda_grid) {
        SfsodProblem pr = problem;
        pr.lambda = lambda;
        pr.k_n = plan.kn_start;
        pr.k_p = plan.kp_grid.front();
        pr.validate();

        TuneResult cur;
        cur.lambda = lambda;
        if (plan.method == TuningPlan::Method::TrimmedCv) {
            cur.cv = trimmed_cv(pr, plan);
            cur.k_p = cur.cv.selected_kp;
            for (size_t k = 0; k < cur.cv.kp.size(); ++k)
                if (cur.cv.kp[k] == cur.k_p) cur.selection_score = cur.cv.score[k];
        } else {
            cur.bic = bic_path(pr, plan);
            cur.k_p = cur.bic.selected_kp;
            for (size_t k = 0; k < cur.bic.kp.size(); ++k)
                if (cur.bic.kp[k] == cur.k_p) cur.selection_score = cur.bic.bic[k];
        }
        if (plan.kn_start > 0) {
            cur.kn_trace = refine_kn(pr, cur.k_p, plan.kn_start, plan);
            cur.k_n = cur.kn_trace.selected_kn;
        }
        if (cur.selection_score < best.selection_score || best.k_p == 0) best = std::move(cur);
    }
    return best;
}

}  // namespace sfsod

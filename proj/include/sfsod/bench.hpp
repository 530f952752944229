#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <string>
#include <vector>

#include <json.hpp>

#include "sfsod/core.hpp"
#include "sfsod/csv.hpp"
#include "sfsod/heuristics.hpp"
#include "sfsod/math_util.hpp"
#include "sfsod/problem.hpp"
#include "sfsod/rng.hpp"
#include "sfsod/solver.hpp"

namespace sfsod {

// Named RNG streams keyed by (seed, replication, stream).
enum RngStream : std::uint64_t {
    kStreamTrainDesign = 0,
    kStreamTrainErrors = 1,
    kStreamTestDesign = 2,
    kStreamTestErrors = 3,
    kStreamHeuristics = 4,
    kStreamFolds = 5,
};

/// Simulation truth for one scenario cell. p0 counts the intercept, so the
/// active non-intercept predictors are slots 1..p0-1.
struct ScenarioConfig {
    int n = 100;
    int p = 50;
    int p0 = 5;
    double beta_value = 2.0;
    enum class SigmaX { Identity, Ar } sigma_x = SigmaX::Identity;
    double ar_rho = 0.3;
    double snr = 5.0;
    double contamination_rate = 0.1;
    double shift_eps = -10.0;
    double shift_x = 10.0;
    std::uint64_t seed = 0;
    int replications = 20;

    int n_outliers() const { return static_cast<int>(std::lround(contamination_rate * n)); }

    void validate() const {
        if (n < 2 || p < 2) throw InvalidConfig("scenario requires n >= 2 and p >= 2");
        if (p0 < 2 || p0 > p)
            throw InvalidConfig("scenario requires 2 <= p0 <= p (p0 counts the intercept)");
        if (!(snr > 0.0)) throw InvalidConfig("scenario SNR must be positive");
        if (contamination_rate < 0.0 || contamination_rate >= 0.5)
            throw InvalidConfig("scenario contamination_rate must be in [0, 0.5)");
        if (sigma_x == SigmaX::Ar && (ar_rho <= -1.0 || ar_rho >= 1.0))
            throw InvalidConfig("scenario ar_rho must be in (-1, 1)");
        if (replications < 1) throw InvalidConfig("scenario replications must be >= 1");
    }
};

struct ScenarioTruth {
    Eigen::VectorXd beta;
    std::vector<int> outliers;  // 0-based case indices
    double sigma2 = 0.0;        // error variance implied by the SNR
};

struct ScenarioData {
    Dataset train;
    ScenarioTruth truth;
    Dataset test;
};

namespace detail {

inline Eigen::MatrixXd sigma_cholesky(const ScenarioConfig& cfg) {
    const int m = cfg.p - 1;
    if (cfg.sigma_x == ScenarioConfig::SigmaX::Identity) return Eigen::MatrixXd::Identity(m, m);
    Eigen::MatrixXd sigma(m, m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) sigma(i, j) = std::pow(cfg.ar_rho, std::abs(i - j));
    return Eigen::MatrixXd(sigma.llt().matrixL());
}

inline Eigen::MatrixXd draw_design(const ScenarioConfig& cfg, const Eigen::MatrixXd& chol,
                                   CounterRng& rng) {
    Eigen::MatrixXd x(cfg.n, cfg.p);
    x.col(0).setOnes();
    Eigen::VectorXd z(cfg.p - 1);
    for (int i = 0; i < cfg.n; ++i) {
        for (int j = 0; j < cfg.p - 1; ++j) z[j] = rng.normal();
        x.row(i).tail(cfg.p - 1) = (chol * z).transpose();
    }
    return x;
}

}  // namespace detail

/// Analytic var(X beta) over the non-intercept coordinates: beta' Sigma beta.
inline double scenario_signal_variance(const ScenarioConfig& cfg) {
    const int active = cfg.p0 - 1;
    if (cfg.sigma_x == ScenarioConfig::SigmaX::Identity)
        return cfg.beta_value * cfg.beta_value * active;
    double v = 0.0;
    for (int j = 0; j < active; ++j)
        for (int k = 0; k < active; ++k)
            v += cfg.beta_value * cfg.beta_value * std::pow(cfg.ar_rho, std::abs(j - k));
    return v;
}

/// Deterministic draw of one replication: contaminated training data, the
/// truth, and clean test data of the same size.
inline ScenarioData generate_scenario(const ScenarioConfig& cfg, int replication) {
    cfg.validate();
    const Eigen::MatrixXd chol = detail::sigma_cholesky(cfg);
    const double var_signal = scenario_signal_variance(cfg);
    const double sigma2 = var_signal / cfg.snr;
    const double sigma = std::sqrt(sigma2);
    const int n0 = cfg.n_outliers();

    ScenarioData out;
    out.truth.beta = Eigen::VectorXd::Zero(cfg.p);
    for (int j = 0; j < cfg.p0; ++j) out.truth.beta[j] = cfg.beta_value;
    out.truth.sigma2 = sigma2;

    {
        CounterRng rng_x(cfg.seed, static_cast<std::uint64_t>(replication), kStreamTrainDesign);
        CounterRng rng_e(cfg.seed, static_cast<std::uint64_t>(replication), kStreamTrainErrors);
        Eigen::MatrixXd x = detail::draw_design(cfg, chol, rng_x);
        Eigen::VectorXd eps(cfg.n);
        for (int i = 0; i < cfg.n; ++i) eps[i] = sigma * rng_e.normal();
        // Responses follow the model at the clean predictor values; the
        // recorded design then receives the mean shifts, so contaminated
        // cases are bad leverage points inconsistent with the model.
        out.train.y = x * out.truth.beta + eps;
        for (int i = 0; i < n0; ++i) {
            for (int j = 1; j < cfg.p0; ++j) x(i, j) += cfg.shift_x;
            out.train.y[i] += cfg.shift_eps;
            out.truth.outliers.push_back(i);
        }
        out.train.X = std::move(x);
    }
    {
        CounterRng rng_x(cfg.seed, static_cast<std::uint64_t>(replication), kStreamTestDesign);
        CounterRng rng_e(cfg.seed, static_cast<std::uint64_t>(replication), kStreamTestErrors);
        Eigen::MatrixXd x = detail::draw_design(cfg, chol, rng_x);
        Eigen::VectorXd eps(cfg.n);
        for (int i = 0; i < cfg.n; ++i) eps[i] = sigma * rng_e.normal();
        out.test.X = std::move(x);
        out.test.y = out.test.X * out.truth.beta + eps;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct MetricAgg {
    double mean = 0.0, sd = 0.0, median = 0.0, mad = 0.0;
};

inline MetricAgg aggregate_metric(const std::vector<double>& v) {
    MetricAgg a;
    if (v.empty()) return a;
    const double q = static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += x;
    a.mean = s / q;
    double s2 = 0.0;
    for (double x : v) s2 += (x - a.mean) * (x - a.mean);
    a.sd = std::sqrt(s2 / q);
    std::vector<double> tmp = v;
    a.median = median(tmp);
    Eigen::VectorXd ev = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    a.mad = mad(ev);
    return a;
}

/// One fitted replication, in the original data scale.
struct RepFit {
    Eigen::VectorXd beta;
    std::vector<int> outliers;  // detected, 0-based
    double objective = 0.0;
    double gap = 0.0;
    double wall_time = 0.0;
    bool failed = false;
    std::string error;
};

struct PerRepMetrics {
    double rmspe = 0.0;
    double fpr_beta = 0.0, fnr_beta = 0.0;
    double fpr_phi = 0.0, fnr_phi = 0.0;
    double wall_time = 0.0;
};

struct MetricsReport {
    MetricAgg rmspe, fpr_beta, fnr_beta, fpr_phi, fnr_phi, wall_time;
    MetricAgg var_beta, bias2_beta;  // aggregated across coordinates
    std::vector<double> var_per_coord, bias2_per_coord, mse_per_coord;
    std::vector<PerRepMetrics> per_rep;
};

inline double rmspe_on(const Eigen::VectorXd& beta, const Dataset& test) {
    const Eigen::VectorXd e = test.y - test.X * beta;
    return std::sqrt(e.squaredNorm() / static_cast<double>(test.n()));
}

inline MetricsReport compute_metrics(const std::vector<RepFit>& fits,
                                     const std::vector<ScenarioTruth>& truths,
                                     const std::vector<Dataset>& tests) {
    if (fits.size() != truths.size() || fits.size() != tests.size())
        throw DimensionMismatch("compute_metrics: one fit/truth/test per replication");
    MetricsReport rep;
    std::vector<double> rmspe, fprb, fnrb, fprp, fnrp, wall;

    const int q = static_cast<int>(fits.size());
    for (int r = 0; r < q; ++r) {
        const RepFit& fit = fits[static_cast<size_t>(r)];
        const ScenarioTruth& truth = truths[static_cast<size_t>(r)];
        if (fit.failed) continue;
        const int p = static_cast<int>(truth.beta.size());
        const int n = tests[static_cast<size_t>(r)].n();

        PerRepMetrics m;
        m.rmspe = rmspe_on(fit.beta, tests[static_cast<size_t>(r)]);

        int fp = 0, fn = 0, pos = 0, neg = 0;
        for (int j = 0; j < p; ++j) {
            const bool truly = truth.beta[j] != 0.0;
            const bool picked = fit.beta[j] != 0.0;
            pos += truly;
            neg += !truly;
            fp += (picked && !truly);
            fn += (!picked && truly);
        }
        m.fpr_beta = neg > 0 ? static_cast<double>(fp) / neg : 0.0;
        m.fnr_beta = pos > 0 ? static_cast<double>(fn) / pos : 0.0;

        std::vector<char> is_true(static_cast<size_t>(n), 0), is_det(static_cast<size_t>(n), 0);
        for (int i : truth.outliers) is_true[static_cast<size_t>(i)] = 1;
        for (int i : fit.outliers) is_det[static_cast<size_t>(i)] = 1;
        int ofp = 0, ofn = 0, opos = 0, oneg = 0;
        for (int i = 0; i < n; ++i) {
            opos += is_true[static_cast<size_t>(i)];
            oneg += !is_true[static_cast<size_t>(i)];
            ofp += (is_det[static_cast<size_t>(i)] && !is_true[static_cast<size_t>(i)]);
            ofn += (!is_det[static_cast<size_t>(i)] && is_true[static_cast<size_t>(i)]);
        }
        m.fpr_phi = oneg > 0 ? static_cast<double>(ofp) / oneg : 0.0;
        m.fnr_phi = opos > 0 ? static_cast<double>(ofn) / opos : 0.0;
        m.wall_time = fit.wall_time;

        rep.per_rep.push_back(m);
        rmspe.push_back(m.rmspe);
        fprb.push_back(m.fpr_beta);
        fnrb.push_back(m.fnr_beta);
        fprp.push_back(m.fpr_phi);
        fnrp.push_back(m.fnr_phi);
        wall.push_back(m.wall_time);
    }
    rep.rmspe = aggregate_metric(rmspe);
    rep.fpr_beta = aggregate_metric(fprb);
    rep.fnr_beta = aggregate_metric(fnrb);
    rep.fpr_phi = aggregate_metric(fprp);
    rep.fnr_phi = aggregate_metric(fnrp);
    rep.wall_time = aggregate_metric(wall);

    // Per-coordinate bias^2/variance across replications, then aggregated
    // over coordinates. MSE_j = bias_j^2 + var_j by construction.
    if (!fits.empty() && !fits.front().failed) {
        const int p = static_cast<int>(truths.front().beta.size());
        std::vector<double> vars, biases2;
        int q_ok = 0;
        for (const auto& f : fits) q_ok += !f.failed;
        if (q_ok > 0) {
            for (int j = 0; j < p; ++j) {
                double bar = 0.0;
                for (int r = 0; r < q; ++r)
                    if (!fits[static_cast<size_t>(r)].failed) bar += fits[static_cast<size_t>(r)].beta[j];
                bar /= q_ok;
                double var = 0.0, mse = 0.0;
                for (int r = 0; r < q; ++r)
                    if (!fits[static_cast<size_t>(r)].failed) {
                        const double d = fits[static_cast<size_t>(r)].beta[j] - bar;
                        var += d * d;
                        const double dt = fits[static_cast<size_t>(r)].beta[j] - truths.front().beta[j];
                        mse += dt * dt;
                    }
                var /= q_ok;
                mse /= q_ok;
                const double b = bar - truths.front().beta[j];
                vars.push_back(var);
                biases2.push_back(b * b);
                rep.mse_per_coord.push_back(mse);
            }
            rep.var_per_coord = vars;
            rep.bias2_per_coord = biases2;
            rep.var_beta = aggregate_metric(vars);
            rep.bias2_beta = aggregate_metric(biases2);
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Scaled prediction error (robust test-set evaluation)
// ---------------------------------------------------------------------------

struct SpeResult {
    double spe = 0.0;
    int retained = 0;
    bool degenerate_scale = false;
    std::vector<int> dropped;  // 0-based test case indices
    double s_tr = 0.0, s_te = 0.0;
};

/// Robustly scaled prediction error: the test residuals are scaled by the
/// training residual RMS, cases beyond 1.345 * MAD of the scaled residuals
/// are dropped, and the mean absolute scaled error over the rest is reported.
inline SpeResult scaled_prediction_error(const Eigen::VectorXd& beta, const Eigen::VectorXd& phi,
                                         const Dataset& train, const Dataset& test) {
    if (phi.size() != train.y.size()) throw DimensionMismatch("phi length must match training n");
    SpeResult res;
    Eigen::VectorXd eps_tr = train.y - train.X * beta - phi;
    res.s_tr = std::sqrt(eps_tr.squaredNorm() / static_cast<double>(train.n()));
    Eigen::VectorXd eps_te = test.y - test.X * beta;

    if (res.s_tr == 0.0) {
        // perfect training fit: report the unscaled mean absolute error
        res.degenerate_scale = true;
        res.retained = test.n();
        res.spe = eps_te.cwiseAbs().mean();
        return res;
    }
    Eigen::VectorXd r = eps_te / res.s_tr;
    res.s_te = mad(r);

    double acc = 0.0;
    int kept = 0;
    for (int i = 0; i < test.n(); ++i) {
        if (res.s_te > 0.0 && std::abs(r[i]) > 1.345 * res.s_te) {
            res.dropped.push_back(i);
        } else {
            acc += std::abs(r[i]);
            ++kept;
        }
    }
    res.retained = kept;
    res.spe = kept > 0 ? acc / kept : 0.0;
    return res;
}

// ---------------------------------------------------------------------------
// Experiment runner
// ---------------------------------------------------------------------------

enum class Method { Mip, DfoHeuristic, ConcentrationHeuristic, Oracle };

inline std::string method_name(Method m) {
    switch (m) {
        case Method::Mip: return "mip";
        case Method::DfoHeuristic: return "dfo-heuristic";
        case Method::ConcentrationHeuristic: return "concentration-heuristic";
        case Method::Oracle: return "oracle";
    }
    return "?";
}

inline Method method_from_name(const std::string& name) {
    if (name == "mip") return Method::Mip;
    if (name == "dfo-heuristic") return Method::DfoHeuristic;
    if (name == "concentration-heuristic") return Method::ConcentrationHeuristic;
    if (name == "oracle") return Method::Oracle;
    throw InvalidConfig("unknown method '" + name + "'");
}

struct RunnerConfig {
    std::string out_dir = ".";
    double time_limit = 60.0;  // per solve, seconds
    std::int64_t node_limit = std::numeric_limits<std::int64_t>::max();
    double gap_tol = 1e-6;
    int threads = 1;            // parallel replications; solves stay single-threaded
    bool record_timing = true;  // false zeroes wall_time for bit-reproducible reports
    EnsembleParams ensemble;
};

/// Fit one replication with one method; everything in the original scale.
inline RepFit fit_replication(Method method, const ScenarioConfig& cfg, const ScenarioData& data,
                              const RunnerConfig& runner, int replication) {
    const auto t0 = std::chrono::steady_clock::now();
    RepFit out;
    const int n0 = cfg.n_outliers();
    try {
        if (method == Method::Oracle) {
            std::vector<int> sb;
            for (int j = 0; j < cfg.p0; ++j) sb.push_back(j);
            OracleFit fit = robust_oracle_fit(data.train, sb, data.truth.outliers);
            out.beta = fit.beta_full(cfg.p);
            out.outliers = data.truth.outliers;
            out.objective = fit.residuals.squaredNorm() / static_cast<double>(cfg.n);
        } else {
            Dataset std_data = standardize_robust(data.train, true);
            SfsodProblem pr;
            pr.data = std_data;
            pr.k_p = cfg.p0;  // oracle budgets: the Proposition-4 regime
            pr.k_n = n0;
            pr.intercept = true;
            pr.validate();

            Solution sol;
            if (method == Method::DfoHeuristic) {
                sol = dfo_local_search(pr, Eigen::VectorXd::Zero(cfg.p), 500);
            } else if (method == Method::ConcentrationHeuristic) {
                CounterRng rng(cfg.seed, static_cast<std::uint64_t>(replication), kStreamHeuristics);
                sol = lts_multistart(pr, runner.ensemble.cs_starts, runner.ensemble.cs_keep, rng);
            } else {
                EnsembleParams ens = runner.ensemble;
                ens.seed = cfg.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(replication + 1));
                std::vector<Solution> warm;
                CandidateSet cands = build_candidate_set(pr, ens, &warm);
                attach_ensemble_bounds(pr, cands, ens.c, ens.floor_scale);
                SolverConfig scfg;
                scfg.gap_tol = runner.gap_tol;
                scfg.time_limit = runner.time_limit;
                scfg.node_limit = runner.node_limit;
                scfg.seed = ens.seed;
                sol = solve(pr, scfg, warm);
                out.gap = sol.gap;
            }
            out.beta = std_data.standardization->beta_to_original(sol.beta);
            // zero stays zero under back-transformation of non-intercept slots
            out.outliers = sol.detected_outliers();
            out.objective = sol.objective;
        }
    } catch (const std::exception& e) {
        out.failed = true;
        out.error = e.what();
        out.beta = Eigen::VectorXd::Zero(cfg.p);
    }
    out.wall_time =
        runner.record_timing
            ? std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()
            : 0.0;
    return out;
}

struct CellReport {
    ScenarioConfig scenario;
    Method method = Method::Mip;
    MetricsReport metrics;
    std::vector<RepFit> fits;
    std::vector<PerRepMetrics> row_metrics;  // aligned with replication index
    int failed_reps = 0;
};

struct ExperimentReport {
    std::vector<CellReport> cells;
    int failed_cells = 0;
    std::string csv_path, json_path;
};

namespace detail {

inline nlohmann::ordered_json scenario_json(const ScenarioConfig& s) {
    nlohmann::ordered_json j;
    j["n"] = s.n;
    j["p"] = s.p;
    j["p0"] = s.p0;
    j["beta_value"] = s.beta_value;
    j["sigma_x"] = s.sigma_x == ScenarioConfig::SigmaX::Identity ? "identity" : "ar";
    j["ar_rho"] = s.ar_rho;
    j["snr"] = s.snr;
    j["contamination_rate"] = s.contamination_rate;
    j["shift_eps"] = s.shift_eps;
    j["shift_x"] = s.shift_x;
    j["seed"] = s.seed;
    j["replications"] = s.replications;
    return j;
}

inline nlohmann::ordered_json agg_json(const MetricAgg& a) {
    nlohmann::ordered_json j;
    j["mean"] = a.mean;
    j["sd"] = a.sd;
    j["median"] = a.median;
    j["mad"] = a.mad;
    return j;
}

}  // namespace detail

/// Runs every (scenario, method) cell for its configured replications and
/// writes report.csv (one row per replication) and report.json (rows plus
/// aggregates and a config echo). Failures are recorded per cell, never
/// aborting the other cells. Reruns with the same configuration are
/// deterministic whenever solves terminate by gap or node limit.
inline ExperimentReport run_experiment(const std::vector<ScenarioConfig>& grid,
                                       const std::vector<Method>& methods,
                                       const RunnerConfig& runner) {
    ExperimentReport report;
    std::filesystem::create_directories(runner.out_dir);

    for (const ScenarioConfig& cfg : grid) {
        cfg.validate();
        std::vector<ScenarioData> data;
        data.reserve(static_cast<size_t>(cfg.replications));
        for (int r = 0; r < cfg.replications; ++r) data.push_back(generate_scenario(cfg, r));

        for (Method method : methods) {
            CellReport cell;
            cell.scenario = cfg;
            cell.method = method;
            cell.fits.resize(static_cast<size_t>(cfg.replications));

            auto run_one = [&](int r) {
                cell.fits[static_cast<size_t>(r)] =
                    fit_replication(method, cfg, data[static_cast<size_t>(r)], runner, r);
            };
            if (runner.threads <= 1) {
                for (int r = 0; r < cfg.replications; ++r) run_one(r);
            } else {
                std::vector<std::future<void>> futs;
                int next = 0;
                while (next < cfg.replications) {
                    const int batch = std::min(runner.threads, cfg.replications - next);
                    futs.clear();
                    for (int b = 0; b < batch; ++b)
                        futs.push_back(std::async(std::launch::async, run_one, next + b));
                    for (auto& f : futs) f.get();
                    next += batch;
                }
            }

            std::vector<ScenarioTruth> truths;
            std::vector<Dataset> tests;
            for (int r = 0; r < cfg.replications; ++r) {
                truths.push_back(data[static_cast<size_t>(r)].truth);
                tests.push_back(data[static_cast<size_t>(r)].test);
            }
            cell.metrics = compute_metrics(cell.fits, truths, tests);
            cell.row_metrics.resize(static_cast<size_t>(cfg.replications));
            for (int r = 0; r < cfg.replications; ++r) {
                if (cell.fits[static_cast<size_t>(r)].failed) continue;
                std::vector<RepFit> one{cell.fits[static_cast<size_t>(r)]};
                std::vector<ScenarioTruth> t1{truths[static_cast<size_t>(r)]};
                std::vector<Dataset> d1{tests[static_cast<size_t>(r)]};
                cell.row_metrics[static_cast<size_t>(r)] = compute_metrics(one, t1, d1).per_rep.front();
            }
            for (const auto& f : cell.fits) cell.failed_reps += f.failed;
            if (cell.failed_reps > 0) ++report.failed_cells;
            report.cells.push_back(std::move(cell));
        }
    }

    // ---- CSV: header, then one row per (cell, method, replication) ----
    report.csv_path = runner.out_dir + "/report.csv";
    {
        CsvWriter csv(report.csv_path);
        csv.write_row({"n", "p", "p0", "beta_value", "sigma_x", "ar_rho", "snr",
                       "contamination_rate", "shift_eps", "shift_x", "seed", "method",
                       "replication", "rmspe", "fpr_beta", "fnr_beta", "fpr_phi", "fnr_phi",
                       "objective", "gap", "wall_time", "status"});
        for (const CellReport& cell : report.cells) {
            const ScenarioConfig& s = cell.scenario;
            std::vector<ScenarioTruth> truths;
            std::vector<Dataset> tests;
            for (int r = 0; r < s.replications; ++r) {
                const RepFit& fit = cell.fits[static_cast<size_t>(r)];
                std::vector<std::string> row{
                    std::to_string(s.n),
                    std::to_string(s.p),
                    std::to_string(s.p0),
                    csv.num(s.beta_value),
                    s.sigma_x == ScenarioConfig::SigmaX::Identity ? "identity" : "ar",
                    csv.num(s.ar_rho),
                    csv.num(s.snr),
                    csv.num(s.contamination_rate),
                    csv.num(s.shift_eps),
                    csv.num(s.shift_x),
                    std::to_string(s.seed),
                    method_name(cell.method),
                    std::to_string(r)};
                if (fit.failed) {
                    for (int k = 0; k < 8; ++k) row.push_back("nan");
                    row.push_back("error: " + fit.error);
                } else {
                    const PerRepMetrics& pm = cell.row_metrics[static_cast<size_t>(r)];
                    row.push_back(csv.num(pm.rmspe));
                    row.push_back(csv.num(pm.fpr_beta));
                    row.push_back(csv.num(pm.fnr_beta));
                    row.push_back(csv.num(pm.fpr_phi));
                    row.push_back(csv.num(pm.fnr_phi));
                    row.push_back(csv.num(fit.objective));
                    row.push_back(csv.num(fit.gap));
                    row.push_back(csv.num(fit.wall_time));
                    row.push_back("ok");
                }
                csv.write_row(row);
            }
        }
    }

    // ---- JSON: config echo + per-replication rows + aggregates ----
    report.json_path = runner.out_dir + "/report.json";
    {
        nlohmann::ordered_json j;
        j["runner"] = {{"time_limit", runner.time_limit},
                       {"node_limit", runner.node_limit},
                       {"gap_tol", runner.gap_tol},
                       {"threads", runner.threads},
                       {"record_timing", runner.record_timing}};
        j["cells"] = nlohmann::ordered_json::array();
        for (const CellReport& cell : report.cells) {
            nlohmann::ordered_json cj;
            cj["scenario"] = detail::scenario_json(cell.scenario);
            cj["method"] = method_name(cell.method);
            cj["failed_replications"] = cell.failed_reps;
            cj["aggregates"] = {{"rmspe", detail::agg_json(cell.metrics.rmspe)},
                                {"fpr_beta", detail::agg_json(cell.metrics.fpr_beta)},
                                {"fnr_beta", detail::agg_json(cell.metrics.fnr_beta)},
                                {"fpr_phi", detail::agg_json(cell.metrics.fpr_phi)},
                                {"fnr_phi", detail::agg_json(cell.metrics.fnr_phi)},
                                {"var_beta", detail::agg_json(cell.metrics.var_beta)},
                                {"bias2_beta", detail::agg_json(cell.metrics.bias2_beta)},
                                {"wall_time", detail::agg_json(cell.metrics.wall_time)}};
            cj["replications"] = nlohmann::ordered_json::array();
            for (size_t r = 0; r < cell.fits.size(); ++r) {
                const RepFit& fit = cell.fits[r];
                nlohmann::ordered_json rj;
                rj["replication"] = r;
                rj["status"] = fit.failed ? ("error: " + fit.error) : "ok";
                if (!fit.failed) {
                    rj["objective"] = fit.objective;
                    rj["gap"] = fit.gap;
                    rj["wall_time"] = fit.wall_time;
                    rj["selected"] = [&] {
                        std::vector<int> sel;
                        for (int jj = 0; jj < static_cast<int>(fit.beta.size()); ++jj)
                            if (fit.beta[jj] != 0.0) sel.push_back(jj);
                        return sel;
                    }();
                    rj["outliers_1based"] = [&] {
                        std::vector<int> o;
                        for (int i : fit.outliers) o.push_back(i + 1);
                        return o;
                    }();
                }
                cj["replications"].push_back(std::move(rj));
            }
            j["cells"].push_back(std::move(cj));
        }
        std::ofstream out(report.json_path);
        if (!out) throw DataError("cannot open report path: " + report.json_path);
        out << j.dump(2) << "\n";
    }
    return report;
}

}  // namespace sfsod

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "sfsod/bench.hpp"
#include "test_util.hpp"

using namespace sfsod;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("scenario defaults match the reference simulation protocol") {
    ScenarioConfig cfg;
    CHECK(cfg.p0 == 5);
    CHECK(cfg.beta_value == 2.0);
    CHECK(cfg.snr == 5.0);
    CHECK(cfg.contamination_rate == 0.1);
    CHECK(cfg.shift_eps == -10.0);
    CHECK(cfg.shift_x == 10.0);
}

TEST_CASE("generate_scenario is reproducible and contamination is additive") {
    ScenarioConfig cfg;
    cfg.n = 30;
    cfg.p = 8;
    cfg.p0 = 3;
    cfg.seed = 42;

    ScenarioData a = generate_scenario(cfg, 2);
    ScenarioData b = generate_scenario(cfg, 2);
    CHECK((a.train.X - b.train.X).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK((a.train.y - b.train.y).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK((a.test.y - b.test.y).lpNorm<Eigen::Infinity>() == 0.0);

    ScenarioData other = generate_scenario(cfg, 3);
    CHECK((a.train.y - other.train.y).lpNorm<Eigen::Infinity>() > 0.0);

    ScenarioConfig clean = cfg;
    clean.contamination_rate = 0.0;
    ScenarioData c = generate_scenario(clean, 2);
    CHECK(c.truth.outliers.empty());
    const int n0 = cfg.n_outliers();
    REQUIRE(n0 == 3);
    // identical streams: the contaminated draw differs from the clean one
    // exactly by the configured shifts on the first n0 cases
    for (int i = n0; i < cfg.n; ++i) {
        CHECK(a.train.y[i] == c.train.y[i]);
        for (int j = 0; j < cfg.p; ++j) CHECK(a.train.X(i, j) == c.train.X(i, j));
    }
    for (int i = 0; i < n0; ++i) {
        for (int j = 1; j < cfg.p0; ++j)
            CHECK(a.train.X(i, j) == Catch::Approx(c.train.X(i, j) + cfg.shift_x).margin(1e-12));
        // y comes from the clean predictors: only the error shift enters it
        CHECK(a.train.y[i] == Catch::Approx(c.train.y[i] + cfg.shift_eps).margin(1e-9));
    }
    // intercept column and truth layout
    CHECK(a.train.X.col(0).isOnes());
    CHECK(a.truth.beta.head(cfg.p0).isConstant(cfg.beta_value));
    CHECK(a.truth.beta.tail(cfg.p - cfg.p0).isZero());
}

TEST_CASE("empirical signal-to-noise matches the configured SNR") {
    ScenarioConfig cfg;
    cfg.n = 100000;
    cfg.p = 8;
    cfg.p0 = 3;
    cfg.snr = 5.0;
    cfg.contamination_rate = 0.0;
    cfg.seed = 7;
    ScenarioData d = generate_scenario(cfg, 0);

    Eigen::VectorXd signal = d.test.X * d.truth.beta;
    const double mean = signal.mean();
    const double var_emp = (signal.array() - mean).square().sum() / cfg.n;
    CHECK(var_emp / d.truth.sigma2 == Catch::Approx(cfg.snr).epsilon(0.05));
    CHECK(scenario_signal_variance(cfg) == Catch::Approx(8.0));  // 2 active * 2^2
}

TEST_CASE("compute_metrics: perfect recovery and the hand-computed variance") {
    ScenarioTruth truth;
    truth.beta = Eigen::VectorXd::Zero(2);
    truth.beta[0] = 2.0;
    truth.outliers = {0};

    Dataset test;
    test.X = Eigen::MatrixXd::Ones(4, 2);
    test.y = Eigen::VectorXd::Zero(4);
    for (int i = 0; i < 4; ++i) test.y[i] = 2.0;  // exactly beta[0] * 1

    // perfect recovery in both replications
    RepFit perfect;
    perfect.beta = truth.beta;
    perfect.outliers = {0};
    MetricsReport m0 = compute_metrics({perfect, perfect}, {truth, truth}, {test, test});
    CHECK(m0.fpr_beta.mean == 0.0);
    CHECK(m0.fnr_beta.mean == 0.0);
    CHECK(m0.fpr_phi.mean == 0.0);
    CHECK(m0.fnr_phi.mean == 0.0);
    CHECK(m0.bias2_beta.mean == 0.0);
    CHECK(m0.rmspe.mean == 0.0);

    // beta-hat of 1.9 and 2.1 around a true value of 2
    RepFit lo = perfect, hi = perfect;
    lo.beta[0] = 1.9;
    hi.beta[0] = 2.1;
    MetricsReport m1 = compute_metrics({lo, hi}, {truth, truth}, {test, test});
    REQUIRE(m1.var_per_coord.size() == 2);
    CHECK(m1.var_per_coord[0] == Catch::Approx(0.01).margin(1e-12));
    CHECK(m1.bias2_per_coord[0] == Catch::Approx(0.0).margin(1e-12));

    // MSE identity per coordinate
    for (size_t j = 0; j < m1.mse_per_coord.size(); ++j)
        CHECK(m1.mse_per_coord[j] ==
              Catch::Approx(m1.var_per_coord[j] + m1.bias2_per_coord[j]).margin(1e-10));
}

TEST_CASE("oracle fits on the default scenario land near the reference error") {
    ScenarioConfig cfg;  // n=100, p=50 defaults
    cfg.seed = 11;
    cfg.replications = 5;
    std::vector<RepFit> fits;
    std::vector<ScenarioTruth> truths;
    std::vector<Dataset> tests;
    RunnerConfig runner;
    for (int r = 0; r < cfg.replications; ++r) {
        ScenarioData d = generate_scenario(cfg, r);
        fits.push_back(fit_replication(Method::Oracle, cfg, d, runner, r));
        truths.push_back(d.truth);
        tests.push_back(d.test);
    }
    MetricsReport m = compute_metrics(fits, truths, tests);
    CHECK(m.fpr_beta.mean == 0.0);
    CHECK(m.fnr_beta.mean == 0.0);
    // reference mean is 1.86 with SD 0.16 over 100 replications
    CHECK(m.rmspe.mean > 1.5);
    CHECK(m.rmspe.mean < 2.3);
}

TEST_CASE("scaled prediction error: trimming rule, corner cases") {
    CounterRng rng(3, 0, 0);
    Dataset train = sfsod_test::make_random_dataset(15, 2, false, rng);
    Eigen::VectorXd beta(2);
    beta << 1.0, -0.5;
    train.y = train.X * beta;
    for (int i = 0; i < 15; ++i) train.y[i] += 0.3 * rng.normal();
    Eigen::VectorXd phi = Eigen::VectorXd::Zero(15);

    SECTION("one gross outlier among 20 clean test cases is dropped exactly") {
        Dataset test = sfsod_test::make_random_dataset(20, 2, false, rng);
        test.y = test.X * beta;
        // tight bounded noise keeps every clean case inside the 1.345 band
        for (int i = 0; i < 20; ++i) test.y[i] += (i % 2 == 0 ? 0.1 : -0.1);
        test.y[7] += 50.0;
        SpeResult res = scaled_prediction_error(beta, phi, train, test);
        CHECK(res.dropped == std::vector<int>{7});
        CHECK(res.retained == 19);
        CHECK_FALSE(res.degenerate_scale);
        // dropped set is exactly the threshold rule
        Eigen::VectorXd r = (test.y - test.X * beta) / res.s_tr;
        for (int i = 0; i < 20; ++i) {
            const bool rule = std::abs(r[i]) > 1.345 * res.s_te;
            const bool dropped =
                std::find(res.dropped.begin(), res.dropped.end(), i) != res.dropped.end();
            CHECK(rule == dropped);
        }
    }

    SECTION("all-equal test residuals trim nothing") {
        Dataset test = sfsod_test::make_random_dataset(6, 2, false, rng);
        test.y = test.X * beta;
        test.y.array() += 1.7;  // identical residuals
        SpeResult res = scaled_prediction_error(beta, phi, train, test);
        CHECK(res.retained == 6);
        CHECK(res.dropped.empty());
        CHECK(res.spe == Catch::Approx(1.7 / res.s_tr).epsilon(1e-12));
    }

    SECTION("perfect training fit reports the degenerate-scale fallback") {
        Dataset exact = train;
        exact.y = exact.X * beta;  // s_tr = 0
        Dataset test = sfsod_test::make_random_dataset(5, 2, false, rng);
        test.y = test.X * beta;
        test.y.array() += 0.5;
        SpeResult res = scaled_prediction_error(beta, phi, exact, test);
        CHECK(res.degenerate_scale);
        CHECK(res.spe == Catch::Approx(0.5).margin(1e-12));
        CHECK(res.retained == 5);
    }
}

TEST_CASE("run_experiment writes one row per replication and is rerun-stable") {
    const std::string out1 = "bench_out_a", out2 = "bench_out_b";
    ScenarioConfig cfg;
    cfg.n = 30;
    cfg.p = 8;
    cfg.p0 = 3;
    cfg.seed = 5;
    cfg.replications = 1;

    RunnerConfig runner;
    runner.out_dir = out1;
    runner.record_timing = false;
    ExperimentReport rep = run_experiment({cfg}, {Method::Oracle}, runner);
    CHECK(rep.failed_cells == 0);

    std::ifstream csv(rep.csv_path);
    std::string line;
    int rows = 0;
    while (std::getline(csv, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 2);  // header + one replication

    runner.out_dir = out2;
    ExperimentReport rep2 = run_experiment({cfg}, {Method::Oracle}, runner);
    CHECK(slurp(rep.csv_path) == slurp(rep2.csv_path));
    CHECK(slurp(rep.json_path) == slurp(rep2.json_path));

    std::filesystem::remove_all(out1);
    std::filesystem::remove_all(out2);
}

TEST_CASE("run_experiment drives the mip pipeline end to end at small scale") {
    const std::string out = "bench_out_mip";
    ScenarioConfig cfg;
    cfg.n = 40;
    cfg.p = 10;
    cfg.p0 = 3;
    cfg.seed = 9;
    cfg.replications = 2;

    RunnerConfig runner;
    runner.out_dir = out;
    runner.record_timing = false;
    runner.node_limit = 3000;
    runner.ensemble.cs_starts = 20;
    ExperimentReport rep = run_experiment({cfg}, {Method::Mip, Method::Oracle}, runner);
    CHECK(rep.failed_cells == 0);
    REQUIRE(rep.cells.size() == 2);
    const MetricsReport& mip = rep.cells[0].metrics;
    CHECK(mip.fnr_phi.mean <= 0.5);  // smoke: outliers at shift 10 are findable
    CHECK(mip.rmspe.mean < 10.0);
    std::filesystem::remove_all(out);
}

TEST_CASE("parallel replications produce the same report as serial") {
    const std::string out_s = "bench_serial", out_p = "bench_parallel";
    ScenarioConfig cfg;
    cfg.n = 25;
    cfg.p = 6;
    cfg.p0 = 3;
    cfg.seed = 13;
    cfg.replications = 4;

    RunnerConfig serial;
    serial.out_dir = out_s;
    serial.record_timing = false;
    RunnerConfig parallel = serial;
    parallel.out_dir = out_p;
    parallel.threads = 4;
    ExperimentReport a = run_experiment({cfg}, {Method::Oracle, Method::DfoHeuristic}, serial);
    ExperimentReport b = run_experiment({cfg}, {Method::Oracle, Method::DfoHeuristic}, parallel);
    CHECK(slurp(a.csv_path) == slurp(b.csv_path));
    std::filesystem::remove_all(out_s);
    std::filesystem::remove_all(out_p);
}

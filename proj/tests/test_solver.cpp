#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "sfsod/solver.hpp"
#include "test_util.hpp"

using namespace sfsod;
using namespace sfsod_test;

namespace {

SolverConfig exact_config() {
    SolverConfig cfg;
    cfg.gap_tol = 0.0;
    return cfg;
}

}  // namespace

TEST_CASE("solve matches exhaustive enumeration on random small instances") {
    CounterRng rng(101, 0, 0);
    for (int trial = 0; trial < 40; ++trial) {
        const int n = 8 + static_cast<int>(rng.uniform_below(5));
        const int p = 3 + static_cast<int>(rng.uniform_below(4));
        const int k_p = 1 + static_cast<int>(rng.uniform_below(3));
        const int k_n = static_cast<int>(rng.uniform_below(3));
        Dataset d = make_random_dataset(n, p, false, rng);
        SfsodProblem pr = make_problem(std::move(d), k_p, k_n);

        Solution s = solve(pr, exact_config());
        EnumerationResult brute = enumerate_best(pr);
        INFO("trial " << trial << " n=" << n << " p=" << p << " k_p=" << k_p << " k_n=" << k_n);
        CHECK(s.objective == Catch::Approx(brute.objective).margin(1e-8));
        CHECK(s.gap == 0.0);
        CHECK(certify(pr, s).all_pass);

        if (brute.runner_up - brute.objective > 1e-6) {
            CHECK(s.selected_features() == brute.support_beta);
            CHECK(s.detected_outliers() == brute.support_phi);
        }
    }
}

TEST_CASE("solve recovers planted supports exactly on noiseless data") {
    CounterRng rng(103, 0, 0);
    Planted inst = make_planted(16, 6, 2, 2, 10.0, rng, 0.0);
    Solution s = solve(inst.problem, exact_config());
    CHECK(s.objective == Catch::Approx(0.0).margin(1e-16));
    CHECK(s.detected_outliers() == inst.outliers);
    Eigen::VectorXd beta = s.beta;
    CHECK((beta - inst.beta_true).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("warm start dominance and incumbent use") {
    CounterRng rng(107, 0, 0);
    Planted inst = make_planted(14, 5, 2, 2, 8.0, rng, 0.5);
    Solution warm = dfo_local_search(inst.problem, Eigen::VectorXd::Zero(5), 100);
    Solution s = solve(inst.problem, exact_config(), {warm});
    CHECK(s.objective <= warm.objective + 1e-15);
}

TEST_CASE("node bounds: root validity, leaf exactness, child monotonicity") {
    CounterRng rng(109, 0, 0);
    int audited_pairs = 0;
    for (int trial = 0; trial < 60; ++trial) {
        const int n = 7 + static_cast<int>(rng.uniform_below(4));
        const int p = 3 + static_cast<int>(rng.uniform_below(3));
        Dataset d = make_random_dataset(n, p, false, rng);
        SfsodProblem pr = make_problem(std::move(d), 2, 1);
        EnumerationResult brute = enumerate_best(pr);

        BnbNode root = make_root(pr);
        const double root_bound = node_relax_bound(pr, root);
        CHECK(root_bound <= brute.objective + 1e-10);

        // random walk down the tree, auditing parent/child monotonicity
        BnbNode node = root;
        NodeEvaluator eval(pr);
        for (int step = 0; step < 40; ++step) {
            auto ev = eval.evaluate(node, Eigen::VectorXd::Zero(p));
            if (!ev.feasible || ev.closed) break;
            const double parent_bound = node_relax_bound(pr, node);
            auto children = branch(node, ev.relax, BranchRule::MaxMagnitude, &pr);
            for (const BnbNode* ch : {&children.first, &children.second}) {
                const auto counts = detail::count_states(*ch);
                if (counts.beta_in > pr.k_p || counts.phi_in > pr.k_n) continue;
                CHECK(node_relax_bound(pr, *ch) >= parent_bound - 1e-10);
                ++audited_pairs;
            }
            node = (rng.uniform() < 0.5) ? children.first : children.second;
        }

        // fully decided node: bound equals the restricted objective
        BnbNode leaf = make_root(pr);
        for (int j = 0; j < p; ++j) leaf.beta_state[static_cast<size_t>(j)] = j < 2 ? kFixedIn : kFixedOut;
        for (int i = 0; i < n; ++i) leaf.phi_state[static_cast<size_t>(i)] = i == 0 ? kFixedIn : kFixedOut;
        const double leaf_bound = node_relax_bound(pr, leaf);
        std::vector<int> rows;
        for (int i = 1; i < n; ++i) rows.push_back(i);
        Eigen::VectorXd beta = fit_restricted(pr, {0, 1}, rows);
        Eigen::VectorXd e = pr.data.y - pr.data.X * beta;
        double ssr = 0.0;
        for (int i : rows) ssr += e[i] * e[i];
        CHECK(leaf_bound == Catch::Approx(ssr / n).margin(1e-10));
    }
    CHECK(audited_pairs > 200);
}

TEST_CASE("branch on a single undecided feature produces the SOS dichotomy") {
    CounterRng rng(113, 0, 0);
    Dataset d = make_random_dataset(6, 2, false, rng);
    SfsodProblem pr = make_problem(std::move(d), 1, 0);
    BnbNode node = make_root(pr);
    node.beta_state[0] = kFixedOut;  // only feature 1 undecided
    for (auto& s : node.phi_state) s = kFixedOut;

    RelaxationPoint relax;
    relax.beta = Eigen::VectorXd::Zero(2);
    relax.beta[1] = 3.0;
    relax.case_values = Eigen::VectorXd::Zero(6);
    auto [zero_child, one_child] = branch(node, relax, BranchRule::MaxMagnitude, &pr);
    CHECK(zero_child.beta_state[1] == kFixedOut);
    CHECK(one_child.beta_state[1] == kFixedIn);
    CHECK(zero_child.depth == node.depth + 1);

    BnbNode decided = node;
    decided.beta_state[1] = kFixedIn;
    CHECK_THROWS_AS(branch(decided, relax, BranchRule::MaxMagnitude, &pr), NoUndecided);
}

TEST_CASE("children partition the parent's feasible supports") {
    CounterRng rng(127, 0, 0);
    Dataset d = make_random_dataset(8, 4, false, rng);
    SfsodProblem pr = make_problem(std::move(d), 2, 1);
    BnbNode root = make_root(pr);
    NodeEvaluator eval(pr);
    auto ev = eval.evaluate(root, Eigen::VectorXd::Zero(4));
    auto [c0, c1] = branch(root, ev.relax, BranchRule::MaxMagnitude, &pr);

    // the branched index is undecided in the parent, decided oppositely in children
    int branched = -1;
    bool is_case = false;
    for (int j = 0; j < 4; ++j)
        if (c0.beta_state[static_cast<size_t>(j)] != root.beta_state[static_cast<size_t>(j)]) branched = j;
    for (int i = 0; i < 8; ++i)
        if (c0.phi_state[static_cast<size_t>(i)] != root.phi_state[static_cast<size_t>(i)]) {
            branched = i;
            is_case = true;
        }
    REQUIRE(branched >= 0);
    if (is_case) {
        CHECK(root.phi_state[static_cast<size_t>(branched)] == kUndecided);
        CHECK(c0.phi_state[static_cast<size_t>(branched)] != c1.phi_state[static_cast<size_t>(branched)]);
    } else {
        CHECK(root.beta_state[static_cast<size_t>(branched)] == kUndecided);
        CHECK(c0.beta_state[static_cast<size_t>(branched)] != c1.beta_state[static_cast<size_t>(branched)]);
    }

    // max-magnitude picks the largest |value| among undecided indices
    double best = -1.0;
    for (int j = 0; j < 4; ++j) best = std::max(best, std::abs(ev.relax.beta[j]));
    for (int i = 0; i < 8; ++i) best = std::max(best, std::abs(ev.relax.case_values[i]));
    const double picked = is_case ? std::abs(ev.relax.case_values[branched])
                                  : std::abs(ev.relax.beta[branched]);
    CHECK(picked == Catch::Approx(best));
}

TEST_CASE("certify validates solver output and flags hand-built violations") {
    CounterRng rng(131, 0, 0);
    for (int trial = 0; trial < 20; ++trial) {
        Dataset d = make_random_dataset(10, 4, false, rng);
        SfsodProblem pr = make_problem(std::move(d), 2, 1);
        Solution s = solve(pr, exact_config());
        CertifyReport rep = certify(pr, s);
        CHECK(rep.all_pass);
        CHECK(rep.recomputed_objective == Catch::Approx(s.objective).margin(1e-10));

        Solution bad = s;
        for (auto& z : bad.z_beta) z = 1;  // ||z||_0 = p > k_p
        CertifyReport rep_bad = certify(pr, bad);
        CHECK_FALSE(rep_bad.all_pass);
        bool cardinality_failed = false;
        for (const auto& c : rep_bad.checks)
            if (c.name == "cardinality-beta (2d)" && !c.pass) cardinality_failed = true;
        CHECK(cardinality_failed);
    }
}

TEST_CASE("breakdown invariance: huge contamination does not move the fit") {
    CounterRng rng(137, 0, 0);
    const int n = 24, p = 4, n0 = 3;
    Dataset base = make_random_dataset(n, p, false, rng, 0.0);
    Eigen::VectorXd beta_true(p);
    beta_true << 2, -2, 0, 0;
    base.y = base.X * beta_true;
    for (int i = 0; i < n; ++i) base.y[i] += 0.5 * rng.normal();

    Eigen::VectorXd base_beta;
    std::vector<int> base_outliers;
    for (double mag : {1e2, 1e4, 1e6, 1e8}) {
        Dataset d = base;
        for (int i = 0; i < n0; ++i) d.y[i] += mag;
        SfsodProblem pr = make_problem(std::move(d), 2, n0);
        Solution s = solve(pr, exact_config());
        if (base_beta.size() == 0) {
            base_beta = s.beta;
            base_outliers = s.detected_outliers();
            CHECK(base_outliers == std::vector<int>{0, 1, 2});
        } else {
            CHECK((s.beta - base_beta).lpNorm<Eigen::Infinity>() < 1e-6);
            CHECK(s.detected_outliers() == base_outliers);
        }
    }
}

TEST_CASE("single-threaded solve is deterministic") {
    CounterRng rng(139, 0, 0);
    Planted inst = make_planted(18, 5, 2, 2, 6.0, rng, 1.0);
    SolverConfig cfg = exact_config();
    cfg.seed = 7;
    Solution a = solve(inst.problem, cfg);
    Solution b = solve(inst.problem, cfg);
    CHECK(a.objective == b.objective);
    CHECK(a.lower_bound == b.lower_bound);
    CHECK(a.nodes_explored == b.nodes_explored);
    CHECK((a.beta - b.beta).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK((a.phi - b.phi).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK(a.z_beta == b.z_beta);
    CHECK(a.z_phi == b.z_phi);
}

TEST_CASE("multi-threaded solve agrees with single-threaded on certified instances") {
    CounterRng rng(149, 0, 0);
    Planted inst = make_planted(16, 5, 2, 2, 6.0, rng, 1.0);
    SolverConfig cfg1 = exact_config();
    SolverConfig cfg4 = exact_config();
    cfg4.thread_count = 4;
    Solution s1 = solve(inst.problem, cfg1);
    Solution s4 = solve(inst.problem, cfg4);
    CHECK(s1.objective == Catch::Approx(s4.objective).margin(1e-10));
    CHECK(s4.gap == 0.0);
}

TEST_CASE("time and node limits return the incumbent with an honest gap") {
    CounterRng rng(151, 0, 0);
    Planted inst = make_planted(40, 10, 3, 4, 8.0, rng, 1.0);
    SolverConfig cfg;
    cfg.gap_tol = 0.0;
    cfg.node_limit = 5;
    Solution s = solve(inst.problem, cfg);
    CHECK(s.nodes_explored <= 5);
    CHECK(s.gap >= 0.0);
    CHECK(s.lower_bound <= s.objective);
    CHECK(certify(inst.problem, s).all_pass);
}

TEST_CASE("solve honors the ridge constraint") {
    CounterRng rng(157, 0, 0);
    Dataset d = make_random_dataset(12, 3, false, rng);
    d.y = 3.0 * d.X.col(0) + d.y * 0.1;
    const double lambda = 1.0;
    SfsodProblem pr = make_problem(std::move(d), 2, 1, false, lambda);
    Solution s = solve(pr, exact_config());
    double nrm = 0.0;
    for (int j = 0; j < 3; ++j) nrm += s.beta[j] * s.beta[j];
    CHECK(nrm <= lambda * (1.0 + 1e-8));
    CHECK(certify(pr, s).all_pass);

    // the constrained optimum can only be worse than the unconstrained one
    SfsodProblem un = pr;
    un.lambda = kInf;
    Solution s_un = solve(un, exact_config());
    CHECK(s.objective >= s_un.objective - 1e-12);
}

TEST_CASE("bigM mode agrees with sos mode when bounds hold the optimum") {
    CounterRng rng(163, 0, 0);
    for (int trial = 0; trial < 10; ++trial) {
        Dataset d = make_random_dataset(10, 4, false, rng);
        SfsodProblem pr = make_problem(std::move(d), 2, 1);
        Solution sos = solve(pr, exact_config());

        SfsodProblem boxed = pr;
        boxed.bigm_beta = (sos.beta.cwiseAbs().array() + 1.0).matrix() * 2.0;
        boxed.bigm_phi =
            ((pr.data.y - pr.data.X * sos.beta).cwiseAbs().array() + 1.0).matrix() * 2.0;
        SolverConfig cfg = exact_config();
        cfg.bound_mode = BoundMode::BigM;
        Solution bigm = solve(boxed, cfg, {sos});
        CHECK(bigm.objective == Catch::Approx(sos.objective).margin(1e-8));
        CHECK(certify(boxed, bigm).all_pass);
    }
}

TEST_CASE("bigM mode without vectors is rejected; bad vectors are infeasible") {
    CounterRng rng(167, 0, 0);
    Dataset d = make_random_dataset(8, 3, false, rng);
    SfsodProblem pr = make_problem(std::move(d), 2, 1);
    SolverConfig cfg;
    cfg.bound_mode = BoundMode::BigM;
    CHECK_THROWS_AS(solve(pr, cfg), InvalidConfig);

    SfsodProblem bad = pr;
    bad.bigm_beta = Eigen::VectorXd::Zero(3);  // zero bounds are inconsistent
    bad.bigm_phi = Eigen::VectorXd::Ones(8);
    CHECK_THROWS_AS(solve(bad, cfg), Infeasible);
}

TEST_CASE("intercept fit keeps slot zero active and infeasible budget throws") {
    CounterRng rng(173, 0, 0);
    Dataset d = make_random_dataset(12, 4, true, rng);
    d.y.array() += 5.0;
    SfsodProblem pr = make_problem(std::move(d), 2, 1, true);
    Solution s = solve(pr, exact_config());
    CHECK(s.z_beta[0] == 1);
    CHECK(certify(pr, s).all_pass);

    SfsodProblem zero_budget = pr;
    zero_budget.k_p = 0;
    CHECK_THROWS_AS(solve(zero_budget, exact_config()), Infeasible);
}

TEST_CASE("LP export emits the documented structure") {
    CounterRng rng(179, 0, 0);
    Dataset d = make_random_dataset(5, 2, false, rng);
    SfsodProblem pr = make_problem(std::move(d), 1, 1);
    {
        std::ostringstream sink;
        CHECK_THROWS_AS(export_lp(pr, sink), InvalidConfig);
    }

    pr.bigm_beta = Eigen::VectorXd::Constant(2, 10.0);
    pr.bigm_phi = Eigen::VectorXd::Constant(5, 25.0);
    std::ostringstream os;
    export_lp(pr, os);
    const std::string lp = os.str();
    CHECK(lp.find("Minimize") != std::string::npos);
    CHECK(lp.find("card_b: zb0 + zb1 <= 1") != std::string::npos);
    CHECK(lp.find("card_f: zf0 + zf1 + zf2 + zf3 + zf4 <= 1") != std::string::npos);
    CHECK(lp.find("Binaries") != std::string::npos);
    CHECK(lp.find("End") != std::string::npos);
    CHECK(lp.find("bu0: b0 - 10 zb0 <= 0") != std::string::npos);
}

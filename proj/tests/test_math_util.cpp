#include <catch2/catch_amalgamated.hpp>

#include "sfsod/math_util.hpp"
#include "sfsod/rng.hpp"

using namespace sfsod;

TEST_CASE("median uses the midpoint convention") {
    CHECK(median(std::vector<double>{3.0, 1.0, 2.0}) == 2.0);
    CHECK(median(std::vector<double>{4.0, 1.0, 2.0, 3.0}) == 2.5);
    CHECK(median(std::vector<double>{5.0}) == 5.0);
}

TEST_CASE("mad is the raw median absolute deviation") {
    Eigen::VectorXd v(5);
    v << 1, 2, 3, 4, 100;
    CHECK(mad(v) == 1.0);  // |x - 3| = (2,1,0,1,97) -> median 1
    Eigen::VectorXd c = Eigen::VectorXd::Constant(4, 5.0);
    CHECK(mad(c) == 0.0);
}

TEST_CASE("top_k_abs_indices breaks ties by smallest index") {
    Eigen::VectorXd v(4);
    v << 3, -7, 1, 5;
    auto idx = top_k_abs_indices(v, 2);
    REQUIRE(idx == std::vector<int>{1, 3});

    Eigen::VectorXd ties(4);
    ties << 2, -2, 2, 1;
    CHECK(top_k_abs_indices(ties, 2) == std::vector<int>{0, 1});
    CHECK(top_k_abs_indices(ties, 0).empty());
    CHECK(top_k_abs_indices(ties, 10).size() == 4);
}

TEST_CASE("spectral_bound matches a direct eigen solve") {
    CounterRng rng(7, 0, 0);
    Eigen::MatrixXd x(20, 5);
    for (int i = 0; i < 20; ++i)
        for (int j = 0; j < 5; ++j) x(i, j) = rng.normal();
    Eigen::MatrixXd g = x.transpose() * x / 20.0;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g);
    const double exact = es.eigenvalues().maxCoeff();
    CHECK(spectral_bound(x) == Catch::Approx(exact).epsilon(1e-4));
}

TEST_CASE("student t cdf and quantile match reference values") {
    // Reference values from scipy.stats.t
    CHECK(student_t_cdf(2.055529438642871, 26.0) == Catch::Approx(0.975).epsilon(1e-10));
    CHECK(student_t_quantile(0.975, 26.0) == Catch::Approx(2.055529438642871).epsilon(1e-9));
    CHECK(student_t_quantile(0.995, 94.0) == Catch::Approx(2.6291476382617045).epsilon(1e-9));
    CHECK(student_t_cdf(0.0, 5.0) == Catch::Approx(0.5).margin(1e-14));
    CHECK(student_t_abs_quantile(0.95, 26.0) == Catch::Approx(2.055529438642871).epsilon(1e-9));
}

TEST_CASE("beta quantile matches reference values") {
    // scipy.stats.beta.ppf(0.99, 91, 10) etc.
    CHECK(beta_quantile(91.0, 10.0, 0.99) == Catch::Approx(0.9576479076360361).epsilon(1e-8));
    CHECK(beta_quantile(2.0, 3.0, 0.5) == Catch::Approx(0.3857275681323895).epsilon(1e-8));
    CHECK(incomplete_beta(2.0, 3.0, 0.3857275681323895) == Catch::Approx(0.5).epsilon(1e-10));
}

TEST_CASE("counter rng is reproducible and stream independent") {
    CounterRng a(42, 3, 1), b(42, 3, 1), c(42, 3, 2);
    for (int i = 0; i < 100; ++i) {
        const double x = a.uniform();
        CHECK(x == b.uniform());
        CHECK(x >= 0.0);
        CHECK(x < 1.0);
    }
    bool differs = false;
    CounterRng a2(42, 3, 1);
    for (int i = 0; i < 10; ++i) differs |= (a2.next_u64() != c.next_u64());
    CHECK(differs);
}

TEST_CASE("counter rng normals have sane moments") {
    CounterRng rng(1, 0, 0);
    const int n = 200000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        s += z;
        s2 += z * z;
    }
    CHECK(std::abs(s / n) < 0.01);
    CHECK(s2 / n == Catch::Approx(1.0).epsilon(0.02));
}

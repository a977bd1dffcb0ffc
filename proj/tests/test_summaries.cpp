#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "semirep/errors.hpp"
#include "semirep/rng.hpp"
#include "semirep/summaries.hpp"
#include "support/test_util.hpp"

using namespace semirep;
using test_util::close_abs;

namespace {

struct Fixture {
    ClusterDataset data;
    FitResult fitted;
};

Fixture make_fixture(std::uint64_t seed, int n = 60, double rho = 0.4,
                     double missing_every = 0) {
    Rng rng(seed);
    ModelParams truth;
    truth.beta = Eigen::VectorXd::Constant(2, 1.0);
    truth.sigma2 = 1.0;
    truth.rho = rho;
    Fixture fx;
    fx.data = test_util::random_dataset(rng, n, 2, 2, 2, truth,
                                        [](double z) { return std::sin(4 * z); });
    if (missing_every > 0)
        for (size_t i = 0; i < fx.data.clusters.size(); i += static_cast<size_t>(missing_every)) {
            fx.data.clusters[i].delta = 0;
            fx.data.clusters[i].y.resize(0);
        }
    FitConfig config;
    config.h = 0.2;
    fx.fitted = fit(fx.data, config);
    REQUIRE(fx.fitted.converged);
    return fx;
}

}  // namespace

TEST_SUITE("summaries") {

TEST_CASE("constant functional averages to one exactly") {
    const Fixture fx = make_fixture(100);
    Functional one;
    one.name = "unit";
    one.evaluate = [](const FunctionalArgs&) { return 1.0; };
    const SummaryEstimate est = kappa_semi(fx.data, fx.fitted, one);
    CHECK(est.kappa == 1.0);
    CHECK(est.method == "semi");
    CHECK(est.n_used == 60);
    CHECK(!est.has_variance());
}

TEST_CASE("covariate-only functional ignores the fit entirely") {
    const Fixture fx = make_fixture(101);
    Functional first_coord;
    first_coord.name = "x1-mean";
    first_coord.evaluate = [](const FunctionalArgs& a) { return a.x.col(0).mean(); };
    const SummaryEstimate est = kappa_semi(fx.data, fx.fitted, first_coord);
    double oracle = 0.0;
    for (const auto& cluster : fx.data.clusters) oracle += cluster.x.col(0).mean();
    oracle /= static_cast<double>(fx.data.clusters.size());
    CHECK(close_abs(est.kappa, oracle, 1e-12));

    FitConfig other;
    other.h = 0.35;
    const FitResult refit = fit(fx.data, other);
    const SummaryEstimate again = kappa_semi(fx.data, refit, first_coord);
    CHECK(est.kappa == again.kappa);
}

TEST_CASE("registered analytic derivatives agree with finite differences") {
    const Fixture fx = make_fixture(102);
    for (const char* name : {"survival", "mean", "second-moment"}) {
        const Functional f = make_functional(name, 1.0);
        CHECK_NOTHROW((void)kappa_semi(fx.data, fx.fitted, f));
    }
    Functional broken = make_functional("survival", 1.0);
    broken.grad_b = [dim = fx.fitted.params.dim()](const FunctionalArgs&) {
        return Eigen::VectorXd(Eigen::VectorXd::Constant(dim, 0.123));
    };
    CHECK_THROWS_WITH_AS((void)kappa_semi(fx.data, fx.fitted, broken),
                         doctest::Contains("disagrees with finite differences"), Error);
}

TEST_CASE("curve evaluation outside the fitted range names the clusters") {
    Fixture fx = make_fixture(103);
    fx.data.clusters[4].z.setConstant(5.0);
    fx.data.clusters[9].z.setConstant(-3.0);
    try {
        (void)kappa_semi(fx.data, fx.fitted, make_functional("mean"));
        FAIL("expected an extrapolation error");
    } catch (const Error& err) {
        CHECK(std::string(err.what()).find(" 5") != std::string::npos);
        CHECK(std::string(err.what()).find(" 10") != std::string::npos);
    }
}

TEST_CASE("survival curve is a proper non-increasing probability curve") {
    const Fixture fx = make_fixture(104);
    double y_min = 1e300;
    for (const auto& cluster : fx.data.clusters)
        if (cluster.delta == 1) y_min = std::min(y_min, cluster.y.minCoeff());
    const double sigma = std::sqrt(fx.fitted.params.sigma2);
    Eigen::VectorXd grid(9);
    grid << y_min - 10 * sigma, 0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 6.0;
    const auto curve = survival_curve(fx.data, fx.fitted, 0.0, grid);
    REQUIRE(curve.size() == 9);
    CHECK(curve.front().kappa >= 0.999);
    for (size_t k = 0; k < curve.size(); ++k) {
        CHECK(curve[k].kappa >= 0.0);
        CHECK(curve[k].kappa <= 1.0);
        CHECK(curve[k].threshold == grid[static_cast<Eigen::Index>(k)]);
        if (k > 0) CHECK(curve[k].kappa <= curve[k - 1].kappa);
    }
}

TEST_CASE("fixed-column overrides act on the designated columns") {
    const Fixture fx = make_fixture(105);
    // Fixing column 0 at its own mean must move kappa relative to no fix
    // unless the functional is linear; with survival the check is that the
    // override wipes out dependence on that column's spread.
    const Functional fixed = make_functional("survival", 1.0, {{0, 0.5}});
    const Functional free = make_functional("survival", 1.0);
    const SummaryEstimate with_fix = kappa_semi(fx.data, fx.fitted, fixed);
    const SummaryEstimate without = kappa_semi(fx.data, fx.fitted, free);
    CHECK(std::isfinite(with_fix.kappa));
    CHECK(with_fix.kappa != without.kappa);
    // Invalid column index is rejected.
    CHECK_THROWS_AS(
        (void)kappa_semi(fx.data, fx.fitted, make_functional("survival", 1.0, {{7, 0.0}})),
        Error);
}

TEST_CASE("delta-method composition: projection and linear rules") {
    SummaryEstimate a;
    a.kappa = 0.97;
    a.method = "imputed";
    a.n_used = 100;
    a.set_variance(1.5, "plugin");
    SummaryEstimate b;
    b.kappa = 2.55;
    b.method = "imputed";
    b.n_used = 100;
    b.set_variance(2.5, "plugin");

    GenRule projection{[](double x, double) { return x; },
                       [](double, double) { return 1.0; },
                       [](double, double) { return 0.0; }};
    const SummaryEstimate proj = kappa_gen(projection, a, b, 0.7);
    CHECK(proj.kappa == a.kappa);
    CHECK(proj.variance == a.variance);
    CHECK(proj.method == "delta");

    GenRule sum{[](double x, double y) { return x + y; },
                [](double, double) { return 1.0; },
                [](double, double) { return 1.0; }};
    const SummaryEstimate added = kappa_gen(sum, a, b, 0.7);
    CHECK(close_abs(added.variance, 1.5 + 2.5 + 2 * 0.7, 1e-12));

    SummaryEstimate no_var;
    no_var.kappa = 1.0;
    no_var.n_used = 100;
    CHECK_THROWS_AS((void)kappa_gen(sum, a, no_var, 0.0), Error);
    SummaryEstimate other_n = b;
    other_n.n_used = 99;
    CHECK_THROWS_AS((void)kappa_gen(sum, a, other_n, 0.0), Error);
}

TEST_CASE("logistic regression: closed-form intercept and stationarity") {
    {
        Eigen::MatrixXd features = Eigen::MatrixXd::Ones(1000, 1);
        Eigen::VectorXi delta(1000);
        for (int i = 0; i < 1000; ++i) delta[i] = i < 700 ? 1 : 0;
        const LogisticFit lf = fit_logistic(features, delta);
        CHECK(close_abs(lf.zeta[0], 0.8472978603872034, 1e-8));
        // Influence rows average to ~0 at the optimum.
        CHECK(std::abs(lf.psi.col(0).mean()) < 1e-8);
    }
    Rng rng(42);
    for (int trial = 0; trial < 5; ++trial) {
        const int n = 300;
        Eigen::MatrixXd features(n, 3);
        Eigen::VectorXi delta(n);
        for (int i = 0; i < n; ++i) {
            features(i, 0) = 1.0;
            features(i, 1) = rng.uniform(-1, 1);
            features(i, 2) = rng.uniform(-1, 1);
            const double eta = 0.3 + 0.8 * features(i, 1) - 0.6 * features(i, 2);
            delta[i] = rng.bernoulli(1.0 / (1.0 + std::exp(-eta))) ? 1 : 0;
        }
        const LogisticFit lf = fit_logistic(features, delta);
        Eigen::VectorXd grad = Eigen::VectorXd::Zero(3);
        for (int i = 0; i < n; ++i) {
            const double pi = 1.0 / (1.0 + std::exp(-features.row(i).dot(lf.zeta)));
            grad += features.row(i).transpose() * (delta[i] - pi);
        }
        CHECK(grad.lpNorm<Eigen::Infinity>() < 1e-8);
    }
}

TEST_CASE("logistic regression: degenerate inputs are rejected") {
    Eigen::MatrixXd features = Eigen::MatrixXd::Ones(50, 1);
    Eigen::VectorXi all_ones = Eigen::VectorXi::Ones(50);
    CHECK_THROWS_WITH_AS((void)fit_logistic(features, all_ones),
                         doctest::Contains("single value"), Error);

    Rng rng(7);
    Eigen::MatrixXd dup(60, 3);
    Eigen::VectorXi delta(60);
    for (int i = 0; i < 60; ++i) {
        dup(i, 0) = 1.0;
        dup(i, 1) = rng.uniform();
        dup(i, 2) = 2.0 * dup(i, 1);
        delta[i] = i % 2;
    }
    CHECK_THROWS_WITH_AS((void)fit_logistic(dup, delta), doctest::Contains("rank deficient"),
                         Error);
}

TEST_CASE("imputation estimator: no-missing and all-missing limits") {
    const Fixture fx = make_fixture(106);  // all delta = 1
    const ResponseFunctional rf = make_response_functional("mean");
    const SummaryEstimate full = kappa_imputed(fx.data, fx.fitted, rf);
    std::vector<double> gvals;
    for (const auto& cluster : fx.data.clusters) gvals.push_back(cluster.y.mean());
    const double direct = std::accumulate(gvals.begin(), gvals.end(), 0.0) / gvals.size();
    CHECK(close_abs(full.kappa, direct, 1e-12));

    ClusterDataset hidden = fx.data;
    for (auto& cluster : hidden.clusters) {
        cluster.delta = 0;
        cluster.y.resize(0);
    }
    const SummaryEstimate imputed_all = kappa_imputed(hidden, fx.fitted, rf);
    const SummaryEstimate semi = kappa_semi(hidden, fx.fitted, make_functional("mean"));
    CHECK(close_abs(imputed_all.kappa, semi.kappa, 1e-14));
}

TEST_CASE("ipw estimator: unit weights, variance, and clipping diagnostics") {
    const Fixture fx = make_fixture(107);
    const ResponseFunctional rf = make_response_functional("mean");
    PiModel certain;
    certain.features = [](const Eigen::MatrixXd&, const Eigen::VectorXd&) {
        return Eigen::VectorXd::Ones(1);
    };
    certain.zeta = Eigen::VectorXd::Constant(1, 40.0);  // pi clips at 1 - 1e-6
    const SummaryEstimate ipw = kappa_ipw(fx.data, fx.fitted, rf, certain);
    const SummaryEstimate imputed = kappa_imputed(fx.data, fx.fitted, rf);
    CHECK(close_abs(ipw.kappa, imputed.kappa, 2e-6 * (1.0 + std::abs(imputed.kappa))));
    CHECK(ipw.has_variance());
    CHECK(ipw.variance >= 0.0);
    CHECK(ipw.ci_lo <= ipw.kappa);
    CHECK(ipw.ci_hi >= ipw.kappa);
    REQUIRE(!ipw.warnings.empty());  // every weight sits at the clipping boundary
    CHECK(ipw.warnings.front().find("clipped") != std::string::npos);

    // A sane missingness model on mixed data produces no clipping warning.
    const Fixture missing = make_fixture(108, 80, 0.3, 3);
    const PiModel fitted_pi = fit_pi_model(missing.data);
    const SummaryEstimate sane = kappa_ipw(missing.data, missing.fitted, rf, fitted_pi);
    CHECK(sane.warnings.empty());
    CHECK(std::isfinite(sane.kappa));
}

TEST_CASE("response functional: Monte Carlo fallback matches the closed form") {
    const Fixture fx = make_fixture(109, 40);
    ResponseFunctional closed = make_response_functional("mean");
    ResponseFunctional sampled = closed;
    sampled.conditional_mean = nullptr;  // force Monte Carlo
    const double exact = imputed_value(closed, fx.data, 3, fx.fitted);
    const double mc1 = imputed_value(sampled, fx.data, 3, fx.fitted);
    const double mc2 = imputed_value(sampled, fx.data, 3, fx.fitted);
    CHECK(mc1 == mc2);  // fixed seed, deterministic
    CHECK(close_abs(mc1, exact, 0.05));

    // Threshold response functional: closed form vs Monte Carlo too.
    ResponseFunctional surv = make_response_functional("survival", 1.0);
    ResponseFunctional surv_mc = surv;
    surv_mc.conditional_mean = nullptr;
    CHECK(close_abs(imputed_value(surv_mc, fx.data, 5, fx.fitted),
                    imputed_value(surv, fx.data, 5, fx.fitted), 0.03));
}

TEST_CASE("cluster reordering leaves every summary bit-identical") {
    const Fixture fx = make_fixture(110, 50, 0.3, 4);
    ClusterDataset shuffled = fx.data;
    std::mt19937_64 perm_rng(99);
    std::shuffle(shuffled.clusters.begin(), shuffled.clusters.end(), perm_rng);

    const Functional f = make_functional("survival", 1.0);
    CHECK(kappa_semi(fx.data, fx.fitted, f).kappa ==
          kappa_semi(shuffled, fx.fitted, f).kappa);
    const ResponseFunctional rf = make_response_functional("mean");
    CHECK(kappa_imputed(fx.data, fx.fitted, rf).kappa ==
          kappa_imputed(shuffled, fx.fitted, rf).kappa);
}

}  // TEST_SUITE

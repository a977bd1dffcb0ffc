#include <cmath>

#include "doctest.h"
#include "semirep/backfit.hpp"
#include "semirep/errors.hpp"
#include "semirep/rng.hpp"
#include "support/test_util.hpp"

using namespace semirep;
using test_util::close_abs;

namespace {

ModelParams make_params(const Eigen::VectorXd& beta, double sigma2, double rho) {
    ModelParams params;
    params.beta = beta;
    params.sigma2 = sigma2;
    params.rho = rho;
    return params;
}

// Exact curve table on the sorted unique z values of the dataset.
ThetaEstimate exact_theta_table(const ClusterDataset& data,
                                const std::function<double(double)>& theta0, double h) {
    std::vector<double> zs;
    for (const auto& cluster : data.clusters)
        for (int j = 0; j < data.m; ++j) zs.push_back(cluster.z[j]);
    std::sort(zs.begin(), zs.end());
    zs.erase(std::unique(zs.begin(), zs.end()), zs.end());
    ThetaEstimate table = ThetaEstimate::zero(
        Eigen::Map<const Eigen::VectorXd>(zs.data(), static_cast<Eigen::Index>(zs.size())), h);
    for (int e = 0; e < table.size(); ++e) table.values[e] = theta0(table.eval_points[e]);
    return table;
}

}  // namespace

TEST_SUITE("backfit") {

TEST_CASE("update_params: GLS at rho=0 with a zero curve is pooled OLS") {
    Rng rng(1);
    const ModelParams truth = make_params(Eigen::VectorXd::Constant(2, 1.2), 1.0, 0.3);
    const ClusterDataset data = test_util::random_dataset(rng, 50, 2, 2, 2, truth,
                                                          [](double z) { return std::sin(3 * z); });
    const ThetaEstimate zero = exact_theta_table(data, [](double) { return 0.0; }, 0.2);
    const ModelParams current = make_params(Eigen::VectorXd::Zero(2), 1.0, 0.0);
    const ModelParams updated = update_params(data, zero, current, /*update_variance=*/false);

    // Independent normal-equations oracle on the pooled rows.
    Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(2, 2);
    Eigen::VectorXd xty = Eigen::VectorXd::Zero(2);
    for (const auto& cluster : data.clusters) {
        if (cluster.delta == 0) continue;
        xtx += cluster.x.transpose() * cluster.x;
        xty += cluster.x.transpose() * cluster.y;
    }
    const Eigen::VectorXd ols = xtx.ldlt().solve(xty);
    CHECK((updated.beta - ols).lpNorm<Eigen::Infinity>() < 1e-10);
    CHECK(updated.sigma2 == current.sigma2);  // frozen
    CHECK(updated.rho == current.rho);
}

TEST_CASE("update_params: zeroes the full parametric estimating equation") {
    Rng rng(2);
    const ModelParams truth = make_params(Eigen::VectorXd::Constant(3, 0.7), 1.4, 0.35);
    ClusterDataset data = test_util::random_dataset(rng, 70, 2, 3, 3, truth,
                                                    [](double z) { return std::cos(2 * z); });
    for (size_t i = 0; i < data.clusters.size(); i += 4) {
        data.clusters[i].delta = 0;
        data.clusters[i].y.resize(0);
    }
    const ThetaEstimate table =
        exact_theta_table(data, [](double z) { return std::cos(2 * z); }, 0.2);
    const ModelParams current = make_params(Eigen::VectorXd::Zero(3), 1.0, 0.0);
    std::vector<std::string> warnings;
    const ModelParams updated = update_params(data, table, current, true, &warnings);
    CHECK(parametric_score(data, table, updated).lpNorm<Eigen::Infinity>() < 1e-8);
    CHECK(warnings.empty());

    // The profile optimum does not depend on the starting point.
    const ModelParams again = update_params(data, table, updated, true, nullptr);
    CHECK((again.pack() - updated.pack()).lpNorm<Eigen::Infinity>() < 1e-14);
}

TEST_CASE("update_params: noiseless limit recovers beta exactly") {
    Rng rng(3);
    const ModelParams truth = make_params(Eigen::VectorXd::Constant(2, -0.6), 1e-12, 0.2);
    const ClusterDataset data = test_util::random_dataset(rng, 40, 2, 2, 2, truth,
                                                          [](double z) { return std::sin(4 * z); });
    const ThetaEstimate table =
        exact_theta_table(data, [](double z) { return std::sin(4 * z); }, 0.2);
    const ModelParams current = make_params(Eigen::VectorXd::Zero(2), 1.0, 0.0);
    const ModelParams updated = update_params(data, table, current);
    CHECK((updated.beta - truth.beta).lpNorm<Eigen::Infinity>() < 1e-6);
    CHECK(updated.sigma2 < 1e-10);
}

TEST_CASE("update_params: rank deficiency names the dependent column") {
    Rng rng(4);
    const ModelParams truth = make_params(Eigen::VectorXd::Ones(2), 1.0, 0.0);
    ClusterDataset data = test_util::random_dataset(rng, 30, 2, 2, 2, truth,
                                                    [](double) { return 0.0; });
    for (auto& cluster : data.clusters) cluster.x.col(1) = 2.0 * cluster.x.col(0);
    const ThetaEstimate zero = exact_theta_table(data, [](double) { return 0.0; }, 0.2);
    const ModelParams current = make_params(Eigen::VectorXd::Zero(2), 1.0, 0.0);
    CHECK_THROWS_WITH_AS((void)update_params(data, zero, current),
                         doctest::Contains("rank deficient"), Error);
}

TEST_CASE("update_params: perfectly correlated pairs push rho to the boundary") {
    Rng rng(5);
    ClusterDataset data;
    data.m = 2;
    data.R = 1;
    data.p = 1;
    for (int i = 0; i < 30; ++i) {
        Cluster cluster;
        cluster.delta = 1;
        cluster.z = Eigen::VectorXd::Zero(2);
        cluster.z << rng.uniform(), rng.uniform();
        const double xv = rng.uniform();
        cluster.x = Eigen::MatrixXd::Constant(2, 1, xv);
        const double v = rng.normal();
        cluster.y = Eigen::VectorXd::Constant(2, v + 0.5 * xv);
        data.clusters.push_back(cluster);
    }
    const ThetaEstimate zero = exact_theta_table(data, [](double) { return 0.0; }, 0.2);
    const ModelParams current = make_params(Eigen::VectorXd::Zero(1), 1.0, 0.0);
    std::vector<std::string> warnings;
    const ModelParams updated = update_params(data, zero, current, true, &warnings);
    CHECK(updated.rho > 0.999);
    REQUIRE(!warnings.empty());
    CHECK(warnings.front().find("boundary") != std::string::npos);
}

TEST_CASE("fit: rejects near-constant covariate columns") {
    Rng rng(6);
    const ModelParams truth = make_params(Eigen::VectorXd::Ones(2), 1.0, 0.0);
    ClusterDataset data = test_util::random_dataset(rng, 30, 2, 2, 2, truth,
                                                    [](double) { return 0.0; });
    for (auto& cluster : data.clusters) cluster.x.col(0).setConstant(3.7);
    CHECK_THROWS_WITH_AS((void)fit(data, {}), doctest::Contains("column 1"), Error);
}

TEST_CASE("fit: purely parametric truth matches the GLS-with-intercept oracle") {
    Rng rng(7);
    const double level = 2.0;
    const ModelParams truth = make_params(Eigen::VectorXd::Constant(2, 1.0), 0.5, 0.3);
    const ClusterDataset data = test_util::random_dataset(rng, 80, 2, 2, 2, truth,
                                                          [level](double) { return level; });
    FitConfig config;
    config.h = 0.25;
    const FitResult result = fit(data, config);
    REQUIRE(result.converged);

    // Oracle: exact ML for y = alpha + x beta with exchangeable covariance,
    // profiled over rho on a fine grid with dense per-cluster linear algebra.
    const int q = data.q();
    const auto profile = [&](double rho) {
        Eigen::MatrixXd cmat = Eigen::MatrixXd::Constant(q, q, rho);
        cmat.diagonal().setOnes();
        const Eigen::MatrixXd cinv = cmat.inverse();
        const double logdet = std::log(cmat.determinant());
        Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(3, 3);
        Eigen::VectorXd xty = Eigen::VectorXd::Zero(3);
        double yty = 0.0;
        int used = 0;
        for (const auto& cluster : data.clusters) {
            if (cluster.delta == 0) continue;
            Eigen::MatrixXd xa(q, 3);
            xa.col(0).setOnes();
            xa.rightCols(2) = cluster.x;
            xtx += xa.transpose() * cinv * xa;
            xty += xa.transpose() * cinv * cluster.y;
            yty += cluster.y.dot(cinv * cluster.y);
            ++used;
        }
        const Eigen::VectorXd coef = xtx.ldlt().solve(xty);
        const double quad = yty - coef.dot(xty);
        const double sigma2 = quad / (used * q);
        const double loglik = -0.5 * (used * q * std::log(sigma2) + used * logdet);
        return std::tuple<double, Eigen::VectorXd, double>(loglik, coef, sigma2);
    };
    double best_ll = -1e300, best_rho = 0.0;
    Eigen::VectorXd best_coef;
    double best_sigma2 = 0.0;
    for (double rho = -0.45; rho < 0.985; rho += 5e-4) {
        const auto [ll, coef, s2] = profile(rho);
        if (ll > best_ll) {
            best_ll = ll;
            best_rho = rho;
            best_coef = coef;
            best_sigma2 = s2;
        }
    }
    // Sampling standard errors from the oracle information.
    Eigen::MatrixXd cmat = Eigen::MatrixXd::Constant(q, q, best_rho);
    cmat.diagonal().setOnes();
    const Eigen::MatrixXd cinv = cmat.inverse() / best_sigma2;
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(3, 3);
    for (const auto& cluster : data.clusters) {
        if (cluster.delta == 0) continue;
        Eigen::MatrixXd xa(q, 3);
        xa.col(0).setOnes();
        xa.rightCols(2) = cluster.x;
        info += xa.transpose() * cinv * xa;
    }
    const Eigen::VectorXd se = info.inverse().diagonal().array().sqrt();
    for (int k = 0; k < 2; ++k)
        CHECK(std::abs(result.params.beta[k] - best_coef[k + 1]) < 2.0 * se[k + 1]);
    CHECK(std::abs(result.params.rho - best_rho) < 0.1);
    CHECK(std::abs(result.params.sigma2 - best_sigma2) < 0.1);

    // The curve sits at the constant level, up to smoothing noise.
    const double band =
        3.0 * std::sqrt(result.params.sigma2 * 0.26832815729997477 /
                        (data.clusters.size() * data.q() * result.h));
    for (int e = 0; e < result.theta.size(); ++e) {
        const double z = result.theta.eval_points[e];
        if (z < data.z_min() + result.h || z > data.z_max() - result.h) continue;
        CHECK(std::abs(result.theta.values[e] - level) < band + 0.05);
    }
}

TEST_CASE("fit: duplicating every cluster changes nothing at fixed bandwidth") {
    Rng rng(8);
    const ModelParams truth = make_params(Eigen::VectorXd::Constant(2, 1.0), 1.0, 0.4);
    const ClusterDataset data = test_util::random_dataset(rng, 40, 2, 3, 2, truth,
                                                          [](double z) { return std::sin(4 * z); });
    ClusterDataset doubled = data;
    for (const auto& cluster : data.clusters) doubled.clusters.push_back(cluster);

    FitConfig config;
    config.h = 0.15;
    const FitResult base = fit(data, config);
    const FitResult twice = fit(doubled, config);
    REQUIRE(base.converged);
    REQUIRE(twice.converged);
    CHECK((base.params.pack() - twice.params.pack()).lpNorm<Eigen::Infinity>() < 1e-8);
    REQUIRE(base.theta.size() == twice.theta.size());
    for (int e = 0; e < base.theta.size(); ++e)
        CHECK(close_abs(base.theta.values[e], twice.theta.values[e], 1e-8));
}

TEST_CASE("fit: wiggly design converges with zeroed equations and a monotone trace") {
    Rng rng(9);
    const ModelParams truth = make_params(Eigen::VectorXd::Ones(2), 1.0, 0.4);
    const ClusterDataset data =
        test_util::random_dataset(rng, 80, 2, 3, 2, truth,
                                  [](double z) { return std::sin(8 * z - 1); });
    FitConfig config;
    config.bandwidth.candidates = 8;
    config.bandwidth.lo_frac = 0.02;
    const FitResult result = fit(data, config);
    REQUIRE(result.converged);
    CHECK(result.iterations <= 50);
    CHECK(result.bandwidth_selected);
    CHECK(result.h < result.bandwidth.h_cv);

    // Parametric equations zeroed at the joint solution.
    CHECK(parametric_score(data, result.theta, result.params).lpNorm<Eigen::Infinity>() < 1e-6);

    // Local equations re-solve to the returned curve at observed z values.
    double worst = 0.0;
    for (size_t i = 0; i < data.clusters.size(); i += 9) {
        const double z = data.clusters[i].z[0];
        const auto [alpha0, alpha1] =
            local_linear_solve(data, z, result.theta, result.params, result.h);
        worst = std::max(worst, std::abs(alpha0 - result.theta.value_at(z)));
    }
    CHECK(worst < 1e-6);

    // Estimating-equation backfitting is not a strict likelihood ascent;
    // dips beyond the tolerance wiggle must be surfaced as warnings.
    int logged = 0;
    for (const auto& w : result.warnings)
        if (w.find("loglikelihood decreased") != std::string::npos) ++logged;
    int dips = 0;
    for (size_t t = 1; t < result.trace.size(); ++t)
        if (result.trace[t].loglik < result.trace[t - 1].loglik - 1e-6) ++dips;
    CHECK(logged == dips);
    // The trace still settles: the final value is within a whisker of the
    // running maximum once the early transient has passed.
    double running_max = -1e300;
    for (size_t t = 1; t < result.trace.size(); ++t)
        running_max = std::max(running_max, result.trace[t].loglik);
    CHECK(result.loglik > running_max - 0.1);
}

TEST_CASE("fit: non-convergence surfaces as a flag with the trace, not an exception") {
    Rng rng(10);
    const ModelParams truth = make_params(Eigen::VectorXd::Ones(2), 1.0, 0.4);
    const ClusterDataset data = test_util::random_dataset(rng, 40, 2, 3, 2, truth,
                                                          [](double z) { return std::sin(6 * z); });
    FitConfig config;
    config.h = 0.15;
    config.max_outer = 1;
    const FitResult result = fit(data, config);
    CHECK(!result.converged);
    CHECK(result.trace.size() == 1);
    REQUIRE(!result.warnings.empty());
    CHECK(result.warnings.back().find("did not converge") != std::string::npos);
}

TEST_CASE("fit: too few observed clusters is an error") {
    Rng rng(11);
    const ModelParams truth = make_params(Eigen::VectorXd::Ones(2), 1.0, 0.0);
    ClusterDataset data = test_util::random_dataset(rng, 6, 2, 2, 2, truth,
                                                    [](double) { return 0.0; });
    for (size_t i = 0; i < 3; ++i) {
        data.clusters[i].delta = 0;
        data.clusters[i].y.resize(0);
    }
    CHECK_THROWS_WITH_AS((void)fit(data, {}), doctest::Contains("observed clusters"), Error);
}

}  // TEST_SUITE

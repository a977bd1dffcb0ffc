#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "doctest.h"
#include "semirep/errors.hpp"
#include "semirep/simlab.hpp"
#include "semirep/summaries.hpp"
#include "support/test_util.hpp"

using namespace semirep;

namespace {

// Frozen benchmark values for the default design (beta = (1,1), sigma2 = 1,
// theta(z) = sin(8z - 1), covariates uniform on (0,1), first column fixed at
// its mean 0.5 for the survival curve).
constexpr double kSurvivalC[7] = {0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0};
constexpr double kSurvivalKappa[7] = {0.78124310852914247, 0.64593321397462233,
                                      0.49061191888238104, 0.33701241480975408,
                                      0.20598800506729939, 0.1101375939377216,
                                      0.050650299841917767};
constexpr double kMeanY = 0.9733000064406044;
constexpr double kSecondMomentY = 2.5538946550941084;

template <typename Fn>
std::string thrown_code(Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return "";
}

double slot_theta(const ThetaRule& rule, const Cluster& cluster, int R, int slot) {
    return rule(cluster.z[slot / R]);
}

}  // namespace

TEST_SUITE("simlab") {

TEST_CASE("theta rules evaluate and validate") {
    ThetaRule sin_rule;
    CHECK(sin_rule.kind == ThetaRule::Kind::sin8);
    CHECK(test_util::close_abs(sin_rule(0.3), std::sin(1.4), 1e-15));
    CHECK(test_util::close_abs(sin_rule(0.0), std::sin(-1.0), 1e-15));

    ThetaRule line;
    line.kind = ThetaRule::Kind::linear;
    line.intercept = 2.0;
    line.slope = -0.5;
    CHECK(test_util::close_abs(line(4.0), 0.0, 1e-15));

    ThetaRule flat;
    flat.kind = ThetaRule::Kind::constant;
    flat.level = 3.25;
    CHECK(flat(-7.0) == 3.25);
    CHECK(flat(11.0) == 3.25);

    ThetaRule table;
    table.kind = ThetaRule::Kind::table;
    table.nodes = Eigen::Vector3d(0.0, 1.0, 2.0);
    table.values = Eigen::Vector3d(5.0, 7.0, 3.0);
    table.validate();
    CHECK(table(-1.0) == 5.0);   // clamped left
    CHECK(table(3.0) == 3.0);    // clamped right
    CHECK(test_util::close_abs(table(0.5), 6.0, 1e-15));
    CHECK(test_util::close_abs(table(1.75), 4.0, 1e-15));

    CHECK(ThetaRule::named("sin8").kind == ThetaRule::Kind::sin8);
    CHECK(ThetaRule::named("linear").kind == ThetaRule::Kind::linear);
    CHECK(ThetaRule::named("constant").kind == ThetaRule::Kind::constant);
    CHECK(thrown_code([] { (void)ThetaRule::named("bogus"); }) == "invalid-design");

    ThetaRule bad = table;
    bad.nodes = Eigen::VectorXd::Constant(1, 0.0);
    bad.values = Eigen::VectorXd::Constant(1, 1.0);
    CHECK(thrown_code([&] { bad.validate(); }) == "invalid-design");
    bad = table;
    bad.nodes = Eigen::Vector3d(0.0, 1.0, 1.0);  // not strictly increasing
    CHECK(thrown_code([&] { bad.validate(); }) == "invalid-design");
    bad = table;
    bad.values = Eigen::Vector2d(1.0, 2.0);  // size mismatch
    CHECK(thrown_code([&] { bad.validate(); }) == "invalid-design");
}

TEST_CASE("exchangeable draws match the target covariance") {
    const int draws = 200000;
    Rng rng(31);
    double sum0 = 0.0, sum1 = 0.0, sq0 = 0.0, sq1 = 0.0, cross = 0.0;
    for (int d = 0; d < draws; ++d) {
        const Eigen::VectorXd e = exchangeable_draw(rng, 2, 2.0, 0.5);
        sum0 += e[0];
        sum1 += e[1];
        sq0 += e[0] * e[0];
        sq1 += e[1] * e[1];
        cross += e[0] * e[1];
    }
    const double m0 = sum0 / draws, m1 = sum1 / draws;
    CHECK(test_util::close_abs(m0, 0.0, 0.02));
    CHECK(test_util::close_abs(m1, 0.0, 0.02));
    CHECK(test_util::close_abs(sq0 / draws - m0 * m0, 2.0, 0.06));
    CHECK(test_util::close_abs(sq1 / draws - m1 * m1, 2.0, 0.06));
    CHECK(test_util::close_abs(cross / draws - m0 * m1, 1.0, 0.05));

    // rho = 0 collapses to independent coordinates.
    Rng rng0(32);
    double cross0 = 0.0;
    for (int d = 0; d < draws; ++d) {
        const Eigen::VectorXd e = exchangeable_draw(rng0, 2, 1.0, 0.0);
        cross0 += e[0] * e[1];
    }
    CHECK(test_util::close_abs(cross0 / draws, 0.0, 0.02));

    // q = 1 ignores rho entirely.
    Rng rng1(33);
    double sq = 0.0;
    for (int d = 0; d < draws; ++d) {
        const Eigen::VectorXd e = exchangeable_draw(rng1, 1, 1.5, 0.9);
        sq += e[0] * e[0];
    }
    CHECK(test_util::close_abs(sq / draws, 1.5, 0.05));
}

TEST_CASE("simulated datasets are deterministic and well formed") {
    SimDesign design;
    design.n = 25;
    const ClusterDataset a = generate_sim_dataset(design, 7);
    const ClusterDataset b = generate_sim_dataset(design, 7);
    const ClusterDataset c = generate_sim_dataset(design, 8);
    a.validate();
    CHECK(a.n() == 25);
    CHECK(a.m == 2);
    CHECK(a.R == 3);
    CHECK(a.p == 2);
    CHECK(a.q() == 6);
    bool identical = true;
    bool differs = false;
    for (int i = 0; i < a.n(); ++i) {
        identical = identical && a.clusters[i].z == b.clusters[i].z &&
                    a.clusters[i].x == b.clusters[i].x && a.clusters[i].y == b.clusters[i].y;
        differs = differs || a.clusters[i].y != c.clusters[i].y;
        CHECK(a.clusters[i].delta == 1);
        CHECK(a.clusters[i].z.minCoeff() >= 0.0);
        CHECK(a.clusters[i].z.maxCoeff() <= 1.0);
        CHECK(a.clusters[i].x.minCoeff() >= 0.0);
        CHECK(a.clusters[i].x.maxCoeff() <= 1.0);
    }
    CHECK(identical);
    CHECK(differs);
}

TEST_CASE("simulated noise reproduces the exchangeable covariance") {
    SimDesign design;
    design.n = 100000;
    const ClusterDataset data = generate_sim_dataset(design, 5);
    const int q = data.q();
    const ThetaRule theta;  // sin8, as in the design

    Eigen::VectorXd mean = Eigen::VectorXd::Zero(q);
    Eigen::MatrixXd second = Eigen::MatrixXd::Zero(q, q);
    double y_mean = 0.0;
    for (const Cluster& cluster : data.clusters) {
        Eigen::VectorXd eps = cluster.y - cluster.x * design.beta0;
        for (int s = 0; s < q; ++s) eps[s] -= slot_theta(theta, cluster, design.R, s);
        mean += eps;
        second += eps * eps.transpose();
        y_mean += cluster.y.mean();
    }
    mean /= data.n();
    second /= data.n();
    const Eigen::MatrixXd cov = second - mean * mean.transpose();
    Eigen::MatrixXd target = Eigen::MatrixXd::Constant(q, q, design.sigma2 * design.rho);
    target.diagonal().setConstant(design.sigma2);
    CHECK((cov - target).cwiseAbs().maxCoeff() < 0.02);
    CHECK(test_util::close_abs(y_mean / data.n(), kMeanY, 0.01));
}

TEST_CASE("zero signal design centers the response") {
    SimDesign design;
    design.n = 4000;
    design.p = 1;
    design.beta0 = Eigen::VectorXd::Zero(1);
    design.rho = 0.0;
    ThetaRule flat;
    flat.kind = ThetaRule::Kind::constant;
    flat.level = 0.0;
    design.theta = flat;
    const ClusterDataset data = generate_sim_dataset(design, 17);
    double sum = 0.0, sq = 0.0;
    int slots = 0;
    for (const Cluster& cluster : data.clusters) {
        sum += cluster.y.sum();
        sq += cluster.y.squaredNorm();
        slots += static_cast<int>(cluster.y.size());
    }
    const double mean = sum / slots;
    CHECK(test_util::close_abs(mean, 0.0, 0.03));
    CHECK(test_util::close_abs(sq / slots - mean * mean, 1.0, 0.06));
}

TEST_CASE("mcar missingness hits the target rate and leaves data intact") {
    SimDesign design;
    design.n = 10000;
    const ClusterDataset full = generate_sim_dataset(design, 11);
    const ClusterDataset masked = apply_missingness(full, MissingnessMechanism::mcar(0.7), 3);
    CHECK(masked.n() == full.n());
    int observed = 0;
    for (int i = 0; i < full.n(); ++i) {
        CHECK(full.clusters[i].delta == 1);  // input untouched
        const Cluster& before = full.clusters[i];
        const Cluster& after = masked.clusters[i];
        CHECK(after.z == before.z);
        CHECK(after.x == before.x);
        if (after.delta == 1) {
            CHECK(after.y == before.y);
            ++observed;
        } else {
            CHECK(after.y.size() == 0);
        }
    }
    CHECK(test_util::close_abs(static_cast<double>(observed) / full.n(), 0.7, 0.02));
    CHECK(masked.n_observed() == observed);
}

TEST_CASE("missingness edge cases") {
    SimDesign design;
    design.n = 50;
    const ClusterDataset full = generate_sim_dataset(design, 19);

    MissingnessMechanism none;
    const ClusterDataset copy = apply_missingness(full, none, 1);
    for (int i = 0; i < full.n(); ++i) {
        CHECK(copy.clusters[i].y == full.clusters[i].y);
        CHECK(copy.clusters[i].delta == 1);
    }

    CHECK(thrown_code([] { MissingnessMechanism::mcar(0.0).validate(2); }) == "invalid-design");
    CHECK(thrown_code([] { MissingnessMechanism::mcar(1.0).validate(2); }) == "invalid-design");

    // Practically certain total loss is reported, not silently returned.
    CHECK(thrown_code([&] {
              (void)apply_missingness(full, MissingnessMechanism::mcar(1e-9), 2);
          }) == "degenerate-missingness");

    ClusterDataset partial = full;
    partial.clusters[3].delta = 0;
    partial.clusters[3].y.resize(0);
    CHECK(thrown_code([&] {
              (void)apply_missingness(partial, MissingnessMechanism::mcar(0.5), 2);
          }) == "invalid-input");

    const MissingnessMechanism short_zeta =
        MissingnessMechanism::mar_logistic(Eigen::Vector2d(1.0, -1.0));
    CHECK(thrown_code([&] { (void)apply_missingness(full, short_zeta, 2); }) ==
          "invalid-design");
}

TEST_CASE("mar logistic recovers the generating coefficients") {
    SimDesign design;
    design.n = 20000;
    const ClusterDataset full = generate_sim_dataset(design, 21);
    Eigen::VectorXd zeta(4);
    zeta << 1.2, -1.0, 0.8, 0.2;  // (x1 mean, x2 mean, z mean, intercept)
    const ClusterDataset masked =
        apply_missingness(full, MissingnessMechanism::mar_logistic(zeta), 23);
    const double frac = static_cast<double>(masked.n_observed()) / masked.n();
    CHECK(frac > 0.4);
    CHECK(frac < 0.9);

    const PiModel pi = fit_pi_model(masked);
    REQUIRE(pi.zeta.size() == 4);
    for (int kcoef = 0; kcoef < 4; ++kcoef) {
        const double se = std::sqrt(pi.psi.col(kcoef).squaredNorm()) / masked.n();
        CHECK(se > 0.0);
        CHECK(std::abs(pi.zeta[kcoef] - zeta[kcoef]) <= 3.0 * se);
    }
}

TEST_CASE("oracle quadrature reproduces frozen benchmark values") {
    const SimDesign design;  // the benchmark defaults
    for (int i = 0; i < 7; ++i) {
        const Functional surv = make_functional("survival", kSurvivalC[i], {{0, 0.5}});
        const OracleResult res = true_kappa_oracle(design, surv);
        CHECK(res.method_used == "quadrature");
        CHECK(res.mc_se == 0.0);
        CHECK(res.warnings.empty());
        CHECK(test_util::close_abs(res.value, kSurvivalKappa[i], 1e-10));
    }
    const OracleResult deep =
        true_kappa_oracle(design, make_functional("survival", -10.0, {{0, 0.5}}));
    const OracleResult tail =
        true_kappa_oracle(design, make_functional("survival", 10.0, {{0, 0.5}}));
    CHECK(deep.value > 1.0 - 1e-10);
    CHECK(tail.value < 1e-10);

    const OracleResult mean_res = true_kappa_oracle(design, make_functional("mean"));
    CHECK(mean_res.method_used == "quadrature");
    CHECK(test_util::close_abs(mean_res.value, kMeanY, 1e-10));

    const OracleResult second = true_kappa_oracle(design, make_functional("second-moment"));
    CHECK(test_util::close_abs(second.value, kSecondMomentY, 1e-9));
}

TEST_CASE("oracle falls back to monte carlo for custom functionals") {
    const SimDesign design;
    Functional custom = make_functional("survival", 1.0, {{0, 0.5}});
    custom.name = "custom-survival";

    const OracleResult res = true_kappa_oracle(design, custom);
    CHECK(res.method_used == "monte-carlo");
    REQUIRE(res.warnings.size() == 1);
    CHECK(res.mc_se > 0.0);
    CHECK(std::abs(res.value - kSurvivalKappa[2]) <= 5.0 * res.mc_se);

    // Asking for monte carlo explicitly is not worth a warning.
    OracleConfig config;
    config.method = OracleMethod::monte_carlo;
    config.mc_draws = 50000;
    const OracleResult direct = true_kappa_oracle(design, custom, config);
    CHECK(direct.warnings.empty());
    CHECK(direct.method_used == "monte-carlo");
    const OracleResult repeat = true_kappa_oracle(design, custom, config);
    CHECK(direct.value == repeat.value);  // seeded draws
}

TEST_CASE("family survey generator matches its documented design") {
    KenyaConfig config;
    const KenyaDataset first = generate_kenya_like(config, 99);
    const KenyaDataset again = generate_kenya_like(config, 99);
    const KenyaDataset other = generate_kenya_like(config, 100);
    first.data.validate();
    CHECK(first.data.n() == 68);
    CHECK(first.data.m == 2);
    CHECK(first.data.R == 4);
    CHECK(first.data.p == 4);

    bool identical = true;
    bool differs = false;
    for (int i = 0; i < first.data.n(); ++i) {
        const Cluster& family = first.data.clusters[i];
        identical = identical && family.y == again.data.clusters[i].y;
        differs = differs || family.y != other.data.clusters[i].y;
        CHECK(family.z.minCoeff() >= config.age_lo);
        CHECK(family.z.maxCoeff() <= config.age_hi);
        for (int j = 0; j < 2; ++j) {
            const double sex = family.x(j * 4, 0);
            CHECK((sex == 0.0 || sex == 1.0));
            for (int k = 0; k < 4; ++k) {
                const int s = j * 4 + k;
                CHECK(family.x(s, 0) == sex);                      // child-level
                CHECK(family.x(s, 1) == family.x(0, 1));           // family-level
                const double month = family.x(s, 2);
                CHECK(month >= config.month_lo);
                CHECK(month <= config.month_hi);
                CHECK(family.x(s, 3) == std::max(month - 4.0, 0.0));
            }
        }
    }
    CHECK(identical);
    CHECK(differs);

    CHECK(first.truth.beta == config.beta0);
    CHECK(first.truth.sigma2 == config.sigma2);
    CHECK(first.truth.rho == config.rho);
    CHECK(test_util::close_abs(first.theta(config.theta_center), config.theta_level, 1e-12));
    CHECK(test_util::close_abs(first.theta(config.theta_center + 10.0),
                               config.theta_level + 10.0 * config.theta_slope, 1e-12));
}

TEST_CASE("family survival oracle integrates the mixture design") {
    KenyaConfig config;
    const double at8 = kenya_survival_oracle(config, 8.0, 3.0);
    const double at10 = kenya_survival_oracle(config, 10.0, 3.0);
    const double at12 = kenya_survival_oracle(config, 12.0, 3.0);
    CHECK(at8 > at10);
    CHECK(at10 > at12);
    CHECK(at8 < 1.0);
    CHECK(at12 > 0.0);

    // Later months sit lower on the piecewise-linear month effect.
    CHECK(at10 > kenya_survival_oracle(config, 10.0, 6.0));

    // Monte Carlo cross-check of the quadrature at a mid point.
    const ThetaRule theta = config.theta_rule();
    const double sigma = std::sqrt(config.sigma2);
    Rng rng(555);
    const int draws = 200000;
    double sum = 0.0, sq = 0.0;
    for (int d = 0; d < draws; ++d) {
        const double age = config.age_lo + (config.age_hi - config.age_lo) * rng.uniform();
        const double sex = rng.bernoulli(0.5) ? 1.0 : 0.0;
        const double lp = rng.bernoulli(config.pden_weight1)
                              ? config.pden_mu1 + config.pden_sd1 * rng.normal()
                              : config.pden_mu2 + config.pden_sd2 * rng.normal();
        const double u = (config.beta0[0] * sex + config.beta0[1] * lp + config.beta0[2] * 3.0 +
                          theta(age) - 10.0) /
                         sigma;
        const double val = 0.5 * std::erfc(-u * 0.7071067811865476);
        sum += val;
        sq += val * val;
    }
    const double mc = sum / draws;
    const double se = std::sqrt((sq / draws - mc * mc) / draws);
    CHECK(std::abs(at10 - mc) <= 4.0 * se);
}

TEST_CASE("experiments are deterministic and faithful to a single run") {
    SimDesign design;
    design.n = 40;
    design.m = 2;
    design.R = 2;
    design.rho = 0.3;

    const Functional surv = make_functional("survival", 1.0, {{0, 0.5}});
    PipelineSpec spec;
    spec.names = {"kappa", "beta1", "beta2"};
    spec.compute = [&](const ClusterDataset& data, const FitResult& fitted, int) {
        ReplicateOutput out;
        out.values.resize(3);
        out.values[0] = kappa_semi(data, fitted, surv).kappa;
        out.values[1] = fitted.params.beta[0];
        out.values[2] = fitted.params.beta[1];
        return out;
    };

    ExperimentConfig config;
    config.replicates = 1;
    config.seed = 41;
    config.fixed_h = 0.2;
    config.fit_config.max_outer = 400;
    const ExperimentReport report = run_experiment(design, spec, config);
    CHECK(report.attempted == 1);
    CHECK(report.failures == 0);
    REQUIRE(report.values.rows() == 1);
    REQUIRE(report.values.cols() == 3);
    CHECK(std::isnan(report.sd[0]));
    CHECK(std::isnan(report.coverage[0]));
    CHECK(report.mean == report.values.row(0).transpose());

    // The exact same draws and fit, performed by hand.
    Rng rng = Rng::stream(41, 0);
    const ClusterDataset data = generate_sim_dataset(design, rng);
    FitConfig fc = config.fit_config;
    fc.h = config.fixed_h;
    const FitResult fitted = fit(data, fc);
    CHECK(report.values(0, 0) == kappa_semi(data, fitted, surv).kappa);
    CHECK(report.values(0, 1) == fitted.params.beta[0]);
    CHECK(report.values(0, 2) == fitted.params.beta[1]);
}

TEST_CASE("experiments are thread invariant") {
    SimDesign design;
    design.n = 35;
    design.m = 2;
    design.R = 2;
    design.rho = 0.3;
    design.missingness = MissingnessMechanism::mcar(0.85);

    PipelineSpec spec;
    spec.names = {"beta1", "sigma2"};
    spec.compute = [](const ClusterDataset&, const FitResult& fitted, int) {
        ReplicateOutput out;
        out.values.resize(2);
        out.values[0] = fitted.params.beta[0];
        out.values[1] = fitted.params.sigma2;
        return out;
    };

    ExperimentConfig config;
    config.replicates = 12;
    config.seed = 9;
    config.fixed_h = 0.2;
    config.fit_config.max_outer = 400;
    config.max_failure_fraction = 0.5;
    const ExperimentReport serial = run_experiment(design, spec, config);
    config.threads = 3;
    const ExperimentReport parallel = run_experiment(design, spec, config);
    CHECK(serial.failures == parallel.failures);
    REQUIRE(serial.values.rows() == parallel.values.rows());
    CHECK(serial.values == parallel.values);
    CHECK(serial.mean == parallel.mean);
}

TEST_CASE("experiment failure handling and validation") {
    SimDesign design;
    design.n = 20;
    design.m = 1;
    design.R = 2;

    PipelineSpec broken;
    broken.names = {"value"};
    broken.compute = [](const ClusterDataset&, const FitResult&, int) -> ReplicateOutput {
        throw_numerical("fit-not-converged", "synthetic replicate failure");
    };
    ExperimentConfig config;
    config.replicates = 6;
    config.fixed_h = 0.25;
    config.fit_config.max_outer = 400;
    CHECK(thrown_code([&] { (void)run_experiment(design, broken, config); }) ==
          "experiment-unstable");

    PipelineSpec wrong_size;
    wrong_size.names = {"a", "b"};
    wrong_size.compute = [](const ClusterDataset&, const FitResult&, int) {
        ReplicateOutput out;
        out.values = Eigen::VectorXd::Zero(3);
        return out;
    };
    CHECK(thrown_code([&] { (void)run_experiment(design, wrong_size, config); }) ==
          "invalid-config");

    PipelineSpec patchy;
    patchy.names = {"value"};
    patchy.compute = [](const ClusterDataset&, const FitResult&, int r) {
        ReplicateOutput out;
        out.values = Eigen::VectorXd::Zero(1);
        if (r % 2 == 0) {
            out.ci_lo = Eigen::VectorXd::Constant(1, -1.0);
            out.ci_hi = Eigen::VectorXd::Constant(1, 1.0);
        }
        return out;
    };
    CHECK(thrown_code([&] { (void)run_experiment(design, patchy, config); }) ==
          "invalid-config");

    PipelineSpec fine;
    fine.names = {"value"};
    fine.compute = [](const ClusterDataset&, const FitResult&, int) {
        ReplicateOutput out;
        out.values = Eigen::VectorXd::Zero(1);
        return out;
    };
    ExperimentConfig bad = config;
    bad.replicates = 0;
    CHECK(thrown_code([&] { (void)run_experiment(design, fine, bad); }) == "invalid-config");
    bad = config;
    bad.threads = 0;
    CHECK(thrown_code([&] { (void)run_experiment(design, fine, bad); }) == "invalid-config");
    bad = config;
    bad.fixed_h = -0.1;
    CHECK(thrown_code([&] { (void)run_experiment(design, fine, bad); }) == "invalid-config");
    PipelineSpec unnamed;
    unnamed.compute = fine.compute;
    CHECK(thrown_code([&] { (void)run_experiment(design, unnamed, config); }) ==
          "invalid-config");
    PipelineSpec no_compute;
    no_compute.names = {"value"};
    CHECK(thrown_code([&] { (void)run_experiment(design, no_compute, config); }) ==
          "invalid-config");
    PipelineSpec bad_oracle = fine;
    bad_oracle.oracle = Eigen::Vector2d(0.0, 1.0);
    CHECK(thrown_code([&] { (void)run_experiment(design, bad_oracle, config); }) ==
          "invalid-config");
}

TEST_CASE("experiment coverage accounting") {
    SimDesign design;
    design.n = 30;
    design.m = 2;
    design.R = 2;

    ExperimentConfig config;
    config.replicates = 10;
    config.fixed_h = 0.2;
    config.fit_config.max_outer = 400;
    config.max_failure_fraction = 0.5;

    PipelineSpec with_ci;
    with_ci.names = {"stat"};
    with_ci.oracle = Eigen::VectorXd::Constant(1, 3.0);
    with_ci.compute = [](const ClusterDataset&, const FitResult&, int r) {
        ReplicateOutput out;
        out.values = Eigen::VectorXd::Constant(1, static_cast<double>(r));
        out.ci_lo = Eigen::VectorXd::Constant(1, -10.0);
        out.ci_hi = Eigen::VectorXd::Constant(1, 10.0);
        return out;
    };
    const ExperimentReport covered = run_experiment(design, with_ci, config);
    CHECK(covered.coverage[0] == 1.0);
    CHECK(test_util::close_abs(covered.bias[0], covered.mean[0] - 3.0, 1e-15));
    CHECK(covered.ci_lo.rows() == covered.values.rows());

    PipelineSpec no_ci = with_ci;
    no_ci.compute = [](const ClusterDataset&, const FitResult&, int r) {
        ReplicateOutput out;
        out.values = Eigen::VectorXd::Constant(1, static_cast<double>(r));
        return out;
    };
    const ExperimentReport uncovered = run_experiment(design, no_ci, config);
    CHECK(std::isnan(uncovered.coverage[0]));
    CHECK(uncovered.ci_lo.size() == 0);

    PipelineSpec no_oracle = with_ci;
    no_oracle.oracle.resize(0);
    const ExperimentReport blind = run_experiment(design, no_oracle, config);
    CHECK(std::isnan(blind.oracle[0]));
    CHECK(std::isnan(blind.bias[0]));
    CHECK(std::isnan(blind.coverage[0]));
}

TEST_CASE("experiment recovers the oracle on a smoke design") {
    SimDesign design;
    design.n = 120;

    const Functional surv = make_functional("survival", 1.0, {{0, 0.5}});
    PipelineSpec spec;
    spec.names = {"kappa"};
    spec.oracle = Eigen::VectorXd::Constant(1, kSurvivalKappa[2]);
    spec.compute = [&](const ClusterDataset& data, const FitResult& fitted, int) {
        ReplicateOutput out;
        out.values = Eigen::VectorXd::Constant(1, kappa_semi(data, fitted, surv).kappa);
        return out;
    };

    ExperimentConfig config;
    config.replicates = 20;
    config.seed = 77;
    config.threads = 3;
    config.fixed_h = 0.12;
    config.fit_config.max_outer = 400;
    const ExperimentReport report = run_experiment(design, spec, config);
    CHECK(report.attempted == 20);
    CHECK(report.failures <= 2);
    CHECK(report.mc_se[0] > 0.0);
    CHECK(report.mc_se[0] < 0.02);
    CHECK(std::abs(report.bias[0]) < 0.05);
}

}  // TEST_SUITE

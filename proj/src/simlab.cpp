#include "semirep/simlab.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

#include "semirep/errors.hpp"
#include "semirep/parallel.hpp"

namespace semirep {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865476;

double normal_cdf(double u) { return 0.5 * std::erfc(-u * kInvSqrt2); }

double logistic(double t) { return 1.0 / (1.0 + std::exp(-t)); }

// Same layout as the pi-model fitter's default: (X column means, mean Z, 1).
Eigen::VectorXd default_mar_features(const Eigen::MatrixXd& x, const Eigen::VectorXd& z) {
    Eigen::VectorXd f(x.cols() + 2);
    f.head(x.cols()) = x.colwise().mean().transpose();
    f[x.cols()] = z.mean();
    f[x.cols() + 1] = 1.0;
    return f;
}

// Golub-Welsch rules with probability-normalized weights: the weight vector
// sums to one, so sum_i w_i f(x_i) approximates an expectation directly.
struct QuadRule {
    Eigen::VectorXd nodes;
    Eigen::VectorXd weights;
};

QuadRule gauss_legendre(int points, double lo, double hi) {
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(points, points);
    for (int k = 1; k < points; ++k) {
        const double off = k / std::sqrt(4.0 * k * k - 1.0);
        jacobi(k - 1, k) = off;
        jacobi(k, k - 1) = off;
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jacobi);
    QuadRule rule;
    rule.nodes.resize(points);
    rule.weights.resize(points);
    for (int i = 0; i < points; ++i) {
        rule.nodes[i] = lo + (hi - lo) * 0.5 * (es.eigenvalues()[i] + 1.0);
        const double v0 = es.eigenvectors()(0, i);
        rule.weights[i] = v0 * v0;  // uniform-law expectation weight
    }
    return rule;
}

// Expectation under N(mu, sd^2): nodes mapped from the Hermite abscissas.
QuadRule gauss_hermite(int points, double mu, double sd) {
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(points, points);
    for (int k = 1; k < points; ++k) {
        const double off = std::sqrt(0.5 * k);
        jacobi(k - 1, k) = off;
        jacobi(k, k - 1) = off;
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jacobi);
    QuadRule rule;
    rule.nodes.resize(points);
    rule.weights.resize(points);
    const double sqrt2 = std::sqrt(2.0);
    for (int i = 0; i < points; ++i) {
        rule.nodes[i] = mu + sd * sqrt2 * es.eigenvalues()[i];
        const double v0 = es.eigenvectors()(0, i);
        rule.weights[i] = v0 * v0;
    }
    return rule;
}

}  // namespace

// --- ThetaRule ---------------------------------------------------------------

double ThetaRule::operator()(double z) const {
    switch (kind) {
        case Kind::sin8:
            return std::sin(8.0 * z - 1.0);
        case Kind::linear:
            return intercept + slope * z;
        case Kind::constant:
            return level;
        case Kind::table: {
            const int count = static_cast<int>(nodes.size());
            if (z <= nodes[0]) return values[0];
            if (z >= nodes[count - 1]) return values[count - 1];
            const double* begin = nodes.data();
            const double* it = std::upper_bound(begin, begin + count, z);
            const int hi = static_cast<int>(it - begin);
            const double t = (z - nodes[hi - 1]) / (nodes[hi] - nodes[hi - 1]);
            return (1.0 - t) * values[hi - 1] + t * values[hi];
        }
    }
    throw_validation("invalid-design", "unknown theta rule kind");
}

void ThetaRule::validate() const {
    if (kind != Kind::table) return;
    if (nodes.size() < 2 || nodes.size() != values.size())
        throw_validation("invalid-design", "theta table needs >= 2 nodes with matching values");
    for (int s = 0; s + 1 < nodes.size(); ++s)
        if (!(nodes[s] < nodes[s + 1]))
            throw_validation("invalid-design", "theta table nodes must be strictly increasing");
    if (!nodes.allFinite() || !values.allFinite())
        throw_validation("invalid-design", "theta table entries must be finite");
}

ThetaRule ThetaRule::named(const std::string& name) {
    ThetaRule rule;
    if (name == "sin8") {
        rule.kind = Kind::sin8;
    } else if (name == "linear") {
        rule.kind = Kind::linear;
    } else if (name == "constant") {
        rule.kind = Kind::constant;
    } else {
        throw_validation("invalid-design", "unknown theta rule '" + name +
                                               "' (expected sin8, linear, or constant)");
    }
    return rule;
}

// --- MissingnessMechanism ----------------------------------------------------

void MissingnessMechanism::validate(int p) const {
    switch (kind) {
        case Kind::none:
            return;
        case Kind::mcar:
            if (!(keep_prob > 0.0 && keep_prob < 1.0))
                throw_validation("invalid-design",
                                 "MCAR keep probability must lie strictly inside (0, 1)");
            return;
        case Kind::mar_logistic:
            if (zeta.size() == 0 || !zeta.allFinite())
                throw_validation("invalid-design",
                                 "MAR-logistic needs a finite, non-empty coefficient vector");
            if (!features && zeta.size() != p + 2)
                throw_validation("invalid-design",
                                 "default MAR features have dimension p + 2 = " +
                                     std::to_string(p + 2) + "; zeta has " +
                                     std::to_string(zeta.size()));
            return;
    }
    throw_validation("invalid-design", "unknown missingness kind");
}

MissingnessMechanism MissingnessMechanism::mcar(double keep_prob) {
    MissingnessMechanism mech;
    mech.kind = Kind::mcar;
    mech.keep_prob = keep_prob;
    return mech;
}

MissingnessMechanism MissingnessMechanism::mar_logistic(
    Eigen::VectorXd zeta,
    std::function<Eigen::VectorXd(const Eigen::MatrixXd&, const Eigen::VectorXd&)> features) {
    MissingnessMechanism mech;
    mech.kind = Kind::mar_logistic;
    mech.zeta = std::move(zeta);
    mech.features = std::move(features);
    return mech;
}

// --- SimDesign ---------------------------------------------------------------

ModelParams SimDesign::truth() const {
    ModelParams params;
    params.beta = beta0;
    params.sigma2 = sigma2;
    params.rho = rho;
    return params;
}

void SimDesign::validate() const {
    if (n < 1 || m < 1 || R < 1 || p < 1)
        throw_validation("invalid-design", "design needs n, m, R, p all >= 1");
    if (beta0.size() != p)
        throw_validation("invalid-design", "beta0 has " + std::to_string(beta0.size()) +
                                               " entries for p = " + std::to_string(p));
    validate_params(truth(), m * R);
    theta.validate();
    missingness.validate(p);
}

// --- Generators --------------------------------------------------------------

Eigen::VectorXd exchangeable_draw(Rng& rng, int q, double sigma2, double rho) {
    Eigen::VectorXd g(q);
    for (int s = 0; s < q; ++s) g[s] = rng.normal();
    const double shared = g.mean();
    const double sd_within = std::sqrt(sigma2 * (1.0 - rho));
    const double sd_between = std::sqrt(sigma2 * (1.0 + (q - 1) * rho));
    return sd_within * (g.array() - shared).matrix() +
           Eigen::VectorXd::Constant(q, sd_between * shared);
}

ClusterDataset generate_sim_dataset(const SimDesign& design, Rng& rng) {
    design.validate();
    ClusterDataset data;
    data.m = design.m;
    data.R = design.R;
    data.p = design.p;
    const int q = design.m * design.R;
    data.clusters.reserve(static_cast<size_t>(design.n));
    // Draw order per cluster: Z (m), X row-major (q x p), noise (q).
    for (int i = 0; i < design.n; ++i) {
        Cluster cluster;
        cluster.z.resize(design.m);
        for (int j = 0; j < design.m; ++j) cluster.z[j] = rng.uniform();
        cluster.x.resize(q, design.p);
        for (int s = 0; s < q; ++s)
            for (int k = 0; k < design.p; ++k) cluster.x(s, k) = rng.uniform();
        Eigen::VectorXd theta_m(design.m);
        for (int j = 0; j < design.m; ++j) theta_m[j] = design.theta(cluster.z[j]);
        cluster.y = cluster.x * design.beta0 + expand_to_slots(theta_m, design.R) +
                    exchangeable_draw(rng, q, design.sigma2, design.rho);
        cluster.delta = 1;
        data.clusters.push_back(std::move(cluster));
    }
    return data;
}

ClusterDataset generate_sim_dataset(const SimDesign& design, std::uint64_t seed) {
    Rng rng = Rng::stream(seed, 0);
    return generate_sim_dataset(design, rng);
}

ClusterDataset apply_missingness(const ClusterDataset& dataset,
                                 const MissingnessMechanism& mechanism, Rng& rng) {
    mechanism.validate(dataset.p);
    if (mechanism.kind == MissingnessMechanism::Kind::none) return dataset;
    for (const Cluster& cluster : dataset.clusters)
        if (cluster.delta != 1)
            throw_validation("invalid-input",
                             "missingness mechanisms expect a fully observed dataset");

    ClusterDataset out = dataset;
    int observed = 0;
    for (Cluster& cluster : out.clusters) {
        double keep = mechanism.keep_prob;
        if (mechanism.kind == MissingnessMechanism::Kind::mar_logistic) {
            const Eigen::VectorXd f = mechanism.features
                                          ? mechanism.features(cluster.x, cluster.z)
                                          : default_mar_features(cluster.x, cluster.z);
            if (f.size() != mechanism.zeta.size())
                throw_validation("invalid-design",
                                 "MAR feature map returned " + std::to_string(f.size()) +
                                     " entries; zeta has " + std::to_string(mechanism.zeta.size()));
            keep = logistic(mechanism.zeta.dot(f));
        }
        if (rng.bernoulli(keep)) {
            cluster.delta = 1;
            ++observed;
        } else {
            cluster.delta = 0;
            cluster.y.resize(0);
        }
    }
    if (observed == 0)
        throw_numerical("degenerate-missingness",
                        "every cluster is unobserved under the missingness mechanism");
    return out;
}

ClusterDataset apply_missingness(const ClusterDataset& dataset,
                                 const MissingnessMechanism& mechanism, std::uint64_t seed) {
    Rng rng = Rng::stream(seed, 0);
    return apply_missingness(dataset, mechanism, rng);
}

// --- Survey-style family design ----------------------------------------------

ThetaRule KenyaConfig::theta_rule() const {
    ThetaRule rule;
    rule.kind = ThetaRule::Kind::linear;
    rule.intercept = theta_level - theta_slope * theta_center;
    rule.slope = theta_slope;
    return rule;
}

ModelParams KenyaConfig::truth() const {
    ModelParams params;
    params.beta = beta0;
    params.sigma2 = sigma2;
    params.rho = rho;
    return params;
}

void KenyaConfig::validate() const {
    if (n < 1) throw_validation("invalid-design", "need at least one family");
    if (beta0.size() != 4)
        throw_validation("invalid-design",
                         "family design uses exactly 4 covariates (sex, logpden, month, knee)");
    validate_params(truth(), 8);
    if (!(age_lo < age_hi) || !(month_lo < month_hi) || month_lo < 0.0)
        throw_validation("invalid-design", "age and month ranges must be non-degenerate");
    if (!(pden_sd1 > 0.0) || !(pden_sd2 > 0.0) ||
        !(pden_weight1 >= 0.0 && pden_weight1 <= 1.0))
        throw_validation("invalid-design", "log-density mixture parameters out of range");
}

KenyaDataset generate_kenya_like(const KenyaConfig& config, std::uint64_t seed) {
    config.validate();
    const int m = 2, R = 4, q = 8, p = 4;
    KenyaDataset out;
    out.truth = config.truth();
    out.theta = config.theta_rule();
    out.data.m = m;
    out.data.R = R;
    out.data.p = p;
    out.data.clusters.reserve(static_cast<size_t>(config.n));
    Rng rng = Rng::stream(seed, 0);
    // Draw order per family: ages (2), sexes (2), density component + value,
    // months (8), noise (8).
    for (int i = 0; i < config.n; ++i) {
        Cluster family;
        family.z.resize(m);
        for (int j = 0; j < m; ++j)
            family.z[j] = config.age_lo + (config.age_hi - config.age_lo) * rng.uniform();
        double sex[m];
        for (int j = 0; j < m; ++j) sex[j] = rng.bernoulli(0.5) ? 1.0 : 0.0;
        const bool first_component = rng.bernoulli(config.pden_weight1);
        const double logpden = first_component
                                   ? config.pden_mu1 + config.pden_sd1 * rng.normal()
                                   : config.pden_mu2 + config.pden_sd2 * rng.normal();
        family.x.resize(q, p);
        for (int j = 0; j < m; ++j)
            for (int k = 0; k < R; ++k) {
                const int s = j * R + k;
                const double month =
                    config.month_lo + (config.month_hi - config.month_lo) * rng.uniform();
                family.x(s, 0) = sex[j];
                family.x(s, 1) = logpden;
                family.x(s, 2) = month;
                family.x(s, 3) = std::max(month - 4.0, 0.0);
            }
        Eigen::VectorXd theta_m(m);
        for (int j = 0; j < m; ++j) theta_m[j] = out.theta(family.z[j]);
        family.y = family.x * config.beta0 + expand_to_slots(theta_m, R) +
                   exchangeable_draw(rng, q, config.sigma2, config.rho);
        family.delta = 1;
        out.data.clusters.push_back(std::move(family));
    }
    return out;
}

double kenya_survival_oracle(const KenyaConfig& config, double c, double month) {
    config.validate();
    const ThetaRule theta = config.theta_rule();
    const double sigma = std::sqrt(config.sigma2);
    const double month_part =
        config.beta0[2] * month + config.beta0[3] * std::max(month - 4.0, 0.0);
    const QuadRule age = gauss_legendre(64, config.age_lo, config.age_hi);
    const QuadRule pden1 = gauss_hermite(64, config.pden_mu1, config.pden_sd1);
    const QuadRule pden2 = gauss_hermite(64, config.pden_mu2, config.pden_sd2);

    double total = 0.0;
    for (int sex = 0; sex <= 1; ++sex) {
        const double sex_part = config.beta0[0] * sex;
        for (int comp = 0; comp < 2; ++comp) {
            const QuadRule& pden = comp == 0 ? pden1 : pden2;
            const double comp_weight = comp == 0 ? config.pden_weight1 : 1.0 - config.pden_weight1;
            for (int hp = 0; hp < pden.nodes.size(); ++hp) {
                const double pden_part = config.beta0[1] * pden.nodes[hp];
                for (int az = 0; az < age.nodes.size(); ++az) {
                    const double u =
                        (sex_part + pden_part + month_part + theta(age.nodes[az]) - c) / sigma;
                    total += 0.5 * comp_weight * pden.weights[hp] * age.weights[az] *
                             normal_cdf(u);
                }
            }
        }
    }
    return total;
}

// --- Ground-truth functional values ------------------------------------------

OracleResult true_kappa_oracle(const SimDesign& design, const Functional& functional,
                               const OracleConfig& config) {
    design.validate();
    if (!functional.evaluate)
        throw_validation("invalid-config", "functional has no evaluation rule");
    if (config.quad_points < 2) throw_validation("invalid-config", "need at least 2 quad points");
    if (config.mc_draws < 2) throw_validation("invalid-config", "need at least 2 MC draws");

    const ModelParams truth = design.truth();
    OracleResult result;

    // Named functionals average an identical per-slot term, so the cluster
    // expectation collapses to a single-slot integral over (free X, Z).
    const bool named_slotwise = functional.name == "survival" ||
                                functional.name == "indicator-above-c" ||
                                functional.name == "mean" || functional.name == "second-moment";
    std::vector<int> free_cols;
    for (int col = 0; col < design.p; ++col) {
        bool fixed = false;
        for (const auto& [fixed_col, value] : functional.fixed_columns)
            fixed = fixed || fixed_col == col;
        if (!fixed) free_cols.push_back(col);
    }

    if (config.method == OracleMethod::quadrature && named_slotwise && free_cols.size() <= 2) {
        const QuadRule rule = gauss_legendre(config.quad_points, 0.0, 1.0);
        Eigen::MatrixXd x = Eigen::MatrixXd::Zero(1, design.p);
        for (const auto& [col, value] : functional.fixed_columns) {
            if (col < 0 || col >= design.p)
                throw_validation("invalid-config", "fixed column " + std::to_string(col) +
                                                       " outside 0.." + std::to_string(design.p - 1));
            x(0, col) = value;
        }
        Eigen::VectorXd z(1), theta_vals(1);
        const int d = static_cast<int>(free_cols.size());
        double total = 0.0;
        for (int sz = 0; sz < rule.nodes.size(); ++sz) {
            z[0] = rule.nodes[sz];
            theta_vals[0] = design.theta(z[0]);
            const FunctionalArgs args{x, z, theta_vals, truth};
            if (d == 0) {
                total += rule.weights[sz] * functional.evaluate(args);
            } else if (d == 1) {
                for (int i = 0; i < rule.nodes.size(); ++i) {
                    x(0, free_cols[0]) = rule.nodes[i];
                    total += rule.weights[sz] * rule.weights[i] * functional.evaluate(args);
                }
            } else {
                for (int i = 0; i < rule.nodes.size(); ++i) {
                    x(0, free_cols[0]) = rule.nodes[i];
                    const double wi = rule.weights[sz] * rule.weights[i];
                    for (int l = 0; l < rule.nodes.size(); ++l) {
                        x(0, free_cols[1]) = rule.nodes[l];
                        total += wi * rule.weights[l] * functional.evaluate(args);
                    }
                }
            }
        }
        result.value = total;
        result.method_used = "quadrature";
        return result;
    }

    if (config.method == OracleMethod::quadrature) {
        std::ostringstream msg;
        msg << "functional '" << functional.name << "' with " << free_cols.size()
            << " free covariate coordinate(s) has no quadrature form; falling back to monte-carlo";
        result.warnings.push_back(msg.str());
    }

    // Full-cluster Monte Carlo: F is the conditional target, so no response
    // draws are needed.
    Rng rng = Rng::stream(config.mc_seed, 0);
    const int q = design.m * design.R;
    double sum = 0.0, sum2 = 0.0;
    Eigen::MatrixXd x(q, design.p);
    Eigen::VectorXd z(design.m), theta_vals(design.m);
    for (long long draw = 0; draw < config.mc_draws; ++draw) {
        for (int j = 0; j < design.m; ++j) {
            z[j] = rng.uniform();
            theta_vals[j] = design.theta(z[j]);
        }
        for (int s = 0; s < q; ++s)
            for (int k = 0; k < design.p; ++k) x(s, k) = rng.uniform();
        const Eigen::MatrixXd x_fixed = apply_fixed_columns(x, functional.fixed_columns);
        const FunctionalArgs args{x_fixed, z, theta_vals, truth};
        const double value = functional.evaluate(args);
        sum += value;
        sum2 += value * value;
    }
    const double draws = static_cast<double>(config.mc_draws);
    result.value = sum / draws;
    const double variance = std::max(0.0, sum2 / draws - result.value * result.value);
    result.mc_se = std::sqrt(variance / draws);
    result.method_used = "monte-carlo";
    return result;
}

// --- Monte Carlo experiments -------------------------------------------------

ExperimentReport run_experiment(const SimDesign& design, const PipelineSpec& spec,
                                const ExperimentConfig& config) {
    design.validate();
    if (config.replicates < 1)
        throw_validation("invalid-config", "need at least one replicate");
    if (config.threads < 1) throw_validation("invalid-config", "threads must be at least 1");
    if (!(config.max_failure_fraction >= 0.0 && config.max_failure_fraction < 1.0))
        throw_validation("invalid-config", "max_failure_fraction must lie in [0, 1)");
    if (config.fixed_h < 0.0)
        throw_validation("invalid-config", "fixed_h must be 0 (select) or positive");
    if (!spec.compute) throw_validation("invalid-config", "pipeline callback is empty");
    const int k = static_cast<int>(spec.names.size());
    if (k == 0) throw_validation("invalid-config", "pipeline tracks no statistics");
    if (spec.oracle.size() != 0 && spec.oracle.size() != k)
        throw_validation("invalid-config",
                         "oracle has " + std::to_string(spec.oracle.size()) + " entries for " +
                             std::to_string(k) + " statistics");

    const int B = config.replicates;
    Eigen::MatrixXd values(B, k), lo(B, k), hi(B, k);
    std::vector<char> ok(static_cast<size_t>(B), 0);
    std::vector<char> with_ci(static_cast<size_t>(B), 0);
    std::atomic<int> bad_shape{-1};

    parallel_for(B, config.threads, [&](int r) {
        try {
            Rng rng = Rng::stream(config.seed, static_cast<std::uint64_t>(r));
            ClusterDataset data = generate_sim_dataset(design, rng);
            if (design.missingness.kind != MissingnessMechanism::Kind::none)
                data = apply_missingness(data, design.missingness, rng);
            FitConfig fit_config = config.fit_config;
            fit_config.h = config.fixed_h;
            const FitResult fitted = fit(data, fit_config);
            if (!fitted.converged) return;  // dropped and counted below
            const ReplicateOutput out = spec.compute(data, fitted, r);
            if (out.values.size() != k || out.ci_lo.size() != out.ci_hi.size() ||
                (out.ci_lo.size() != 0 && out.ci_lo.size() != k)) {
                bad_shape.store(r);
                return;
            }
            if (!out.values.allFinite()) return;
            values.row(r) = out.values.transpose();
            if (out.ci_lo.size() == k) {
                lo.row(r) = out.ci_lo.transpose();
                hi.row(r) = out.ci_hi.transpose();
                with_ci[static_cast<size_t>(r)] = 1;
            }
            ok[static_cast<size_t>(r)] = 1;
        } catch (const Error&) {
            // dropped and counted below
        }
    });
    if (bad_shape.load() >= 0)
        throw_validation("invalid-config",
                         "pipeline output shape mismatch at replicate " +
                             std::to_string(bad_shape.load()) + " (expected " +
                             std::to_string(k) + " statistics)");

    ExperimentReport report;
    report.names = spec.names;
    report.attempted = B;
    std::vector<int> kept;
    for (int r = 0; r < B; ++r)
        if (ok[static_cast<size_t>(r)]) kept.push_back(r);
    const int successes = static_cast<int>(kept.size());
    report.failures = B - successes;
    if (report.failures > config.max_failure_fraction * B) {
        std::ostringstream msg;
        msg << report.failures << " of " << B << " replicates failed";
        throw_numerical("experiment-unstable", msg.str());
    }
    if (report.failures > 0) {
        std::ostringstream msg;
        msg << report.failures << " replicate(s) failed and were dropped";
        report.warnings.push_back(msg.str());
    }

    bool all_ci = true, any_ci = false;
    for (int r : kept) {
        all_ci = all_ci && with_ci[static_cast<size_t>(r)];
        any_ci = any_ci || with_ci[static_cast<size_t>(r)];
    }
    if (any_ci && !all_ci)
        throw_validation("invalid-config",
                         "pipeline must report intervals for every replicate or none");

    report.values.resize(successes, k);
    if (any_ci) {
        report.ci_lo.resize(successes, k);
        report.ci_hi.resize(successes, k);
    }
    for (int row = 0; row < successes; ++row) {
        report.values.row(row) = values.row(kept[static_cast<size_t>(row)]);
        if (any_ci) {
            report.ci_lo.row(row) = lo.row(kept[static_cast<size_t>(row)]);
            report.ci_hi.row(row) = hi.row(kept[static_cast<size_t>(row)]);
        }
    }

    const double nan = std::numeric_limits<double>::quiet_NaN();
    report.mean.resize(k);
    report.sd.resize(k);
    report.mc_se.resize(k);
    report.oracle = Eigen::VectorXd::Constant(k, nan);
    report.bias = Eigen::VectorXd::Constant(k, nan);
    report.coverage = Eigen::VectorXd::Constant(k, nan);
    if (spec.oracle.size() == k) report.oracle = spec.oracle;
    for (int j = 0; j < k; ++j) {
        report.mean[j] = report.values.col(j).mean();
        if (successes >= 2) {
            const double ss = (report.values.col(j).array() - report.mean[j]).square().sum();
            report.sd[j] = std::sqrt(ss / (successes - 1));
            report.mc_se[j] = report.sd[j] / std::sqrt(static_cast<double>(successes));
        } else {
            report.sd[j] = nan;
            report.mc_se[j] = nan;
        }
        if (std::isfinite(report.oracle[j])) {
            report.bias[j] = report.mean[j] - report.oracle[j];
            if (any_ci) {
                int covered = 0;
                for (int row = 0; row < successes; ++row)
                    if (report.ci_lo(row, j) <= report.oracle[j] &&
                        report.oracle[j] <= report.ci_hi(row, j))
                        ++covered;
                report.coverage[j] = static_cast<double>(covered) / successes;
            }
        }
    }
    return report;
}

}  // namespace semirep

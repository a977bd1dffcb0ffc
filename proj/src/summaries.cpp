#include "semirep/summaries.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "semirep/errors.hpp"
#include "semirep/rng.hpp"

namespace semirep {

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014327;

double normal_cdf(double x) { return 0.5 * std::erfc(-x * 0.7071067811865476); }
double normal_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

// Permutation-invariant accumulation: summing in sorted order makes the
// result bit-identical under any reordering of the inputs.
double canonical_mean(std::vector<double> values) {
    if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(values.begin(), values.end());
    double total = 0.0;
    for (double v : values) total += v;
    return total / static_cast<double>(values.size());
}

Eigen::MatrixXd with_fixed_columns(const Eigen::MatrixXd& x,
                                   const std::vector<std::pair<int, double>>& fixed) {
    if (fixed.empty()) return x;
    Eigen::MatrixXd out = x;
    for (const auto& [col, value] : fixed) {
        if (col < 0 || col >= out.cols())
            throw_validation("invalid-config", "fixed column index " + std::to_string(col + 1) +
                                                   " outside the covariate range");
        out.col(col).setConstant(value);
    }
    return out;
}

Eigen::VectorXd theta_at_cluster(const ThetaEstimate& theta, const Cluster& cluster) {
    Eigen::VectorXd vals(cluster.z.size());
    for (Eigen::Index j = 0; j < cluster.z.size(); ++j) vals[j] = theta.value_at(cluster.z[j]);
    return vals;
}

double fd_step(double at) { return 1e-6 * (1.0 + std::abs(at)); }

}  // namespace

void SummaryEstimate::set_variance(double v, const std::string& source) {
    if (!(v >= 0.0)) throw_numerical("invalid-variance", "variance estimate is negative");
    variance = v;
    variance_source = source;
    const double half = 1.96 * std::sqrt(v / std::max(n_used, 1));
    ci_lo = kappa - half;
    ci_hi = kappa + half;
}

double PiModel::probability(const Eigen::MatrixXd& x, const Eigen::VectorXd& z) const {
    const double eta = features(x, z).dot(zeta);
    const double pi = 1.0 / (1.0 + std::exp(-eta));
    return std::clamp(pi, 1e-6, 1.0 - 1e-6);
}

Functional make_functional(const std::string& name, double threshold,
                           std::vector<std::pair<int, double>> fixed_columns) {
    Functional f;
    f.name = name;
    f.fixed_columns = std::move(fixed_columns);
    if (name == "survival" || name == "indicator-above-c") {
        const double c = threshold;
        f.evaluate = [c](const FunctionalArgs& a) {
            const int q = static_cast<int>(a.x.rows());
            const int m = static_cast<int>(a.z.size());
            const int R = q / m;
            const double sigma = std::sqrt(a.params.sigma2);
            double total = 0.0;
            for (int s = 0; s < q; ++s)
                total += normal_cdf(
                    (a.x.row(s).dot(a.params.beta) + a.theta_vals[s / R] - c) / sigma);
            return total / q;
        };
        f.grad_b = [c](const FunctionalArgs& a) {
            const int q = static_cast<int>(a.x.rows());
            const int m = static_cast<int>(a.z.size());
            const int R = q / m;
            const double sigma = std::sqrt(a.params.sigma2);
            Eigen::VectorXd grad = Eigen::VectorXd::Zero(a.params.dim());
            for (int s = 0; s < q; ++s) {
                const double u =
                    (a.x.row(s).dot(a.params.beta) + a.theta_vals[s / R] - c) / sigma;
                const double phi = normal_pdf(u);
                grad.head(a.params.p()) += phi * a.x.row(s).transpose() / sigma;
                grad[a.params.p()] += phi * (-u / (2.0 * a.params.sigma2));
            }
            return Eigen::VectorXd(grad / q);
        };
        f.grad_theta = [c](const FunctionalArgs& a) {
            const int q = static_cast<int>(a.x.rows());
            const int m = static_cast<int>(a.z.size());
            const int R = q / m;
            const double sigma = std::sqrt(a.params.sigma2);
            Eigen::VectorXd grad = Eigen::VectorXd::Zero(m);
            for (int s = 0; s < q; ++s) {
                const double u =
                    (a.x.row(s).dot(a.params.beta) + a.theta_vals[s / R] - c) / sigma;
                grad[s / R] += normal_pdf(u) / sigma;
            }
            return Eigen::VectorXd(grad / q);
        };
    } else if (name == "mean") {
        f.evaluate = [](const FunctionalArgs& a) {
            const int q = static_cast<int>(a.x.rows());
            const int R = q / static_cast<int>(a.z.size());
            double total = 0.0;
            for (int s = 0; s < q; ++s)
                total += a.x.row(s).dot(a.params.beta) + a.theta_vals[s / R];
            return total / q;
        };
        f.grad_b = [](const FunctionalArgs& a) {
            Eigen::VectorXd grad = Eigen::VectorXd::Zero(a.params.dim());
            grad.head(a.params.p()) = a.x.colwise().mean().transpose();
            return grad;
        };
        f.grad_theta = [](const FunctionalArgs& a) {
            const int m = static_cast<int>(a.z.size());
            return Eigen::VectorXd(Eigen::VectorXd::Constant(m, 1.0 / m));
        };
    } else if (name == "second-moment") {
        f.evaluate = [](const FunctionalArgs& a) {
            const int q = static_cast<int>(a.x.rows());
            const int R = q / static_cast<int>(a.z.size());
            double total = 0.0;
            for (int s = 0; s < q; ++s) {
                const double mu = a.x.row(s).dot(a.params.beta) + a.theta_vals[s / R];
                total += mu * mu;
            }
            return total / q + a.params.sigma2;
        };
        f.grad_b = [](const FunctionalArgs& a) {
            const int q = static_cast<int>(a.x.rows());
            const int R = q / static_cast<int>(a.z.size());
            Eigen::VectorXd grad = Eigen::VectorXd::Zero(a.params.dim());
            for (int s = 0; s < q; ++s) {
                const double mu = a.x.row(s).dot(a.params.beta) + a.theta_vals[s / R];
                grad.head(a.params.p()) += 2.0 * mu * a.x.row(s).transpose();
            }
            grad.head(a.params.p()) /= q;
            grad[a.params.p()] = 1.0;
            return grad;
        };
        f.grad_theta = [](const FunctionalArgs& a) {
            const int q = static_cast<int>(a.x.rows());
            const int m = static_cast<int>(a.z.size());
            const int R = q / m;
            Eigen::VectorXd grad = Eigen::VectorXd::Zero(m);
            for (int s = 0; s < q; ++s)
                grad[s / R] += 2.0 * (a.x.row(s).dot(a.params.beta) + a.theta_vals[s / R]);
            return Eigen::VectorXd(grad / q);
        };
    } else {
        throw_validation("invalid-config", "unknown functional '" + name + "'");
    }
    return f;
}

namespace {

// Central finite differences for whichever derivative rule is missing, and
// the registration-time consistency check when both rules are present.
Eigen::VectorXd fd_grad_b(const Functional& f, const FunctionalArgs& a) {
    Eigen::VectorXd grad(a.params.dim());
    for (int k = 0; k < a.params.dim(); ++k) {
        Eigen::VectorXd packed = a.params.pack();
        const double step = fd_step(packed[k]);
        packed[k] += step;
        const ModelParams up_params = ModelParams::unpack(packed);
        const double up = f.evaluate({a.x, a.z, a.theta_vals, up_params});
        packed[k] -= 2.0 * step;
        const ModelParams down_params = ModelParams::unpack(packed);
        const double down = f.evaluate({a.x, a.z, a.theta_vals, down_params});
        grad[k] = (up - down) / (2.0 * step);
    }
    return grad;
}

Eigen::VectorXd fd_grad_theta(const Functional& f, const FunctionalArgs& a) {
    Eigen::VectorXd vals = a.theta_vals;
    Eigen::VectorXd grad(vals.size());
    for (int j = 0; j < vals.size(); ++j) {
        const double keep = vals[j];
        const double step = fd_step(keep);
        vals[j] = keep + step;
        const double up = f.evaluate({a.x, a.z, vals, a.params});
        vals[j] = keep - step;
        const double down = f.evaluate({a.x, a.z, vals, a.params});
        vals[j] = keep;
        grad[j] = (up - down) / (2.0 * step);
    }
    return grad;
}

void check_derivative_rules(const Functional& f, const FunctionalArgs& a) {
    const auto mismatch = [&](const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric) {
        for (int k = 0; k < analytic.size(); ++k)
            if (std::abs(analytic[k] - numeric[k]) > 1e-5 * (1.0 + std::abs(numeric[k])))
                return true;
        return false;
    };
    if (f.grad_b && mismatch(f.grad_b(a), fd_grad_b(f, a)))
        throw_validation("derivative-mismatch",
                         "functional '" + f.name +
                             "': analytic B-derivative disagrees with finite differences");
    if (f.grad_theta && mismatch(f.grad_theta(a), fd_grad_theta(f, a)))
        throw_validation("derivative-mismatch",
                         "functional '" + f.name +
                             "': analytic theta-derivative disagrees with finite differences");
}

void require_converged(const FitResult& fit) {
    if (!fit.converged)
        throw_validation("fit-not-converged",
                         "summary estimation requires a converged fit");
}

}  // namespace

Eigen::MatrixXd apply_fixed_columns(const Eigen::MatrixXd& x,
                                    const std::vector<std::pair<int, double>>& fixed_columns) {
    return with_fixed_columns(x, fixed_columns);
}

Eigen::VectorXd functional_grad_b(const Functional& functional, const FunctionalArgs& args) {
    return functional.grad_b ? functional.grad_b(args) : fd_grad_b(functional, args);
}

Eigen::VectorXd functional_grad_theta(const Functional& functional, const FunctionalArgs& args) {
    return functional.grad_theta ? functional.grad_theta(args) : fd_grad_theta(functional, args);
}

std::vector<double> functional_values(const ClusterDataset& dataset, const FitResult& fit,
                                      const Functional& functional) {
    require_converged(fit);
    std::vector<double> values;
    values.reserve(dataset.clusters.size());
    std::vector<int> out_of_range;
    bool checked = false;
    for (size_t i = 0; i < dataset.clusters.size(); ++i) {
        const Cluster& cluster = dataset.clusters[i];
        Eigen::VectorXd theta_m;
        try {
            theta_m = theta_at_cluster(fit.theta, cluster);
        } catch (const Error&) {
            out_of_range.push_back(static_cast<int>(i));
            continue;
        }
        const Eigen::MatrixXd x = with_fixed_columns(cluster.x, functional.fixed_columns);
        const FunctionalArgs args{x, cluster.z, theta_m, fit.params};
        if (!checked) {
            check_derivative_rules(functional, args);
            checked = true;
        }
        const double value = functional.evaluate(args);
        if (!std::isfinite(value))
            throw_numerical("non-finite-value", "functional '" + functional.name +
                                                    "' not finite at cluster " +
                                                    std::to_string(i + 1));
        values.push_back(value);
    }
    if (!out_of_range.empty()) {
        std::ostringstream msg;
        msg << "curve estimate undefined at the smoothing variable of cluster(s):";
        for (int i : out_of_range) msg << ' ' << i + 1;
        throw_validation("extrapolation", msg.str());
    }
    return values;
}

SummaryEstimate kappa_semi(const ClusterDataset& dataset, const FitResult& fit,
                           const Functional& functional) {
    const std::vector<double> values = functional_values(dataset, fit, functional);
    SummaryEstimate est;
    est.kappa = canonical_mean(values);
    est.method = "semi";
    est.n_used = static_cast<int>(values.size());
    return est;
}

double cross_covariance(const ClusterDataset& dataset, const FitResult& fit, const Functional& f1,
                        const Functional& f2) {
    const std::vector<double> a = functional_values(dataset, fit, f1);
    const std::vector<double> b = functional_values(dataset, fit, f2);
    const double mean_a = canonical_mean(a);
    const double mean_b = canonical_mean(b);
    std::vector<double> products(a.size());
    for (size_t i = 0; i < a.size(); ++i) products[i] = (a[i] - mean_a) * (b[i] - mean_b);
    const double n = static_cast<double>(a.size());
    return canonical_mean(std::move(products)) * n / (n - 1.0);
}

std::vector<SummaryEstimate> survival_curve(const ClusterDataset& dataset, const FitResult& fit,
                                            double a, const Eigen::VectorXd& c_grid,
                                            int month_col, int knot_col) {
    std::vector<std::pair<int, double>> fixed;
    if (month_col >= 0) fixed.emplace_back(month_col, a);
    if (knot_col >= 0) fixed.emplace_back(knot_col, std::max(a - 4.0, 0.0));
    std::vector<SummaryEstimate> curve;
    curve.reserve(c_grid.size());
    for (int k = 0; k < c_grid.size(); ++k) {
        SummaryEstimate est =
            kappa_semi(dataset, fit, make_functional("survival", c_grid[k], fixed));
        est.threshold = c_grid[k];
        curve.push_back(std::move(est));
    }
    return curve;
}

SummaryEstimate kappa_gen(const GenRule& rule, const SummaryEstimate& first,
                          const SummaryEstimate& second, double cov12) {
    if (!first.has_variance() || !second.has_variance())
        throw_validation("invalid-config",
                         "delta-method composition needs variances on both inputs");
    if (first.n_used != second.n_used)
        throw_validation("invalid-config",
                         "delta-method composition needs estimates from the same dataset");
    SummaryEstimate est;
    est.method = "delta";
    est.n_used = first.n_used;
    est.kappa = rule.g(first.kappa, second.kappa);
    const double d1 = rule.g1(first.kappa, second.kappa);
    const double d2 = rule.g2(first.kappa, second.kappa);
    const double v = d1 * d1 * first.variance + d2 * d2 * second.variance +
                     2.0 * d1 * d2 * cov12;
    est.set_variance(std::max(v, 0.0), "plugin");
    return est;
}

LogisticFit fit_logistic(const Eigen::MatrixXd& features, const Eigen::VectorXi& delta) {
    const int n = static_cast<int>(features.rows());
    const int d = static_cast<int>(features.cols());
    if (delta.size() != n)
        throw_validation("invalid-dimensions", "indicator length does not match feature rows");
    const int ones = delta.sum();
    if (ones == 0 || ones == n)
        throw_validation("separation",
                         "observed-data indicator takes a single value; the logistic "
                         "model is not identified");
    {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(features);
        qr.setThreshold(1e-10);
        if (qr.rank() < d) {
            std::ostringstream msg;
            msg << "feature matrix is rank deficient; dependent column(s):";
            const auto perm = qr.colsPermutation().indices();
            for (Eigen::Index k = qr.rank(); k < d; ++k) msg << ' ' << perm[k] + 1;
            throw_validation("rank-deficiency", msg.str());
        }
    }

    LogisticFit out;
    out.zeta = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd pi(n), weight(n);
    for (int iter = 1; iter <= 100; ++iter) {
        for (int i = 0; i < n; ++i) {
            const double eta = features.row(i).dot(out.zeta);
            pi[i] = 1.0 / (1.0 + std::exp(-eta));
            weight[i] = pi[i] * (1.0 - pi[i]);
        }
        const Eigen::VectorXd grad =
            features.transpose() * (delta.cast<double>() - pi);
        out.iterations = iter;
        if (grad.lpNorm<Eigen::Infinity>() < 1e-10) break;
        if (weight.maxCoeff() < 1e-12 || out.zeta.lpNorm<Eigen::Infinity>() > 50.0)
            throw_numerical("separation",
                            "logistic weights underflow everywhere; the classes are separated");
        const Eigen::MatrixXd hessian =
            features.transpose() * weight.asDiagonal() * features;
        const Eigen::VectorXd step = hessian.ldlt().solve(grad);
        if (!step.allFinite())
            throw_numerical("separation", "logistic update is not finite");
        out.zeta += step;
    }
    const Eigen::MatrixXd mean_info =
        (features.transpose() * weight.asDiagonal() * features) / n;
    const Eigen::MatrixXd info_inv = mean_info.inverse();
    out.psi.resize(n, d);
    for (int i = 0; i < n; ++i)
        out.psi.row(i) = (info_inv * features.row(i).transpose() * (delta[i] - pi[i])).transpose();
    return out;
}

PiModel fit_pi_model(const ClusterDataset& dataset) {
    PiModel model;
    model.features = [](const Eigen::MatrixXd& x, const Eigen::VectorXd& z) {
        Eigen::VectorXd f(x.cols() + 2);
        f.head(x.cols()) = x.colwise().mean().transpose();
        f[x.cols()] = z.mean();
        f[x.cols() + 1] = 1.0;
        return f;
    };
    const int n = static_cast<int>(dataset.clusters.size());
    const int d = dataset.p + 2;
    Eigen::MatrixXd features(n, d);
    Eigen::VectorXi delta(n);
    for (int i = 0; i < n; ++i) {
        features.row(i) =
            model.features(dataset.clusters[i].x, dataset.clusters[i].z).transpose();
        delta[i] = dataset.clusters[i].delta;
    }
    LogisticFit lf = fit_logistic(features, delta);
    model.zeta = std::move(lf.zeta);
    model.psi = std::move(lf.psi);
    return model;
}

double imputed_value(const ResponseFunctional& rf, const ClusterDataset& dataset,
                     int cluster_index, const FitResult& fit) {
    const Cluster& cluster = dataset.clusters[cluster_index];
    const Eigen::MatrixXd x = with_fixed_columns(cluster.x, rf.fixed_columns);
    const Eigen::VectorXd theta_m = theta_at_cluster(fit.theta, cluster);
    if (rf.conditional_mean)
        return rf.conditional_mean({x, cluster.z, theta_m, fit.params});
    // Monte Carlo fallback over the fitted Gaussian law, seeded per cluster.
    // Spectral exchangeable square root: the centered part of an iid normal
    // vector scaled by sigma*sqrt(1-rho) plus its mean scaled by
    // sigma*sqrt(1+(q-1)rho) has exactly the exchangeable covariance.
    const int q = static_cast<int>(x.rows());
    const Eigen::VectorXd mu =
        x * fit.params.beta + expand_to_slots(theta_m, dataset.R);
    const double rho = fit.params.rho;
    const double sd_within = std::sqrt(fit.params.sigma2 * (1.0 - rho));
    const double sd_between = std::sqrt(fit.params.sigma2 * (1.0 + (q - 1) * rho));
    Rng rng = Rng::stream(rf.mc_seed, static_cast<std::uint64_t>(cluster_index));
    double total = 0.0;
    Eigen::VectorXd draw(q);
    for (int rep = 0; rep < rf.mc_draws; ++rep) {
        double mean_g = 0.0;
        for (int s = 0; s < q; ++s) {
            draw[s] = rng.normal();
            mean_g += draw[s];
        }
        mean_g /= q;
        for (int s = 0; s < q; ++s)
            draw[s] = mu[s] + sd_within * (draw[s] - mean_g) + sd_between * mean_g;
        total += rf.g(draw);
    }
    return total / rf.mc_draws;
}

SummaryEstimate kappa_imputed(const ClusterDataset& dataset, const FitResult& fit,
                              const ResponseFunctional& rf) {
    require_converged(fit);
    std::vector<double> terms(dataset.clusters.size());
    for (size_t i = 0; i < dataset.clusters.size(); ++i) {
        const Cluster& cluster = dataset.clusters[i];
        terms[i] = cluster.delta == 1 ? rf.g(cluster.y)
                                      : imputed_value(rf, dataset, static_cast<int>(i), fit);
    }
    SummaryEstimate est;
    est.kappa = canonical_mean(std::move(terms));
    est.method = "imputed";
    est.n_used = static_cast<int>(dataset.clusters.size());
    return est;
}

SummaryEstimate kappa_ipw(const ClusterDataset& dataset, const FitResult& fit,
                          const ResponseFunctional& rf, const PiModel& pi_model) {
    require_converged(fit);
    const int n = static_cast<int>(dataset.clusters.size());
    std::vector<double> terms(n);
    int clipped = 0;
    for (int i = 0; i < n; ++i) {
        const Cluster& cluster = dataset.clusters[i];
        const double pi = pi_model.probability(cluster.x, cluster.z);
        if (pi <= 1e-6 || pi >= 1.0 - 1e-6) ++clipped;
        const double fhat = imputed_value(rf, dataset, i, fit);
        const double ratio = cluster.delta / pi;
        terms[i] = cluster.delta == 1 ? ratio * rf.g(cluster.y) + (1.0 - ratio) * fhat : fhat;
    }
    SummaryEstimate est;
    est.kappa = canonical_mean(terms);
    est.method = "ipw";
    est.n_used = n;
    std::vector<double> sq(terms.size());
    for (size_t i = 0; i < terms.size(); ++i) {
        const double d = terms[i] - est.kappa;
        sq[i] = d * d;
    }
    est.set_variance(canonical_mean(std::move(sq)) * n / (n - 1.0), "plugin");
    if (clipped > n / 20)
        est.warnings.push_back("inverse-probability weights clipped for " +
                               std::to_string(clipped) + " of " + std::to_string(n) +
                               " clusters; weighting may be unstable");
    return est;
}

ResponseFunctional make_response_functional(const std::string& name, double threshold) {
    ResponseFunctional rf;
    rf.name = name;
    if (name == "mean") {
        rf.g = [](const Eigen::VectorXd& y) { return y.mean(); };
        // Linear in the response, so the conditional mean is exact.
        rf.conditional_mean = [f = make_functional("mean")](const FunctionalArgs& a) {
            return f.evaluate(a);
        };
    } else if (name == "second-moment") {
        rf.g = [](const Eigen::VectorXd& y) { return y.squaredNorm() / y.size(); };
        rf.conditional_mean = [f = make_functional("second-moment")](const FunctionalArgs& a) {
            return f.evaluate(a);
        };
    } else if (name == "survival" || name == "indicator-above-c") {
        const double c = threshold;
        rf.g = [c](const Eigen::VectorXd& y) {
            double total = 0.0;
            for (int s = 0; s < y.size(); ++s) total += (y[s] > c) ? 1.0 : 0.0;
            return total / y.size();
        };
        rf.conditional_mean = [f = make_functional("survival", c)](const FunctionalArgs& a) {
            return f.evaluate(a);
        };
    } else {
        throw_validation("invalid-config", "unknown response functional '" + name + "'");
    }
    return rf;
}

}  // namespace semirep

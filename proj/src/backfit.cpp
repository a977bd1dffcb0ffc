#include "semirep/backfit.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

#include "semirep/errors.hpp"

namespace semirep {

namespace {

Eigen::VectorXd theta_at_cluster(const ThetaEstimate& theta, const Cluster& cluster) {
    Eigen::VectorXd vals(cluster.z.size());
    for (Eigen::Index j = 0; j < cluster.z.size(); ++j) vals[j] = theta.value_at(cluster.z[j]);
    return vals;
}

// Sufficient statistics for the partial residuals e_i = y_i - N theta(Z_i):
// every GLS / profile-likelihood quantity below is a function of these alone.
struct GlsAggregates {
    Eigen::MatrixXd xtx;      // sum X^T X
    Eigen::MatrixXd sx_sxt;   // sum (X^T 1)(X^T 1)^T
    Eigen::VectorXd xte;      // sum X^T e
    Eigen::VectorXd sx_se;    // sum (X^T 1) * (1^T e)
    double ete = 0.0;         // sum e^T e
    double se2 = 0.0;         // sum (1^T e)^2
    int n_observed = 0;
    int q = 0;
};

GlsAggregates accumulate(const ClusterDataset& dataset, const ThetaEstimate& theta) {
    const int p = dataset.p;
    GlsAggregates agg;
    agg.xtx = Eigen::MatrixXd::Zero(p, p);
    agg.sx_sxt = Eigen::MatrixXd::Zero(p, p);
    agg.xte = Eigen::VectorXd::Zero(p);
    agg.sx_se = Eigen::VectorXd::Zero(p);
    agg.q = dataset.q();
    for (const auto& cluster : dataset.clusters) {
        if (cluster.delta == 0) continue;
        const Eigen::VectorXd slots = expand_to_slots(theta_at_cluster(theta, cluster), dataset.R);
        const Eigen::VectorXd e = cluster.y - slots;
        const Eigen::VectorXd sx = cluster.x.colwise().sum();
        const double se = e.sum();
        agg.xtx.noalias() += cluster.x.transpose() * cluster.x;
        agg.sx_sxt.noalias() += sx * sx.transpose();
        agg.xte.noalias() += cluster.x.transpose() * e;
        agg.sx_se.noalias() += sx * se;
        agg.ete += e.squaredNorm();
        agg.se2 += se * se;
        ++agg.n_observed;
    }
    if (agg.n_observed == 0)
        throw_validation("empty-dataset", "update_params requires at least one observed cluster");
    return agg;
}

double shrink_factor(double rho, int q) { return rho / (1.0 + (q - 1) * rho); }

Eigen::VectorXd gls_beta(const GlsAggregates& agg, double rho) {
    const double c = shrink_factor(rho, agg.q);
    const Eigen::MatrixXd m = agg.xtx - c * agg.sx_sxt;
    const Eigen::VectorXd rhs = agg.xte - c * agg.sx_se;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m);
    qr.setThreshold(1e-12);
    if (qr.rank() < m.cols()) {
        std::ostringstream msg;
        msg << "GLS cross-product is rank deficient; dependent column(s):";
        const auto perm = qr.colsPermutation().indices();
        for (Eigen::Index k = qr.rank(); k < m.cols(); ++k) msg << ' ' << perm[k];
        throw_numerical("rank-deficiency", msg.str());
    }
    return qr.solve(rhs);
}

// Residual quadratic form sum_i r^T C(rho)^{-1} r at the GLS optimum
// beta(rho), using r^T C^{-1} r = e^T C^{-1} e - beta^T X^T C^{-1} e.
double profile_quad(const GlsAggregates& agg, double rho, const Eigen::VectorXd& beta) {
    const double c = shrink_factor(rho, agg.q);
    const double ece = agg.ete - c * agg.se2;
    const double bxe = beta.dot(agg.xte - c * agg.sx_se);
    return (ece - bxe) / (1.0 - rho);
}

double correlation_logdet(double rho, int q) {
    return (q - 1) * std::log(1.0 - rho) + std::log(1.0 + (q - 1) * rho);
}

struct ProfilePoint {
    Eigen::VectorXd beta;
    double sigma2 = 0.0;
    double loglik = 0.0;
};

ProfilePoint profile_at(const GlsAggregates& agg, double rho) {
    ProfilePoint out;
    out.beta = gls_beta(agg, rho);
    const double quad = profile_quad(agg, rho, out.beta);
    const double total_obs = static_cast<double>(agg.n_observed) * agg.q;
    if (!(quad > 0.0))
        throw_numerical("degenerate-variance",
                        "residual quadratic form is not positive; variance update impossible");
    out.sigma2 = quad / total_obs;
    out.loglik = -0.5 * (total_obs * 1.8378770664093454836 + total_obs * std::log(out.sigma2) +
                         agg.n_observed * correlation_logdet(rho, agg.q) + total_obs);
    return out;
}

// rho component of Sum delta L_B at the profile point (beta(rho), sigma2(rho), rho):
// by the envelope argument this equals d/d rho of the profile loglikelihood.
double profile_rho_score(const ClusterDataset& dataset, const ThetaEstimate& theta,
                         const GlsAggregates& agg, double rho) {
    const ProfilePoint point = profile_at(agg, rho);
    ModelParams params;
    params.beta = point.beta;
    params.sigma2 = point.sigma2;
    params.rho = rho;
    double score = 0.0;
    for (const auto& cluster : dataset.clusters) {
        if (cluster.delta == 0) continue;
        const Eigen::VectorXd vals =
            expand_to_slots(theta_at_cluster(theta, cluster), dataset.R);
        score += cluster_derivatives(cluster, vals, params).l_b[dataset.p + 1];
    }
    return score;
}

double golden_section_max(const std::function<double(double)>& f, double lo, double hi,
                          double width) {
    const double inv_phi = 0.6180339887498949;
    double a = lo, b = hi;
    double x1 = b - inv_phi * (b - a);
    double x2 = a + inv_phi * (b - a);
    double f1 = f(x1), f2 = f(x2);
    while (b - a > width) {
        if (f1 < f2) {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        }
    }
    return 0.5 * (a + b);
}

}  // namespace

ModelParams update_params(const ClusterDataset& dataset, const ThetaEstimate& theta,
                          const ModelParams& current, bool update_variance,
                          std::vector<std::string>* warnings) {
    dataset.validate();
    validate_params(current, dataset.q());
    if (current.p() != dataset.p)
        throw_validation("invalid-dimensions", "beta length does not match dataset covariates");
    const GlsAggregates agg = accumulate(dataset, theta);
    const int q = agg.q;

    ModelParams result = current;
    if (!update_variance || q == 1) {
        // GLS step only (a single-slot cluster carries no correlation
        // information, so rho stays put and sigma2 comes from the closed form).
        result.beta = gls_beta(agg, update_variance ? 0.0 : current.rho);
        if (update_variance) {
            const ProfilePoint point = profile_at(agg, 0.0);
            result.beta = point.beta;
            result.sigma2 = point.sigma2;
        }
        return result;
    }

    const double margin = 1e-8;
    const double lo = -1.0 / (q - 1) + margin;
    const double hi = 1.0 - margin;
    const auto objective = [&](double rho) { return profile_at(agg, rho).loglik; };

    Eigen::VectorXd previous = current.pack();
    bool at_boundary = false;
    for (int cycle = 0; cycle < 20; ++cycle) {
        double rho = golden_section_max(objective, lo, hi, 1e-12);
        const bool pinned = (rho - lo < 1e-9) || (hi - rho < 1e-9);
        at_boundary = at_boundary || pinned;
        // Newton polish on the analytic rho-score so the full parametric
        // estimating equation is zeroed to well below 1e-8. A pinned search
        // has no interior root, so the polish is skipped there.
        for (int it = 0; !pinned && it < 8; ++it) {
            const double score = profile_rho_score(dataset, theta, agg, rho);
            if (std::abs(score) < 1e-10) break;
            const double step = 1e-6 * (1.0 + std::abs(rho));
            const double hi_rho = std::min(rho + step, hi);
            const double lo_rho = std::max(rho - step, lo);
            const double slope = (profile_rho_score(dataset, theta, agg, hi_rho) -
                                  profile_rho_score(dataset, theta, agg, lo_rho)) /
                                 (hi_rho - lo_rho);
            if (!(std::abs(slope) > 0.0)) break;
            rho = std::clamp(rho - score / slope, lo, hi);
        }
        const ProfilePoint point = profile_at(agg, rho);
        result.beta = point.beta;
        result.sigma2 = point.sigma2;
        result.rho = rho;
        const Eigen::VectorXd packed = result.pack();
        if ((packed - previous).lpNorm<Eigen::Infinity>() < 1e-10) break;
        previous = packed;
    }
    if (warnings && at_boundary)
        warnings->push_back("rho search ended at its bracket boundary; "
                            "the exchangeable correlation may be at the edge of validity");
    return result;
}

Eigen::VectorXd parametric_score(const ClusterDataset& dataset, const ThetaEstimate& theta,
                                 const ModelParams& params) {
    Eigen::VectorXd score = Eigen::VectorXd::Zero(params.dim());
    for (const auto& cluster : dataset.clusters) {
        if (cluster.delta == 0) continue;
        const Eigen::VectorXd vals =
            expand_to_slots(theta_at_cluster(theta, cluster), dataset.R);
        score += cluster_derivatives(cluster, vals, params).l_b;
    }
    return score;
}

double total_loglik(const ClusterDataset& dataset, const ThetaEstimate& theta,
                    const ModelParams& params) {
    double total = 0.0;
    for (const auto& cluster : dataset.clusters) {
        if (cluster.delta == 0) continue;
        const Eigen::VectorXd vals =
            expand_to_slots(theta_at_cluster(theta, cluster), dataset.R);
        total += cluster_loglik(cluster, vals, params);
    }
    return total;
}

namespace {

// theta absorbs any intercept, so near-constant covariate columns destroy
// identifiability; reject them up front with the column named.
void check_identifiability(const ClusterDataset& dataset) {
    const int p = dataset.p;
    Eigen::VectorXd dot_one = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd norm2 = Eigen::VectorXd::Zero(p);
    double rows = 0.0;
    for (const auto& cluster : dataset.clusters) {
        if (cluster.delta == 0) continue;
        dot_one += cluster.x.colwise().sum();
        norm2 += cluster.x.colwise().squaredNorm();
        rows += static_cast<double>(cluster.x.rows());
    }
    for (int col = 0; col < p; ++col) {
        if (norm2[col] == 0.0)
            throw_validation("degenerate-covariate",
                             "covariate column " + std::to_string(col + 1) +
                                 " is identically zero; the smooth term absorbs any intercept");
        const double cosine = std::abs(dot_one[col]) / std::sqrt(norm2[col] * rows);
        if (cosine > 1.0 - 1e-8)
            throw_validation("degenerate-covariate",
                             "covariate column " + std::to_string(col + 1) +
                                 " is (near-)constant; the smooth term absorbs any intercept");
    }
}

ModelParams initial_params(const ClusterDataset& dataset) {
    int rows = 0;
    for (const auto& cluster : dataset.clusters)
        if (cluster.delta == 1) rows += static_cast<int>(cluster.y.size());
    Eigen::MatrixXd x(rows, dataset.p);
    Eigen::VectorXd y(rows);
    int at = 0;
    for (const auto& cluster : dataset.clusters) {
        if (cluster.delta == 0) continue;
        const int nq = static_cast<int>(cluster.y.size());
        x.middleRows(at, nq) = cluster.x;
        y.segment(at, nq) = cluster.y;
        at += nq;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    qr.setThreshold(1e-10);
    if (qr.rank() < x.cols()) {
        std::ostringstream msg;
        msg << "pooled covariate matrix is rank deficient; dependent column(s):";
        const auto perm = qr.colsPermutation().indices();
        for (Eigen::Index k = qr.rank(); k < x.cols(); ++k) msg << ' ' << perm[k] + 1;
        throw_validation("rank-deficiency", msg.str());
    }
    ModelParams params;
    params.beta = qr.solve(y);
    const double rss = (y - x * params.beta).squaredNorm();
    params.sigma2 = std::max(rss / rows, 1e-12);
    params.rho = 0.0;
    return params;
}

}  // namespace

FitResult fit(const ClusterDataset& dataset, const FitConfig& config) {
    dataset.validate();
    const int n_obs = static_cast<int>(dataset.n_observed());
    if (n_obs < dataset.p + 3)
        throw_validation("too-few-clusters",
                         "need at least p + 3 = " + std::to_string(dataset.p + 3) +
                             " observed clusters, have " + std::to_string(n_obs));
    check_identifiability(dataset);

    FitResult result;
    result.params = initial_params(dataset);

    if (config.h > 0.0) {
        result.h = config.h;
    } else {
        BandwidthConfig bw = config.bandwidth;
        bw.profile = config.profile;
        result.bandwidth = select_bandwidth(dataset, result.params, bw);
        result.bandwidth_selected = true;
        result.h = result.bandwidth.h;
    }

    ProfileEngine engine(dataset, config.profile);
    ThetaEstimate theta = ThetaEstimate::zero(engine.eval_points(), result.h);
    double previous_loglik = -std::numeric_limits<double>::infinity();

    for (int iter = 1; iter <= config.max_outer; ++iter) {
        ThetaProfileResult profiled =
            engine.solve(result.params, result.h, iter > 1 ? &theta : nullptr);
        // Compare against the previous curve at the new eval points; dropped
        // display nodes can change the eval set between passes.
        double theta_change = 0.0;
        for (int e = 0; e < profiled.theta.size(); ++e)
            theta_change = std::max(theta_change,
                                    std::abs(profiled.theta.values[e] -
                                             theta.value_at_clamped(profiled.theta.eval_points[e])));
        theta = std::move(profiled.theta);
        result.profile_diagnostics = std::move(profiled.diagnostics);

        const ModelParams updated =
            update_params(dataset, theta, result.params, true, &result.warnings);
        const double param_change =
            (updated.pack() - result.params.pack()).lpNorm<Eigen::Infinity>();
        result.params = updated;

        const double loglik = total_loglik(dataset, theta, result.params);
        if (loglik < previous_loglik - 1e-6)
            result.warnings.push_back("loglikelihood decreased by " +
                                      std::to_string(previous_loglik - loglik) + " at iteration " +
                                      std::to_string(iter));
        previous_loglik = loglik;

        result.trace.push_back({iter, param_change, theta_change, loglik});
        result.iterations = iter;
        result.final_param_change = param_change;
        result.final_theta_change = theta_change;
        result.loglik = loglik;
        if (std::max(param_change, theta_change) < config.tol_outer) {
            result.converged = true;
            break;
        }
    }
    if (!result.converged)
        result.warnings.push_back("backfit did not converge within " +
                                  std::to_string(config.max_outer) + " outer iterations");
    result.theta = std::move(theta);
    return result;
}

}  // namespace semirep

#include "semirep/bandwidth.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "semirep/errors.hpp"

namespace semirep {

BandwidthSelection select_bandwidth(const ClusterDataset& dataset, const ModelParams& params,
                                    const BandwidthConfig& config) {
    dataset.validate();
    const int n_obs = dataset.n_observed();
    if (n_obs < 10)
        throw_validation("too-few-clusters",
                         "bandwidth selection needs at least 10 delta=1 clusters, have " +
                             std::to_string(n_obs));
    const double range = dataset.z_max() - dataset.z_min();
    if (!(range > 0.0))
        throw_validation("degenerate-covariate", "all smoothing covariates coincide");
    if (config.candidates < 1)
        throw_validation("invalid-config", "candidate grid must have at least one point");

    BandwidthSelection out;
    out.candidates.resize(static_cast<size_t>(config.candidates));
    const double lo = config.lo_frac * range;
    const double hi = config.hi_frac * range;
    for (int c = 0; c < config.candidates; ++c) {
        const double t =
            config.candidates == 1 ? 0.0 : static_cast<double>(c) / (config.candidates - 1);
        out.candidates[static_cast<size_t>(c)] = lo * std::pow(hi / lo, t);
    }
    out.cv_loglik.assign(static_cast<size_t>(config.candidates),
                         std::numeric_limits<double>::quiet_NaN());

    validate_params(params, dataset.q());
    const ProfileEngine engine(dataset, config.profile);
    double best_score = -std::numeric_limits<double>::infinity();
    int best = -1;
    ThetaEstimate carry;  // warm start chained across ascending candidates
    bool have_carry = false;
    for (int c = 0; c < config.candidates; ++c) {
        const double h = out.candidates[static_cast<size_t>(c)];
        try {
            const ThetaProfileResult full =
                engine.solve(params, h, have_carry ? &carry : nullptr);
            carry = full.theta;
            have_carry = true;
            double score = 0.0;
            for (int i = 0; i < dataset.n(); ++i) {
                const Cluster& cluster = dataset.clusters[static_cast<size_t>(i)];
                if (cluster.delta != 1) continue;
                const ThetaProfileResult fold = engine.solve(params, h, &full.theta, i);
                Eigen::VectorXd theta_vals(dataset.m);
                for (int j = 0; j < dataset.m; ++j) {
                    if (!fold.theta.has_exact(cluster.z[j]))
                        throw_numerical("no-data-in-window",
                                        "held-out prediction point lost its window");
                    theta_vals[j] = fold.theta.value_at(cluster.z[j]);
                }
                score += cluster_loglik(cluster, theta_vals, params);
            }
            out.cv_loglik[static_cast<size_t>(c)] = score;
            if (score > best_score) {
                best_score = score;
                best = c;
            }
        } catch (const Error&) {
            out.failed_candidates.push_back(h);
        }
    }
    if (best < 0) {
        std::string failed;
        for (double h : out.failed_candidates) failed += " " + std::to_string(h);
        throw_numerical("bandwidth-selection",
                        "every candidate bandwidth failed (empty or degenerate windows):" +
                            failed);
    }
    out.h_cv = out.candidates[static_cast<size_t>(best)];
    out.undersmooth_factor = std::pow(static_cast<double>(n_obs), -config.undersmooth_exponent);
    out.h = out.h_cv * out.undersmooth_factor;
    return out;
}

}  // namespace semirep

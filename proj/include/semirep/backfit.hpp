#pragma once

#include <string>
#include <vector>

#include "semirep/bandwidth.hpp"
#include "semirep/cluster_data.hpp"
#include "semirep/gaussian_model.hpp"
#include "semirep/local_fit.hpp"

namespace semirep {

struct FitConfig {
    double h = 0.0;  // > 0 fixes the bandwidth; 0 selects by cross-validation
    double tol_outer = 1e-6;
    int max_outer = 50;
    ProfileConfig profile;
    BandwidthConfig bandwidth;
};

struct FitIterationRecord {
    int iteration = 0;
    double param_change = 0.0;
    double theta_change = 0.0;
    double loglik = 0.0;
};

struct FitResult {
    ModelParams params;
    ThetaEstimate theta;
    double h = 0.0;
    BandwidthSelection bandwidth;  // populated when the bandwidth was selected
    bool bandwidth_selected = false;
    int iterations = 0;
    bool converged = false;
    double final_param_change = 0.0;
    double final_theta_change = 0.0;
    double loglik = 0.0;
    std::vector<FitIterationRecord> trace;
    ProfileDiagnostics profile_diagnostics;  // from the last smoothing pass
    std::vector<std::string> warnings;
};

// Maximizes the summed Gaussian loglikelihood over (beta, sigma2, rho) with
// the curve held fixed: generalized least squares for beta at the current
// correlation, closed-form sigma2(rho), golden-section search over rho with a
// Newton polish on the analytic rho-score, cycled until the parameter change
// drops below 1e-10. update_variance=false freezes (sigma2, rho) and performs
// the GLS step only. Boundary and degeneracy messages append to *warnings.
[[nodiscard]] ModelParams update_params(const ClusterDataset& dataset, const ThetaEstimate& theta,
                                        const ModelParams& current, bool update_variance = true,
                                        std::vector<std::string>* warnings = nullptr);

// Full backfit: initialize from pooled OLS with a zero curve, alternate the
// curve profile and update_params until max(parameter change, curve
// sup-change) < tol_outer. Non-convergence is reported through the flag and
// trace, never an exception.
[[nodiscard]] FitResult fit(const ClusterDataset& dataset, const FitConfig& config = {});

// Observed-data parametric score Sum_i delta_i L_B at (theta, params);
// infinity norm of this vector is the update_params consistency check.
[[nodiscard]] Eigen::VectorXd parametric_score(const ClusterDataset& dataset,
                                               const ThetaEstimate& theta,
                                               const ModelParams& params);

// Summed observed-data loglikelihood at (theta, params).
[[nodiscard]] double total_loglik(const ClusterDataset& dataset, const ThetaEstimate& theta,
                                  const ModelParams& params);

}  // namespace semirep

#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "semirep/cluster_data.hpp"
#include "semirep/gaussian_model.hpp"
#include "semirep/kernel.hpp"
#include "semirep/theta_estimate.hpp"

namespace semirep {

struct ProfileConfig {
    double tol_inner = 1e-8;  // sup-norm sweep-to-sweep stopping
    int max_inner = 100;      // sweep cap
    int grid_points = 101;    // uniform display grid added to the eval set
};

struct ProfileDiagnostics {
    bool converged = true;
    int sweeps = 0;
    double final_change = 0.0;
    std::vector<double> dropped_points;   // display nodes with empty/degenerate windows
    std::vector<double> boundary_points;  // eval points outside [min Z + h, max Z - h]
    std::vector<std::string> warnings;
};

struct ThetaProfileResult {
    ThetaEstimate theta;
    ProfileDiagnostics diagnostics;
};

// One local estimating-equation solve at z: position j's theta argument is
// replaced by the line alpha0 + alpha1 (Z_ij - z) while every other position
// uses theta_current. Affine likelihood instances (the Gaussian one) get an
// exact 2x2 solve; otherwise damped Newton to residual < 1e-10.
[[nodiscard]] std::pair<double, double> local_linear_solve(
    const ClusterDataset& dataset, double z, const ThetaEstimate& theta_current,
    const ModelParams& params, double h,
    const ClusterLikelihood& likelihood = gaussian_likelihood());

// Full profile: sweeps of local solves over the eval set until the sup-norm
// change between sweeps drops below tol_inner. theta_init may be null (zeros).
[[nodiscard]] ThetaProfileResult theta_profile(
    const ClusterDataset& dataset, const ModelParams& params, double h,
    const ThetaEstimate* theta_init = nullptr, const ProfileConfig& config = {},
    const ClusterLikelihood& likelihood = gaussian_likelihood());

// Reusable profiling workspace: the eval set, sorted data points and window
// index are built once per dataset, then solved repeatedly at different
// parameter values (backfitting) or with one cluster held out (bandwidth CV).
class ProfileEngine {
public:
    ProfileEngine(const ClusterDataset& dataset, const ProfileConfig& config,
                  const ClusterLikelihood& likelihood = gaussian_likelihood());
    ~ProfileEngine();
    ProfileEngine(const ProfileEngine&) = delete;
    ProfileEngine& operator=(const ProfileEngine&) = delete;

    // exclude_cluster >= 0 removes that cluster's data (not its eval points),
    // giving the leave-one-cluster-out curve used by bandwidth selection.
    [[nodiscard]] ThetaProfileResult solve(const ModelParams& params, double h,
                                           const ThetaEstimate* warm_start = nullptr,
                                           int exclude_cluster = -1) const;

    [[nodiscard]] const Eigen::VectorXd& eval_points() const;

private:
    struct Impl;
    [[nodiscard]] ThetaProfileResult solve_generic_(const ModelParams& params, double h,
                                                    const ThetaEstimate* warm_start,
                                                    int exclude_cluster) const;
    std::unique_ptr<Impl> impl_;
};

}  // namespace semirep

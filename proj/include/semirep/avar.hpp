#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "semirep/backfit.hpp"
#include "semirep/cluster_data.hpp"
#include "semirep/rng.hpp"
#include "semirep/summaries.hpp"

namespace semirep {

// Piecewise-linear curve on a strictly increasing node set; evaluation off the
// node range clamps to the boundary value.
struct Grid1D {
    Eigen::VectorXd nodes;
    Eigen::VectorXd values;

    [[nodiscard]] int size() const { return static_cast<int>(nodes.size()); }
    [[nodiscard]] double value_at(double z) const;
};

// Vector-valued curve: row s of values holds the vector attached to nodes[s].
struct GridVec {
    Eigen::VectorXd nodes;
    Eigen::MatrixXd values;  // size() x dim

    [[nodiscard]] int size() const { return static_cast<int>(nodes.size()); }
    [[nodiscard]] int dim() const { return static_cast<int>(values.cols()); }
    [[nodiscard]] Eigen::VectorXd value_at(double z) const;
};

// Bilinear surface on the tensor grid nodes1 x nodes2, clamped off-range.
struct Grid2D {
    Eigen::VectorXd nodes1;
    Eigen::VectorXd nodes2;
    Eigen::MatrixXd values;  // nodes1.size() x nodes2.size()

    // Row interpolated at z1, one entry per nodes2 node.
    [[nodiscard]] Eigen::VectorXd row_at(double z1) const;
    [[nodiscard]] double value_at(double z1, double z2) const;
};

// Which expectation weights the functional-derivative pieces M2, C1, C2, D:
// w = 1 for the plug-in estimator, w = 1 - delta for the imputation estimator.
enum class WeightMode { standard, imputed };

struct AvarConfig {
    int grid_points = 41;         // collocation nodes over the data range
    double trim_fraction = 0.01;  // drop end nodes with pooled density < frac * max
    // Per-position kernel scales for every density / regression estimate below;
    // empty selects the Silverman rule per position. Pinning them makes the
    // estimates invariant under dataset duplication.
    Eigen::VectorXd kde_bandwidths;
};

// Silverman rule-of-thumb bandwidth 0.9 min(sd, IQR/1.34) n^{-1/5}, the default
// scale for the kernel density and regression estimates of the variance pieces.
[[nodiscard]] double silverman_bandwidth(const Eigen::VectorXd& sample);

// Uniform collocation grid over the data range of the smoothing variable.
// grid.values carries the pooled kernel density estimate at the kept nodes;
// contiguous end nodes with density below trim_fraction * max are removed to
// keep boundary noise out of the variance integrals, and the removed density
// mass is reported.
struct GridReport {
    Grid1D grid;
    double trimmed_mass = 0.0;
    int trimmed_nodes = 0;
};
[[nodiscard]] GridReport make_default_grid(const ClusterDataset& dataset,
                                           const AvarConfig& config = {});

// Local curvature scale of the smooth-component estimating equation:
// Omega(z) = sum_j f_j(z) E{delta L_jj_theta | Z_j = z}, estimated by kernel
// density times Nadaraya-Watson regression (the two collapse into one kernel
// average when they share a bandwidth, which they do here). Negative-valued
// for the Gaussian model; any node with |Omega| < 1e-10 raises
// near-singular-omega.
[[nodiscard]] Grid1D estimate_omega(const ClusterDataset& dataset, const FitResult& fit,
                                    const Grid1D& grid, const AvarConfig& config = {});

// Cross-position feedback surface: solves the integral equation
// G(z1, z2) = Q(z1, z2) - integral Q(z1, t) G(t, z2) dt by collocation on the
// grid with trapezoid quadrature, one dense solve shared by every z2 column.
// The solved surface is plugged back into the discrete equation and must
// reproduce it to 1e-8 (integral-equation-failure otherwise; the sup residual
// is reported through residual_out when given).
[[nodiscard]] Grid2D solve_G(const ClusterDataset& dataset, const FitResult& fit,
                             const Grid1D& grid, const AvarConfig& config = {},
                             double* residual_out = nullptr);

// Sensitivity of the smooth component to the parametric one: theta_B(z) solves
// 0 = R(z) + Omega(z) theta_B(z) + integral Q(z, t) Omega(t) theta_B(t) dt,
// where R collects the kernel-weighted cross derivatives of the estimating
// equations. One column per parametric coordinate: (beta..., sigma2, rho), with
// the correlation coordinate dropped when q == 1 (a single observation slot
// carries no information about rho and would make the information singular).
// Plug-back residual must stay below 1e-8.
[[nodiscard]] GridVec solve_theta_B(const ClusterDataset& dataset, const FitResult& fit,
                                    const Grid1D& grid, const AvarConfig& config = {},
                                    double* residual_out = nullptr);

// Assembled influence pieces. b = p+2 coordinates (beta..., sigma2, rho), or
// p+1 when q == 1 (rho dropped). Rows of eps and entries of D for unobserved
// clusters are zero: those clusters never contribute to the delta-weighted
// moments that use them.
struct VarPieces {
    Eigen::MatrixXd M1;   // b x b information, E(delta eps eps^T); must be PD
    Eigen::VectorXd M2;   // b
    Grid1D C1;
    Grid1D C2;
    GridVec theta_B;      // b columns
    Eigen::MatrixXd eps;  // n x b
    Eigen::VectorXd D;    // n
    WeightMode weight_mode = WeightMode::standard;
};

[[nodiscard]] VarPieces compute_var_pieces(const ClusterDataset& dataset, const FitResult& fit,
                                           const Functional& functional, const Grid1D& omega,
                                           const Grid2D& G, const GridVec& theta_B,
                                           WeightMode weight_mode,
                                           const AvarConfig& config = {});

// Plug-in asymptotic variance of the plug-in summary (standard-weight pieces):
// n^-1 sum (F_i - kappa)^2 + M2' M1^-1 M2 + n^-1 sum delta_i D_i^2.
[[nodiscard]] double plug_in_variance(const VarPieces& pieces, const ClusterDataset& dataset,
                                      const FitResult& fit, const Functional& functional);

// Plug-in asymptotic variance of the imputation summary (imputed-weight
// pieces): the sample variance of its estimated influence values
// delta g(y) + (1-delta) F - kappa + M2' M1^-1 delta eps + delta D.
[[nodiscard]] double plug_in_variance(const VarPieces& pieces, const ClusterDataset& dataset,
                                      const FitResult& fit, const ResponseFunctional& rf);

// One-call pipeline: default grid, curvature, integral-equation solves, pieces,
// variance, and the diagnostic numbers the CLI reports.
struct PlugInReport {
    double variance = std::numeric_limits<double>::quiet_NaN();
    Grid1D omega;
    Grid2D G;
    VarPieces pieces;
    Eigen::VectorXd m1_eigenvalues;
    double trimmed_mass = 0.0;
    int trimmed_nodes = 0;
    double g_residual = 0.0;
    double theta_b_residual = 0.0;
    std::vector<std::string> warnings;
};
[[nodiscard]] PlugInReport plug_in_report(const ClusterDataset& dataset, const FitResult& fit,
                                          const Functional& functional,
                                          const AvarConfig& config = {});
// Imputation-estimator variant: rf supplies the response summary, and
// conditional_mean must be the matching model-implied mean functional.
[[nodiscard]] PlugInReport plug_in_report(const ClusterDataset& dataset, const FitResult& fit,
                                          const ResponseFunctional& rf,
                                          const Functional& conditional_mean,
                                          const AvarConfig& config = {});

// --- Bootstrap alternative -------------------------------------------------

enum class BootstrapScheme { cluster_nonparametric, parametric };

struct BootstrapConfig {
    int replicates = 200;  // at least 50
    BootstrapScheme scheme = BootstrapScheme::cluster_nonparametric;
    std::uint64_t seed = 1;
    int threads = 1;
    double max_failure_fraction = 0.10;
    // Re-run bandwidth selection inside every replicate instead of reusing the
    // original fit's bandwidth. Off by default: reselection mixes bandwidth
    // noise into the variance estimate.
    bool reselect_bandwidth = false;
    // Controls for the replicate refits (tolerances, iteration budget). The
    // bandwidth field is overridden per reselect_bandwidth.
    FitConfig fit_config;
};

struct BootstrapResult {
    double variance = std::numeric_limits<double>::quiet_NaN();
    double ci_lo = std::numeric_limits<double>::quiet_NaN();
    double ci_hi = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> replicates;  // successful replicate estimates, in draw order
    int attempted = 0;
    int failures = 0;
    std::vector<std::string> warnings;
};

// Resample n clusters with replacement.
[[nodiscard]] ClusterDataset resample_clusters(const ClusterDataset& dataset, Rng& rng);

// Simulate new responses from the fitted Gaussian model at the observed
// covariates, keeping each cluster's missingness flag (unobserved clusters
// stay unobserved).
[[nodiscard]] ClusterDataset parametric_resample(const ClusterDataset& dataset,
                                                 const FitResult& fit, Rng& rng);

using EstimatorFn = std::function<double(const ClusterDataset&, const FitResult&)>;

// Case-resampling (or parametric) bootstrap of any summary pipeline: each
// replicate refits the model on the resampled data — at the original
// bandwidth — and re-evaluates the estimator. Replicates draw from
// independent streams (seed, replicate-index) and merge in index order, so
// results are identical for any thread count. Failed replicates are dropped
// and counted; more than max_failure_fraction failing raises
// bootstrap-unstable. Returns the replicate sample variance and the
// percentile 95% interval.
[[nodiscard]] BootstrapResult bootstrap_variance(const ClusterDataset& dataset,
                                                 const FitResult& original,
                                                 const EstimatorFn& estimator,
                                                 const BootstrapConfig& config = {});

}  // namespace semirep

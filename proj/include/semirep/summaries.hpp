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
#include "semirep/gaussian_model.hpp"

namespace semirep {

// Arguments handed to a population functional for one cluster: the covariate
// block (after any fixed-column overrides), the m smoothing-variable values,
// the curve values at those m positions, and the parametric component.
struct FunctionalArgs {
    const Eigen::MatrixXd& x;          // q x p
    const Eigen::VectorXd& z;          // m
    const Eigen::VectorXd& theta_vals; // m
    const ModelParams& params;
};

// Population summary integrand F(X, Z, theta, B). Analytic derivatives are
// optional; central finite differences with step 1e-6*(1+|argument|) fill in
// for whichever is missing. When analytic rules are present they are checked
// against the finite differences on first use (1e-5 relative).
struct Functional {
    std::string name;
    std::function<double(const FunctionalArgs&)> evaluate;
    std::function<Eigen::VectorXd(const FunctionalArgs&)> grad_b;      // p+2
    std::function<Eigen::VectorXd(const FunctionalArgs&)> grad_theta;  // m
    std::vector<std::pair<int, double>> fixed_columns;  // X column -> constant
};

// Response-only summary G paired with its model-implied conditional mean
// F = E{G | X, Z}. A missing closed form falls back to Monte Carlo
// integration over the fitted Gaussian law with a fixed seed.
struct ResponseFunctional {
    std::string name;
    std::function<double(const Eigen::VectorXd& y)> g;
    std::function<double(const FunctionalArgs&)> conditional_mean;  // optional closed form
    int mc_draws = 10000;
    std::uint64_t mc_seed = 971203;
    std::vector<std::pair<int, double>> fixed_columns;
};

// Cluster-level missingness model pi = logistic(features^T zeta), clipped.
struct PiModel {
    std::function<Eigen::VectorXd(const Eigen::MatrixXd& x, const Eigen::VectorXd& z)> features;
    Eigen::VectorXd zeta;
    Eigen::MatrixXd psi;  // per-cluster influence rows
    [[nodiscard]] double probability(const Eigen::MatrixXd& x, const Eigen::VectorXd& z) const;
};

struct LogisticFit {
    Eigen::VectorXd zeta;
    Eigen::MatrixXd psi;  // n x d influence rows, (mean information)^{-1} score
    int iterations = 0;
};

struct SummaryEstimate {
    double kappa = std::numeric_limits<double>::quiet_NaN();
    double variance = std::numeric_limits<double>::quiet_NaN();
    double ci_lo = std::numeric_limits<double>::quiet_NaN();
    double ci_hi = std::numeric_limits<double>::quiet_NaN();
    std::string method;                  // semi | imputed | ipw | delta
    std::string variance_source = "none";  // none | bootstrap | plugin
    int n_used = 0;
    double threshold = std::numeric_limits<double>::quiet_NaN();  // curve position, when any
    std::vector<std::string> warnings;

    void set_variance(double v, const std::string& source);
    [[nodiscard]] bool has_variance() const { return variance_source != "none"; }
};

// Differentiable two-argument composition rule for the delta method.
struct GenRule {
    std::function<double(double, double)> g;
    std::function<double(double, double)> g1;  // d/d first
    std::function<double(double, double)> g2;  // d/d second
};

// Named registry used by the CLI: survival / indicator-above-c (threshold c),
// mean, second-moment.
[[nodiscard]] Functional make_functional(const std::string& name, double threshold = 0.0,
                                         std::vector<std::pair<int, double>> fixed_columns = {});
[[nodiscard]] ResponseFunctional make_response_functional(const std::string& name,
                                                          double threshold = 0.0);

// Copy of x with the functional's fixed-column overrides applied.
[[nodiscard]] Eigen::MatrixXd apply_fixed_columns(
    const Eigen::MatrixXd& x, const std::vector<std::pair<int, double>>& fixed_columns);

// Functional derivatives: the analytic rule when present, otherwise central
// finite differences. Used by the plug-in variance machinery.
[[nodiscard]] Eigen::VectorXd functional_grad_b(const Functional& functional,
                                                const FunctionalArgs& args);
[[nodiscard]] Eigen::VectorXd functional_grad_theta(const Functional& functional,
                                                    const FunctionalArgs& args);

// Plug-in population summary: the F-average over ALL clusters (F needs no
// response). Variance is deferred to the bootstrap or the plug-in machinery.
[[nodiscard]] SummaryEstimate kappa_semi(const ClusterDataset& dataset, const FitResult& fit,
                                         const Functional& functional);

// Per-cluster F values in cluster order (the kappa_semi terms).
[[nodiscard]] std::vector<double> functional_values(const ClusterDataset& dataset,
                                                    const FitResult& fit,
                                                    const Functional& functional);

// Sample covariance of the per-cluster terms of two functionals.
[[nodiscard]] double cross_covariance(const ClusterDataset& dataset, const FitResult& fit,
                                      const Functional& f1, const Functional& f2);

// Survival curve over thresholds with the designated month columns overridden
// to a and max(a-4, 0). Pass negative column indices to skip the override.
[[nodiscard]] std::vector<SummaryEstimate> survival_curve(const ClusterDataset& dataset,
                                                          const FitResult& fit, double a,
                                                          const Eigen::VectorXd& c_grid,
                                                          int month_col = -1, int knot_col = -1);

// Delta-method composition of two summary estimates with cross covariance.
[[nodiscard]] SummaryEstimate kappa_gen(const GenRule& rule, const SummaryEstimate& first,
                                        const SummaryEstimate& second, double cov12);

// Bernoulli maximum likelihood by iteratively reweighted least squares.
[[nodiscard]] LogisticFit fit_logistic(const Eigen::MatrixXd& features,
                                       const Eigen::VectorXi& delta);

// Default feature map (cluster means of X columns, mean Z, intercept) fitted
// to the observed-data indicators.
[[nodiscard]] PiModel fit_pi_model(const ClusterDataset& dataset);

// Model-implied conditional mean F_i for one cluster (closed form or seeded
// Monte Carlo), with fixed-column overrides applied.
[[nodiscard]] double imputed_value(const ResponseFunctional& rf, const ClusterDataset& dataset,
                                   int cluster_index, const FitResult& fit);

// kappa_1: observed G values, model-imputed values for the rest.
[[nodiscard]] SummaryEstimate kappa_imputed(const ClusterDataset& dataset, const FitResult& fit,
                                            const ResponseFunctional& rf);

// kappa_2: inverse-probability weighting with the imputation augmentation;
// variance is the sample variance of the per-cluster terms.
[[nodiscard]] SummaryEstimate kappa_ipw(const ClusterDataset& dataset, const FitResult& fit,
                                        const ResponseFunctional& rf, const PiModel& pi_model);

}  // namespace semirep

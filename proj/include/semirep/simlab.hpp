#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "semirep/backfit.hpp"
#include "semirep/cluster_data.hpp"
#include "semirep/gaussian_model.hpp"
#include "semirep/rng.hpp"
#include "semirep/summaries.hpp"

namespace semirep {

// --- Synthetic designs -------------------------------------------------------

// Smooth-term rule for synthetic data. The benchmark curve is sin(8z - 1).
struct ThetaRule {
    enum class Kind { sin8, linear, constant, table };
    Kind kind = Kind::sin8;
    double intercept = 0.0;  // linear: intercept + slope * z
    double slope = 0.0;
    double level = 0.0;  // constant
    Eigen::VectorXd nodes;   // table: piecewise linear between nodes, clamped
    Eigen::VectorXd values;  // outside; nodes strictly increasing
    [[nodiscard]] double operator()(double z) const;
    void validate() const;
    // "sin8" | "linear" | "constant" (table rules are built directly).
    [[nodiscard]] static ThetaRule named(const std::string& name);
};

// Cluster-level missingness. The mechanism sees covariates and smoothing
// variables only — by construction there is no way to peek at the response.
struct MissingnessMechanism {
    enum class Kind { none, mcar, mar_logistic };
    Kind kind = Kind::none;
    double keep_prob = 1.0;  // MCAR: P(delta = 1), in (0, 1)
    Eigen::VectorXd zeta;    // MAR: P(delta = 1) = logistic(zeta' f(X, Z))
    // MAR feature map; empty means the same default layout the pi-model fitter
    // uses: (X column means, mean Z, intercept).
    std::function<Eigen::VectorXd(const Eigen::MatrixXd& x, const Eigen::VectorXd& z)> features;
    void validate(int p) const;

    [[nodiscard]] static MissingnessMechanism mcar(double keep_prob);
    [[nodiscard]] static MissingnessMechanism mar_logistic(
        Eigen::VectorXd zeta,
        std::function<Eigen::VectorXd(const Eigen::MatrixXd&, const Eigen::VectorXd&)> features =
            {});
};

// Balanced-design generator settings. The defaults reproduce the benchmark
// simulation design: n=100 clusters, m=2 positions with R=3 repeats,
// beta0=(1,1), sigma2=1, rho=0.4, theta0(z)=sin(8z-1), Z and X coordinates
// iid uniform(0,1).
struct SimDesign {
    int n = 100;
    int m = 2;
    int R = 3;
    int p = 2;
    Eigen::VectorXd beta0 = Eigen::VectorXd::Ones(2);
    double sigma2 = 1.0;
    double rho = 0.4;
    ThetaRule theta;
    MissingnessMechanism missingness;
    std::uint64_t seed = 1;

    [[nodiscard]] ModelParams truth() const;
    void validate() const;
};

// Mean-zero noise with the exchangeable covariance sigma2[(1-rho)I + rho J],
// valid on the whole -1/(q-1) < rho < 1 region (spectral square root).
[[nodiscard]] Eigen::VectorXd exchangeable_draw(Rng& rng, int q, double sigma2, double rho);

// Y = X beta0 + N theta0(Z) + eps, fully observed; bit-reproducible given the
// seed. The Rng overload consumes the stream in a fixed documented order so
// callers can chain further draws deterministically.
[[nodiscard]] ClusterDataset generate_sim_dataset(const SimDesign& design, std::uint64_t seed);
[[nodiscard]] ClusterDataset generate_sim_dataset(const SimDesign& design, Rng& rng);

// Fresh delta draws on a fully observed dataset; responses of delta=0 clusters
// are removed, the input is untouched. Every cluster missing raises
// degenerate-missingness.
[[nodiscard]] ClusterDataset apply_missingness(const ClusterDataset& dataset,
                                               const MissingnessMechanism& mechanism,
                                               std::uint64_t seed);
[[nodiscard]] ClusterDataset apply_missingness(const ClusterDataset& dataset,
                                               const MissingnessMechanism& mechanism, Rng& rng);

// --- Survey-style family design ---------------------------------------------

// Two children per family, four visits per child. Covariate columns are
// (sex, log population density, visit month, (month-4)+); the smoothing
// variable is the mother's age, shared by the four visits of a child.
struct KenyaConfig {
    int n = 68;
    // coefficients for (sex, logpden, month, (month-4)+)
    Eigen::VectorXd beta0 = (Eigen::VectorXd(4) << -0.2, -0.15, -0.35, 0.25).finished();
    double sigma2 = 1.2;
    double rho = 0.3;
    // theta0(age) = theta_level + theta_slope * (age - theta_center)
    double theta_level = 11.0;
    double theta_slope = 0.03;
    double theta_center = 28.0;
    double age_lo = 18.0, age_hi = 40.0;      // mother's age, uniform per child
    double month_lo = 0.5, month_hi = 11.0;   // visit months, uniform per visit
    // log population density: family-level two-component normal mixture
    double pden_weight1 = 0.4;
    double pden_mu1 = 0.0, pden_sd1 = 0.25;
    double pden_mu2 = 1.5, pden_sd2 = 0.75;

    [[nodiscard]] ThetaRule theta_rule() const;
    [[nodiscard]] ModelParams truth() const;
    void validate() const;
};

// Generated data with its ground truth recorded alongside.
struct KenyaDataset {
    ClusterDataset data;
    ModelParams truth;
    ThetaRule theta;
};

[[nodiscard]] KenyaDataset generate_kenya_like(const KenyaConfig& config, std::uint64_t seed);

// P(Y > c) under the family-design generator with the month columns pinned at
// (month, max(month-4, 0)): sex is summed out, log-density integrated by
// Gauss-Hermite per mixture component, mother's age by Gauss-Legendre.
[[nodiscard]] double kenya_survival_oracle(const KenyaConfig& config, double c, double month);

// --- Ground-truth functional values ------------------------------------------

enum class OracleMethod { quadrature, monte_carlo };

struct OracleConfig {
    OracleMethod method = OracleMethod::quadrature;
    int quad_points = 64;  // per axis
    long long mc_draws = 200000;
    std::uint64_t mc_seed = 424243;
};

struct OracleResult {
    double value = std::numeric_limits<double>::quiet_NaN();
    double mc_se = 0.0;  // zero under quadrature
    std::string method_used;
    std::vector<std::string> warnings;
};

// kappa0 = E F(X, Z; theta0, B0) under the design law. Named single-slot
// functionals (survival / indicator-above-c, mean, second-moment) with at most
// two free covariate coordinates integrate by tensor Gauss-Legendre; anything
// else falls back to seeded Monte Carlo over full clusters with a reported SE.
[[nodiscard]] OracleResult true_kappa_oracle(const SimDesign& design, const Functional& functional,
                                             const OracleConfig& config = {});

// --- Monte Carlo experiments -------------------------------------------------

// One replicate's tracked statistics; intervals are optional but must be all
// present or all absent across replicates.
struct ReplicateOutput {
    Eigen::VectorXd values;
    Eigen::VectorXd ci_lo;  // size 0, or values.size()
    Eigen::VectorXd ci_hi;
};

using PipelineFn =
    std::function<ReplicateOutput(const ClusterDataset& data, const FitResult& fit, int replicate)>;

struct PipelineSpec {
    std::vector<std::string> names;  // one per tracked statistic
    PipelineFn compute;
    Eigen::VectorXd oracle;  // size 0, or names.size(); NaN entries = no target
};

struct ExperimentConfig {
    int replicates = 200;
    std::uint64_t seed = 1;
    int threads = 1;
    double max_failure_fraction = 0.10;
    // 0 = run bandwidth selection inside every replicate; > 0 = reuse this h
    // everywhere (isolates smoothing noise from the Monte Carlo spread).
    double fixed_h = 0.0;
    FitConfig fit_config;  // h overridden by the policy above
};

struct ExperimentReport {
    std::vector<std::string> names;
    Eigen::MatrixXd values;  // successful replicates x statistics, in draw order
    Eigen::MatrixXd ci_lo;   // same shape, or 0 x 0 when no intervals
    Eigen::MatrixXd ci_hi;
    Eigen::VectorXd mean;
    Eigen::VectorXd sd;     // NaN with fewer than two successes
    Eigen::VectorXd mc_se;  // sd / sqrt(successes)
    Eigen::VectorXd oracle;    // NaN where no target
    Eigen::VectorXd bias;      // mean - oracle
    Eigen::VectorXd coverage;  // fraction of intervals covering the target
    int attempted = 0;
    int failures = 0;
    std::vector<std::string> warnings;
};

// For r = 0..replicates-1: generate from the design (per-replicate seeded
// stream), apply the design's missingness, fit, run the pipeline. Replicate
// failures (thrown errors, non-convergence, non-finite statistics) are dropped
// and counted; more than max_failure_fraction failing raises
// experiment-unstable. Results are identical for any thread count.
[[nodiscard]] ExperimentReport run_experiment(const SimDesign& design, const PipelineSpec& spec,
                                              const ExperimentConfig& config = {});

}  // namespace semirep

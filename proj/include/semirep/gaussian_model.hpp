#pragma once

#include <Eigen/Dense>
#include <utility>

#include "semirep/cluster_data.hpp"

namespace semirep {

// Parametric component B = (beta, sigma2, rho) of the exchangeable Gaussian
// model Sigma = sigma2 * [(1-rho) I + rho J] on q = mR observation slots.
struct ModelParams {
    Eigen::VectorXd beta;
    double sigma2 = 1.0;
    double rho = 0.0;

    [[nodiscard]] int p() const { return static_cast<int>(beta.size()); }
    [[nodiscard]] int dim() const { return p() + 2; }

    // Flat layout (beta..., sigma2, rho) used by derivative bundles and
    // variance matrices.
    [[nodiscard]] Eigen::VectorXd pack() const;
    [[nodiscard]] static ModelParams unpack(const Eigen::VectorXd& flat);
};

// Positive definiteness of the exchangeable Sigma: sigma2 > 0 and
// -1/(q-1) < rho < 1. Throws invalid-params outside that region.
void validate_params(const ModelParams& params, int q);
[[nodiscard]] bool params_valid(const ModelParams& params, int q);

// Derivatives of one cluster's loglikelihood. Layout of the B axis matches
// ModelParams::pack: (beta..., sigma2, rho).
struct DerivativeBundle {
    Eigen::VectorXd l_b;        // p+2
    Eigen::VectorXd l_theta;    // m        (score in theta(Z_j))
    Eigen::MatrixXd l_theta2;   // m x m    (d L_jtheta / d theta_k; response-free)
    Eigen::MatrixXd l_theta_b;  // m x (p+2)
};

// Closed exchangeable forms. a = 1/(sigma2 (1-rho)), c = rho/(1+(q-1) rho):
// Sigma^-1 = a (I - c J), log|Sigma| = (q-1) log{sigma2(1-rho)} +
// log{sigma2(1+(q-1) rho)}. Dense factorizations appear only in tests.
[[nodiscard]] std::pair<Eigen::MatrixXd, Eigen::MatrixXd> build_sigma_pair(
    const ModelParams& params, int q);
[[nodiscard]] double exchangeable_logdet(double sigma2, double rho, int q);

// Helper bundle of the scalars every closed form needs.
struct ExchangeableInverse {
    double a = 0.0;  // 1/(sigma2 (1-rho))
    double c = 0.0;  // rho/(1+(q-1) rho)
    int q = 0;
    // Sigma^-1 v without materializing the matrix.
    [[nodiscard]] Eigen::VectorXd apply(const Eigen::VectorXd& v) const {
        return a * (v - (c * v.sum()) * Eigen::VectorXd::Ones(v.size()));
    }
    [[nodiscard]] double quad_form(const Eigen::VectorXd& v) const {
        const double s = v.sum();
        return a * (v.squaredNorm() - c * s * s);
    }
};
[[nodiscard]] ExchangeableInverse exchangeable_inverse(const ModelParams& params, int q);

// N' Sigma^-1 N (m x m): diagonal a(R - c R^2), off-diagonal -a c R^2.
[[nodiscard]] Eigen::MatrixXd theta_curvature(const ModelParams& params, int m, int R);

// Abstract per-cluster likelihood so non-Gaussian instances could plug into
// the smoother and backfitting later; only the Gaussian instance ships.
class ClusterLikelihood {
public:
    virtual ~ClusterLikelihood() = default;
    [[nodiscard]] virtual double loglik(const Cluster& cluster,
                                        const Eigen::VectorXd& theta_vals,
                                        const ModelParams& params) const = 0;
    [[nodiscard]] virtual DerivativeBundle derivatives(const Cluster& cluster,
                                                       const Eigen::VectorXd& theta_vals,
                                                       const ModelParams& params) const = 0;
    // True when L_jtheta is affine in the theta arguments, enabling the exact
    // local solve. Affine instances must supply the two pieces below with
    // L_theta(theta) = theta_score_zero + theta_score_slope * theta.
    [[nodiscard]] virtual bool affine_theta_score() const { return false; }
    [[nodiscard]] virtual Eigen::VectorXd theta_score_zero(const Cluster& cluster,
                                                           const ModelParams& params) const;
    [[nodiscard]] virtual Eigen::MatrixXd theta_score_slope(const Cluster& cluster, int m,
                                                            const ModelParams& params) const;
};

class GaussianLikelihood final : public ClusterLikelihood {
public:
    [[nodiscard]] double loglik(const Cluster& cluster, const Eigen::VectorXd& theta_vals,
                                const ModelParams& params) const override;
    [[nodiscard]] DerivativeBundle derivatives(const Cluster& cluster,
                                               const Eigen::VectorXd& theta_vals,
                                               const ModelParams& params) const override;
    [[nodiscard]] bool affine_theta_score() const override { return true; }
    [[nodiscard]] Eigen::VectorXd theta_score_zero(const Cluster& cluster,
                                                   const ModelParams& params) const override;
    [[nodiscard]] Eigen::MatrixXd theta_score_slope(const Cluster& cluster, int m,
                                                    const ModelParams& params) const override;
};

[[nodiscard]] const GaussianLikelihood& gaussian_likelihood();

// Convenience forms bound to the Gaussian instance.
[[nodiscard]] double cluster_loglik(const Cluster& cluster, const Eigen::VectorXd& theta_vals,
                                    const ModelParams& params);
[[nodiscard]] DerivativeBundle cluster_derivatives(const Cluster& cluster,
                                                   const Eigen::VectorXd& theta_vals,
                                                   const ModelParams& params);

}  // namespace semirep

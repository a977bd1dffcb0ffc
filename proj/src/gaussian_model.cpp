#include "semirep/gaussian_model.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "semirep/errors.hpp"

namespace semirep {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Residual r = y - x beta - N theta for an observed cluster.
Eigen::VectorXd residual(const Cluster& cluster, const Eigen::VectorXd& theta_vals,
                         const ModelParams& params) {
    const int m = static_cast<int>(theta_vals.size());
    const int R = static_cast<int>(cluster.x.rows()) / m;
    return cluster.y - cluster.x * params.beta - expand_to_slots(theta_vals, R);
}

void require_observed(const Cluster& cluster, const Eigen::VectorXd& theta_vals) {
    if (cluster.delta != 1 || cluster.y.size() == 0)
        throw_validation("missing-response",
                         "likelihood evaluation requested for a cluster with delta=0");
    if (theta_vals.size() == 0 || cluster.x.rows() % theta_vals.size() != 0)
        throw_validation("invalid-dimensions", "theta values do not divide the slot count");
}

}  // namespace

Eigen::VectorXd ModelParams::pack() const {
    Eigen::VectorXd flat(dim());
    flat.head(p()) = beta;
    flat[p()] = sigma2;
    flat[p() + 1] = rho;
    return flat;
}

ModelParams ModelParams::unpack(const Eigen::VectorXd& flat) {
    ModelParams params;
    const int p = static_cast<int>(flat.size()) - 2;
    params.beta = flat.head(p);
    params.sigma2 = flat[p];
    params.rho = flat[p + 1];
    return params;
}

bool params_valid(const ModelParams& params, int q) {
    if (!(params.sigma2 > 0.0)) return false;
    const double lower =
        q > 1 ? -1.0 / (q - 1) : -std::numeric_limits<double>::infinity();
    return params.rho > lower && params.rho < 1.0;
}

void validate_params(const ModelParams& params, int q) {
    if (!params_valid(params, q))
        throw_validation("invalid-params",
                         "(sigma2, rho) outside the positive-definite region: sigma2=" +
                             std::to_string(params.sigma2) + " rho=" +
                             std::to_string(params.rho) + " q=" + std::to_string(q));
}

ExchangeableInverse exchangeable_inverse(const ModelParams& params, int q) {
    validate_params(params, q);
    ExchangeableInverse inv;
    inv.q = q;
    inv.a = 1.0 / (params.sigma2 * (1.0 - params.rho));
    inv.c = params.rho / (1.0 + (q - 1) * params.rho);
    return inv;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> build_sigma_pair(const ModelParams& params, int q) {
    validate_params(params, q);
    const double off = params.rho * params.sigma2;
    Eigen::MatrixXd sigma = Eigen::MatrixXd::Constant(q, q, off);
    sigma.diagonal().setConstant(params.sigma2);
    const ExchangeableInverse inv = exchangeable_inverse(params, q);
    Eigen::MatrixXd sigma_inv = Eigen::MatrixXd::Constant(q, q, -inv.a * inv.c);
    sigma_inv.diagonal().setConstant(inv.a * (1.0 - inv.c));
    return {sigma, sigma_inv};
}

double exchangeable_logdet(double sigma2, double rho, int q) {
    return (q - 1) * std::log(sigma2 * (1.0 - rho)) +
           std::log(sigma2 * (1.0 + (q - 1) * rho));
}

Eigen::MatrixXd theta_curvature(const ModelParams& params, int m, int R) {
    const ExchangeableInverse inv = exchangeable_inverse(params, m * R);
    Eigen::MatrixXd k = Eigen::MatrixXd::Constant(m, m, -inv.a * inv.c * R * R);
    k.diagonal().array() += inv.a * R;
    return k;
}

Eigen::VectorXd ClusterLikelihood::theta_score_zero(const Cluster&, const ModelParams&) const {
    throw_validation("not-affine", "likelihood does not expose an affine theta score");
}

Eigen::MatrixXd ClusterLikelihood::theta_score_slope(const Cluster&, int,
                                                     const ModelParams&) const {
    throw_validation("not-affine", "likelihood does not expose an affine theta score");
}

double GaussianLikelihood::loglik(const Cluster& cluster, const Eigen::VectorXd& theta_vals,
                                  const ModelParams& params) const {
    require_observed(cluster, theta_vals);
    const int q = static_cast<int>(cluster.x.rows());
    const ExchangeableInverse inv = exchangeable_inverse(params, q);
    const Eigen::VectorXd r = residual(cluster, theta_vals, params);
    return -0.5 * q * kLog2Pi - 0.5 * exchangeable_logdet(params.sigma2, params.rho, q) -
           0.5 * inv.quad_form(r);
}

DerivativeBundle GaussianLikelihood::derivatives(const Cluster& cluster,
                                                 const Eigen::VectorXd& theta_vals,
                                                 const ModelParams& params) const {
    require_observed(cluster, theta_vals);
    const int m = static_cast<int>(theta_vals.size());
    const int q = static_cast<int>(cluster.x.rows());
    const int R = q / m;
    const int p = params.p();
    const ExchangeableInverse inv = exchangeable_inverse(params, q);

    const Eigen::VectorXd r = residual(cluster, theta_vals, params);
    const Eigen::VectorXd w = inv.apply(r);  // Sigma^-1 r
    const double w_sum = w.sum();

    DerivativeBundle bundle;
    bundle.l_theta.resize(m);
    for (int j = 0; j < m; ++j) bundle.l_theta[j] = w.segment(j * R, R).sum();
    bundle.l_theta2 = -theta_curvature(params, m, R);

    bundle.l_b.resize(p + 2);
    bundle.l_b.head(p) = cluster.x.transpose() * w;
    bundle.l_b[p] = (-q + r.dot(w)) / (2.0 * params.sigma2);
    // d log|Sigma| / d rho and the quadratic term via
    // d Sigma^-1/d rho = -sigma2 Sigma^-1 (J - I) Sigma^-1.
    const double dlogdet =
        -(q - 1) / (1.0 - params.rho) + (q - 1) / (1.0 + (q - 1) * params.rho);
    bundle.l_b[p + 1] =
        -0.5 * dlogdet + 0.5 * params.sigma2 * (w_sum * w_sum - w.squaredNorm());

    bundle.l_theta_b.resize(m, p + 2);
    // Column sums of x and per-block row sums feed N' Sigma^-1 x in closed form.
    const Eigen::RowVectorXd col_sums = cluster.x.colwise().sum();
    for (int j = 0; j < m; ++j) {
        Eigen::RowVectorXd block_sum = Eigen::RowVectorXd::Zero(p);
        for (int k = 0; k < R; ++k) block_sum += cluster.x.row(j * R + k);
        bundle.l_theta_b.block(j, 0, 1, p) = -inv.a * (block_sum - inv.c * R * col_sums);
        bundle.l_theta_b(j, p) = -bundle.l_theta[j] / params.sigma2;
        bundle.l_theta_b(j, p + 1) =
            -params.sigma2 * inv.a *
            (w_sum * (1.0 - inv.c * (q - 1)) * R - bundle.l_theta[j]);
    }
    return bundle;
}

Eigen::VectorXd GaussianLikelihood::theta_score_zero(const Cluster& cluster,
                                                     const ModelParams& params) const {
    const int q = static_cast<int>(cluster.x.rows());
    if (cluster.delta != 1)
        throw_validation("missing-response", "theta score requested for a delta=0 cluster");
    const ExchangeableInverse inv = exchangeable_inverse(params, q);
    const Eigen::VectorXd w = inv.apply(cluster.y - cluster.x * params.beta);
    const int m = static_cast<int>(cluster.z.size());
    const int R = q / m;
    Eigen::VectorXd zero_score(m);
    for (int j = 0; j < m; ++j) zero_score[j] = w.segment(j * R, R).sum();
    return zero_score;
}

Eigen::MatrixXd GaussianLikelihood::theta_score_slope(const Cluster& cluster, int m,
                                                      const ModelParams& params) const {
    const int R = static_cast<int>(cluster.x.rows()) / m;
    return -theta_curvature(params, m, R);
}

const GaussianLikelihood& gaussian_likelihood() {
    static const GaussianLikelihood instance;
    return instance;
}

double cluster_loglik(const Cluster& cluster, const Eigen::VectorXd& theta_vals,
                      const ModelParams& params) {
    return gaussian_likelihood().loglik(cluster, theta_vals, params);
}

DerivativeBundle cluster_derivatives(const Cluster& cluster, const Eigen::VectorXd& theta_vals,
                                     const ModelParams& params) {
    return gaussian_likelihood().derivatives(cluster, theta_vals, params);
}

}  // namespace semirep

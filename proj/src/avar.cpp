#include "semirep/avar.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>
#include <vector>

#include "semirep/errors.hpp"
#include "semirep/gaussian_model.hpp"
#include "semirep/kernel.hpp"
#include "semirep/parallel.hpp"

namespace semirep {

namespace {

constexpr double kOmegaFloor = 1e-10;
constexpr double kResidualTol = 1e-8;

double interp_clamped(const Eigen::VectorXd& nodes, const Eigen::VectorXd& values, double z) {
    const int n = static_cast<int>(nodes.size());
    if (z <= nodes[0]) return values[0];
    if (z >= nodes[n - 1]) return values[n - 1];
    const double* begin = nodes.data();
    int s = static_cast<int>(std::upper_bound(begin, begin + n, z) - begin) - 1;
    s = std::min(s, n - 2);
    const double t = (z - nodes[s]) / (nodes[s + 1] - nodes[s]);
    return (1.0 - t) * values[s] + t * values[s + 1];
}

void validate_nodes(const Eigen::VectorXd& nodes) {
    if (nodes.size() < 2)
        throw_validation("invalid-grid", "collocation grid needs at least 2 nodes");
    if (!nodes.allFinite())
        throw_validation("invalid-grid", "collocation grid nodes must be finite");
    for (int s = 1; s < nodes.size(); ++s)
        if (!(nodes[s] > nodes[s - 1]))
            throw_validation("invalid-grid", "collocation grid nodes must be strictly increasing");
}

void validate_curve(const Grid1D& curve) {
    validate_nodes(curve.nodes);
    if (curve.values.size() != curve.nodes.size())
        throw_validation("invalid-grid", "curve values do not match its node count");
    if (!curve.values.allFinite())
        throw_validation("invalid-grid", "curve values must be finite");
}

double quantile_sorted(const std::vector<double>& sorted, double p) {
    const int n = static_cast<int>(sorted.size());
    if (n == 1) return sorted[0];
    const double idx = p * (n - 1);
    const int lo = static_cast<int>(std::floor(idx));
    const int hi = std::min(lo + 1, n - 1);
    const double frac = idx - lo;
    return (1.0 - frac) * sorted[static_cast<size_t>(lo)] + frac * sorted[static_cast<size_t>(hi)];
}

double sample_variance(const std::vector<double>& values) {
    const int n = static_cast<int>(values.size());
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return ss / (n - 1);
}

// Per-position kernel scales: the config pin when given, else the Silverman
// rule on that position's smoothing-variable sample.
Eigen::VectorXd position_bandwidths(const ClusterDataset& dataset, const AvarConfig& config) {
    const int m = dataset.m;
    if (config.kde_bandwidths.size() > 0) {
        if (static_cast<int>(config.kde_bandwidths.size()) != m)
            throw_validation("invalid-config", "kde_bandwidths needs one entry per position (" +
                                                   std::to_string(m) + ")");
        if (!(config.kde_bandwidths.minCoeff() > 0.0))
            throw_validation("invalid-config", "kde_bandwidths must be positive");
        return config.kde_bandwidths;
    }
    Eigen::VectorXd h(m);
    Eigen::VectorXd column(dataset.n());
    for (int j = 0; j < m; ++j) {
        for (int i = 0; i < dataset.n(); ++i) column[i] = dataset.clusters[static_cast<size_t>(i)].z[j];
        h[j] = silverman_bandwidth(column);
    }
    return h;
}

// Fitted-curve values and likelihood derivatives reused by every estimate.
// Bundles exist only for observed clusters; every use multiplies by delta.
struct Workspace {
    int n = 0;
    int m = 0;
    int b = 0;  // parametric coordinates carried: p+2, or p+1 when q == 1
    Eigen::VectorXd h;
    std::vector<Eigen::VectorXd> theta_vals;
    std::vector<DerivativeBundle> bundle;
};

Workspace make_workspace(const ClusterDataset& dataset, const FitResult& fit,
                         const AvarConfig& config) {
    dataset.validate();
    if (!fit.converged)
        throw_validation("fit-not-converged", "variance estimation requires a converged fit");
    if (fit.theta.size() == 0)
        throw_validation("invalid-fit", "fit carries no smooth-component estimate");
    validate_params(fit.params, dataset.q());
    Workspace ws;
    ws.n = dataset.n();
    ws.m = dataset.m;
    ws.b = dataset.p + (dataset.q() == 1 ? 1 : 2);
    ws.h = position_bandwidths(dataset, config);
    ws.theta_vals.resize(static_cast<size_t>(ws.n));
    ws.bundle.resize(static_cast<size_t>(ws.n));
    for (int i = 0; i < ws.n; ++i) {
        const Cluster& cluster = dataset.clusters[static_cast<size_t>(i)];
        Eigen::VectorXd theta_m(ws.m);
        for (int j = 0; j < ws.m; ++j) theta_m[j] = fit.theta.value_at_clamped(cluster.z[j]);
        ws.theta_vals[static_cast<size_t>(i)] = theta_m;
        if (cluster.delta == 1)
            ws.bundle[static_cast<size_t>(i)] = cluster_derivatives(cluster, theta_m, fit.params);
    }
    return ws;
}

// m x S matrix of K_h_j(Z_ij - node_s) for one cluster.
Eigen::MatrixXd kernel_rows(const Eigen::VectorXd& z_cluster, const Eigen::VectorXd& h,
                            const Eigen::VectorXd& nodes) {
    const Kernel& kernel = Kernel::epanechnikov_var1();
    Eigen::MatrixXd K(z_cluster.size(), nodes.size());
    for (int j = 0; j < z_cluster.size(); ++j)
        for (int s = 0; s < nodes.size(); ++s)
            K(j, s) = kernel.scaled(z_cluster[j] - nodes[s], h[j]);
    return K;
}

Grid1D omega_on_nodes(const ClusterDataset& dataset, const Workspace& ws,
                      const Eigen::VectorXd& nodes) {
    const Kernel& kernel = Kernel::epanechnikov_var1();
    Eigen::VectorXd omega = Eigen::VectorXd::Zero(nodes.size());
    for (int i = 0; i < ws.n; ++i) {
        const Cluster& cluster = dataset.clusters[static_cast<size_t>(i)];
        if (cluster.delta != 1) continue;
        const DerivativeBundle& bundle = ws.bundle[static_cast<size_t>(i)];
        for (int j = 0; j < ws.m; ++j) {
            const double curvature = bundle.l_theta2(j, j);
            for (int s = 0; s < nodes.size(); ++s)
                omega[s] += curvature * kernel.scaled(cluster.z[j] - nodes[s], ws.h[j]);
        }
    }
    omega /= ws.n;
    for (int s = 0; s < nodes.size(); ++s) {
        if (std::abs(omega[s]) < kOmegaFloor) {
            std::ostringstream msg;
            msg << "local curvature scale is numerically zero at grid node z = " << nodes[s]
                << "; too little observed data near that point";
            throw_numerical("near-singular-omega", msg.str());
        }
    }
    return Grid1D{nodes, omega};
}

// Collapsed kernel estimate of the cross-position feedback kernel
// Q(node_s, node_t), already divided by Omega(node_t).
Eigen::MatrixXd q_matrix(const ClusterDataset& dataset, const Workspace& ws,
                         const Eigen::VectorXd& nodes, const Eigen::VectorXd& omega_vals) {
    const int S = static_cast<int>(nodes.size());
    Eigen::MatrixXd num = Eigen::MatrixXd::Zero(S, S);
    if (ws.m > 1) {
        for (int i = 0; i < ws.n; ++i) {
            const Cluster& cluster = dataset.clusters[static_cast<size_t>(i)];
            if (cluster.delta != 1) continue;
            const Eigen::MatrixXd K = kernel_rows(cluster.z, ws.h, nodes);
            Eigen::MatrixXd cross = ws.bundle[static_cast<size_t>(i)].l_theta2;
            cross.diagonal().setZero();
            num.noalias() += K.transpose() * (cross * K);
        }
        num /= ws.n;
    }
    for (int t = 0; t < S; ++t) num.col(t) /= omega_vals[t];
    return num;
}

Eigen::VectorXd trapezoid_weights(const Eigen::VectorXd& nodes) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(nodes.size());
    for (int s = 0; s + 1 < nodes.size(); ++s) {
        const double half = 0.5 * (nodes[s + 1] - nodes[s]);
        w[s] += half;
        w[s + 1] += half;
    }
    return w;
}

// Shared collocation system (I + T) phi = rhs with T the trapezoid
// discretization of integration against Q.
struct Fredholm {
    Eigen::MatrixXd Q;
    Eigen::MatrixXd T;
    Eigen::MatrixXd A;
    Eigen::FullPivLU<Eigen::MatrixXd> lu;
};

Fredholm make_fredholm(const ClusterDataset& dataset, const Workspace& ws,
                       const Eigen::VectorXd& nodes, const Eigen::VectorXd& omega_vals) {
    Fredholm f;
    f.Q = q_matrix(dataset, ws, nodes, omega_vals);
    f.T = f.Q * trapezoid_weights(nodes).asDiagonal();
    f.A = Eigen::MatrixXd::Identity(nodes.size(), nodes.size()) + f.T;
    f.lu.compute(f.A);
    if (!f.lu.isInvertible())
        throw_numerical("integral-equation-failure", "collocation system is singular");
    return f;
}

void check_residual(double residual, const char* label) {
    if (!(residual < kResidualTol)) {
        std::ostringstream msg;
        msg << label << " solve failed its plug-back check: sup residual = " << residual;
        throw_numerical("integral-equation-failure", msg.str());
    }
}

}  // namespace

double Grid1D::value_at(double z) const { return interp_clamped(nodes, values, z); }

Eigen::VectorXd GridVec::value_at(double z) const {
    const int n = size();
    if (z <= nodes[0]) return values.row(0);
    if (z >= nodes[n - 1]) return values.row(n - 1);
    const double* begin = nodes.data();
    int s = static_cast<int>(std::upper_bound(begin, begin + n, z) - begin) - 1;
    s = std::min(s, n - 2);
    const double t = (z - nodes[s]) / (nodes[s + 1] - nodes[s]);
    return (1.0 - t) * values.row(s) + t * values.row(s + 1);
}

Eigen::VectorXd Grid2D::row_at(double z1) const {
    const int n = static_cast<int>(nodes1.size());
    if (z1 <= nodes1[0]) return values.row(0);
    if (z1 >= nodes1[n - 1]) return values.row(n - 1);
    const double* begin = nodes1.data();
    int s = static_cast<int>(std::upper_bound(begin, begin + n, z1) - begin) - 1;
    s = std::min(s, n - 2);
    const double t = (z1 - nodes1[s]) / (nodes1[s + 1] - nodes1[s]);
    return (1.0 - t) * values.row(s) + t * values.row(s + 1);
}

double Grid2D::value_at(double z1, double z2) const {
    const Eigen::VectorXd row = row_at(z1);
    return interp_clamped(nodes2, row, z2);
}

double silverman_bandwidth(const Eigen::VectorXd& sample) {
    const int n = static_cast<int>(sample.size());
    if (n < 2) throw_validation("too-few-points", "bandwidth rule needs at least 2 points");
    std::vector<double> sorted(sample.data(), sample.data() + n);
    std::sort(sorted.begin(), sorted.end());
    const double mean = sample.mean();
    const double sd = std::sqrt((sample.array() - mean).square().sum() / (n - 1));
    const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
    double spread = sd;
    if (iqr > 0.0) spread = std::min(sd, iqr / 1.34);
    if (!(spread > 0.0))
        throw_numerical("degenerate-sample",
                        "all points coincide: no scale for a smoothing bandwidth");
    return 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
}

GridReport make_default_grid(const ClusterDataset& dataset, const AvarConfig& config) {
    dataset.validate();
    if (config.grid_points < 5)
        throw_validation("invalid-config", "grid_points must be at least 5");
    if (!(config.trim_fraction >= 0.0 && config.trim_fraction < 1.0))
        throw_validation("invalid-config", "trim_fraction must lie in [0, 1)");
    const double lo = dataset.z_min();
    const double hi = dataset.z_max();
    if (!(hi > lo))
        throw_validation("degenerate-range", "smoothing variable has zero range");
    const Eigen::VectorXd nodes = Eigen::VectorXd::LinSpaced(config.grid_points, lo, hi);
    const Eigen::VectorXd h = position_bandwidths(dataset, config);
    const Kernel& kernel = Kernel::epanechnikov_var1();

    Eigen::VectorXd density = Eigen::VectorXd::Zero(nodes.size());
    for (const Cluster& cluster : dataset.clusters)
        for (int j = 0; j < dataset.m; ++j)
            for (int s = 0; s < nodes.size(); ++s)
                density[s] += kernel.scaled(cluster.z[j] - nodes[s], h[j]);
    density /= static_cast<double>(dataset.n()) * dataset.m;

    const double threshold = config.trim_fraction * density.maxCoeff();
    int first = 0;
    while (first < nodes.size() && density[first] < threshold) ++first;
    int last = static_cast<int>(nodes.size()) - 1;
    while (last >= 0 && density[last] < threshold) --last;
    const int kept = last - first + 1;
    if (kept < 5)
        throw_numerical("excessive-density-trim",
                        "density trimming would leave fewer than 5 grid nodes");

    auto trapz = [&](int a, int b) {
        double total = 0.0;
        for (int s = a; s < b; ++s)
            total += 0.5 * (density[s] + density[s + 1]) * (nodes[s + 1] - nodes[s]);
        return total;
    };
    const double total_mass = trapz(0, static_cast<int>(nodes.size()) - 1);
    const double kept_mass = trapz(first, last);

    GridReport report;
    report.grid.nodes = nodes.segment(first, kept);
    report.grid.values = density.segment(first, kept);
    report.trimmed_nodes = static_cast<int>(nodes.size()) - kept;
    report.trimmed_mass =
        total_mass > 0.0 ? std::max(0.0, (total_mass - kept_mass) / total_mass) : 0.0;
    return report;
}

Grid1D estimate_omega(const ClusterDataset& dataset, const FitResult& fit, const Grid1D& grid,
                      const AvarConfig& config) {
    validate_nodes(grid.nodes);
    const Workspace ws = make_workspace(dataset, fit, config);
    return omega_on_nodes(dataset, ws, grid.nodes);
}

Grid2D solve_G(const ClusterDataset& dataset, const FitResult& fit, const Grid1D& grid,
               const AvarConfig& config, double* residual_out) {
    validate_nodes(grid.nodes);
    const Workspace ws = make_workspace(dataset, fit, config);
    const Grid1D omega = omega_on_nodes(dataset, ws, grid.nodes);
    const Fredholm f = make_fredholm(dataset, ws, grid.nodes, omega.values);
    Eigen::MatrixXd G = f.lu.solve(f.Q);
    const double residual = (G + f.T * G - f.Q).cwiseAbs().maxCoeff();
    check_residual(residual, "feedback-surface");
    if (residual_out) *residual_out = residual;
    return Grid2D{grid.nodes, grid.nodes, std::move(G)};
}

GridVec solve_theta_B(const ClusterDataset& dataset, const FitResult& fit, const Grid1D& grid,
                      const AvarConfig& config, double* residual_out) {
    validate_nodes(grid.nodes);
    const Workspace ws = make_workspace(dataset, fit, config);
    const Grid1D omega = omega_on_nodes(dataset, ws, grid.nodes);
    const Fredholm f = make_fredholm(dataset, ws, grid.nodes, omega.values);

    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(grid.nodes.size(), ws.b);
    for (int i = 0; i < ws.n; ++i) {
        const Cluster& cluster = dataset.clusters[static_cast<size_t>(i)];
        if (cluster.delta != 1) continue;
        const Eigen::MatrixXd K = kernel_rows(cluster.z, ws.h, grid.nodes);
        rhs.noalias() += K.transpose() * ws.bundle[static_cast<size_t>(i)].l_theta_b.leftCols(ws.b);
    }
    rhs /= ws.n;

    Eigen::MatrixXd phi = f.lu.solve(-rhs);
    const double residual = (rhs + f.A * phi).cwiseAbs().maxCoeff();
    check_residual(residual, "parametric-sensitivity");
    if (residual_out) *residual_out = residual;

    Eigen::MatrixXd theta_b(grid.nodes.size(), ws.b);
    for (int s = 0; s < grid.nodes.size(); ++s) theta_b.row(s) = phi.row(s) / omega.values[s];
    return GridVec{grid.nodes, std::move(theta_b)};
}

VarPieces compute_var_pieces(const ClusterDataset& dataset, const FitResult& fit,
                             const Functional& functional, const Grid1D& omega, const Grid2D& G,
                             const GridVec& theta_B, WeightMode weight_mode,
                             const AvarConfig& config) {
    validate_curve(omega);
    for (int s = 0; s < omega.size(); ++s)
        if (std::abs(omega.values[s]) < kOmegaFloor)
            throw_numerical("near-singular-omega", "curvature curve has a numerically zero node");
    const Workspace ws = make_workspace(dataset, fit, config);
    if (theta_B.dim() != ws.b)
        throw_validation("invalid-config",
                         "parametric-sensitivity curve carries " + std::to_string(theta_B.dim()) +
                             " coordinates; this dataset needs " + std::to_string(ws.b));
    const Kernel& kernel = Kernel::epanechnikov_var1();
    const int n = ws.n;
    const int m = ws.m;
    const int S = omega.size();

    // Per-cluster functional derivatives (response-free: every cluster) and
    // the parametric-sensitivity curve at the cluster's smoothing values.
    std::vector<Eigen::VectorXd> grad_b(static_cast<size_t>(n));
    std::vector<Eigen::VectorXd> grad_t(static_cast<size_t>(n));
    std::vector<Eigen::MatrixXd> tb_at(static_cast<size_t>(n));
    Eigen::VectorXd weight(n);
    for (int i = 0; i < n; ++i) {
        const Cluster& cluster = dataset.clusters[static_cast<size_t>(i)];
        weight[i] = weight_mode == WeightMode::standard ? 1.0 : 1.0 - cluster.delta;
        const Eigen::MatrixXd x = apply_fixed_columns(cluster.x, functional.fixed_columns);
        const FunctionalArgs args{x, cluster.z, ws.theta_vals[static_cast<size_t>(i)], fit.params};
        grad_b[static_cast<size_t>(i)] = functional_grad_b(functional, args).head(ws.b);
        grad_t[static_cast<size_t>(i)] = functional_grad_theta(functional, args);
        Eigen::MatrixXd tb(m, ws.b);
        for (int j = 0; j < m; ++j) tb.row(j) = theta_B.value_at(cluster.z[j]);
        tb_at[static_cast<size_t>(i)] = std::move(tb);
    }

    VarPieces pieces;
    pieces.weight_mode = weight_mode;
    pieces.theta_B = theta_B;

    pieces.M2 = Eigen::VectorXd::Zero(ws.b);
    for (int i = 0; i < n; ++i)
        pieces.M2 += weight[i] * (grad_b[static_cast<size_t>(i)] +
                                  tb_at[static_cast<size_t>(i)].transpose() *
                                      grad_t[static_cast<size_t>(i)]);
    pieces.M2 /= n;

    // C1: collapsed kernel average of the weighted functional theta-derivative.
    Eigen::VectorXd c1_num = Eigen::VectorXd::Zero(S);
    for (int i = 0; i < n; ++i) {
        if (weight[i] == 0.0) continue;
        const Cluster& cluster = dataset.clusters[static_cast<size_t>(i)];
        for (int j = 0; j < m; ++j) {
            const double scale = weight[i] * grad_t[static_cast<size_t>(i)][j];
            for (int s = 0; s < S; ++s)
                c1_num[s] += scale * kernel.scaled(cluster.z[j] - omega.nodes[s], ws.h[j]);
        }
    }
    pieces.C1.nodes = omega.nodes;
    pieces.C1.values = -(c1_num / n).cwiseQuotient(omega.values);

    // C2: cluster-level mean of the smoothed weighted derivative carried along
    // the feedback surface. The inner conditional expectation is a genuine
    // kernel regression evaluated at the data points.
    Eigen::VectorXd c2_vals = Eigen::VectorXd::Zero(S);
    for (int i = 0; i < n; ++i) {
        const Cluster& cluster = dataset.clusters[static_cast<size_t>(i)];
        for (int j = 0; j < m; ++j) {
            double num = 0.0;
            double den = 0.0;
            for (int i2 = 0; i2 < n; ++i2) {
                const double k =
                    kernel.scaled(dataset.clusters[static_cast<size_t>(i2)].z[j] - cluster.z[j],
                                  ws.h[j]);
                den += k;
                num += k * weight[i2] * grad_t[static_cast<size_t>(i2)][j];
            }
            const double smoothed = num / den;
            c2_vals += (smoothed / omega.value_at(cluster.z[j])) * G.row_at(cluster.z[j]);
        }
    }
    c2_vals /= n;
    pieces.C2.nodes = omega.nodes;
    pieces.C2.values = c2_vals;

    // Influence of the parametric estimating equations, with the smooth
    // component's reaction folded in; observed clusters only.
    pieces.eps = Eigen::MatrixXd::Zero(n, ws.b);
    pieces.M1 = Eigen::MatrixXd::Zero(ws.b, ws.b);
    pieces.D = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) {
        const Cluster& cluster = dataset.clusters[static_cast<size_t>(i)];
        if (cluster.delta != 1) continue;
        const DerivativeBundle& bundle = ws.bundle[static_cast<size_t>(i)];
        const Eigen::VectorXd eps_i =
            bundle.l_b.head(ws.b) + tb_at[static_cast<size_t>(i)].transpose() * bundle.l_theta;
        pieces.eps.row(i) = eps_i;
        pieces.M1.noalias() += eps_i * eps_i.transpose();
        double d = 0.0;
        for (int j = 0; j < m; ++j)
            d += bundle.l_theta[j] *
                 (pieces.C1.value_at(cluster.z[j]) + pieces.C2.value_at(cluster.z[j]));
        pieces.D[i] = d;
    }
    pieces.M1 /= n;

    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(pieces.M1);
    if (!(es.eigenvalues().minCoeff() > 0.0)) {
        std::ostringstream msg;
        msg << "information matrix is not positive definite (smallest eigenvalue "
            << es.eigenvalues().minCoeff() << ")";
        throw_numerical("degenerate-information", msg.str());
    }
    return pieces;
}

double plug_in_variance(const VarPieces& pieces, const ClusterDataset& dataset,
                        const FitResult& fit, const Functional& functional) {
    if (pieces.weight_mode != WeightMode::standard)
        throw_validation("invalid-config",
                         "plug-in summary variance needs standard-weight pieces");
    const int n = dataset.n();
    if (pieces.eps.rows() != n || pieces.D.size() != n)
        throw_validation("invalid-config", "variance pieces do not match the dataset");
    const double kappa = kappa_semi(dataset, fit, functional).kappa;
    const std::vector<double> values = functional_values(dataset, fit, functional);
    double term1 = 0.0;
    for (double v : values) term1 += (v - kappa) * (v - kappa);
    term1 /= n;
    const double term2 = pieces.M2.dot(pieces.M1.ldlt().solve(pieces.M2));
    double term3 = 0.0;
    for (int i = 0; i < n; ++i)
        if (dataset.clusters[static_cast<size_t>(i)].delta == 1)
            term3 += pieces.D[i] * pieces.D[i];
    term3 /= n;
    return term1 + term2 + term3;
}

double plug_in_variance(const VarPieces& pieces, const ClusterDataset& dataset,
                        const FitResult& fit, const ResponseFunctional& rf) {
    if (pieces.weight_mode != WeightMode::imputed)
        throw_validation("invalid-config",
                         "imputation summary variance needs imputed-weight pieces");
    const int n = dataset.n();
    if (pieces.eps.rows() != n || pieces.D.size() != n)
        throw_validation("invalid-config", "variance pieces do not match the dataset");
    if (n < 2) throw_validation("too-few-clusters", "variance needs at least 2 clusters");
    const double kappa = kappa_imputed(dataset, fit, rf).kappa;
    const Eigen::VectorXd m1_inv_m2 = pieces.M1.ldlt().solve(pieces.M2);
    std::vector<double> influence(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const Cluster& cluster = dataset.clusters[static_cast<size_t>(i)];
        double t;
        if (cluster.delta == 1) {
            t = rf.g(cluster.y) - kappa + m1_inv_m2.dot(pieces.eps.row(i)) + pieces.D[i];
        } else {
            t = imputed_value(rf, dataset, i, fit) - kappa;
        }
        influence[static_cast<size_t>(i)] = t;
    }
    return sample_variance(influence);
}

namespace {

PlugInReport report_common(const ClusterDataset& dataset, const FitResult& fit,
                           const Functional& derivative_functional, WeightMode mode,
                           const AvarConfig& config) {
    const GridReport grid_report = make_default_grid(dataset, config);
    PlugInReport report;
    report.trimmed_mass = grid_report.trimmed_mass;
    report.trimmed_nodes = grid_report.trimmed_nodes;
    report.omega = estimate_omega(dataset, fit, grid_report.grid, config);
    report.G = solve_G(dataset, fit, grid_report.grid, config, &report.g_residual);
    const GridVec theta_b =
        solve_theta_B(dataset, fit, grid_report.grid, config, &report.theta_b_residual);
    report.pieces = compute_var_pieces(dataset, fit, derivative_functional, report.omega, report.G,
                                       theta_b, mode, config);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(report.pieces.M1);
    report.m1_eigenvalues = es.eigenvalues();
    if (grid_report.trimmed_nodes > 0) {
        std::ostringstream msg;
        msg << "density trimming removed " << grid_report.trimmed_nodes
            << " boundary grid node(s) carrying mass fraction " << grid_report.trimmed_mass;
        report.warnings.push_back(msg.str());
    }
    return report;
}

}  // namespace

PlugInReport plug_in_report(const ClusterDataset& dataset, const FitResult& fit,
                            const Functional& functional, const AvarConfig& config) {
    PlugInReport report = report_common(dataset, fit, functional, WeightMode::standard, config);
    report.variance = plug_in_variance(report.pieces, dataset, fit, functional);
    return report;
}

PlugInReport plug_in_report(const ClusterDataset& dataset, const FitResult& fit,
                            const ResponseFunctional& rf, const Functional& conditional_mean,
                            const AvarConfig& config) {
    PlugInReport report = report_common(dataset, fit, conditional_mean, WeightMode::imputed, config);
    report.variance = plug_in_variance(report.pieces, dataset, fit, rf);
    return report;
}

ClusterDataset resample_clusters(const ClusterDataset& dataset, Rng& rng) {
    ClusterDataset out;
    out.m = dataset.m;
    out.R = dataset.R;
    out.p = dataset.p;
    const int n = dataset.n();
    out.clusters.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const auto pick = static_cast<size_t>(rng.uniform_int(0, n - 1));
        out.clusters.push_back(dataset.clusters[pick]);
    }
    return out;
}

ClusterDataset parametric_resample(const ClusterDataset& dataset, const FitResult& fit, Rng& rng) {
    validate_params(fit.params, dataset.q());
    if (fit.theta.size() == 0)
        throw_validation("invalid-fit", "fit carries no smooth-component estimate");
    ClusterDataset out = dataset;
    const int q = dataset.q();
    const double sigma = std::sqrt(fit.params.sigma2);
    const double sd_within = sigma * std::sqrt(1.0 - fit.params.rho);
    const double sd_between = sigma * std::sqrt(1.0 + (q - 1) * fit.params.rho);
    for (Cluster& cluster : out.clusters) {
        if (cluster.delta != 1) continue;
        Eigen::VectorXd theta_m(dataset.m);
        for (int j = 0; j < dataset.m; ++j) theta_m[j] = fit.theta.value_at_clamped(cluster.z[j]);
        const Eigen::VectorXd mu =
            cluster.x * fit.params.beta + expand_to_slots(theta_m, dataset.R);
        Eigen::VectorXd shock(q);
        for (int s = 0; s < q; ++s) shock[s] = rng.normal();
        const double shared = shock.mean();
        cluster.y = mu + sd_within * (shock.array() - shared).matrix() +
                    Eigen::VectorXd::Constant(q, sd_between * shared);
    }
    return out;
}

BootstrapResult bootstrap_variance(const ClusterDataset& dataset, const FitResult& original,
                                   const EstimatorFn& estimator, const BootstrapConfig& config) {
    if (config.replicates < 50)
        throw_validation("invalid-config", "bootstrap needs at least 50 replicates (got " +
                                               std::to_string(config.replicates) + ")");
    if (config.threads < 1)
        throw_validation("invalid-config", "threads must be at least 1");
    if (!(config.max_failure_fraction >= 0.0 && config.max_failure_fraction < 1.0))
        throw_validation("invalid-config", "max_failure_fraction must lie in [0, 1)");
    if (!estimator) throw_validation("invalid-config", "estimator callback is empty");
    if (!original.converged)
        throw_validation("fit-not-converged", "bootstrap needs a converged reference fit");
    dataset.validate();

    const int B = config.replicates;
    std::vector<double> value(static_cast<size_t>(B),
                              std::numeric_limits<double>::quiet_NaN());
    std::vector<char> ok(static_cast<size_t>(B), 0);
    parallel_for(B, config.threads, [&](int r) {
        Rng rng = Rng::stream(config.seed, static_cast<std::uint64_t>(r));
        try {
            const ClusterDataset replicate =
                config.scheme == BootstrapScheme::cluster_nonparametric
                    ? resample_clusters(dataset, rng)
                    : parametric_resample(dataset, original, rng);
            FitConfig fit_config = config.fit_config;
            fit_config.h = config.reselect_bandwidth ? 0.0 : original.h;
            const FitResult refit = fit(replicate, fit_config);
            if (!refit.converged) return;  // dropped and counted below
            const double estimate = estimator(replicate, refit);
            if (std::isfinite(estimate)) {
                value[static_cast<size_t>(r)] = estimate;
                ok[static_cast<size_t>(r)] = 1;
            }
        } catch (const Error&) {
            // dropped and counted below
        }
    });

    BootstrapResult result;
    result.attempted = B;
    result.replicates.reserve(static_cast<size_t>(B));
    for (int r = 0; r < B; ++r)
        if (ok[static_cast<size_t>(r)]) result.replicates.push_back(value[static_cast<size_t>(r)]);
    result.failures = B - static_cast<int>(result.replicates.size());
    if (result.failures > config.max_failure_fraction * B) {
        std::ostringstream msg;
        msg << result.failures << " of " << B << " bootstrap replicates failed";
        throw_numerical("bootstrap-unstable", msg.str());
    }
    if (result.failures > 0) {
        std::ostringstream msg;
        msg << result.failures << " bootstrap replicate(s) failed and were dropped";
        result.warnings.push_back(msg.str());
    }
    result.variance = sample_variance(result.replicates);
    std::vector<double> sorted = result.replicates;
    std::sort(sorted.begin(), sorted.end());
    result.ci_lo = quantile_sorted(sorted, 0.025);
    result.ci_hi = quantile_sorted(sorted, 0.975);
    return result;
}

}  // namespace semirep

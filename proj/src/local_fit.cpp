#include "semirep/local_fit.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>
#include <vector>

#include "semirep/errors.hpp"
#include "semirep/threads.hpp"

namespace semirep {

namespace {

struct WindowTerm {
    double d = 0.0;    // Z_ij - z
    double w = 0.0;    // K_h(Z_ij - z), already > 0
    double kjj = 0.0;  // -L_jjtheta at this point (positive for proper likelihoods)
    double u = 0.0;    // L_jtheta with position j's own theta argument zeroed out
    int cluster = -1;
    int pos = -1;
};

struct LocalSolution {
    double alpha0 = 0.0;
    double alpha1 = 0.0;
    bool singular = false;
    bool empty = false;
};

// Exact 2x2 solve of the kernel-weighted affine estimating equation:
// sum w [u + slope_jj (alpha0 + alpha1 d)] (1, d/h)' = 0.
LocalSolution solve_affine(const std::vector<WindowTerm>& window, double h) {
    LocalSolution out;
    double a00 = 0.0, a01 = 0.0, a11 = 0.0, b0 = 0.0, b1 = 0.0;
    for (const WindowTerm& t : window) {
        const double wk = t.w * t.kjj;
        a00 += wk;
        a01 += wk * t.d;
        a11 += wk * t.d * t.d;
        b0 += t.w * t.u;
        b1 += t.w * t.u * t.d;
    }
    if (a00 <= 0.0) {
        out.empty = true;
        return out;
    }
    // Rows scaled by (1, 1/h); h cancels, so solve the unscaled system.
    const double det = a00 * a11 - a01 * a01;
    if (!(det > 1e-12 * a00 * a11) || !std::isfinite(det)) {
        out.singular = true;
        return out;
    }
    out.alpha0 = (b0 * a11 - b1 * a01) / det;
    out.alpha1 = (a00 * b1 - a01 * b0) / det;
    (void)h;
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// ProfileEngine

struct ProfileEngine::Impl {
    const ClusterDataset& dataset;
    ProfileConfig config;
    const ClusterLikelihood& likelihood;
    const Kernel& kernel = Kernel::epanechnikov_var1();

    Eigen::VectorXd eval;                              // sorted unique eval z's
    std::vector<std::vector<int>> cluster_eval_idx;    // [cluster][pos] -> eval index
    struct DataPoint {
        double z;
        int cluster;
        int pos;
        int eval_idx;
    };
    std::vector<DataPoint> points;  // delta=1 observations only, ascending z
    std::vector<double> point_z;
    std::vector<std::vector<int>> cluster_point_idx;  // [cluster][pos] -> index in points
    double z_lo = 0.0, z_hi = 0.0;

    Impl(const ClusterDataset& data, const ProfileConfig& cfg, const ClusterLikelihood& lik)
        : dataset(data), config(cfg), likelihood(lik) {
        dataset.validate();
        z_lo = dataset.z_min();
        z_hi = dataset.z_max();

        std::vector<double> all;
        all.reserve(static_cast<size_t>(dataset.n()) * dataset.m + config.grid_points);
        for (const auto& cluster : dataset.clusters)
            for (int j = 0; j < dataset.m; ++j) all.push_back(cluster.z[j]);
        if (config.grid_points == 1) {
            all.push_back(0.5 * (z_lo + z_hi));
        } else if (config.grid_points > 1 && z_hi > z_lo) {
            const double step = (z_hi - z_lo) / (config.grid_points - 1);
            for (int g = 0; g < config.grid_points; ++g) all.push_back(z_lo + g * step);
        }
        std::sort(all.begin(), all.end());
        all.erase(std::unique(all.begin(), all.end()), all.end());
        eval = Eigen::Map<const Eigen::VectorXd>(all.data(), static_cast<Eigen::Index>(all.size()));

        const auto eval_index_of = [&](double z) {
            return static_cast<int>(std::lower_bound(all.begin(), all.end(), z) - all.begin());
        };
        cluster_eval_idx.resize(static_cast<size_t>(dataset.n()));
        cluster_point_idx.assign(static_cast<size_t>(dataset.n()), {});
        for (int i = 0; i < dataset.n(); ++i) {
            cluster_eval_idx[static_cast<size_t>(i)].resize(static_cast<size_t>(dataset.m));
            for (int j = 0; j < dataset.m; ++j)
                cluster_eval_idx[static_cast<size_t>(i)][static_cast<size_t>(j)] =
                    eval_index_of(dataset.clusters[static_cast<size_t>(i)].z[j]);
        }
        for (int i = 0; i < dataset.n(); ++i) {
            if (dataset.clusters[static_cast<size_t>(i)].delta != 1) continue;
            for (int j = 0; j < dataset.m; ++j)
                points.push_back({dataset.clusters[static_cast<size_t>(i)].z[j], i, j,
                                  cluster_eval_idx[static_cast<size_t>(i)][static_cast<size_t>(j)]});
        }
        std::sort(points.begin(), points.end(),
                  [](const DataPoint& a, const DataPoint& b) {
                      if (a.z != b.z) return a.z < b.z;
                      if (a.cluster != b.cluster) return a.cluster < b.cluster;
                      return a.pos < b.pos;
                  });
        point_z.reserve(points.size());
        for (const auto& pt : points) point_z.push_back(pt.z);
        for (size_t q = 0; q < points.size(); ++q) {
            auto& slots = cluster_point_idx[static_cast<size_t>(points[q].cluster)];
            if (slots.empty()) slots.assign(static_cast<size_t>(dataset.m), -1);
            slots[static_cast<size_t>(points[q].pos)] = static_cast<int>(q);
        }
    }

    [[nodiscard]] std::pair<int, int> window_range(double z, double h) const {
        const double radius = kernel.support * h;
        const auto first =
            std::lower_bound(point_z.begin(), point_z.end(), z - radius);
        const auto last = std::upper_bound(point_z.begin(), point_z.end(), z + radius);
        return {static_cast<int>(first - point_z.begin()),
                static_cast<int>(last - point_z.begin())};
    }
};

ProfileEngine::ProfileEngine(const ClusterDataset& dataset, const ProfileConfig& config,
                             const ClusterLikelihood& likelihood)
    : impl_(std::make_unique<Impl>(dataset, config, likelihood)) {}

ProfileEngine::~ProfileEngine() = default;

const Eigen::VectorXd& ProfileEngine::eval_points() const { return impl_->eval; }

ThetaProfileResult ProfileEngine::solve(const ModelParams& params, double h,
                                        const ThetaEstimate* warm_start,
                                        int exclude_cluster) const {
    const Impl& impl = *impl_;
    const ClusterDataset& data = impl.dataset;
    const int m = data.m;
    const int n_eval = static_cast<int>(impl.eval.size());
    if (!(h > 0.0)) throw_validation("invalid-bandwidth", "bandwidth must be positive");
    validate_params(params, data.q());
    if (!impl.likelihood.affine_theta_score())
        return solve_generic_(params, h, warm_start, exclude_cluster);

    // Per-cluster affine score pieces at these parameters.
    std::vector<Eigen::VectorXd> zero_score(static_cast<size_t>(data.n()));
    std::vector<Eigen::MatrixXd> slope(static_cast<size_t>(data.n()));
    for (int i = 0; i < data.n(); ++i) {
        const Cluster& cluster = data.clusters[static_cast<size_t>(i)];
        if (cluster.delta != 1 || i == exclude_cluster) continue;
        zero_score[static_cast<size_t>(i)] = impl.likelihood.theta_score_zero(cluster, params);
        slope[static_cast<size_t>(i)] = impl.likelihood.theta_score_slope(cluster, m, params);
    }

    // Aligned per-point arrays; excluded points contribute exact zeros.
    const int n_pts = static_cast<int>(impl.points.size());
    std::vector<double> kjj(static_cast<size_t>(n_pts), 0.0);
    std::vector<double> u(static_cast<size_t>(n_pts), 0.0);
    std::vector<char> active(static_cast<size_t>(n_pts), 0);
    for (int q = 0; q < n_pts; ++q) {
        const auto& pt = impl.points[static_cast<size_t>(q)];
        if (pt.cluster == exclude_cluster) continue;
        active[static_cast<size_t>(q)] = 1;
        kjj[static_cast<size_t>(q)] =
            -slope[static_cast<size_t>(pt.cluster)](pt.pos, pt.pos);
    }

    // Feedback evals: points of non-excluded clusters feed the iteration.
    std::vector<char> feedback(static_cast<size_t>(n_eval), 0);
    for (int q = 0; q < n_pts; ++q)
        if (active[static_cast<size_t>(q)])
            feedback[static_cast<size_t>(impl.points[static_cast<size_t>(q)].eval_idx)] = 1;
    std::vector<int> feedback_idx;
    for (int e = 0; e < n_eval; ++e)
        if (feedback[static_cast<size_t>(e)]) feedback_idx.push_back(e);

    Eigen::VectorXd theta(n_eval), slopes = Eigen::VectorXd::Zero(n_eval);
    for (int e = 0; e < n_eval; ++e)
        theta[e] = warm_start ? warm_start->value_at_clamped(impl.eval[e]) : 0.0;

    const auto refresh_u = [&]() {
        for (int i = 0; i < data.n(); ++i) {
            const auto& slots = impl.cluster_point_idx[static_cast<size_t>(i)];
            if (slots.empty() || i == exclude_cluster) continue;
            Eigen::VectorXd t(m);
            for (int j = 0; j < m; ++j)
                t[j] = theta[impl.cluster_eval_idx[static_cast<size_t>(i)][static_cast<size_t>(j)]];
            const Eigen::VectorXd v =
                zero_score[static_cast<size_t>(i)] + slope[static_cast<size_t>(i)] * t;
            for (int j = 0; j < m; ++j)
                u[static_cast<size_t>(slots[static_cast<size_t>(j)])] =
                    v[j] - slope[static_cast<size_t>(i)](j, j) * t[j];
        }
    };

    // Shared solve-at-eval: gathers the window and runs the exact 2x2 solve.
    const auto solve_eval = [&](int e) -> LocalSolution {
        const double z = impl.eval[e];
        const auto [first, last] = impl.window_range(z, h);
        LocalSolution out;
        double a00 = 0.0, a01 = 0.0, a11 = 0.0, b0 = 0.0, b1 = 0.0;
        for (int q = first; q < last; ++q) {
            const double d = impl.point_z[static_cast<size_t>(q)] - z;
            const double w = impl.kernel.scaled(d, h);
            if (w <= 0.0) continue;
            const double wk = w * kjj[static_cast<size_t>(q)];
            a00 += wk;
            a01 += wk * d;
            a11 += wk * d * d;
            b0 += w * u[static_cast<size_t>(q)];
            b1 += w * u[static_cast<size_t>(q)] * d;
        }
        if (a00 <= 0.0) {
            out.empty = true;
            return out;
        }
        const double det = a00 * a11 - a01 * a01;
        if (!(det > 1e-12 * a00 * a11) || !std::isfinite(det)) {
            out.singular = true;
            return out;
        }
        out.alpha0 = (b0 * a11 - b1 * a01) / det;
        out.alpha1 = (a00 * b1 - a01 * b0) / det;
        return out;
    };

    ProfileDiagnostics diag;
    Eigen::VectorXd next_theta = theta, next_slopes = slopes;
    std::atomic<int> bad_eval{-1};
    double change = 0.0;
    int sweeps_run = 0;
    while (sweeps_run < impl.config.max_inner) {
        refresh_u();
        parallel_for(static_cast<int>(feedback_idx.size()), [&](int fi) {
            const int e = feedback_idx[static_cast<size_t>(fi)];
            const LocalSolution sol = solve_eval(e);
            if (sol.empty || sol.singular) {
                bad_eval.store(e);
                return;
            }
            next_theta[e] = sol.alpha0;
            next_slopes[e] = sol.alpha1;
        });
        if (bad_eval.load() >= 0)
            throw_numerical("singular-window",
                            "local window degenerate at z=" +
                                std::to_string(impl.eval[bad_eval.load()]) +
                                " (bandwidth too small for the design)");
        change = 0.0;
        for (int e : feedback_idx) change = std::max(change, std::abs(next_theta[e] - theta[e]));
        for (int e : feedback_idx) {
            theta[e] = next_theta[e];
            slopes[e] = next_slopes[e];
        }
        ++sweeps_run;
        if (change < impl.config.tol_inner) break;
    }
    diag.sweeps = sweeps_run;
    diag.final_change = change;
    diag.converged = change < impl.config.tol_inner;
    if (!diag.converged)
        diag.warnings.push_back("theta sweeps hit max_inner with sup-change " +
                                std::to_string(change));

    // Output-only evals (display grid, z's of delta=0 or excluded clusters):
    // solved once against the converged curve; they never feed back.
    refresh_u();
    std::vector<char> keep(static_cast<size_t>(n_eval), 1);
    std::vector<char> degenerate(static_cast<size_t>(n_eval), 0);
    parallel_for(n_eval, [&](int e) {
        if (feedback[static_cast<size_t>(e)]) return;
        const LocalSolution sol = solve_eval(e);
        if (sol.empty || sol.singular) {
            keep[static_cast<size_t>(e)] = 0;
            degenerate[static_cast<size_t>(e)] = sol.singular;
            return;
        }
        theta[e] = sol.alpha0;
        slopes[e] = sol.alpha1;
    });

    ThetaEstimate estimate;
    estimate.bandwidth = h;
    int kept = 0;
    for (int e = 0; e < n_eval; ++e) kept += keep[static_cast<size_t>(e)];
    estimate.eval_points.resize(kept);
    estimate.values.resize(kept);
    estimate.slopes.resize(kept);
    int at = 0;
    for (int e = 0; e < n_eval; ++e) {
        if (!keep[static_cast<size_t>(e)]) {
            diag.dropped_points.push_back(impl.eval[e]);
            if (degenerate[static_cast<size_t>(e)])
                diag.warnings.push_back("degenerate window at display node z=" +
                                        std::to_string(impl.eval[e]) + "; node dropped");
            continue;
        }
        estimate.eval_points[at] = impl.eval[e];
        estimate.values[at] = theta[e];
        estimate.slopes[at] = slopes[e];
        ++at;
    }
    for (int e = 0; e < kept; ++e) {
        const double z = estimate.eval_points[e];
        if (z < impl.z_lo + h || z > impl.z_hi - h) diag.boundary_points.push_back(z);
    }
    return {std::move(estimate), std::move(diag)};
}

// ---------------------------------------------------------------------------
// Free-function local solve (direct, engine-free); also hosts the damped
// Newton used for non-affine likelihood instances.

namespace {

std::vector<WindowTerm> gather_window(const ClusterDataset& dataset, double z,
                                      const ThetaEstimate& theta_current,
                                      const ModelParams& params, double h,
                                      const ClusterLikelihood& likelihood,
                                      const Kernel& kernel, bool affine) {
    std::vector<WindowTerm> window;
    for (int i = 0; i < dataset.n(); ++i) {
        const Cluster& cluster = dataset.clusters[static_cast<size_t>(i)];
        if (cluster.delta != 1) continue;
        Eigen::VectorXd zero_score;
        Eigen::MatrixXd slope;
        if (affine) {
            zero_score = likelihood.theta_score_zero(cluster, params);
            slope = likelihood.theta_score_slope(cluster, dataset.m, params);
        }
        for (int j = 0; j < dataset.m; ++j) {
            const double d = cluster.z[j] - z;
            const double w = kernel.scaled(d, h);
            if (w <= 0.0) continue;
            WindowTerm term;
            term.d = d;
            term.w = w;
            term.cluster = i;
            term.pos = j;
            if (affine) {
                term.kjj = -slope(j, j);
                double dot = zero_score[j];
                for (int k = 0; k < dataset.m; ++k)
                    if (k != j) dot += slope(j, k) * theta_current.value_at_clamped(cluster.z[k]);
                term.u = dot;
            }
            window.push_back(term);
        }
    }
    return window;
}

std::pair<double, double> newton_solve(const ClusterDataset& dataset, double z,
                                       const std::vector<WindowTerm>& window,
                                       const ThetaEstimate& theta_current,
                                       const ModelParams& params, double h,
                                       const ClusterLikelihood& likelihood) {
    const int m = dataset.m;
    // Score of the 2-vector estimating equation at (alpha0, alpha1).
    const auto equation = [&](double alpha0, double alpha1) {
        Eigen::Vector2d g = Eigen::Vector2d::Zero();
        Eigen::Matrix2d jac = Eigen::Matrix2d::Zero();
        for (const WindowTerm& t : window) {
            const Cluster& cluster = dataset.clusters[static_cast<size_t>(t.cluster)];
            Eigen::VectorXd theta_args(m);
            for (int k = 0; k < m; ++k)
                theta_args[k] = k == t.pos ? alpha0 + alpha1 * t.d
                                           : theta_current.value_at_clamped(cluster.z[k]);
            const DerivativeBundle bundle =
                likelihood.derivatives(cluster, theta_args, params);
            const double score = bundle.l_theta[t.pos];
            const double curv = bundle.l_theta2(t.pos, t.pos);
            g[0] += t.w * score;
            g[1] += t.w * score * t.d / h;
            jac(0, 0) += t.w * curv;
            jac(0, 1) += t.w * curv * t.d;
            jac(1, 0) += t.w * curv * t.d / h;
            jac(1, 1) += t.w * curv * t.d * t.d / h;
        }
        return std::make_pair(g, jac);
    };

    double alpha0 = theta_current.value_at_clamped(z);
    double alpha1 = 0.0;
    auto [g, jac] = equation(alpha0, alpha1);
    for (int iter = 0; iter < 50; ++iter) {
        if (g.lpNorm<Eigen::Infinity>() < 1e-10) return {alpha0, alpha1};
        if (std::abs(jac.determinant()) < 1e-14)
            throw_numerical("singular-window",
                            "Newton Jacobian singular at z=" + std::to_string(z));
        const Eigen::Vector2d step = jac.partialPivLu().solve(-g);
        double damping = 1.0;
        for (int half = 0; half < 25; ++half) {
            const double try0 = alpha0 + damping * step[0];
            const double try1 = alpha1 + damping * step[1];
            auto [g_try, jac_try] = equation(try0, try1);
            if (g_try.lpNorm<Eigen::Infinity>() < g.lpNorm<Eigen::Infinity>() || damping < 1e-6) {
                alpha0 = try0;
                alpha1 = try1;
                g = g_try;
                jac = jac_try;
                break;
            }
            damping *= 0.5;
        }
    }
    if (g.lpNorm<Eigen::Infinity>() >= 1e-10)
        throw_numerical("local-solve-failure",
                        "damped Newton did not reach 1e-10 at z=" + std::to_string(z));
    return {alpha0, alpha1};
}

}  // namespace

std::pair<double, double> local_linear_solve(const ClusterDataset& dataset, double z,
                                             const ThetaEstimate& theta_current,
                                             const ModelParams& params, double h,
                                             const ClusterLikelihood& likelihood) {
    if (!(h > 0.0)) throw_validation("invalid-bandwidth", "bandwidth must be positive");
    validate_params(params, dataset.q());
    const Kernel& kernel = Kernel::epanechnikov_var1();
    const bool affine = likelihood.affine_theta_score();
    const std::vector<WindowTerm> window =
        gather_window(dataset, z, theta_current, params, h, likelihood, kernel, affine);
    if (window.empty())
        throw_numerical("no-data-in-window",
                        "no delta=1 observation within the kernel support at z=" +
                            std::to_string(z));
    if (!affine) return newton_solve(dataset, z, window, theta_current, params, h, likelihood);
    const LocalSolution sol = solve_affine(window, h);
    if (sol.empty)
        throw_numerical("no-data-in-window",
                        "all kernel weights vanish at z=" + std::to_string(z));
    if (sol.singular)
        throw_numerical("singular-window",
                        "local 2x2 system singular at z=" + std::to_string(z));
    return {sol.alpha0, sol.alpha1};
}

// Generic-likelihood profile: the same sweep schedule, but each eval point runs
// the damped Newton solve against the committed curve.
ThetaProfileResult ProfileEngine::solve_generic_(const ModelParams& params, double h,
                                                 const ThetaEstimate* warm_start,
                                                 int exclude_cluster) const {
    const Impl& impl = *impl_;
    ClusterDataset working = impl.dataset;
    if (exclude_cluster >= 0) {
        working.clusters[static_cast<size_t>(exclude_cluster)].delta = 0;
        working.clusters[static_cast<size_t>(exclude_cluster)].y.resize(0);
    }
    const int n_eval = static_cast<int>(impl.eval.size());

    std::vector<char> feedback(static_cast<size_t>(n_eval), 0);
    for (const auto& pt : impl.points)
        if (pt.cluster != exclude_cluster) feedback[static_cast<size_t>(pt.eval_idx)] = 1;

    ThetaEstimate current;
    current.bandwidth = h;
    current.eval_points = impl.eval;
    current.values.resize(n_eval);
    current.slopes = Eigen::VectorXd::Zero(n_eval);
    for (int e = 0; e < n_eval; ++e)
        current.values[e] = warm_start ? warm_start->value_at_clamped(impl.eval[e]) : 0.0;

    ProfileDiagnostics diag;
    double change = 0.0;
    int sweeps_run = 0;
    for (int sweep = 0; sweep < impl.config.max_inner; ++sweep) {
        ThetaEstimate next = current;
        change = 0.0;
        for (int e = 0; e < n_eval; ++e) {
            if (!feedback[static_cast<size_t>(e)]) continue;
            const auto [alpha0, alpha1] =
                local_linear_solve(working, impl.eval[e], current, params, h, impl.likelihood);
            next.values[e] = alpha0;
            next.slopes[e] = alpha1;
            change = std::max(change, std::abs(alpha0 - current.values[e]));
        }
        current = next;
        ++sweeps_run;
        if (change < impl.config.tol_inner) break;
    }
    diag.sweeps = sweeps_run;
    diag.final_change = change;
    diag.converged = change < impl.config.tol_inner;
    for (int e = 0; e < n_eval; ++e) {
        if (feedback[static_cast<size_t>(e)]) continue;
        const auto [alpha0, alpha1] =
            local_linear_solve(working, impl.eval[e], current, params, h, impl.likelihood);
        current.values[e] = alpha0;
        current.slopes[e] = alpha1;
    }
    return {std::move(current), std::move(diag)};
}

ThetaProfileResult theta_profile(const ClusterDataset& dataset, const ModelParams& params,
                                 double h, const ThetaEstimate* theta_init,
                                 const ProfileConfig& config,
                                 const ClusterLikelihood& likelihood) {
    const ProfileEngine engine(dataset, config, likelihood);
    return engine.solve(params, h, theta_init);
}

}  // namespace semirep

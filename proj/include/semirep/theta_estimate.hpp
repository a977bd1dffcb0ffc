#pragma once

#include <Eigen/Dense>

namespace semirep {

// The profiled curve theta_hat(., B): locally solved values (and local slopes)
// at a sorted evaluation set, linearly interpolated in between. Evaluation at
// a point that is itself an eval point returns the stored local solve exactly.
struct ThetaEstimate {
    Eigen::VectorXd eval_points;  // strictly increasing
    Eigen::VectorXd values;
    Eigen::VectorXd slopes;  // local-linear alpha1 at each eval point
    double bandwidth = 0.0;

    [[nodiscard]] int size() const { return static_cast<int>(eval_points.size()); }
    [[nodiscard]] bool in_range(double z) const {
        return size() > 0 && z >= eval_points[0] && z <= eval_points[size() - 1];
    }
    // True when z is one of the eval points (bit-exact match).
    [[nodiscard]] bool has_exact(double z) const;

    // Exact at eval points, piecewise linear between; throws an extrapolation
    // error outside the eval range.
    [[nodiscard]] double value_at(double z) const;
    [[nodiscard]] double slope_at(double z) const;
    // Clamps to the boundary value instead of throwing; used for warm starts
    // and for evaluating variance weights at trimmed boundary nodes.
    [[nodiscard]] double value_at_clamped(double z) const;

    [[nodiscard]] static ThetaEstimate zero(Eigen::VectorXd points, double h);
};

}  // namespace semirep

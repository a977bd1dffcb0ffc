#include "semirep/theta_estimate.hpp"

#include <algorithm>
#include <string>
#include <utility>

#include "semirep/errors.hpp"

namespace semirep {

namespace {

// Index of the left knot of the interval containing z, and the interpolation
// weight; exact hits return weight 0 on their own index.
std::pair<int, double> locate(const Eigen::VectorXd& points, double z) {
    const int count = static_cast<int>(points.size());
    const double* begin = points.data();
    const double* end = begin + count;
    const double* it = std::lower_bound(begin, end, z);
    if (it != end && *it == z) return {static_cast<int>(it - begin), 0.0};
    const int right = static_cast<int>(it - begin);
    const int left = right - 1;
    const double weight = (z - points[left]) / (points[right] - points[left]);
    return {left, weight};
}

double interpolate(const Eigen::VectorXd& points, const Eigen::VectorXd& values, double z) {
    const auto [left, weight] = locate(points, z);
    if (weight == 0.0) return values[left];
    return (1.0 - weight) * values[left] + weight * values[left + 1];
}

}  // namespace

bool ThetaEstimate::has_exact(double z) const {
    const double* begin = eval_points.data();
    const double* end = begin + size();
    const double* it = std::lower_bound(begin, end, z);
    return it != end && *it == z;
}

double ThetaEstimate::value_at(double z) const {
    if (!in_range(z))
        throw_validation("extrapolation", "theta evaluation outside the fitted range: z=" +
                                              std::to_string(z));
    return interpolate(eval_points, values, z);
}

double ThetaEstimate::slope_at(double z) const {
    if (!in_range(z))
        throw_validation("extrapolation", "theta slope outside the fitted range: z=" +
                                              std::to_string(z));
    return interpolate(eval_points, slopes, z);
}

double ThetaEstimate::value_at_clamped(double z) const {
    if (size() == 0) return 0.0;
    if (z <= eval_points[0]) return values[0];
    if (z >= eval_points[size() - 1]) return values[size() - 1];
    return interpolate(eval_points, values, z);
}

ThetaEstimate ThetaEstimate::zero(Eigen::VectorXd points, double h) {
    ThetaEstimate theta;
    theta.values = Eigen::VectorXd::Zero(points.size());
    theta.slopes = Eigen::VectorXd::Zero(points.size());
    theta.eval_points = std::move(points);
    theta.bandwidth = h;
    return theta;
}

}  // namespace semirep

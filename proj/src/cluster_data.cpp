#include "semirep/cluster_data.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "semirep/errors.hpp"

namespace semirep {

int ClusterDataset::n_observed() const {
    int count = 0;
    for (const auto& c : clusters) count += c.delta ? 1 : 0;
    return count;
}

double ClusterDataset::z_min() const {
    double lo = std::numeric_limits<double>::infinity();
    for (const auto& c : clusters)
        for (int j = 0; j < c.z.size(); ++j) lo = std::min(lo, c.z[j]);
    return lo;
}

double ClusterDataset::z_max() const {
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& c : clusters)
        for (int j = 0; j < c.z.size(); ++j) hi = std::max(hi, c.z[j]);
    return hi;
}

void ClusterDataset::validate() const {
    if (clusters.empty()) throw_validation("empty-dataset", "dataset has no clusters");
    if (m < 1 || R < 1 || p < 1)
        throw_validation("invalid-dimensions",
                         "dataset dimensions must satisfy m >= 1, R >= 1, p >= 1");
    const int slots = q();
    for (size_t i = 0; i < clusters.size(); ++i) {
        const auto& c = clusters[i];
        const std::string tag = "cluster " + std::to_string(i);
        if (c.delta != 0 && c.delta != 1)
            throw_validation("invalid-delta", tag + ": delta must be 0 or 1");
        if (c.z.size() != m)
            throw_validation("invalid-dimensions", tag + ": z has wrong length");
        if (c.x.rows() != slots || c.x.cols() != p)
            throw_validation("invalid-dimensions", tag + ": x has wrong shape");
        if (c.delta == 1 && c.y.size() != slots)
            throw_validation("missing-response", tag + ": delta=1 but response length != m*R");
        if (c.delta == 0 && c.y.size() != 0)
            throw_validation("response-present",
                             tag + ": delta=0 cluster carries a response vector");
        if (!c.x.allFinite() || !c.z.allFinite() || (c.delta == 1 && !c.y.allFinite()))
            throw_validation("non-finite-value", tag + ": non-finite entry");
    }
}

Eigen::MatrixXd incidence_map(int m, int R) {
    Eigen::MatrixXd map = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m) * R, m);
    for (int j = 0; j < m; ++j)
        for (int k = 0; k < R; ++k) map(static_cast<Eigen::Index>(j) * R + k, j) = 1.0;
    return map;
}

Eigen::VectorXd expand_to_slots(const Eigen::VectorXd& theta_vals, int R) {
    Eigen::VectorXd out(theta_vals.size() * R);
    for (int j = 0; j < theta_vals.size(); ++j)
        for (int k = 0; k < R; ++k) out[static_cast<Eigen::Index>(j) * R + k] = theta_vals[j];
    return out;
}

}  // namespace semirep

#pragma once

#include <Eigen/Dense>
#include <vector>

namespace semirep {

// One cluster of a balanced repeated-measures design: m smoothing-covariate
// positions, R repeats per position, q = mR observation slots. Observation
// (j-1)R + k (k = 1..R) is attached to position j, so z[j] enters R
// consecutive slots. When delta == 0 the response was never observed: y has
// size 0 and must not be read by any likelihood evaluation.
struct Cluster {
    Eigen::VectorXd y;  // length q iff delta == 1, else empty
    Eigen::MatrixXd x;  // q x p design rows (always present)
    Eigen::VectorXd z;  // length m
    int delta = 1;
};

struct ClusterDataset {
    std::vector<Cluster> clusters;
    int m = 0;
    int R = 0;
    int p = 0;

    [[nodiscard]] int q() const { return m * R; }
    [[nodiscard]] int n() const { return static_cast<int>(clusters.size()); }
    [[nodiscard]] int n_observed() const;

    // Observed range of z over all clusters (delta-agnostic).
    [[nodiscard]] double z_min() const;
    [[nodiscard]] double z_max() const;

    // Throws a validation error on any broken invariant: empty dataset,
    // dimension mismatches, missing response on delta=1, response present on
    // delta=0, or non-finite values.
    void validate() const;
};

// q x m incidence map N: column j has ones exactly in rows (j-1)R .. jR-1.
[[nodiscard]] Eigen::MatrixXd incidence_map(int m, int R);

// N * theta without materializing N.
[[nodiscard]] Eigen::VectorXd expand_to_slots(const Eigen::VectorXd& theta_vals, int R);

}  // namespace semirep

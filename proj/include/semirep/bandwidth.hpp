#pragma once

#include <vector>

#include "semirep/cluster_data.hpp"
#include "semirep/gaussian_model.hpp"
#include "semirep/local_fit.hpp"

namespace semirep {

struct BandwidthConfig {
    int candidates = 25;        // log-spaced grid size
    double lo_frac = 0.05;      // grid bounds as fractions of range(Z)
    double hi_frac = 0.5;
    double undersmooth_exponent = 2.0 / 15.0;  // h = h_cv * n^(-exponent)
    ProfileConfig profile;
};

struct BandwidthSelection {
    double h = 0.0;     // undersmoothed final bandwidth
    double h_cv = 0.0;  // cross-validation maximizer
    double undersmooth_factor = 1.0;
    std::vector<double> candidates;
    std::vector<double> cv_loglik;  // NaN where the candidate failed
    std::vector<double> failed_candidates;
};

// Leave-one-cluster-out predictive loglikelihood over a log-spaced candidate
// grid; the winner is shrunk by n^(-2/15) to undersmooth (n = delta=1 count).
[[nodiscard]] BandwidthSelection select_bandwidth(const ClusterDataset& dataset,
                                                  const ModelParams& params,
                                                  const BandwidthConfig& config = {});

}  // namespace semirep

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cwr/propensity.hpp"
#include "cwr/types.hpp"

namespace cwr {

// Per-cluster win/loss components. tau1 (treated wins) and tau2 (treated
// losses) are weighted U-statistics over within-cluster treated-control
// pairs; mu = tau1/tau2 is defined only when tau2 > 0.
struct ClusterComponents {
  std::string cluster_id;
  double tau1 = 0.0;
  double tau2 = 0.0;
  double cluster_weight = 0.0;  // total weighted mass of discordant pairs
  bool mu_defined = false;
  double mu = 0.0;
};

struct EstimateResult {
  double log_wr = 0.0;
  double wr = 1.0;
  std::vector<ClusterComponents> per_cluster;  // empty for the pooled estimator
  double total_weight = 0.0;                   // sum over retained clusters
  std::vector<std::string> excluded_clusters;  // degenerate (tau1 or tau2 zero)
  double tau1 = 0.0;  // pooled estimator only; stratified keeps these per cluster
  double tau2 = 0.0;
};

// Weighted within-cluster win/loss U-statistics:
//   tau1 = C(n_i,2)^-1 sum_{j<j'} 1/2 * [discordant] * w_j w_j' * phi1(treated, control)
// with the treated subject always the first kernel argument; tau2 likewise
// with phi2. Throws DegenerateDataError when the cluster has fewer than 2
// subjects.
std::pair<double, double> tau_pair(const Cluster& cluster,
                                   std::span<const double> weights);

// Total weighted discordant-pair mass with the same 1/2 convention:
//   w_i. = sum_{j<j'} 1/2 * [discordant] * w_j w_j' = (sum_T w)(sum_C w)/2.
double cluster_weight(const Cluster& cluster, std::span<const double> weights);

// Weighted stratified causal win ratio, pooling the weighted win and loss
// masses over clusters:
//   mu = sum_i C(n_i,2) tau1_i / sum_i C(n_i,2) tau2_i,
// equivalently the cluster ratios mu_i averaged with each cluster's weighted
// loss mass as its weight. Clusters with tau1 = 0 or tau2 = 0 are excluded
// with zero weight and reported. Throws DegenerateDataError if no cluster is
// retained.
EstimateResult stratified_estimate(const ClusterDataset& ds, const WeightSet& w);

// Pooled IPW win ratio ignoring clusters: every cross-subject pair enters
// with weight 1/(pi_treated * (1 - pi_control)). Throws DegenerateDataError
// when either win or loss mass is zero (log win ratio undefined).
EstimateResult ipw_estimate_independent(const ClusterDataset& ds,
                                        const PsModelFit& fit,
                                        double epsilon = 1e-6);

}  // namespace cwr

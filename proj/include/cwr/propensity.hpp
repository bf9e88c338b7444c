#pragma once

#include <Eigen/Dense>
#include <string>
#include <unordered_map>
#include <vector>

#include "cwr/types.hpp"

namespace cwr {

enum class Link { logit, cloglog };

const char* to_string(Link link);
Link link_from_string(const std::string& name);

enum class PsBackend { pooled, fixed_effects, random_intercept };

// Fitted treatment-selection working model. `beta` is (intercept, slopes).
// Cluster-aware backends carry one entry per cluster in dataset order:
// fixed-effects offsets (reference cluster 0) or random-intercept posterior
// modes, looked up by cluster id at prediction time.
struct PsModelFit {
  Link link = Link::logit;
  PsBackend backend = PsBackend::pooled;
  Eigen::VectorXd beta;

  std::vector<std::string> cluster_ids;
  Eigen::VectorXd cluster_offsets;  // empty for pooled fits
  double random_variance = 0.0;     // random-intercept backend only
  bool degenerate_variance = false;

  bool converged = false;
  int iterations = 0;
  double max_gradient = 0.0;

  double cluster_offset(const std::string& cluster_id) const;
};

// Binomial GLM by iteratively reweighted least squares with step-halving.
// Converges when max |score| < 1e-8, errors after 100 iterations, on a rank
// deficient design, or on separation (fitted probability within 1e-10 of 0/1).
PsModelFit fit_logistic(const ClusterDataset& ds, Link link = Link::logit);

// Same likelihood with one indicator column per cluster beyond the first
// (the reference cluster's offset is 0). Requires both arms in every cluster.
PsModelFit fit_fixed_effects(const ClusterDataset& ds, Link link = Link::logit);

// Random-intercept model: cluster effects b_i ~ N(0, sigma^2) integrated out
// by a Laplace approximation. Per-cluster posterior modes are found by Newton
// to 1e-8; fixed coefficients and the variance alternate IRLS / posterior EM
// updates until parameter changes fall below 1e-6 (200 outer iterations max).
// A variance collapsing to zero is reported via degenerate_variance, not an
// error.
PsModelFit fit_random_intercept(const ClusterDataset& ds, Link link = Link::logit);

// Fitted probability of treatment for one subject, including the subject's
// cluster offset or posterior mode when the backend has one. Throws
// ValidationError for an unknown cluster id on cluster-aware backends.
double predict_ps(const PsModelFit& fit, const SubjectRecord& subject);

// Inverse probability of treatment weights: 1/pi for treated, 1/(1-pi) for
// controls. Probabilities outside (epsilon, 1-epsilon) are an error listing
// the offending subjects.
WeightSet initial_weights(const PsModelFit& fit, const ClusterDataset& ds,
                          double epsilon = 1e-6);

}  // namespace cwr

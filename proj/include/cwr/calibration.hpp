#pragma once

#include <Eigen/Dense>

#include "cwr/types.hpp"

namespace cwr {

// Solution of the KL-calibration problem. Weights have the closed form
//   w_ij = n_i d_ij Z_ij exp(-lambda1'X_ij) / sum_{treated j' in i} d exp(-lambda1'X)
//        + n_i d_ij (1-Z_ij) exp(-lambda2'X_ij) / sum_{control j' in i} d exp(-lambda2'X)
// so each cluster's treated and control weights both sum to n_i by
// construction; lambda1/lambda2 are chosen so the weighted covariate sums in
// each arm match the overall unweighted sums. Multipliers are reported on the
// raw covariate scale.
struct CalibrationSolution {
  WeightSet weights;
  Eigen::VectorXd lambda1;
  Eigen::VectorXd lambda2;
  double constraint_residual = 0.0;  // max standardized balance residual
  int iterations = 0;
};

// Minimizes sum w ln(w/d) subject to exact covariate balance between arms and
// per-cluster arm totals equal to the cluster size. The two multiplier blocks
// decouple, so lambda1 and lambda2 are found by two independent damped Newton
// solves (analytic Jacobian, covariates standardized internally, start at 0).
// Residuals are measured as per-subject means of standardized covariates;
// convergence when the max falls below `tol`.
CalibrationSolution solve_calibration(const WeightSet& d, const ClusterDataset& ds,
                                      double tol = 1e-8, int max_iter = 100);

// All balance residuals for an arbitrary weight set, each as achieved - target:
// per arm the standardized-covariate mean difference from the overall mean
// (2p entries), and per cluster the arm weight totals minus n_i, scaled by
// 1/n_i (2m entries).
struct BalanceResiduals {
  Eigen::VectorXd treated_covariate;   // p entries
  Eigen::VectorXd control_covariate;   // p entries
  Eigen::VectorXd treated_cluster;     // m entries
  Eigen::VectorXd control_cluster;     // m entries
  double max_abs() const;
};

BalanceResiduals evaluate_balance_constraints(const WeightSet& w,
                                              const ClusterDataset& ds);

// Kullback-Leibler distance sum w ln(w/d) between a weight set and the
// initial weights. Throws ValidationError on nonpositive weights.
double kl_objective(const WeightSet& w, const WeightSet& d);

}  // namespace cwr

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cwr/calibration.hpp"
#include "cwr/estimator.hpp"
#include "cwr/propensity.hpp"
#include "cwr/types.hpp"

namespace cwr {

enum class EstimatorKind {
  unadjusted,      // pooled IPW estimator, clusters ignored
  logistic,        // stratified, IPW from pooled logistic regression
  fixed_effects,   // stratified, IPW from logistic with cluster fixed effects
  random_effects,  // stratified, IPW from logistic with random intercepts
  calibration,     // stratified, calibrated weights on top of logistic IPW
};

const char* to_string(EstimatorKind kind);
EstimatorKind estimator_from_string(const std::string& name);

struct PipelineConfig {
  EstimatorKind kind = EstimatorKind::calibration;
  Link link = Link::logit;  // working-model link
  double calibration_tol = 1e-8;
  int calibration_max_iter = 100;
  double ps_epsilon = 1e-6;
};

struct PipelineOutput {
  EstimateResult estimate;
  WeightSet weights;  // the weights the estimate was computed with
};

// One full estimation pass: working-model fit, weight construction (plus the
// calibration solve when requested), then the point estimate. This is what
// the bootstrap re-runs inside every replicate.
PipelineOutput run_pipeline(const ClusterDataset& ds, const PipelineConfig& cfg);

struct InferenceResult {
  double se_log_wr = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double z_stat = 0.0;
  double p_value = 1.0;
  int bootstrap_reps_used = 0;
  int failed_reps = 0;
};

// Cluster bootstrap: B resamples of m clusters with replacement (resampled
// clusters get fresh identities), the full pipeline re-run in each. se is the
// sample SD of replicate log win ratios; CI = point +- 1.96 se. Replicates
// that fail (solver, degenerate data, extreme weights) are skipped and
// counted; fewer than max(2, B/2) successes is an error. Deterministic in
// (dataset, cfg, B, seed) for any thread count.
InferenceResult cluster_bootstrap(const ClusterDataset& ds, const PipelineConfig& cfg,
                                  int B, std::uint64_t seed,
                                  const EstimateResult& point, unsigned threads = 1);

// Same contract but resampling subjects, ignoring clusters; pairs with the
// pooled unadjusted estimator.
InferenceResult subject_bootstrap(const ClusterDataset& ds, const PipelineConfig& cfg,
                                  int B, std::uint64_t seed,
                                  const EstimateResult& point, unsigned threads = 1);

struct CovariateBalance {
  std::string covariate;
  double weighted_abs_diff = 0.0;    // |weighted treated mean - weighted control mean|
  double unweighted_abs_diff = 0.0;
};

// Absolute mean difference diagnostics, weighted and unweighted, per
// covariate. Throws DegenerateDataError if an arm has zero total weight.
std::vector<CovariateBalance> balance_diagnostics(const ClusterDataset& ds,
                                                  const WeightSet& w);

struct WaldTest {
  double z = 0.0;
  double p = 1.0;
};

// Two-sided Wald test of log_wr against null_value using a standard normal
// reference. se must be positive.
WaldTest wald_test(double log_wr, double se, double null_value = 0.0);

// Standard normal CDF (shared by tests and reporting).
double normal_cdf(double z);

}  // namespace cwr

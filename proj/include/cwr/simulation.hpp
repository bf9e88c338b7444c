#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "cwr/csv.hpp"
#include "cwr/inference.hpp"
#include "cwr/rng.hpp"
#include "cwr/types.hpp"

namespace cwr {

enum class Gamma2Dist {
  normal,  // N(0, 4)
  gamma,   // Gamma(shape 2, rate 10)
};

const char* to_string(Gamma2Dist dist);
Gamma2Dist gamma2_from_string(const std::string& name);

// Full generative design for one scenario: clustered semi-competing-risks
// outcomes from a Gumbel-Hougaard copula with gamma frailty, exponential
// censoring, and confounded cluster-dependent treatment assignment.
struct ScenarioConfig {
  std::size_t m = 20;    // clusters
  std::size_t n_i = 50;  // common cluster size

  double lambda_H = 0.1;   // baseline non-terminal hazard per day
  double lambda_D = 0.08;  // baseline terminal hazard
  double lambda_C = 0.09;  // baseline censoring hazard
  double eta_H = 0.0;      // treatment log-effects (0, 0 is the null)
  double eta_D = 0.0;
  double eta_C = 0.1;

  std::array<double, 2> beta1 = {0.1, 0.3};  // covariate effects, non-terminal
  std::array<double, 2> beta2 = {0.2, 0.4};  // covariate effects, terminal
  std::vector<double> alpha = {-0.2, 0.5, 0.5};  // treatment model, intercept first

  double varphi = 2.0;  // copula association, >= 1

  double icc_target = 0.067;
  double gamma1_shape = std::numeric_limits<double>::quiet_NaN();  // NaN: derive
  Gamma2Dist gamma2_dist = Gamma2Dist::normal;
  double copula_rho = 0.4;

  int reps = 500;
  int B = 200;
  std::uint64_t seed = 20240915;
  double true_log_wr = 0.0;

  void validate() const;
  std::string to_json() const;
  static ScenarioConfig from_json(const std::string& text);
  static ScenarioConfig from_json_file(const std::string& path);
};

struct ClusterEffects {
  double gamma1 = 1.0;  // outcome frailty, > 0
  double gamma2 = 0.0;  // treatment-selection effect
};

// Bivariate standard normal with correlation copula_rho, margins mapped to
// Gamma(a, a) for gamma1 and to the configured gamma2 law.
ClusterEffects sample_cluster_effects(const ScenarioConfig& cfg, Rng& rng);

// Event times with joint survival
//   exp{ -[ (lambda_Hz y1)^varphi + (lambda_Dz y2)^varphi ]^(1/varphi) },
// lambda_Hz = gamma1 lambda_H exp(-eta_H z + x'beta1) and analogously for the
// terminal rate; sampled through a positive stable mixture.
std::pair<double, double> sample_bivariate_times(int z, const std::array<double, 2>& x,
                                                 double gamma1,
                                                 const ScenarioConfig& cfg, Rng& rng);

double sample_censoring(int z, const ScenarioConfig& cfg, Rng& rng);

// Bernoulli treatment indicator with p = 1 / (1 + exp(-x'alpha + gamma2)).
int sample_treatment(const std::array<double, 2>& x, double gamma2,
                     const ScenarioConfig& cfg, Rng& rng);

struct GeneratedDataset {
  ClusterDataset dataset;
  FilterReport filtered;  // single-arm clusters dropped during generation
};

GeneratedDataset generate_dataset(const ScenarioConfig& cfg, Rng& rng);

// ICC estimand used for frailty calibration: one-way ANOVA ICC of log latent
// terminal event times under the scenario's covariate and frailty
// distributions, treatment fixed at control and censoring ignored.
extern const char* const kIccEstimandNote;

// Monte Carlo probe of that ICC at a given frailty shape.
double icc_probe(double gamma1_shape, const ScenarioConfig& cfg, std::uint64_t seed,
                 std::size_t probe_clusters = 4000, std::size_t probe_size = 50);

// Finds the Gamma(a, a) shape whose probe ICC matches icc_target, by
// bisection with common random numbers. Throws SolverError if the target is
// outside the bracket.
double calibrate_gamma1_shape(double icc_target, const ScenarioConfig& cfg, Rng& rng);

// Fills gamma1_shape from icc_target when it is NaN.
ScenarioConfig resolve_scenario(const ScenarioConfig& cfg, Rng& rng);

struct OracleEstimate {
  double log_wr = 0.0;
  double mc_se = 0.0;
};

// Estimand under the scenario's outcome model: the stratified unit-weight
// estimator on large randomized data (treatment Bernoulli(1/2), independent
// of covariates and cluster effects), averaged over independent batches.
OracleEstimate true_log_wr_oracle(const ScenarioConfig& cfg, std::size_t n_large,
                                  Rng& rng);

// Joint eta_H = eta_D = eta giving oracle log win ratio `target`; secant
// iteration with common random numbers, self-consistent to ~0.005.
double calibrate_eta(const ScenarioConfig& cfg, double target, Rng& rng);

struct McEstimatorSpec {
  EstimatorKind kind = EstimatorKind::calibration;
  Link link = Link::logit;
  std::string label = "calibration";
};

McEstimatorSpec mc_estimator_from_string(const std::string& name);
std::vector<McEstimatorSpec> default_mc_estimators();

struct McReplicate {
  double log_wr = 0.0;
  double se = 0.0;
  bool ok = false;
  std::string error;
};

struct McEstimatorResult {
  std::string label;
  std::vector<McReplicate> replicates;
  int used = 0;
  int failed = 0;
  double mean_log_wr = 0.0;
  double bias = 0.0;
  double empirical_se = 0.0;
  double estimated_se = 0.0;
  double rejection_rate = 0.0;  // type I error under the null, power otherwise
  double coverage = 0.0;        // CIs containing true_log_wr
  bool flagged = false;         // more than half the replicates failed
};

struct McStudy {
  ScenarioConfig scenario;
  std::vector<McEstimatorResult> estimators;
};

// (cfg.seed, cfg) fully determine the output for any thread count. Bootstrap
// SEs come from the matching bootstrap of each estimator (subject bootstrap
// for the pooled unadjusted estimator, cluster bootstrap otherwise).
McStudy run_monte_carlo(const ScenarioConfig& cfg,
                        const std::vector<McEstimatorSpec>& estimators,
                        unsigned threads = 1,
                        const std::function<void(int)>& progress = {});

std::string metrics_csv(const McStudy& study);
std::string metrics_markdown(const McStudy& study);

}  // namespace cwr

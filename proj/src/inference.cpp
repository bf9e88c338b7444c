#include "cwr/inference.hpp"

#include <algorithm>
#include <cmath>

#include "cwr/errors.hpp"
#include "cwr/rng.hpp"
#include "cwr/threading.hpp"

namespace cwr {

namespace {

constexpr double kZ95 = 1.959963984540054;  // 97.5% standard normal quantile

struct ReplicateOutcome {
  double log_wr = 0.0;
  bool ok = false;
};

InferenceResult summarize_replicates(const std::vector<ReplicateOutcome>& reps,
                                     const EstimateResult& point) {
  InferenceResult out;
  double mean = 0.0;
  int used = 0;
  for (const ReplicateOutcome& r : reps) {
    if (!r.ok) continue;
    mean += r.log_wr;
    ++used;
  }
  const int B = static_cast<int>(reps.size());
  out.bootstrap_reps_used = used;
  out.failed_reps = B - used;
  const int needed = std::max(2, (B + 1) / 2);
  if (used < needed) {
    throw SolverError("unstable bootstrap: only " + std::to_string(used) + " of " +
                      std::to_string(B) + " replicates succeeded");
  }
  mean /= used;
  double ss = 0.0;
  for (const ReplicateOutcome& r : reps) {
    if (!r.ok) continue;
    const double d = r.log_wr - mean;
    ss += d * d;
  }
  out.se_log_wr = std::sqrt(ss / (used - 1));
  out.ci_low = point.log_wr - kZ95 * out.se_log_wr;
  out.ci_high = point.log_wr + kZ95 * out.se_log_wr;
  out.z_stat = point.log_wr / out.se_log_wr;  // IEEE semantics when se == 0
  out.p_value = 2.0 * normal_cdf(-std::abs(out.z_stat));
  return out;
}

}  // namespace

const char* to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::unadjusted: return "unadjusted";
    case EstimatorKind::logistic: return "logistic";
    case EstimatorKind::fixed_effects: return "fixed";
    case EstimatorKind::random_effects: return "random";
    case EstimatorKind::calibration: return "calibration";
  }
  return "unknown";
}

EstimatorKind estimator_from_string(const std::string& name) {
  if (name == "unadjusted") return EstimatorKind::unadjusted;
  if (name == "logistic") return EstimatorKind::logistic;
  if (name == "fixed" || name == "fixed_effects") return EstimatorKind::fixed_effects;
  if (name == "random" || name == "random_effects") return EstimatorKind::random_effects;
  if (name == "calibration") return EstimatorKind::calibration;
  throw ValidationError(
      "unknown estimator '" + name +
      "' (expected unadjusted, logistic, fixed, random, or calibration)");
}

PipelineOutput run_pipeline(const ClusterDataset& ds, const PipelineConfig& cfg) {
  PipelineOutput out;
  switch (cfg.kind) {
    case EstimatorKind::unadjusted: {
      const PsModelFit fit = fit_logistic(ds, cfg.link);
      out.weights = initial_weights(fit, ds, cfg.ps_epsilon);
      out.weights.backend = WeightBackend::unadjusted;
      out.estimate = ipw_estimate_independent(ds, fit, cfg.ps_epsilon);
      return out;
    }
    case EstimatorKind::logistic: {
      const PsModelFit fit = fit_logistic(ds, cfg.link);
      out.weights = initial_weights(fit, ds, cfg.ps_epsilon);
      out.estimate = stratified_estimate(ds, out.weights);
      return out;
    }
    case EstimatorKind::fixed_effects: {
      const PsModelFit fit = fit_fixed_effects(ds, cfg.link);
      out.weights = initial_weights(fit, ds, cfg.ps_epsilon);
      out.estimate = stratified_estimate(ds, out.weights);
      return out;
    }
    case EstimatorKind::random_effects: {
      const PsModelFit fit = fit_random_intercept(ds, cfg.link);
      out.weights = initial_weights(fit, ds, cfg.ps_epsilon);
      out.estimate = stratified_estimate(ds, out.weights);
      return out;
    }
    case EstimatorKind::calibration: {
      const PsModelFit fit = fit_logistic(ds, cfg.link);
      const WeightSet d = initial_weights(fit, ds, cfg.ps_epsilon);
      CalibrationSolution sol =
          solve_calibration(d, ds, cfg.calibration_tol, cfg.calibration_max_iter);
      out.weights = std::move(sol.weights);
      out.estimate = stratified_estimate(ds, out.weights);
      return out;
    }
  }
  throw ValidationError("unknown estimator kind");
}

InferenceResult cluster_bootstrap(const ClusterDataset& ds, const PipelineConfig& cfg,
                                  int B, std::uint64_t seed,
                                  const EstimateResult& point, unsigned threads) {
  if (B < 2) {
    throw ValidationError("bootstrap requires B >= 2");
  }
  const std::size_t m = ds.cluster_count();
  const Rng master(seed);
  std::vector<ReplicateOutcome> reps(static_cast<std::size_t>(B));

  parallel_for_index(static_cast<std::size_t>(B), threads, [&](std::size_t r) {
    Rng rng = master.derive(r + 1);
    std::vector<SubjectRecord> subjects;
    subjects.reserve(ds.total_subjects());
    for (std::size_t k = 0; k < m; ++k) {
      const std::size_t pick = rng.uniform_index(m);
      const Cluster& c = ds.clusters()[pick];
      // Fresh identity: a cluster drawn twice is two distinct clusters.
      const std::string id = "b" + std::to_string(k) + "_" + c.id;
      for (SubjectRecord s : c.subjects) {
        s.cluster_id = id;
        subjects.push_back(std::move(s));
      }
    }
    try {
      const ClusterDataset resampled =
          ClusterDataset::from_subjects(std::move(subjects));
      reps[r].log_wr = run_pipeline(resampled, cfg).estimate.log_wr;
      reps[r].ok = true;
    } catch (const SolverError&) {
      reps[r].ok = false;
    } catch (const DegenerateDataError&) {
      reps[r].ok = false;
    } catch (const ValidationError&) {
      reps[r].ok = false;  // extreme propensity inside a replicate
    }
  });

  return summarize_replicates(reps, point);
}

InferenceResult subject_bootstrap(const ClusterDataset& ds, const PipelineConfig& cfg,
                                  int B, std::uint64_t seed,
                                  const EstimateResult& point, unsigned threads) {
  if (B < 2) {
    throw ValidationError("bootstrap requires B >= 2");
  }
  std::vector<const SubjectRecord*> pool;
  pool.reserve(ds.total_subjects());
  for (const Cluster& c : ds.clusters()) {
    for (const SubjectRecord& s : c.subjects) pool.push_back(&s);
  }
  const std::size_t n = pool.size();
  const Rng master(seed);
  std::vector<ReplicateOutcome> reps(static_cast<std::size_t>(B));

  parallel_for_index(static_cast<std::size_t>(B), threads, [&](std::size_t r) {
    Rng rng = master.derive(r + 1);
    std::vector<SubjectRecord> subjects;
    subjects.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
      subjects.push_back(*pool[rng.uniform_index(n)]);
    }
    try {
      const ClusterDataset resampled =
          ClusterDataset::from_subjects(std::move(subjects));
      reps[r].log_wr = run_pipeline(resampled, cfg).estimate.log_wr;
      reps[r].ok = true;
    } catch (const SolverError&) {
      reps[r].ok = false;
    } catch (const DegenerateDataError&) {
      reps[r].ok = false;
    } catch (const ValidationError&) {
      reps[r].ok = false;
    }
  });

  return summarize_replicates(reps, point);
}

std::vector<CovariateBalance> balance_diagnostics(const ClusterDataset& ds,
                                                  const WeightSet& w) {
  validate_weights(w, ds);
  const std::size_t p = ds.covariate_dim();
  double treated_w = 0.0, control_w = 0.0;
  double treated_n = 0.0, control_n = 0.0;
  std::vector<double> wt(p, 0.0), wc(p, 0.0), ut(p, 0.0), uc(p, 0.0);

  std::size_t k = 0;
  for (const Cluster& c : ds.clusters()) {
    for (const SubjectRecord& s : c.subjects) {
      const double wk = w.weights[k++];
      if (s.treatment == 1) {
        treated_w += wk;
        treated_n += 1.0;
        for (std::size_t l = 0; l < p; ++l) {
          wt[l] += wk * s.covariates[l];
          ut[l] += s.covariates[l];
        }
      } else {
        control_w += wk;
        control_n += 1.0;
        for (std::size_t l = 0; l < p; ++l) {
          wc[l] += wk * s.covariates[l];
          uc[l] += s.covariates[l];
        }
      }
    }
  }
  if (treated_w <= 0.0 || control_w <= 0.0 || treated_n == 0.0 || control_n == 0.0) {
    throw DegenerateDataError("an arm has zero total weight; cannot compute balance");
  }

  std::vector<CovariateBalance> out;
  out.reserve(p);
  for (std::size_t l = 0; l < p; ++l) {
    CovariateBalance b;
    b.covariate = "x" + std::to_string(l + 1);
    b.weighted_abs_diff = std::abs(wt[l] / treated_w - wc[l] / control_w);
    b.unweighted_abs_diff = std::abs(ut[l] / treated_n - uc[l] / control_n);
    out.push_back(std::move(b));
  }
  return out;
}

WaldTest wald_test(double log_wr, double se, double null_value) {
  if (!(se > 0.0)) {
    throw ValidationError("wald_test requires a positive standard error");
  }
  WaldTest t;
  t.z = (log_wr - null_value) / se;
  t.p = 2.0 * normal_cdf(-std::abs(t.z));
  return t;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace cwr

#include "cwr/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cwr/errors.hpp"
#include "cwr/stats.hpp"
#include "cwr/threading.hpp"

namespace cwr {

namespace {

constexpr double kZ95 = 1.959963984540054;

double clamp_unit(double u) { return std::clamp(u, 1e-15, 1.0 - 1e-15); }

double normal_cdf_local(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

std::array<double, 2> sample_covariates(Rng& rng) {
  // X1 standard normal, X2 normal with mean 1 and variance 4.
  return {rng.normal(), rng.normal(1.0, 2.0)};
}

}  // namespace

const char* to_string(Gamma2Dist dist) {
  return dist == Gamma2Dist::normal ? "normal" : "gamma";
}

Gamma2Dist gamma2_from_string(const std::string& name) {
  if (name == "normal") return Gamma2Dist::normal;
  if (name == "gamma") return Gamma2Dist::gamma;
  throw ValidationError("unknown gamma2 distribution '" + name +
                        "' (expected normal or gamma)");
}

void ScenarioConfig::validate() const {
  auto positive = [&](double v, const char* what) {
    if (!(v > 0.0)) {
      throw ValidationError(std::string("scenario: ") + what + " must be > 0");
    }
  };
  if (m < 1) throw ValidationError("scenario: m must be >= 1");
  if (n_i < 2) throw ValidationError("scenario: n_i must be >= 2");
  positive(lambda_H, "lambda_H");
  positive(lambda_D, "lambda_D");
  positive(lambda_C, "lambda_C");
  if (varphi < 1.0) throw ValidationError("scenario: varphi must be >= 1");
  if (alpha.size() != 3) {
    throw ValidationError("scenario: alpha must have 3 entries (intercept, x1, x2)");
  }
  if (!(icc_target > 0.0 && icc_target < 1.0)) {
    throw ValidationError("scenario: icc_target must be in (0,1)");
  }
  if (!std::isnan(gamma1_shape)) positive(gamma1_shape, "gamma1_shape");
  if (!(copula_rho > -1.0 && copula_rho < 1.0)) {
    throw ValidationError("scenario: copula_rho must be in (-1,1)");
  }
  if (reps < 2) throw ValidationError("scenario: reps must be >= 2");
  if (B < 2) throw ValidationError("scenario: B must be >= 2");
}

std::string ScenarioConfig::to_json() const {
  nlohmann::json j;
  j["m"] = m;
  j["n_i"] = n_i;
  j["lambda_H"] = lambda_H;
  j["lambda_D"] = lambda_D;
  j["lambda_C"] = lambda_C;
  j["eta_H"] = eta_H;
  j["eta_D"] = eta_D;
  j["eta_C"] = eta_C;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["alpha"] = alpha;
  j["varphi"] = varphi;
  j["icc_target"] = icc_target;
  if (!std::isnan(gamma1_shape)) j["gamma1_shape"] = gamma1_shape;
  j["gamma2_dist"] = to_string(gamma2_dist);
  j["copula_rho"] = copula_rho;
  j["reps"] = reps;
  j["B"] = B;
  j["seed"] = seed;
  j["true_log_wr"] = true_log_wr;
  return j.dump(2) + "\n";
}

ScenarioConfig ScenarioConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("scenario JSON parse error: ") + e.what());
  }
  ScenarioConfig cfg;
  try {
    if (j.contains("m")) cfg.m = j["m"].get<std::size_t>();
    if (j.contains("n_i")) cfg.n_i = j["n_i"].get<std::size_t>();
    if (j.contains("lambda_H")) cfg.lambda_H = j["lambda_H"].get<double>();
    if (j.contains("lambda_D")) cfg.lambda_D = j["lambda_D"].get<double>();
    if (j.contains("lambda_C")) cfg.lambda_C = j["lambda_C"].get<double>();
    if (j.contains("eta_H")) cfg.eta_H = j["eta_H"].get<double>();
    if (j.contains("eta_D")) cfg.eta_D = j["eta_D"].get<double>();
    if (j.contains("eta_C")) cfg.eta_C = j["eta_C"].get<double>();
    if (j.contains("beta1")) cfg.beta1 = j["beta1"].get<std::array<double, 2>>();
    if (j.contains("beta2")) cfg.beta2 = j["beta2"].get<std::array<double, 2>>();
    if (j.contains("alpha")) cfg.alpha = j["alpha"].get<std::vector<double>>();
    if (j.contains("varphi")) cfg.varphi = j["varphi"].get<double>();
    if (j.contains("icc_target")) cfg.icc_target = j["icc_target"].get<double>();
    if (j.contains("gamma1_shape")) cfg.gamma1_shape = j["gamma1_shape"].get<double>();
    if (j.contains("gamma2_dist")) {
      cfg.gamma2_dist = gamma2_from_string(j["gamma2_dist"].get<std::string>());
    }
    if (j.contains("copula_rho")) cfg.copula_rho = j["copula_rho"].get<double>();
    if (j.contains("reps")) cfg.reps = j["reps"].get<int>();
    if (j.contains("B")) cfg.B = j["B"].get<int>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("true_log_wr")) cfg.true_log_wr = j["true_log_wr"].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("scenario JSON field error: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ScenarioConfig ScenarioConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("cannot open scenario file: " + path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

ClusterEffects sample_cluster_effects(const ScenarioConfig& cfg, Rng& rng) {
  const double z1 = rng.normal();
  const double z2 = rng.normal();
  const double zc = cfg.copula_rho * z1 +
                    std::sqrt(1.0 - cfg.copula_rho * cfg.copula_rho) * z2;
  ClusterEffects eff;
  const double a = cfg.gamma1_shape;
  eff.gamma1 = gamma_quantile(clamp_unit(normal_cdf_local(z1)), a, a);
  if (cfg.gamma2_dist == Gamma2Dist::normal) {
    eff.gamma2 = 2.0 * zc;  // N(0, 4)
  } else {
    eff.gamma2 = gamma_quantile(clamp_unit(normal_cdf_local(zc)), 2.0, 10.0);
  }
  return eff;
}

std::pair<double, double> sample_bivariate_times(int z, const std::array<double, 2>& x,
                                                 double gamma1,
                                                 const ScenarioConfig& cfg, Rng& rng) {
  const double xb1 = x[0] * cfg.beta1[0] + x[1] * cfg.beta1[1];
  const double xb2 = x[0] * cfg.beta2[0] + x[1] * cfg.beta2[1];
  const double rate_h = gamma1 * cfg.lambda_H * std::exp(-cfg.eta_H * z + xb1);
  const double rate_d = gamma1 * cfg.lambda_D * std::exp(-cfg.eta_D * z + xb2);
  const double s = rng.positive_stable(1.0 / cfg.varphi);
  const double eh = rng.exponential(1.0);
  const double ed = rng.exponential(1.0);
  const double th = std::pow(eh / s, 1.0 / cfg.varphi) / rate_h;
  const double td = std::pow(ed / s, 1.0 / cfg.varphi) / rate_d;
  return {th, td};
}

double sample_censoring(int z, const ScenarioConfig& cfg, Rng& rng) {
  return rng.exponential(cfg.lambda_C * std::exp(-cfg.eta_C * z));
}

int sample_treatment(const std::array<double, 2>& x, double gamma2,
                     const ScenarioConfig& cfg, Rng& rng) {
  const double lp = cfg.alpha[0] + cfg.alpha[1] * x[0] + cfg.alpha[2] * x[1];
  const double p = 1.0 / (1.0 + std::exp(std::clamp(-lp + gamma2, -700.0, 700.0)));
  return rng.bernoulli(p) ? 1 : 0;
}

namespace {

// Core generator; `randomized` replaces the treatment model by a fair coin
// (used by the estimand oracle).
GeneratedDataset generate_impl(const ScenarioConfig& cfg, Rng& rng, bool randomized) {
  cfg.validate();
  if (std::isnan(cfg.gamma1_shape)) {
    throw ValidationError(
        "scenario gamma1_shape is unresolved; call resolve_scenario first");
  }
  std::vector<SubjectRecord> subjects;
  subjects.reserve(cfg.m * cfg.n_i);
  for (std::size_t i = 0; i < cfg.m; ++i) {
    const ClusterEffects eff = sample_cluster_effects(cfg, rng);
    for (std::size_t j = 0; j < cfg.n_i; ++j) {
      SubjectRecord s;
      s.cluster_id = "c" + std::to_string(i + 1);
      const std::array<double, 2> x = sample_covariates(rng);
      const int z = randomized ? (rng.bernoulli(0.5) ? 1 : 0)
                               : sample_treatment(x, eff.gamma2, cfg, rng);
      const auto [th, td] = sample_bivariate_times(z, x, eff.gamma1, cfg, rng);
      const double tc = sample_censoring(z, cfg, rng);
      s.treatment = z;
      s.covariates = {x[0], x[1]};
      s.outcome.u_terminal = std::min(td, tc);
      s.outcome.delta_terminal = td <= tc ? 1 : 0;
      s.outcome.u_nonterminal = std::min(th, s.outcome.u_terminal);
      s.outcome.delta_nonterminal = th <= std::min(td, tc) ? 1 : 0;
      subjects.push_back(std::move(s));
    }
  }
  ClusterDataset full = ClusterDataset::from_subjects(std::move(subjects));
  FilterResult filtered = filter_single_arm_clusters(full);
  return {std::move(filtered.dataset), std::move(filtered.report)};
}

}  // namespace

GeneratedDataset generate_dataset(const ScenarioConfig& cfg, Rng& rng) {
  return generate_impl(cfg, rng, false);
}

const char* const kIccEstimandNote =
    "one-way ANOVA ICC of log latent terminal event times (control arm, "
    "covariates included, censoring ignored)";

double icc_probe(double gamma1_shape, const ScenarioConfig& cfg, std::uint64_t seed,
                 std::size_t probe_clusters, std::size_t probe_size) {
  Rng rng(seed);
  std::vector<double> log_times;
  log_times.reserve(probe_clusters * probe_size);
  for (std::size_t i = 0; i < probe_clusters; ++i) {
    const double g1 = rng.gamma(gamma1_shape, gamma1_shape);
    for (std::size_t j = 0; j < probe_size; ++j) {
      const std::array<double, 2> x = sample_covariates(rng);
      const double xb2 = x[0] * cfg.beta2[0] + x[1] * cfg.beta2[1];
      const double rate = g1 * cfg.lambda_D * std::exp(xb2);
      log_times.push_back(std::log(rng.exponential(rate)));
    }
  }
  return anova_icc(log_times, probe_clusters, probe_size);
}

double calibrate_gamma1_shape(double icc_target, const ScenarioConfig& cfg, Rng& rng) {
  if (!(icc_target > 0.0 && icc_target < 1.0)) {
    throw ValidationError("icc_target must be in (0,1)");
  }
  // Common random numbers across probes make the probe ICC exactly monotone
  // in the shape, so plain bisection is safe.
  const std::uint64_t probe_seed = rng.derive(777).seed();
  double lo = std::log(0.02), hi = std::log(1000.0);
  auto f = [&](double log_a) {
    return icc_probe(std::exp(log_a), cfg, probe_seed) - icc_target;
  };
  const double f_lo = f(lo);
  const double f_hi = f(hi);
  if (!(f_lo > 0.0 && f_hi < 0.0)) {
    throw SolverError("gamma1 calibration: icc_target outside the bracketed range");
  }
  for (int it = 0; it < 50; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if (std::abs(fm) < 2e-4 || hi - lo < 1e-6) {
      return std::exp(mid);
    }
    if (fm > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return std::exp(0.5 * (lo + hi));
}

ScenarioConfig resolve_scenario(const ScenarioConfig& cfg, Rng& rng) {
  ScenarioConfig out = cfg;
  out.validate();
  if (std::isnan(out.gamma1_shape)) {
    out.gamma1_shape = calibrate_gamma1_shape(out.icc_target, out, rng);
  }
  return out;
}

OracleEstimate true_log_wr_oracle(const ScenarioConfig& cfg, std::size_t n_large,
                                  Rng& rng) {
  constexpr std::size_t kBatches = 8;
  ScenarioConfig big = cfg;
  big.m = std::max<std::size_t>(20, n_large / kBatches / cfg.n_i);
  std::vector<double> batch(kBatches);
  for (std::size_t b = 0; b < kBatches; ++b) {
    Rng stream = rng.derive(5000 + b);
    const GeneratedDataset gen = generate_impl(big, stream, true);
    WeightSet unit;
    unit.backend = WeightBackend::unadjusted;
    unit.weights.assign(gen.dataset.total_subjects(), 1.0);
    batch[b] = stratified_estimate(gen.dataset, unit).log_wr;
  }
  OracleEstimate out;
  out.log_wr = mean(batch);
  out.mc_se = sample_sd(batch) / std::sqrt(static_cast<double>(kBatches));
  return out;
}

double calibrate_eta(const ScenarioConfig& cfg, double target, Rng& rng) {
  const Rng oracle_rng = rng.derive(888);  // common random numbers
  auto f = [&](double eta) {
    ScenarioConfig probe = cfg;
    probe.eta_H = eta;
    probe.eta_D = eta;
    Rng stream = oracle_rng;
    return true_log_wr_oracle(probe, 200000, stream).log_wr - target;
  };
  double e0 = 0.0, f0 = f(e0);
  double e1 = target, f1 = f(e1);
  for (int it = 0; it < 25; ++it) {
    if (std::abs(f1) < 0.003) return e1;
    const double denom = f1 - f0;
    if (std::abs(denom) < 1e-12) break;
    const double e2 = e1 - f1 * (e1 - e0) / denom;
    e0 = e1;
    f0 = f1;
    e1 = e2;
    f1 = f(e1);
  }
  if (std::abs(f1) < 0.01) return e1;
  throw SolverError("eta calibration did not reach the target log win ratio");
}

McEstimatorSpec mc_estimator_from_string(const std::string& name) {
  if (name == "calibration_cloglog" || name == "calibration_mis") {
    return {EstimatorKind::calibration, Link::cloglog, "calibration_cloglog"};
  }
  McEstimatorSpec spec;
  spec.kind = estimator_from_string(name);
  spec.link = Link::logit;
  spec.label = to_string(spec.kind);
  return spec;
}

std::vector<McEstimatorSpec> default_mc_estimators() {
  return {
      mc_estimator_from_string("unadjusted"),
      mc_estimator_from_string("logistic"),
      mc_estimator_from_string("fixed"),
      mc_estimator_from_string("random"),
      mc_estimator_from_string("calibration"),
      mc_estimator_from_string("calibration_cloglog"),
  };
}

McStudy run_monte_carlo(const ScenarioConfig& cfg,
                        const std::vector<McEstimatorSpec>& estimators,
                        unsigned threads, const std::function<void(int)>& progress) {
  cfg.validate();
  if (estimators.empty()) {
    throw ValidationError("no estimators requested");
  }
  McStudy study;
  study.scenario = cfg;
  study.estimators.resize(estimators.size());
  for (std::size_t e = 0; e < estimators.size(); ++e) {
    study.estimators[e].label = estimators[e].label;
    study.estimators[e].replicates.resize(static_cast<std::size_t>(cfg.reps));
  }

  const Rng master(cfg.seed);
  parallel_for_index(static_cast<std::size_t>(cfg.reps), threads, [&](std::size_t r) {
    Rng data_rng = master.derive(1'000'000 + r);
    const GeneratedDataset gen = generate_dataset(cfg, data_rng);
    for (std::size_t e = 0; e < estimators.size(); ++e) {
      McReplicate& rep = study.estimators[e].replicates[r];
      PipelineConfig pc;
      pc.kind = estimators[e].kind;
      pc.link = estimators[e].link;
      const std::uint64_t boot_seed =
          master.derive(2'000'000 + r).derive(e + 1).seed();
      try {
        const PipelineOutput out = run_pipeline(gen.dataset, pc);
        const InferenceResult inf =
            pc.kind == EstimatorKind::unadjusted
                ? subject_bootstrap(gen.dataset, pc, cfg.B, boot_seed, out.estimate)
                : cluster_bootstrap(gen.dataset, pc, cfg.B, boot_seed, out.estimate);
        rep.log_wr = out.estimate.log_wr;
        rep.se = inf.se_log_wr;
        rep.ok = true;
      } catch (const std::exception& ex) {
        rep.ok = false;
        rep.error = ex.what();
      }
    }
    if (progress) progress(static_cast<int>(r));
  });

  for (McEstimatorResult& res : study.estimators) {
    std::vector<double> est, se;
    for (const McReplicate& rep : res.replicates) {
      if (!rep.ok) continue;
      est.push_back(rep.log_wr);
      se.push_back(rep.se);
    }
    res.used = static_cast<int>(est.size());
    res.failed = cfg.reps - res.used;
    res.flagged = res.failed * 2 > cfg.reps;
    if (est.size() >= 2) {
      res.mean_log_wr = mean(est);
      res.bias = res.mean_log_wr - cfg.true_log_wr;
      res.empirical_se = sample_sd(est);
      res.estimated_se = mean(se);
      int reject = 0, cover = 0;
      for (std::size_t k = 0; k < est.size(); ++k) {
        if (se[k] > 0.0 && std::abs(est[k] / se[k]) >= kZ95) ++reject;
        const double lo = est[k] - kZ95 * se[k];
        const double hi = est[k] + kZ95 * se[k];
        if (lo <= cfg.true_log_wr && cfg.true_log_wr <= hi) ++cover;
      }
      res.rejection_rate = static_cast<double>(reject) / est.size();
      res.coverage = static_cast<double>(cover) / est.size();
    }
  }
  return study;
}

std::string metrics_csv(const McStudy& study) {
  std::ostringstream out;
  out << "estimator,reps_used,failed,flagged,true_log_wr,mean_log_wr,bias,"
         "empirical_se,estimated_se,rejection_rate,coverage\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::string(buf);
  };
  for (const McEstimatorResult& r : study.estimators) {
    out << r.label << ',' << r.used << ',' << r.failed << ',' << (r.flagged ? 1 : 0)
        << ',' << num(study.scenario.true_log_wr) << ',' << num(r.mean_log_wr) << ','
        << num(r.bias) << ',' << num(r.empirical_se) << ',' << num(r.estimated_se)
        << ',' << num(r.rejection_rate) << ',' << num(r.coverage) << "\n";
  }
  return out.str();
}

std::string metrics_markdown(const McStudy& study) {
  std::ostringstream out;
  const ScenarioConfig& s = study.scenario;
  out << "| Estimator | Bias | Empirical SE | Estimated SE | Rejection rate | "
         "Coverage |\n";
  out << "|---|---|---|---|---|---|\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return std::string(buf);
  };
  for (const McEstimatorResult& r : study.estimators) {
    out << "| " << r.label << (r.flagged ? " (flagged)" : "") << " | " << num(r.bias)
        << " | " << num(r.empirical_se) << " | " << num(r.estimated_se) << " | "
        << num(r.rejection_rate) << " | " << num(r.coverage) << " |\n";
  }
  out << "\nScenario: m=" << s.m << ", n_i=" << s.n_i << ", reps=" << s.reps
      << ", B=" << s.B << ", seed=" << s.seed << ", true log WR=" << s.true_log_wr
      << "\n";
  return out.str();
}

}  // namespace cwr
